//! Independent reference computations used by the integration tests.
//!
//! Nothing here calls the counting engine: counts come from enumerating every
//! grounding of the first-order variables and reading values straight from
//! the table rows.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use relbn::count::{ContingencyTable, CountScope, Value};
use relbn::dataset::Dataset;
use relbn::model::{BayesNet, Model};
use relbn::schema::{analyze, ParRvKind, Vdb};
use relbn::synth::{generate, SyntheticSpec};

pub fn toy_manifest() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/university/manifest.toml")
}

pub fn toy() -> (Dataset, Vdb) {
    let data = Dataset::load(&toy_manifest()).unwrap();
    let vdb = analyze(&data).unwrap();
    (data, vdb)
}

pub fn ids(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

pub struct Oracle<'a> {
    vdb: &'a Vdb,
    /// Rows of each entity table.
    entities: HashMap<String, Vec<Vec<Arc<str>>>>,
    key_col: HashMap<String, usize>,
    /// Relationship id -> (key pair -> row).
    rel_rows: HashMap<String, HashMap<(Arc<str>, Arc<str>), Vec<Arc<str>>>>,
    columns: HashMap<String, Vec<String>>,
}

impl<'a> Oracle<'a> {
    pub fn new(data: &Dataset, vdb: &'a Vdb) -> Oracle<'a> {
        let mut entities = HashMap::new();
        let mut key_col = HashMap::new();
        let mut columns = HashMap::new();
        for t in &data.manifest().tables {
            columns.insert(t.name.clone(), t.columns.clone());
        }
        for fv in &vdb.pvariables {
            let spec = data.manifest().table(&fv.entity_table).unwrap();
            key_col.insert(
                fv.entity_table.clone(),
                spec.columns.iter().position(|c| c == &fv.key_column).unwrap(),
            );
            entities.insert(fv.entity_table.clone(), data.rows(&fv.entity_table).unwrap());
        }
        let mut rel_rows = HashMap::new();
        for rel in &vdb.relationship_meta {
            let cols = &columns[&rel.table];
            let a = cols.iter().position(|c| c == &rel.columns[0]).unwrap();
            let b = cols.iter().position(|c| c == &rel.columns[1]).unwrap();
            let index: HashMap<_, _> = data
                .rows(&rel.table)
                .unwrap()
                .into_iter()
                .map(|r| ((r[a].clone(), r[b].clone()), r))
                .collect();
            rel_rows.insert(rel.id.clone(), index);
        }
        Oracle {
            vdb,
            entities,
            key_col,
            rel_rows,
            columns,
        }
    }

    fn key(&self, fv: &str, row: usize) -> Arc<str> {
        let table = &self.vdb.fo_var(fv).unwrap().entity_table;
        self.entities[table][row][self.key_col[table]].clone()
    }

    fn value(&self, id: &str, g: &HashMap<String, usize>) -> Value {
        let v = self.vdb.par_rv(id).unwrap();
        match v.kind {
            ParRvKind::EntityAttribute => {
                let fv = &v.fo_vars[0];
                let cols = &self.columns[&v.table];
                let c = cols.iter().position(|c| Some(c) == v.column.as_ref()).unwrap();
                self.entities[&v.table][g[fv]][c].clone()
            }
            ParRvKind::RelationshipIndicator | ParRvKind::RelationshipAttribute => {
                let rel_id = v.relationship.as_ref().unwrap();
                let rel = self.vdb.relationship(rel_id).unwrap();
                let pair = (self.key(&rel.fo_vars[0], g[&rel.fo_vars[0]]), self.key(&rel.fo_vars[1], g[&rel.fo_vars[1]]));
                let row = self.rel_rows[rel_id].get(&pair);
                if v.kind == ParRvKind::RelationshipIndicator {
                    Value::from(if row.is_some() { "T" } else { "F" })
                } else {
                    match row {
                        Some(r) => {
                            let cols = &self.columns[&rel.table];
                            let c = cols.iter().position(|c| Some(c) == v.column.as_ref()).unwrap();
                            r[c].clone()
                        }
                        None => Value::from("n/a"),
                    }
                }
            }
        }
    }

    /// Visit every grounding of `scope`, with `merge` variables following
    /// their representative and `pin` fixing one variable to an entity key.
    pub fn for_each_grounding<F>(
        &self,
        scope: &BTreeSet<String>,
        merge: &BTreeMap<String, String>,
        pin: Option<(&str, &str)>,
        mut f: F,
    ) where
        F: FnMut(&HashMap<String, usize>),
    {
        let free: Vec<&String> = scope.iter().filter(|v| !merge.contains_key(*v)).collect();
        let sizes: Vec<usize> = free
            .iter()
            .map(|v| self.entities[&self.vdb.fo_var(v).unwrap().entity_table].len())
            .collect();
        if sizes.iter().any(|&s| s == 0) {
            return;
        }
        let mut idx = vec![0usize; free.len()];
        loop {
            let mut g: HashMap<String, usize> = free.iter().zip(&idx).map(|(v, &i)| ((*v).clone(), i)).collect();
            for (from, to) in merge {
                let i = g[to];
                g.insert(from.clone(), i);
            }
            let keep = match pin {
                Some((fv, key)) => &*self.key(fv, g[fv]) == key,
                None => true,
            };
            if keep {
                f(&g);
            }
            let mut k = 0;
            loop {
                if k == idx.len() {
                    return;
                }
                idx[k] += 1;
                if idx[k] < sizes[k] {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
        }
    }

    /// Counts over `scope` (which must cover the variables of `vars`).
    pub fn ct_general(
        &self,
        vars: &[String],
        scope: &BTreeSet<String>,
        merge: &BTreeMap<String, String>,
        pin: Option<(&str, &str)>,
    ) -> ContingencyTable {
        let mut counts: BTreeMap<Vec<Value>, u64> = BTreeMap::new();
        self.for_each_grounding(scope, merge, pin, |g| {
            let row: Vec<Value> = vars.iter().map(|id| self.value(id, g)).collect();
            *counts.entry(row).or_insert(0) += 1;
        });
        ContingencyTable::from_rows(vars.to_vec(), counts).unwrap()
    }

    /// Counts over the variables of `vars` only.
    pub fn ct(&self, vars: &[String]) -> ContingencyTable {
        let scope = self.vdb.fo_vars_of(vars).unwrap();
        self.ct_general(vars, &scope, &BTreeMap::new(), None)
    }

    /// Log-likelihood summed grounding by grounding with maximum-likelihood
    /// CPT entries.
    pub fn loglik(&self, model: &Model) -> f64 {
        let joint_scope = self.vdb.fo_vars_of(&self.vdb.ids()).unwrap();
        let mut total = 0.0;
        for (child, cpt) in &model.cpts {
            let cols = cpt.family.columns();
            let scope = if model.count_scope == CountScope::Joint {
                joint_scope.clone()
            } else {
                self.vdb.fo_vars_of(&cols).unwrap()
            };
            self.for_each_grounding(&scope, &BTreeMap::new(), None, |g| {
                let parents: Vec<Value> = cpt.family.parents.iter().map(|p| self.value(p, g)).collect();
                let cp = cpt.cp(&self.value(child, g), &parents).expect("observed combination");
                total += cp.ln();
            });
        }
        total
    }

    /// Smoothed log score of the whole database under `model`.
    pub fn db_score(&self, model: &Model, alpha: f64) -> f64 {
        let joint_scope = self.vdb.fo_vars_of(&self.vdb.ids()).unwrap();
        let mut total = 0.0;
        for (child, cpt) in &model.cpts {
            let cols = cpt.family.columns();
            let scope = if model.count_scope == CountScope::Joint {
                joint_scope.clone()
            } else {
                self.vdb.fo_vars_of(&cols).unwrap()
            };
            self.for_each_grounding(&scope, &BTreeMap::new(), None, |g| {
                let parents: Vec<Value> = cpt.family.parents.iter().map(|p| self.value(p, g)).collect();
                total += cpt.log_prob(&self.value(child, g), &parents, alpha);
            });
        }
        total
    }
}

/// Copy of `data` with one entity attribute value replaced.
pub fn with_value(data: &Dataset, table: &str, column: &str, key: &str, value: &str) -> Dataset {
    let manifest = data.manifest().clone();
    let mut rows = Vec::new();
    for t in &manifest.tables {
        let key_idx = t.columns.iter().position(|c| c == &t.primary_key[0]).unwrap();
        let col_idx = t.columns.iter().position(|c| c == column);
        let mut table_rows: Vec<Vec<String>> = data
            .rows(&t.name)
            .unwrap()
            .into_iter()
            .map(|r| r.iter().map(|v| v.to_string()).collect())
            .collect();
        if t.name == table {
            for r in &mut table_rows {
                if r[key_idx] == key {
                    r[col_idx.unwrap()] = value.to_string();
                }
            }
        }
        rows.push(table_rows);
    }
    Dataset::from_rows(manifest, rows).unwrap()
}

/// Probabilities of each label obtained by rescoring the entire database
/// with the target atom set to that label.
pub fn full_rescoring(data: &Dataset, vdb: &Vdb, model: &Model, target: &str, entity: &str, alpha: f64) -> Vec<f64> {
    let t = vdb.par_rv(target).unwrap();
    let labels = vdb.domain(target).unwrap();
    let scores: Vec<f64> = labels
        .iter()
        .map(|y| {
            let changed = with_value(data, &t.table, t.column.as_deref().unwrap(), entity, y);
            Oracle::new(&changed, vdb).db_score(model, alpha)
        })
        .collect();
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = scores.iter().map(|s| (s - max).exp()).sum();
    scores.iter().map(|s| (s - max).exp() / z).collect()
}

/// Every DAG over `nodes` (intended for at most four nodes).
pub fn all_dags(nodes: &[String]) -> Vec<BayesNet> {
    let pairs: Vec<(usize, usize)> = (0..nodes.len())
        .flat_map(|i| ((i + 1)..nodes.len()).map(move |j| (i, j)))
        .collect();
    let mut out = Vec::new();
    let total = 3usize.pow(pairs.len() as u32);
    'outer: for code in 0..total {
        let mut bn = BayesNet::empty(nodes.iter().cloned());
        let mut c = code;
        for &(i, j) in &pairs {
            let r = c % 3;
            c /= 3;
            let res = match r {
                1 => bn.add_edge(&nodes[i], &nodes[j]),
                2 => bn.add_edge(&nodes[j], &nodes[i]),
                _ => Ok(()),
            };
            if res.is_err() {
                continue 'outer;
            }
        }
        if bn.is_acyclic() {
            out.push(bn);
        }
    }
    out
}

/// Small synthetic dataset; `self_rel` adds a self-relationship on the first
/// entity.
pub fn small_spec(seed: u64, self_rel: bool) -> SyntheticSpec {
    let mut text = format!(
        r#"
seed = {seed}

[[entities]]
name = "Person"
size = {}
attributes = [
  {{ name = "age", domain = 3 }},
  {{ name = "smokes", domain = 2, depends_on = "age", strength = 0.7 }},
]

[[entities]]
name = "Club"
size = {}
attributes = [{{ name = "kind", domain = 2 }}]

[[relationships]]
name = "Member"
from = "Person"
to = "Club"
density = 0.4
attributes = [{{ name = "role", domain = 2, depends_on = "Person.smokes", strength = 0.6 }}]
"#,
        4 + seed % 5,
        2 + seed % 3
    );
    if self_rel {
        text.push_str(
            r#"
[[relationships]]
name = "Knows"
from = "Person"
to = "Person"
density = 0.3
"#,
        );
    }
    SyntheticSpec::parse(&text).unwrap()
}

pub fn small_dataset(seed: u64, self_rel: bool) -> (Dataset, Vdb) {
    let data = generate(&small_spec(seed, self_rel)).unwrap();
    let vdb = analyze(&data).unwrap();
    (data, vdb)
}

/// All non-empty subsets of `ids`.
pub fn subsets(ids: &[String]) -> Vec<Vec<String>> {
    (1u64..(1 << ids.len()))
        .map(|mask| {
            ids.iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, v)| v.clone())
                .collect()
        })
        .collect()
}
