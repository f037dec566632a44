//! Bayesian network structures, maximum-likelihood CPTs and AIC scores.
//!
//! Everything here is derived from contingency tables. A family's
//! log-likelihood is `Σ count · ln cp` over its table; the AIC of a family is
//! that value minus its free-parameter count, and model scores are sums over
//! families.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::count::{ContingencyTable, CountScope, CountSource, Value};
use crate::error::{Error, Result};
use crate::schema::Vdb;

/// A child node and its parents.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Family {
    pub child: String,
    pub parents: Vec<String>,
}

impl Family {
    pub fn new(child: impl Into<String>, parents: Vec<String>) -> Result<Family> {
        let child = child.into();
        let distinct: BTreeSet<&String> = parents.iter().collect();
        if distinct.len() != parents.len() {
            return Err(Error::validation(format!("family of `{child}` repeats a parent")));
        }
        if distinct.contains(&child) {
            return Err(Error::validation(format!("`{child}` cannot be its own parent")));
        }
        Ok(Family { child, parents })
    }

    /// Child followed by parents.
    pub fn columns(&self) -> Vec<String> {
        let mut cols = vec![self.child.clone()];
        cols.extend(self.parents.iter().cloned());
        cols
    }
}

/// A DAG over par-RV ids. Edges are stored as `(parent, child)`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BayesNet {
    nodes: BTreeSet<String>,
    edges: BTreeSet<(String, String)>,
}

impl BayesNet {
    pub fn empty<I, S>(nodes: I) -> BayesNet
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        BayesNet {
            nodes: nodes.into_iter().map(Into::into).collect(),
            edges: BTreeSet::new(),
        }
    }

    pub fn nodes(&self) -> &BTreeSet<String> {
        &self.nodes
    }

    pub fn edges(&self) -> &BTreeSet<(String, String)> {
        &self.edges
    }

    pub fn has_edge(&self, parent: &str, child: &str) -> bool {
        self.edges.contains(&(parent.to_string(), child.to_string()))
    }

    /// Parents of `child`, sorted by id.
    pub fn parents(&self, child: &str) -> Vec<String> {
        self.edges
            .iter()
            .filter(|(_, c)| c == child)
            .map(|(p, _)| p.clone())
            .collect()
    }

    fn children<'a>(&'a self, parent: &'a str) -> impl Iterator<Item = &'a String> + 'a {
        self.edges.iter().filter(move |(p, _)| p == parent).map(|(_, c)| c)
    }

    pub fn family(&self, child: &str) -> Family {
        Family {
            child: child.to_string(),
            parents: self.parents(child),
        }
    }

    pub fn families(&self) -> Vec<Family> {
        self.nodes.iter().map(|n| self.family(n)).collect()
    }

    /// Whether a directed path leads from `from` to `to` (a node reaches itself).
    pub fn has_path(&self, from: &str, to: &str) -> bool {
        let mut stack = vec![from];
        let mut seen = BTreeSet::new();
        while let Some(n) = stack.pop() {
            if n == to {
                return true;
            }
            if seen.insert(n) {
                stack.extend(self.children(n).map(String::as_str));
            }
        }
        false
    }

    pub fn add_edge(&mut self, parent: &str, child: &str) -> Result<()> {
        for n in [parent, child] {
            if !self.nodes.contains(n) {
                return Err(Error::validation(format!("`{n}` is not a node")));
            }
        }
        if parent == child || self.has_path(child, parent) {
            return Err(Error::validation(format!("edge {parent} -> {child} creates a cycle")));
        }
        self.edges.insert((parent.to_string(), child.to_string()));
        Ok(())
    }

    pub fn remove_edge(&mut self, parent: &str, child: &str) -> Result<()> {
        if !self.edges.remove(&(parent.to_string(), child.to_string())) {
            return Err(Error::validation(format!("no edge {parent} -> {child}")));
        }
        Ok(())
    }

    pub fn reverse_edge(&mut self, parent: &str, child: &str) -> Result<()> {
        self.remove_edge(parent, child)?;
        if let Err(e) = self.add_edge(child, parent) {
            self.edges.insert((parent.to_string(), child.to_string()));
            return Err(e);
        }
        Ok(())
    }

    pub fn is_acyclic(&self) -> bool {
        // Kahn's algorithm.
        let mut indegree: BTreeMap<&str, usize> = self.nodes.iter().map(|n| (n.as_str(), 0)).collect();
        for (_, c) in &self.edges {
            *indegree.get_mut(c.as_str()).unwrap() += 1;
        }
        let mut ready: Vec<&str> = indegree.iter().filter(|(_, &d)| d == 0).map(|(&n, _)| n).collect();
        let mut visited = 0;
        while let Some(n) = ready.pop() {
            visited += 1;
            for c in self.children(n) {
                let d = indegree.get_mut(c.as_str()).unwrap();
                *d -= 1;
                if *d == 0 {
                    ready.push(c);
                }
            }
        }
        visited == self.nodes.len()
    }
}

/// One stored row of a CPT.
#[derive(Debug, Clone, PartialEq)]
pub struct CptRow {
    pub child_value: Value,
    pub parent_values: Vec<Value>,
    pub cp: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
struct ConfigCounts {
    total: u64,
    by_child: HashMap<Value, u64>,
}

/// Conditional probability table of one family together with the counts it
/// was estimated from.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorTable {
    pub family: Family,
    pub rows: Vec<CptRow>,
    child_cardinality: usize,
    counts: ContingencyTable,
    configs: HashMap<Vec<Value>, ConfigCounts>,
}

fn family_order(ct: &ContingencyTable, family: &Family) -> Result<Vec<usize>> {
    family
        .columns()
        .iter()
        .map(|c| {
            ct.column_index(c)
                .ok_or_else(|| Error::validation(format!("contingency table lacks family column `{c}`")))
        })
        .collect()
}

/// Maximum-likelihood CPT of `family` from `ct` (which may hold extra columns).
pub fn estimate_cpt(family: &Family, ct: &ContingencyTable, vdb: &Vdb) -> Result<FactorTable> {
    let cols = family.columns();
    family_order(ct, family)?;
    let counts = ct.project(&cols)?;
    let child_cardinality = vdb
        .domain(&family.child)
        .ok_or_else(|| Error::validation(format!("no domain for `{}`", family.child)))?
        .len();
    FactorTable::from_counts(family.clone(), counts, child_cardinality)
}

impl FactorTable {
    fn from_counts(family: Family, counts: ContingencyTable, child_cardinality: usize) -> Result<FactorTable> {
        let order = family_order(&counts, &family)?;
        let mut configs: HashMap<Vec<Value>, ConfigCounts> = HashMap::new();
        for (values, count) in counts.rows() {
            let parents: Vec<Value> = order[1..].iter().map(|&i| values[i].clone()).collect();
            let entry = configs.entry(parents).or_default();
            entry.total += count;
            *entry.by_child.entry(values[order[0]].clone()).or_insert(0) += count;
        }
        let mut rows = Vec::new();
        for (values, count) in counts.rows() {
            let parents: Vec<Value> = order[1..].iter().map(|&i| values[i].clone()).collect();
            let total = configs[&parents].total;
            rows.push(CptRow {
                child_value: values[order[0]].clone(),
                parent_values: parents,
                cp: count as f64 / total as f64,
            });
        }
        rows.sort_by(|a, b| (&a.parent_values, &a.child_value).cmp(&(&b.parent_values, &b.child_value)));
        Ok(FactorTable {
            family,
            rows,
            child_cardinality,
            counts,
            configs,
        })
    }

    /// The family counts the table was estimated from.
    pub fn counts(&self) -> &ContingencyTable {
        &self.counts
    }

    pub fn child_cardinality(&self) -> usize {
        self.child_cardinality
    }

    /// `ln P(child | parents)` with Laplace pseudo-count `alpha`; `alpha = 0`
    /// gives the maximum-likelihood value (`-inf` for unseen combinations).
    pub fn log_prob(&self, child_value: &str, parent_values: &[Value], alpha: f64) -> f64 {
        let (n, total) = match self.configs.get(parent_values) {
            Some(c) => (c.by_child.get(child_value).copied().unwrap_or(0), c.total),
            None => (0, 0),
        };
        let num = n as f64 + alpha;
        let den = total as f64 + alpha * self.child_cardinality as f64;
        if num == 0.0 || den == 0.0 {
            f64::NEG_INFINITY
        } else {
            (num / den).ln()
        }
    }

    /// Stored CPT entry, if the combination was observed.
    pub fn cp(&self, child_value: &str, parent_values: &[Value]) -> Option<f64> {
        let c = self.configs.get(parent_values)?;
        let n = *c.by_child.get(child_value)?;
        Some(n as f64 / c.total as f64)
    }
}

/// Free parameters of a family: parent configurations × (child values − 1).
pub fn count_params(family: &Family, vdb: &Vdb) -> Result<u64> {
    let size = |id: &str| -> Result<u64> {
        vdb.domain(id)
            .map(|d| d.len() as u64)
            .ok_or_else(|| Error::validation(format!("no domain for `{id}`")))
    };
    let mut configs: u64 = 1;
    for p in &family.parents {
        configs = configs
            .checked_mul(size(p)?)
            .ok_or_else(|| Error::validation("parameter count overflows"))?;
    }
    Ok(configs * size(&family.child)?.saturating_sub(1))
}

/// `Σ count · ln cp` over the rows of `ct`.
pub fn family_loglik(cpt: &FactorTable, ct: &ContingencyTable) -> Result<f64> {
    let order = family_order(ct, &cpt.family)?;
    let projected;
    let (ct, order) = if ct.columns().len() == order.len() {
        (ct, order)
    } else {
        projected = ct.project(&cpt.family.columns())?;
        let o = family_order(&projected, &cpt.family)?;
        (&projected, o)
    };
    let mut total = 0.0;
    for (values, count) in ct.rows() {
        let parents: Vec<Value> = order[1..].iter().map(|&i| values[i].clone()).collect();
        match cpt.cp(&values[order[0]], &parents) {
            Some(cp) if cp > 0.0 => total += count as f64 * cp.ln(),
            _ => {
                return Err(Error::consistency(format!(
                    "family `{}` has count {count} for a combination with zero probability",
                    cpt.family.child
                )))
            }
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub child: String,
    pub loglikelihood: f64,
    pub num_params: u64,
    pub aic: f64,
}

impl ScoreRecord {
    pub fn new(child: impl Into<String>, loglikelihood: f64, num_params: u64) -> ScoreRecord {
        ScoreRecord {
            child: child.into(),
            loglikelihood,
            num_params,
            aic: loglikelihood - num_params as f64,
        }
    }
}

/// Estimate and score one family from a count source.
pub fn score_family(family: &Family, source: &dyn CountSource) -> Result<(FactorTable, ScoreRecord)> {
    let vdb = source.vdb();
    let ct = source.family_ct(&family.columns())?;
    let cpt = estimate_cpt(family, &ct, vdb)?;
    let ll = family_loglik(&cpt, &ct)?;
    let record = ScoreRecord::new(&family.child, ll, count_params(family, vdb)?);
    Ok((cpt, record))
}

/// A structure with its parameters and scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub bn: BayesNet,
    pub cpts: BTreeMap<String, FactorTable>,
    pub scores: Vec<ScoreRecord>,
    pub count_scope: CountScope,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Totals {
    pub loglikelihood: f64,
    pub num_params: u64,
    pub aic: f64,
}

/// Fit and score every family of `bn`.
pub fn score_model(bn: &BayesNet, source: &dyn CountSource) -> Result<Model> {
    let mut cpts = BTreeMap::new();
    let mut scores = Vec::new();
    for family in bn.families() {
        let (cpt, record) = score_family(&family, source)?;
        cpts.insert(family.child.clone(), cpt);
        scores.push(record);
    }
    Ok(Model {
        bn: bn.clone(),
        cpts,
        scores,
        count_scope: source.scope(),
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelManifest {
    count_scope: CountScope,
    nodes: Vec<String>,
    cpt_files: BTreeMap<String, String>,
    count_files: BTreeMap<String, String>,
}

fn file_stem(id: &str) -> String {
    let mut out: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect();
    while out.ends_with('_') {
        out.pop();
    }
    out
}

fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_f64(s: &str, path: &Path) -> Result<f64> {
    s.parse()
        .map_err(|_| Error::validation(format!("{}: bad number `{s}`", path.display())))
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(header).map_err(|e| Error::csv(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let header = r
        .headers()
        .map_err(|e| Error::csv(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec.map_err(|e| Error::csv(path, e))?.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}

impl Model {
    pub fn totals(&self) -> Totals {
        let loglikelihood = self.scores.iter().map(|s| s.loglikelihood).sum();
        let num_params = self.scores.iter().map(|s| s.num_params).sum();
        let aic = self.scores.iter().map(|s| s.aic).sum();
        Totals {
            loglikelihood,
            num_params,
            aic,
        }
    }

    pub fn score(&self, child: &str) -> Option<&ScoreRecord> {
        self.scores.iter().find(|s| s.child == child)
    }

    /// Write `BayesNet.csv`, one `<node>_CPT.csv` per node, `Scores.csv`, the
    /// family counts under `counts/` and `model.toml` into `dir`.
    pub fn persist(&self, dir: &Path) -> Result<()> {
        let counts_dir = dir.join("counts");
        fs::create_dir_all(&counts_dir).map_err(|e| Error::io(&counts_dir, e))?;

        let mut bn_rows = Vec::new();
        for n in self.bn.nodes() {
            let parents = self.bn.parents(n);
            if parents.is_empty() {
                bn_rows.push(vec![n.clone(), String::new()]);
            }
            bn_rows.extend(parents.into_iter().map(|p| vec![n.clone(), p]));
        }
        write_csv(&dir.join("BayesNet.csv"), &["child".into(), "parent".into()], &bn_rows)?;

        let mut manifest = ModelManifest {
            count_scope: self.count_scope,
            nodes: self.bn.nodes().iter().cloned().collect(),
            cpt_files: BTreeMap::new(),
            count_files: BTreeMap::new(),
        };
        for (child, cpt) in &self.cpts {
            let stem = file_stem(child);
            let cpt_file = format!("{stem}_CPT.csv");
            let mut header = cpt.family.columns();
            header.push("cp".into());
            let rows: Vec<Vec<String>> = cpt
                .rows
                .iter()
                .map(|r| {
                    let mut rec = vec![r.child_value.to_string()];
                    rec.extend(r.parent_values.iter().map(|v| v.to_string()));
                    rec.push(fmt_f64(r.cp));
                    rec
                })
                .collect();
            write_csv(&dir.join(&cpt_file), &header, &rows)?;
            let count_file = format!("counts/{stem}_CT.csv");
            cpt.counts.write_csv(&dir.join(&count_file))?;
            manifest.cpt_files.insert(child.clone(), cpt_file);
            manifest.count_files.insert(child.clone(), count_file);
        }

        let score_rows: Vec<Vec<String>> = self
            .scores
            .iter()
            .map(|s| vec![s.child.clone(), fmt_f64(s.loglikelihood), s.num_params.to_string(), fmt_f64(s.aic)])
            .collect();
        write_csv(
            &dir.join("Scores.csv"),
            &["child".into(), "loglikelihood".into(), "#par".into(), "aic".into()],
            &score_rows,
        )?;

        let path = dir.join("model.toml");
        let text = toml::to_string(&manifest).map_err(|e| Error::consistency(e.to_string()))?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    /// Read a model written by [`Model::persist`].
    pub fn load(dir: &Path, vdb: &Vdb) -> Result<Model> {
        let path = dir.join("model.toml");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: ModelManifest =
            toml::from_str(&text).map_err(|e| Error::validation(format!("{}: {e}", path.display())))?;

        let mut bn = BayesNet::empty(manifest.nodes.iter().cloned());
        let bn_path = dir.join("BayesNet.csv");
        let (_, rows) = read_csv(&bn_path)?;
        for r in rows {
            if r.len() != 2 {
                return Err(Error::validation(format!("{}: expected child,parent rows", bn_path.display())));
            }
            if !r[1].is_empty() {
                bn.add_edge(&r[1], &r[0])?;
            }
        }

        let mut cpts = BTreeMap::new();
        for (child, count_file) in &manifest.count_files {
            let counts = ContingencyTable::read_csv(&dir.join(count_file))?;
            let family = bn.family(child);
            let card = vdb
                .domain(child)
                .ok_or_else(|| Error::validation(format!("no domain for `{child}`")))?
                .len();
            let mut cpt = FactorTable::from_counts(family, counts, card)?;
            let cpt_path = dir.join(&manifest.cpt_files[child]);
            let (header, rows) = read_csv(&cpt_path)?;
            if header[..header.len().saturating_sub(1)] != cpt.family.columns()[..] {
                return Err(Error::validation(format!(
                    "{}: header does not match the family of `{child}`",
                    cpt_path.display()
                )));
            }
            let mut stored = Vec::with_capacity(rows.len());
            for r in rows {
                let n = r.len();
                stored.push(CptRow {
                    child_value: Value::from(r[0].as_str()),
                    parent_values: r[1..n - 1].iter().map(|v| Value::from(v.as_str())).collect(),
                    cp: parse_f64(&r[n - 1], &cpt_path)?,
                });
            }
            cpt.rows = stored;
            cpts.insert(child.clone(), cpt);
        }

        let scores_path = dir.join("Scores.csv");
        let (_, rows) = read_csv(&scores_path)?;
        let mut scores = Vec::new();
        for r in rows {
            if r.len() != 4 {
                return Err(Error::validation(format!("{}: expected 4 columns", scores_path.display())));
            }
            scores.push(ScoreRecord {
                child: r[0].clone(),
                loglikelihood: parse_f64(&r[1], &scores_path)?,
                num_params: r[2]
                    .parse()
                    .map_err(|_| Error::validation(format!("{}: bad #par `{}`", scores_path.display(), r[2])))?,
                aic: parse_f64(&r[3], &scores_path)?,
            });
        }
        Ok(Model {
            bn,
            cpts,
            scores,
            count_scope: manifest.count_scope,
        })
    }
}
