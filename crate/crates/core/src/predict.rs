//! Class probabilities for entity attributes from a learned model.
//!
//! The score of label `y` for a target atom is the model's log-linear score
//! of the database with the atom set to `y`. Only groundings that contain the
//! target entity in a position carrying the target attribute change with `y`,
//! so each affected family is scored on target-restricted counts. Within a
//! family, groundings are split by which of its affected variables equal the
//! target entity; those exact parts come from pinned (or grouped) counts with
//! the affected variables identified, by inclusion-exclusion.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use crate::count::{block_slices, ContingencyTable, CountRequest, CountScope, Counter, Value};
use crate::error::{Error, Result};
use crate::model::{FactorTable, Model};
use crate::schema::{ParRvKind, Vdb};

/// Default Laplace pseudo-count for prediction-time CPT lookups.
pub const DEFAULT_ALPHA: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictionTask {
    pub target: String,
    pub entity: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    pub labels: Vec<String>,
    /// Unnormalized log scores (only the terms that vary with the label).
    pub log_scores: Vec<f64>,
    pub probs: Vec<f64>,
}

impl Distribution {
    fn from_scores(labels: Vec<String>, log_scores: Vec<f64>) -> Result<Distribution> {
        let max = log_scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::validation(
                "every label has zero probability; use a positive smoothing pseudo-count",
            ));
        }
        let z: f64 = log_scores.iter().map(|s| (s - max).exp()).sum();
        let probs = log_scores.iter().map(|s| (s - max).exp() / z).collect();
        Ok(Distribution {
            labels,
            log_scores,
            probs,
        })
    }

    pub fn prob(&self, label: &str) -> Option<f64> {
        self.labels.iter().position(|l| l == label).map(|i| self.probs[i])
    }

    /// Most probable label; the first in domain order among ties.
    pub fn argmax(&self) -> &str {
        let mut best = 0;
        for i in 1..self.probs.len() {
            if self.probs[i] > self.probs[best] {
                best = i;
            }
        }
        &self.labels[best]
    }
}

/// One family whose counts depend on the target entity.
#[derive(Debug, Clone)]
struct AffectedFamily {
    child: String,
    columns: Vec<String>,
    /// Affected first-order variables of the family and their attribute column.
    affected: BTreeMap<String, String>,
    /// Multiplier for joint-scope models (groundings of variables outside the family).
    scale: f64,
}

pub struct Predictor<'a> {
    vdb: &'a Vdb,
    model: &'a Model,
    counter: &'a Counter<'a>,
    alpha: f64,
}

struct Target {
    fo_vars: BTreeSet<String>,
    labels: Vec<String>,
    families: Vec<AffectedFamily>,
}

impl<'a> Predictor<'a> {
    pub fn new(vdb: &'a Vdb, model: &'a Model, counter: &'a Counter<'a>, alpha: f64) -> Result<Predictor<'a>> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::validation(format!("smoothing pseudo-count must be finite and ≥ 0, got {alpha}")));
        }
        Ok(Predictor {
            vdb,
            model,
            counter,
            alpha,
        })
    }

    fn target(&self, target: &str) -> Result<Target> {
        let t = self.vdb.require(target)?;
        if t.kind != ParRvKind::EntityAttribute {
            return Err(Error::validation(format!(
                "`{target}` is not an entity attribute; only entity attributes can be predicted"
            )));
        }
        let labels = self
            .vdb
            .domain(target)
            .ok_or_else(|| Error::validation(format!("no domain for `{target}`")))?
            .to_vec();
        // Every copy of the same attribute (one per variable of the table).
        let copies: BTreeMap<String, String> = self
            .vdb
            .one_variables
            .iter()
            .filter(|v| v.table == t.table && v.column == t.column)
            .map(|v| (v.id.clone(), v.fo_vars[0].clone()))
            .collect();
        let joint_scope = self.vdb.fo_vars_of(&self.vdb.ids())?;
        let mut families = Vec::new();
        for (child, cpt) in &self.model.cpts {
            let columns = cpt.family.columns();
            let affected: BTreeMap<String, String> = columns
                .iter()
                .filter_map(|c| copies.get(c).map(|fv| (fv.clone(), c.clone())))
                .collect();
            if affected.is_empty() {
                continue;
            }
            let mut scale = 1.0;
            if self.model.count_scope == CountScope::Joint {
                let own = self.vdb.fo_vars_of(&columns)?;
                for fv in joint_scope.difference(&own) {
                    scale *= self.vdb.population(fv).unwrap_or(0) as f64;
                }
            }
            families.push(AffectedFamily {
                child: child.clone(),
                columns,
                affected,
                scale,
            });
        }
        Ok(Target {
            fo_vars: copies.into_values().collect(),
            labels,
            families,
        })
    }

    /// Request restricted to groundings where every variable of `set` is the
    /// target entity.
    fn restricted(family: &AffectedFamily, set: &BTreeSet<String>) -> (CountRequest, String) {
        let rep = set.iter().next().unwrap().clone();
        let mut request = CountRequest::new(family.columns.iter().cloned());
        for fv in set.iter().skip(1) {
            request.merge.insert(fv.clone(), rep.clone());
        }
        (request, rep)
    }

    /// Split restricted counts into exact parts: groundings where precisely
    /// the variables of each subset equal the target entity.
    fn exact_parts(
        restricted: &BTreeMap<BTreeSet<String>, ContingencyTable>,
    ) -> Result<Vec<(BTreeSet<String>, ContingencyTable)>> {
        let mut sets: Vec<&BTreeSet<String>> = restricted.keys().collect();
        sets.sort_by_key(|s| std::cmp::Reverse(s.len()));
        let mut exact: Vec<(BTreeSet<String>, ContingencyTable)> = Vec::new();
        for set in sets {
            let mut ct = restricted[set].clone();
            for (sup, part) in &exact {
                if sup.len() > set.len() && set.is_subset(sup) {
                    ct = ct.subtract(part)?;
                }
            }
            exact.push((set.clone(), ct));
        }
        Ok(exact)
    }

    fn family_scores(
        &self,
        family: &AffectedFamily,
        parts: &[(BTreeSet<String>, ContingencyTable)],
        labels: &[String],
    ) -> Result<Vec<f64>> {
        let cpt: &FactorTable = &self.model.cpts[&family.child];
        let mut scores = vec![0.0; labels.len()];
        for (set, ct) in parts {
            let cols = ct.columns();
            let child_idx = ct.column_index(&family.child).unwrap();
            let parent_idx: Vec<usize> = cpt
                .family
                .parents
                .iter()
                .map(|p| ct.column_index(p).unwrap())
                .collect();
            let forced: Vec<bool> = cols
                .iter()
                .map(|c| set.iter().any(|fv| family.affected.get(fv) == Some(c)))
                .collect();
            for (k, label) in labels.iter().enumerate() {
                let y = Value::from(label.as_str());
                for (values, count) in ct.rows() {
                    let value = |i: usize| if forced[i] { y.clone() } else { values[i].clone() };
                    let parents: Vec<Value> = parent_idx.iter().map(|&i| value(i)).collect();
                    let lp = cpt.log_prob(&value(child_idx), &parents, self.alpha);
                    scores[k] += family.scale * count as f64 * lp;
                }
            }
        }
        Ok(scores)
    }

    fn subsets(family: &AffectedFamily) -> Vec<BTreeSet<String>> {
        let vars: Vec<&String> = family.affected.keys().collect();
        (1u32..(1 << vars.len()))
            .map(|mask| {
                vars.iter()
                    .enumerate()
                    .filter(|(i, _)| mask & (1 << i) != 0)
                    .map(|(_, v)| (*v).clone())
                    .collect()
            })
            .collect()
    }

    fn check_entity(&self, target: &Target, entity: &str) -> Result<()> {
        let fv = target.fo_vars.iter().next().unwrap();
        let probe = CountRequest::new(Vec::<String>::new()).pinned(fv.clone(), entity);
        if self.counter.completed_ct(&probe)?.total() == 0 {
            return Err(Error::validation(format!("unknown entity `{entity}`")));
        }
        Ok(())
    }

    /// Distribution for one target atom, from target-restricted counts.
    pub fn predict(&self, task: &PredictionTask) -> Result<Distribution> {
        let target = self.target(&task.target)?;
        self.check_entity(&target, &task.entity)?;
        self.predict_labels(&target, &task.entity, &target.labels)
    }

    fn predict_labels(&self, target: &Target, entity: &str, labels: &[String]) -> Result<Distribution> {
        let mut scores = vec![0.0; labels.len()];
        for family in &target.families {
            let mut restricted = BTreeMap::new();
            for set in Self::subsets(family) {
                let (request, rep) = Self::restricted(family, &set);
                let ct = self.counter.completed_ct(&request.pinned(rep, entity))?;
                restricted.insert(set, ct);
            }
            let parts = Self::exact_parts(&restricted)?;
            for (s, f) in scores.iter_mut().zip(self.family_scores(family, &parts, labels)?) {
                *s += f;
            }
        }
        Distribution::from_scores(labels.to_vec(), scores)
    }

    /// Distributions for every entity of the target's population, from one
    /// grouped count per restriction pattern.
    pub fn predict_block(&self, target_id: &str) -> Result<BTreeMap<String, Distribution>> {
        let target = self.target(target_id)?;
        let fv = target.fo_vars.iter().next().unwrap();
        let ids = self
            .counter
            .block_ct(&[], fv)?
            .slices
            .into_keys()
            .collect::<Vec<Value>>();
        let mut scores: BTreeMap<Value, Vec<f64>> = ids.iter().map(|id| (id.clone(), vec![0.0; target.labels.len()])).collect();
        for family in &target.families {
            let mut grouped = BTreeMap::new();
            for set in Self::subsets(family) {
                let (request, rep) = Self::restricted(family, &set);
                let request = request.grouped(rep);
                let ct = self.counter.completed_ct(&request)?;
                grouped.insert(set, block_slices(self.vdb, &request, &ct)?.slices);
            }
            for id in &ids {
                let mut restricted = BTreeMap::new();
                for (set, slices) in &grouped {
                    let ct = match slices.get(id) {
                        Some(ct) => ct.clone(),
                        None => ContingencyTable::empty(family.columns.clone())?,
                    };
                    restricted.insert(set.clone(), ct);
                }
                let parts = Self::exact_parts(&restricted)?;
                let acc = scores.get_mut(id).unwrap();
                for (s, f) in acc.iter_mut().zip(self.family_scores(family, &parts, &target.labels)?) {
                    *s += f;
                }
            }
        }
        scores
            .into_iter()
            .map(|(id, s)| Ok((id.to_string(), Distribution::from_scores(target.labels.clone(), s)?)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Block,
    Single,
}

/// One labelled test atom.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestInstance {
    pub target: String,
    pub entity: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceResult {
    pub instance: TestInstance,
    pub predicted: String,
    pub p_true: f64,
    pub distribution: Distribution,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub results: Vec<InstanceResult>,
    /// Instances dropped for unknown entities or labels, with the reason.
    pub skipped: Vec<(TestInstance, String)>,
    pub cll: f64,
    pub accuracy: f64,
}

/// Read a test split CSV with columns `target,entity,label`.
pub fn read_test_split(path: &std::path::Path) -> Result<Vec<TestInstance>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let header: Vec<String> = r
        .headers()
        .map_err(|e| Error::csv(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    if header != ["target", "entity", "label"] {
        return Err(Error::validation(format!(
            "{}: expected header target,entity,label, found {}",
            path.display(),
            header.join(",")
        )));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        out.push(TestInstance {
            target: rec[0].to_string(),
            entity: rec[1].to_string(),
            label: rec[2].to_string(),
        });
    }
    Ok(out)
}

pub fn write_test_split(path: &std::path::Path, instances: &[TestInstance]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(["target", "entity", "label"]).map_err(|e| Error::csv(path, e))?;
    for i in instances {
        w.write_record([&i.target, &i.entity, &i.label]).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Predict every test instance and summarize.
pub fn evaluate(predictor: &Predictor<'_>, instances: &[TestInstance], mode: Mode) -> Result<EvalReport> {
    let mut results = Vec::new();
    let mut skipped = Vec::new();
    let mut blocks: BTreeMap<String, BTreeMap<String, Distribution>> = BTreeMap::new();
    for inst in instances {
        let dist = match mode {
            Mode::Single => {
                let task = PredictionTask {
                    target: inst.target.clone(),
                    entity: inst.entity.clone(),
                };
                match predictor.predict(&task) {
                    Ok(d) => d,
                    Err(Error::Validation(m)) if m.starts_with("unknown entity") => {
                        log::warn!("skipping {}({}): {m}", inst.target, inst.entity);
                        skipped.push((inst.clone(), m));
                        continue;
                    }
                    Err(e) => return Err(e),
                }
            }
            Mode::Block => {
                if !blocks.contains_key(&inst.target) {
                    blocks.insert(inst.target.clone(), predictor.predict_block(&inst.target)?);
                }
                match blocks[&inst.target].get(&inst.entity) {
                    Some(d) => d.clone(),
                    None => {
                        let m = format!("unknown entity `{}`", inst.entity);
                        log::warn!("skipping {}({}): {m}", inst.target, inst.entity);
                        skipped.push((inst.clone(), m));
                        continue;
                    }
                }
            }
        };
        let Some(p_true) = dist.prob(&inst.label) else {
            let m = format!("label `{}` is not in the domain of `{}`", inst.label, inst.target);
            log::warn!("skipping {}({}): {m}", inst.target, inst.entity);
            skipped.push((inst.clone(), m));
            continue;
        };
        results.push(InstanceResult {
            instance: inst.clone(),
            predicted: dist.argmax().to_string(),
            p_true,
            distribution: dist,
        });
    }
    let n = results.len() as f64;
    let (cll, accuracy) = if results.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        (
            results.iter().map(|r| r.p_true.ln()).sum::<f64>() / n,
            results.iter().filter(|r| r.predicted == r.instance.label).count() as f64 / n,
        )
    };
    Ok(EvalReport {
        results,
        skipped,
        cll,
        accuracy,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub instances: usize,
    pub single_seconds: f64,
    pub block_seconds: f64,
    /// Largest per-label probability difference between the two paths.
    pub max_abs_diff: f64,
}

impl BenchReport {
    pub fn speedup(&self) -> f64 {
        self.single_seconds / self.block_seconds
    }
}

/// Time blocked against single-instance evaluation of the same instances.
/// Fails if the two paths disagree by more than `1e-9` on any label.
pub fn benchmark_block_vs_single(predictor: &Predictor<'_>, instances: &[TestInstance]) -> Result<BenchReport> {
    let start = Instant::now();
    let single = evaluate(predictor, instances, Mode::Single)?;
    let single_seconds = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let block = evaluate(predictor, instances, Mode::Block)?;
    let block_seconds = start.elapsed().as_secs_f64();
    if single.results.len() != block.results.len() {
        return Err(Error::consistency("blocked and single evaluation kept different instances"));
    }
    let mut max_abs_diff: f64 = 0.0;
    for (a, b) in single.results.iter().zip(&block.results) {
        for (p, q) in a.distribution.probs.iter().zip(&b.distribution.probs) {
            max_abs_diff = max_abs_diff.max((p - q).abs());
        }
    }
    if max_abs_diff > 1e-9 {
        return Err(Error::consistency(format!(
            "blocked and single predictions differ by {max_abs_diff:e}"
        )));
    }
    Ok(BenchReport {
        instances: single.results.len(),
        single_seconds,
        block_seconds,
        max_abs_diff,
    })
}
