//! Greedy hill-climbing structure search over par-RV DAGs.
//!
//! Starting from the empty graph, each step scores every single-edge
//! addition, deletion and reversal and applies the one with the largest AIC
//! gain. Because AIC decomposes over families, a move only rescores the one
//! or two families whose parent sets it changes; family scores are cached by
//! parent set.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::count::{CountScope, CountSource};
use crate::error::{Error, Result};
use crate::model::{score_family, score_model, BayesNet, Family, Model, ScoreRecord};
use crate::schema::{ParRvKind, Vdb};

/// Gains at or below this are treated as no improvement.
pub const MIN_GAIN: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    #[default]
    Aic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnConfig {
    pub max_parents: usize,
    pub max_iterations: usize,
    pub score: ScoreKind,
    /// Forbid a relationship attribute from being an ancestor of its own
    /// indicator.
    pub indicator_constraint: bool,
    pub count_scope: CountScope,
}

impl Default for LearnConfig {
    fn default() -> LearnConfig {
        LearnConfig {
            max_parents: 3,
            max_iterations: 1000,
            score: ScoreKind::Aic,
            indicator_constraint: true,
            count_scope: CountScope::Family,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Op {
    Add,
    Delete,
    Reverse,
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Op::Add => "add",
            Op::Delete => "delete",
            Op::Reverse => "reverse",
        })
    }
}

/// A single-edge change to the current graph. `parent -> child` names the
/// edge as it exists before the move (for deletes and reversals) or after it
/// (for additions).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Move {
    pub op: Op,
    pub parent: String,
    pub child: String,
}

impl fmt::Display for Move {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} -> {}", self.op, self.parent, self.child)
    }
}

impl Move {
    pub fn apply(&self, bn: &BayesNet) -> Result<BayesNet> {
        let mut next = bn.clone();
        match self.op {
            Op::Add => next.add_edge(&self.parent, &self.child)?,
            Op::Delete => next.remove_edge(&self.parent, &self.child)?,
            Op::Reverse => next.reverse_edge(&self.parent, &self.child)?,
        }
        Ok(next)
    }

    /// Children whose parent sets the move changes.
    pub fn touched(&self) -> Vec<&str> {
        match self.op {
            Op::Add | Op::Delete => vec![&self.child],
            Op::Reverse => vec![&self.child, &self.parent],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub mv: Move,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchState {
    pub current: BayesNet,
    pub family_scores: BTreeMap<String, ScoreRecord>,
    pub iteration: usize,
}

impl SearchState {
    pub fn total_aic(&self) -> f64 {
        self.family_scores.values().map(|s| s.aic).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub iteration: usize,
    pub mv: Move,
    pub delta: f64,
    pub total_aic: f64,
}

#[derive(Debug, Clone)]
pub struct LearnOutcome {
    pub model: Model,
    pub steps: Vec<StepRecord>,
    /// False when the iteration cap stopped the search.
    pub converged: bool,
}

/// `(attribute, indicator)` pairs for every relationship attribute.
pub fn indicator_pairs(vdb: &Vdb) -> Vec<(String, String)> {
    vdb.par_rvs()
        .into_iter()
        .filter(|v| v.kind == ParRvKind::RelationshipAttribute)
        .filter_map(|v| v.relationship.clone().map(|r| (v.id.clone(), r)))
        .collect()
}

pub struct Search<'s> {
    source: &'s dyn CountSource,
    config: LearnConfig,
    forbidden_paths: Vec<(String, String)>,
    cache: RefCell<HashMap<Family, ScoreRecord>>,
}

impl<'s> Search<'s> {
    pub fn new(source: &'s dyn CountSource, config: LearnConfig) -> Search<'s> {
        let forbidden_paths = if config.indicator_constraint {
            indicator_pairs(source.vdb())
        } else {
            Vec::new()
        };
        Search {
            source,
            config,
            forbidden_paths,
            cache: RefCell::new(HashMap::new()),
        }
    }

    pub fn config(&self) -> &LearnConfig {
        &self.config
    }

    pub fn family_score(&self, family: &Family) -> Result<ScoreRecord> {
        if let Some(r) = self.cache.borrow().get(family) {
            return Ok(r.clone());
        }
        let (_, record) = score_family(family, self.source)?;
        self.cache.borrow_mut().insert(family.clone(), record.clone());
        Ok(record)
    }

    pub fn state_for(&self, bn: BayesNet, iteration: usize) -> Result<SearchState> {
        let mut family_scores = BTreeMap::new();
        for family in bn.families() {
            family_scores.insert(family.child.clone(), self.family_score(&family)?);
        }
        Ok(SearchState {
            current: bn,
            family_scores,
            iteration,
        })
    }

    pub fn initial_state(&self) -> Result<SearchState> {
        self.state_for(BayesNet::empty(self.source.vdb().ids()), 0)
    }

    /// Whether `bn` satisfies the configured constraint set.
    pub fn admissible(&self, bn: &BayesNet) -> bool {
        bn.nodes().iter().all(|n| bn.parents(n).len() <= self.config.max_parents)
            && self.forbidden_paths.iter().all(|(attr, ind)| !bn.has_path(attr, ind))
    }

    /// Every single-edge move that keeps the graph acyclic and admissible.
    pub fn refine_candidates(&self, state: &SearchState) -> Vec<Move> {
        let bn = &state.current;
        let mut moves = Vec::new();
        for p in bn.nodes() {
            for c in bn.nodes() {
                if p == c {
                    continue;
                }
                let ops: &[Op] = if bn.has_edge(p, c) {
                    &[Op::Delete, Op::Reverse]
                } else if bn.has_edge(c, p) {
                    &[]
                } else {
                    &[Op::Add]
                };
                for &op in ops {
                    let mv = Move {
                        op,
                        parent: p.clone(),
                        child: c.clone(),
                    };
                    if let Ok(next) = mv.apply(bn) {
                        if self.admissible(&next) {
                            moves.push(mv);
                        }
                    }
                }
            }
        }
        moves.sort();
        moves
    }

    /// Rescore the families a move changes. Returns the new records.
    pub fn learn_parameters(&self, mv: &Move, state: &SearchState) -> Result<Vec<ScoreRecord>> {
        let next = mv.apply(&state.current)?;
        mv.touched()
            .into_iter()
            .map(|child| self.family_score(&next.family(child)))
            .collect()
    }

    fn delta(&self, mv: &Move, state: &SearchState) -> Result<f64> {
        let records = self.learn_parameters(mv, state)?;
        Ok(records
            .iter()
            .map(|r| r.aic - state.family_scores[&r.child].aic)
            .sum())
    }

    pub fn score_candidates(&self, state: &SearchState) -> Result<Vec<Candidate>> {
        self.refine_candidates(state)
            .into_iter()
            .map(|mv| {
                let delta = self.delta(&mv, state)?;
                Ok(Candidate { mv, delta })
            })
            .collect()
    }

    /// Apply the best improving move, or return `None` at a local optimum.
    /// Among equal gains the smallest move (op, parent, child) wins.
    pub fn step(&self, state: &SearchState) -> Result<Option<(SearchState, StepRecord)>> {
        let mut best: Option<Candidate> = None;
        for cand in self.score_candidates(state)? {
            if cand.delta.is_nan() {
                return Err(Error::consistency(format!("score of `{}` is not a number", cand.mv)));
            }
            let better = match &best {
                None => true,
                Some(b) => cand.delta > b.delta || (cand.delta == b.delta && cand.mv < b.mv),
            };
            if better {
                best = Some(cand);
            }
        }
        let Some(best) = best.filter(|b| b.delta > MIN_GAIN) else {
            return Ok(None);
        };
        let records = self.learn_parameters(&best.mv, state)?;
        let mut next = SearchState {
            current: best.mv.apply(&state.current)?,
            family_scores: state.family_scores.clone(),
            iteration: state.iteration + 1,
        };
        for r in records {
            next.family_scores.insert(r.child.clone(), r);
        }
        let record = StepRecord {
            iteration: next.iteration,
            mv: best.mv,
            delta: best.delta,
            total_aic: next.total_aic(),
        };
        Ok(Some((next, record)))
    }

    pub fn run(&self) -> Result<LearnOutcome> {
        let mut state = self.initial_state()?;
        let mut steps = Vec::new();
        let mut converged = false;
        while state.iteration < self.config.max_iterations {
            match self.step(&state)? {
                Some((next, record)) => {
                    log::info!(
                        "iteration {} {} delta {:.6} total aic {:.6}",
                        record.iteration,
                        record.mv,
                        record.delta,
                        record.total_aic
                    );
                    steps.push(record);
                    state = next;
                }
                None => {
                    converged = true;
                    break;
                }
            }
        }
        let model = score_model(&state.current, self.source)?;
        Ok(LearnOutcome {
            model,
            steps,
            converged,
        })
    }
}

/// Learn a model from the empty graph.
pub fn learn(source: &dyn CountSource, config: &LearnConfig) -> Result<LearnOutcome> {
    Search::new(source, config.clone()).run()
}
