//! Contingency tables with negated relationships.
//!
//! A database only stores true relationship tuples. Counts for groundings in
//! which a relationship is false are derived by subtraction: pick one
//! relationship `r` that is not yet forced true, count with `r` true, count
//! without any of `r`'s columns, and the difference (projected onto the
//! shared columns) is the `r = F` part, where every attribute of `r` is `n/a`.
//! Each branch recurses until every relationship in the table is either
//! forced true or removed.

use std::cell::{Cell, RefCell};
use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::ct::{ContingencyTable, QuerySpec, Value};
use super::executor::Backend;
use super::metaquery::{positive_metaquery, CountRequest, Restriction};
use crate::dataset::NA;
use crate::error::{Error, Result};
use crate::schema::{ParRvKind, Vdb, FALSE, TRUE};

/// Per-entity contingency tables for one first-order variable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetCt {
    pub fo_var: String,
    pub id_column: String,
    pub slices: BTreeMap<Value, ContingencyTable>,
}

type MemoKey = (Vec<String>, BTreeSet<String>);

pub struct Counter<'a> {
    vdb: &'a Vdb,
    backend: &'a dyn Backend,
    queries: Cell<usize>,
    log: Option<RefCell<Vec<String>>>,
}

impl<'a> Counter<'a> {
    pub fn new(vdb: &'a Vdb, backend: &'a dyn Backend) -> Counter<'a> {
        Counter {
            vdb,
            backend,
            queries: Cell::new(0),
            log: None,
        }
    }

    /// Keep the SQL text of every executed query (see [`Counter::take_log`]).
    pub fn with_log(mut self) -> Counter<'a> {
        self.log = Some(RefCell::new(Vec::new()));
        self
    }

    pub fn vdb(&self) -> &'a Vdb {
        self.vdb
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    pub fn queries_executed(&self) -> usize {
        self.queries.get()
    }

    pub fn take_log(&self) -> Vec<String> {
        self.log.as_ref().map(|l| l.take()).unwrap_or_default()
    }

    fn run(
        &self,
        request: &CountRequest,
        columns: &[String],
        joined: &BTreeSet<String>,
        indicators: &[String],
    ) -> Result<ContingencyTable> {
        let mq = positive_metaquery(self.vdb, request, columns, joined)?;
        if let Some(log) = &self.log {
            log.borrow_mut().push(mq.render_sql());
        }
        self.queries.set(self.queries.get() + 1);
        let rows = self.backend.execute(&mq)?;
        let mut all_columns = mq.output_columns();
        all_columns.extend(indicators.iter().cloned());
        let t: Value = Value::from(TRUE);
        ContingencyTable::from_rows(
            all_columns,
            rows.into_iter().map(|(mut values, count)| {
                values.extend(indicators.iter().map(|_| t.clone()));
                (values, count)
            }),
        )
    }

    /// Counts of the positive (all relationships true) groundings of `vars`,
    /// with indicator columns fixed to `T`.
    pub fn positive_ct(&self, vars: &[String]) -> Result<ContingencyTable> {
        let request = CountRequest::new(vars.iter().cloned());
        request.validate(self.vdb)?;
        let mut joined = BTreeSet::new();
        let mut selected = Vec::new();
        let mut indicators = Vec::new();
        for id in vars {
            let v = self.vdb.require(id)?;
            if let Some(rel) = &v.relationship {
                joined.insert(rel.clone());
            }
            if v.kind == ParRvKind::RelationshipIndicator {
                indicators.push(id.clone());
            } else {
                selected.push(id.clone());
            }
        }
        self.run(&request, &selected, &joined, &indicators)
    }

    /// Completed contingency table for `request`, including groundings where
    /// relationships are false.
    pub fn completed_ct(&self, request: &CountRequest) -> Result<ContingencyTable> {
        request.validate(self.vdb)?;
        let columns: BTreeSet<String> = request.columns.iter().cloned().collect();
        if columns.len() != request.columns.len() {
            return Err(Error::validation(format!("repeated par-RV in {:?}", request.columns)));
        }
        // Keep the grounding scope fixed while columns are dropped.
        let mut fixed = request.clone();
        fixed.extra_scope.extend(self.vdb.fo_vars_of(&request.columns)?);
        let group_column = request.group_column(self.vdb);
        let mut memo = HashMap::new();
        let ct = self.complete(&fixed, group_column.as_deref(), columns.into_iter().collect(), BTreeSet::new(), &mut memo)?;
        Ok(ct)
    }

    fn complete(
        &self,
        request: &CountRequest,
        group_column: Option<&str>,
        columns: Vec<String>,
        forced: BTreeSet<String>,
        memo: &mut HashMap<MemoKey, ContingencyTable>,
    ) -> Result<ContingencyTable> {
        let key = (columns, forced);
        if let Some(ct) = memo.get(&key) {
            return Ok(ct.clone());
        }
        let (columns, forced) = &key;
        let mut rels = BTreeSet::new();
        for id in columns {
            if let Some(rel) = &self.vdb.require(id)?.relationship {
                rels.insert(rel.clone());
            }
        }
        let ct = match rels.difference(forced).next().cloned() {
            None => {
                let mut selected = Vec::new();
                let mut indicators = Vec::new();
                for id in columns {
                    if self.vdb.require(id)?.kind == ParRvKind::RelationshipIndicator {
                        indicators.push(id.clone());
                    } else {
                        selected.push(id.clone());
                    }
                }
                selected.extend(group_column.map(str::to_string));
                self.run(request, &selected, forced, &indicators)?
            }
            Some(pivot) => {
                let mut with_true = forced.clone();
                with_true.insert(pivot.clone());
                let t_branch = self.complete(request, group_column, columns.clone(), with_true, memo)?;

                let (pivot_cols, rest): (Vec<String>, Vec<String>) = columns
                    .iter()
                    .cloned()
                    .partition(|id| self.vdb.par_rv(id).and_then(|v| v.relationship.as_deref()) == Some(pivot.as_str()));
                let unconstrained = self.complete(request, group_column, rest.clone(), forced.clone(), memo)?;
                let mut shared = rest;
                shared.extend(group_column.map(str::to_string));
                let f_part = unconstrained.subtract(&t_branch.project(&shared)?).map_err(|e| match e {
                    Error::Consistency(m) => Error::Consistency(format!("completing `{pivot}`: {m}")),
                    other => other,
                })?;
                let f_branch = extend_constant(&f_part, &pivot_cols, self.vdb)?;
                let mut out = t_branch;
                out.merge(&f_branch)?;
                out
            }
        };
        memo.insert(key, ct.clone());
        Ok(ct)
    }

    /// Completed table over the natural scope of `vars`.
    pub fn ct(&self, vars: &[String]) -> Result<ContingencyTable> {
        self.completed_ct(&CountRequest::new(vars.iter().cloned()))
    }

    /// Alias of [`Counter::ct`], named after the operation it performs.
    pub fn complete_false_relationships(&self, vars: &[String]) -> Result<ContingencyTable> {
        self.ct(vars)
    }

    /// Completed table over every par-RV. Fails if the table could exceed
    /// `max_rows` rows.
    pub fn joint_ct(&self, max_rows: u64) -> Result<ContingencyTable> {
        let ids = self.vdb.ids();
        let estimate = joint_row_bound(self.vdb)?;
        if estimate > max_rows {
            return Err(Error::validation(format!(
                "joint contingency table may have up to {estimate} rows (limit {max_rows}); use on-demand counting"
            )));
        }
        self.ct(&ids)
    }

    /// Counts for groundings with `fo_var` fixed to the entity `id`.
    pub fn target_ct(&self, vars: &[String], fo_var: &str, id: &str) -> Result<ContingencyTable> {
        let request = CountRequest::new(vars.iter().cloned()).pinned(fo_var, id);
        let ct = self.completed_ct(&request)?;
        if ct.total() == 0 {
            return Err(Error::validation(format!("unknown entity `{id}` for `{fo_var}`")));
        }
        Ok(ct)
    }

    /// Per-entity tables for every entity of `fo_var`, from one grouped query
    /// per completion step.
    pub fn block_ct(&self, vars: &[String], fo_var: &str) -> Result<TargetCt> {
        let request = CountRequest::new(vars.iter().cloned()).grouped(fo_var);
        block_slices(self.vdb, &request, &self.completed_ct(&request)?)
    }
}

/// Split a grouped table into one table per entity key.
pub(crate) fn block_slices(vdb: &Vdb, request: &CountRequest, ct: &ContingencyTable) -> Result<TargetCt> {
    let (fo_var, id_column) = match (&request.restriction, request.group_column(vdb)) {
        (Some((fv, Restriction::Group)), Some(col)) => (fv.clone(), col),
        _ => return Err(Error::validation("block counting needs a grouped request")),
    };
    let i = ct
        .column_index(&id_column)
        .ok_or_else(|| Error::consistency("grouped table lacks its key column"))?;
    let mut columns = ct.columns().to_vec();
    columns.remove(i);
    let mut grouped: BTreeMap<Value, Vec<(Vec<Value>, u64)>> = BTreeMap::new();
    for (values, count) in ct.rows() {
        let mut rest = values.to_vec();
        let id = rest.remove(i);
        grouped.entry(id).or_default().push((rest, count));
    }
    let mut slices = BTreeMap::new();
    for (id, rows) in grouped {
        slices.insert(id, ContingencyTable::from_rows(columns.clone(), rows)?);
    }
    Ok(TargetCt {
        fo_var,
        id_column,
        slices,
    })
}

/// Add the given columns of a false relationship: `F` for its indicator and
/// `n/a` for its attributes.
fn extend_constant(ct: &ContingencyTable, columns: &[String], vdb: &Vdb) -> Result<ContingencyTable> {
    if columns.is_empty() {
        return Ok(ct.clone());
    }
    let mut values = Vec::with_capacity(columns.len());
    for id in columns {
        values.push(Value::from(if vdb.require(id)?.is_indicator() { FALSE } else { NA }));
    }
    let mut all = ct.columns().to_vec();
    all.extend(columns.iter().cloned());
    ContingencyTable::from_rows(
        all,
        ct.rows().map(|(v, c)| {
            let mut row = v.to_vec();
            row.extend(values.iter().cloned());
            (row, c)
        }),
    )
}

/// Upper bound on the number of rows of the joint table.
pub fn joint_row_bound(vdb: &Vdb) -> Result<u64> {
    let mut by_domain: u64 = 1;
    for v in vdb.par_rvs() {
        let n = vdb.domain(&v.id).map(<[String]>::len).unwrap_or(0) as u64;
        by_domain = by_domain.saturating_mul(n);
    }
    let ids = vdb.ids();
    let mut by_groundings: u64 = 1;
    for fv in vdb.fo_vars_of(&ids)? {
        by_groundings = by_groundings.saturating_mul(vdb.population(&fv).unwrap_or(0));
    }
    Ok(by_domain.min(by_groundings))
}

/// Group-by-sum projection. Counts keep the scope of `ct`.
pub fn project_ct(ct: &ContingencyTable, subset: &[String]) -> Result<ContingencyTable> {
    ct.project(subset)
}

/// Table for `subset` over its own natural scope, derived from a table whose
/// scope is the variables of all its columns.
pub fn local_ct(vdb: &Vdb, joint: &ContingencyTable, subset: &[String]) -> Result<ContingencyTable> {
    let projected = joint.project(subset)?;
    let full = vdb.fo_vars_of(joint.columns())?;
    let kept = vdb.fo_vars_of(subset)?;
    let mut factor: u64 = 1;
    for fv in full.difference(&kept) {
        let pop = vdb
            .population(fv)
            .ok_or_else(|| Error::consistency(format!("no population for `{fv}`")))?;
        factor = factor
            .checked_mul(pop)
            .ok_or_else(|| Error::consistency("scope factor overflows"))?;
    }
    projected.divide(factor)
}

pub fn count_query(ct: &ContingencyTable, query: &QuerySpec) -> Result<u64> {
    ct.count_of(query)
}

#[cfg(test)]
mod tests {
    use std::path::Path;

    use super::*;
    use crate::count::Builtin;
    use crate::dataset::Dataset;
    use crate::schema::analyze;

    fn toy() -> Dataset {
        Dataset::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/university/manifest.toml")).unwrap()
    }

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn joint_table_covers_all_groundings() {
        let data = toy();
        let vdb = analyze(&data).unwrap();
        let backend = Builtin::new(&data);
        let counter = Counter::new(&vdb, &backend);
        let joint = counter.joint_ct(1_000_000).unwrap();
        assert_eq!(joint.total(), 9);
        let q = QuerySpec::new([("RA(P0,S0)", "T"), ("Capability(P0,S0)", "3"), ("Salary(P0,S0)", "high")]);
        assert_eq!(joint.count_of(&q).unwrap(), 1);
        let f = QuerySpec::new([("RA(P0,S0)", "F"), ("Capability(P0,S0)", "n/a")]);
        assert_eq!(joint.count_of(&f).unwrap(), 5);
    }

    #[test]
    fn pinned_and_grouped_agree() {
        let data = toy();
        let vdb = analyze(&data).unwrap();
        let backend = Builtin::new(&data);
        let counter = Counter::new(&vdb, &backend);
        let vars = ids(&["Intelligence(S0)", "RA(P0,S0)", "Popularity(P0)"]);
        let block = counter.block_ct(&vars, "S0").unwrap();
        assert_eq!(block.id_column, "s_id(S0)");
        assert_eq!(block.slices.len(), 3);
        for (id, slice) in &block.slices {
            assert_eq!(slice, &counter.target_ct(&vars, "S0", id).unwrap());
        }
        assert!(counter.target_ct(&vars, "S0", "nobody").is_err());
    }

    #[test]
    fn local_table_matches_direct_count() {
        let data = toy();
        let vdb = analyze(&data).unwrap();
        let backend = Builtin::new(&data);
        let counter = Counter::new(&vdb, &backend);
        let joint = counter.joint_ct(1_000_000).unwrap();
        let subset = ids(&["Intelligence(S0)", "Ranking(S0)"]);
        assert_eq!(local_ct(&vdb, &joint, &subset).unwrap(), counter.ct(&subset).unwrap());
        assert_eq!(counter.ct(&subset).unwrap().total(), 3);
    }
}
