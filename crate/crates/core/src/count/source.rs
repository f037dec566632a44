//! Where the learner gets family counts from.

use std::cell::RefCell;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::complete::{local_ct, Counter};
use super::ct::ContingencyTable;
use super::metaquery::CountRequest;
use crate::error::Result;
use crate::schema::Vdb;

/// Grounding scope used for family counts.
///
/// `Family` counts groundings of each family's own variables; `Joint` counts
/// every family over the variables of all par-RVs, so all families share one
/// grounding space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CountScope {
    #[default]
    Family,
    Joint,
}

pub trait CountSource {
    /// Completed table over `columns` under the source's scope.
    fn family_ct(&self, columns: &[String]) -> Result<ContingencyTable>;

    fn vdb(&self) -> &Vdb;

    fn scope(&self) -> CountScope;
}

/// Counts derived from one pre-computed joint table.
pub struct Precount<'a> {
    vdb: &'a Vdb,
    joint: ContingencyTable,
    scope: CountScope,
}

impl<'a> Precount<'a> {
    pub fn new(vdb: &'a Vdb, joint: ContingencyTable, scope: CountScope) -> Precount<'a> {
        Precount { vdb, joint, scope }
    }

    pub fn joint(&self) -> &ContingencyTable {
        &self.joint
    }
}

impl CountSource for Precount<'_> {
    fn family_ct(&self, columns: &[String]) -> Result<ContingencyTable> {
        match self.scope {
            CountScope::Family => local_ct(self.vdb, &self.joint, columns),
            CountScope::Joint => self.joint.project(columns),
        }
    }

    fn vdb(&self) -> &Vdb {
        self.vdb
    }

    fn scope(&self) -> CountScope {
        self.scope
    }
}

/// Counts queried when first needed, then cached.
pub struct OnDemand<'a> {
    counter: Counter<'a>,
    scope: CountScope,
    cache: RefCell<HashMap<Vec<String>, ContingencyTable>>,
}

impl<'a> OnDemand<'a> {
    pub fn new(counter: Counter<'a>, scope: CountScope) -> OnDemand<'a> {
        OnDemand {
            counter,
            scope,
            cache: RefCell::new(HashMap::new()),
        }
    }

    pub fn counter(&self) -> &Counter<'a> {
        &self.counter
    }
}

impl CountSource for OnDemand<'_> {
    fn family_ct(&self, columns: &[String]) -> Result<ContingencyTable> {
        let mut key = columns.to_vec();
        key.sort();
        if let Some(ct) = self.cache.borrow().get(&key) {
            return Ok(ct.clone());
        }
        let vdb = self.counter.vdb();
        let mut request = CountRequest::new(key.iter().cloned());
        if self.scope == CountScope::Joint {
            request = request.with_scope(vdb.fo_vars_of(&vdb.ids())?);
        }
        let ct = self.counter.completed_ct(&request)?;
        self.cache.borrow_mut().insert(key, ct.clone());
        Ok(ct)
    }

    fn vdb(&self) -> &Vdb {
        self.counter.vdb()
    }

    fn scope(&self) -> CountScope {
        self.scope
    }
}
