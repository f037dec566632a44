//! Count manager: contingency tables from the database.

mod complete;
mod ct;
mod executor;
mod metaquery;
mod source;
#[cfg(feature = "sqlite")]
mod sqlite;

pub(crate) use complete::block_slices;
pub use complete::{count_query, joint_row_bound, local_ct, project_ct, Counter, TargetCt};
pub use ct::{ContingencyTable, QuerySpec, Value};
pub use executor::{Backend, Builtin};
pub use metaquery::{
    build_metaquery, ColumnExpr, Condition, CountRequest, FromItem, MetaQuery, Operand, Restriction, SelectExpr,
    SelectItem,
};
pub use source::{CountScope, CountSource, OnDemand, Precount};
#[cfg(feature = "sqlite")]
pub use sqlite::Sqlite;
