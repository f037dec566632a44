//! Four-part count queries built from VDB metadata, and their SQL text.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::schema::{ParRvKind, Vdb};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ColumnExpr {
    pub alias: String,
    pub column: String,
}

impl ColumnExpr {
    pub fn new(alias: impl Into<String>, column: impl Into<String>) -> ColumnExpr {
        ColumnExpr {
            alias: alias.into(),
            column: column.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SelectExpr {
    CountStar,
    Column(ColumnExpr),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectItem {
    pub expr: SelectExpr,
    pub alias: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FromItem {
    pub table: String,
    pub alias: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Operand {
    Column(ColumnExpr),
    Literal(String),
}

/// An equality condition `left = right`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Condition {
    pub left: ColumnExpr,
    pub right: Operand,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MetaQuery {
    pub select_list: Vec<SelectItem>,
    pub from_list: Vec<FromItem>,
    pub where_list: Vec<Condition>,
    pub group_by_list: Vec<ColumnExpr>,
}

/// Restriction applied to one first-order variable of a count.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Restriction {
    /// Only groundings where the variable is this entity key.
    Key(String),
    /// Add the variable's key to the group-by list (blocked access).
    Group,
}

/// What to count: a list of par-RV columns plus grounding-scope options.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CountRequest {
    pub columns: Vec<String>,
    /// First-order variables to ground over in addition to those of `columns`.
    pub extra_scope: BTreeSet<String>,
    /// Variables identified with another variable (`from -> to`) of the same table.
    pub merge: BTreeMap<String, String>,
    /// Restriction on a (post-merge) first-order variable.
    pub restriction: Option<(String, Restriction)>,
}

impl CountRequest {
    pub fn new<I, S>(columns: I) -> CountRequest
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        CountRequest {
            columns: columns.into_iter().map(Into::into).collect(),
            ..CountRequest::default()
        }
    }

    pub fn with_scope<I, S>(mut self, vars: I) -> CountRequest
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.extra_scope.extend(vars.into_iter().map(Into::into));
        self
    }

    pub fn pinned(mut self, fo_var: impl Into<String>, key: impl Into<String>) -> CountRequest {
        self.restriction = Some((fo_var.into(), Restriction::Key(key.into())));
        self
    }

    pub fn grouped(mut self, fo_var: impl Into<String>) -> CountRequest {
        self.restriction = Some((fo_var.into(), Restriction::Group));
        self
    }

    pub fn rep<'a>(&'a self, fo_var: &'a str) -> &'a str {
        self.merge.get(fo_var).map(String::as_str).unwrap_or(fo_var)
    }

    /// Name of the group-by key column added under [`Restriction::Group`].
    pub fn group_column(&self, vdb: &Vdb) -> Option<String> {
        match &self.restriction {
            Some((fv, Restriction::Group)) => {
                let key = vdb.fo_var(fv).map(|v| v.key_column.as_str()).unwrap_or("id");
                Some(format!("{key}({fv})"))
            }
            _ => None,
        }
    }

    /// Post-merge grounding scope.
    pub fn scope(&self, vdb: &Vdb) -> Result<BTreeSet<String>> {
        let mut scope = vdb.fo_vars_of(&self.columns)?;
        scope.extend(self.extra_scope.iter().cloned());
        if let Some((fv, _)) = &self.restriction {
            scope.insert(fv.clone());
        }
        Ok(scope.iter().map(|v| self.rep(v).to_string()).collect())
    }

    pub(crate) fn validate(&self, vdb: &Vdb) -> Result<()> {
        for (from, to) in &self.merge {
            let (a, b) = (
                vdb.fo_var(from).ok_or_else(|| Error::validation(format!("unknown variable `{from}`")))?,
                vdb.fo_var(to).ok_or_else(|| Error::validation(format!("unknown variable `{to}`")))?,
            );
            if a.entity_table != b.entity_table {
                return Err(Error::validation(format!("cannot identify `{from}` with `{to}`: different tables")));
            }
            if self.merge.contains_key(to) {
                return Err(Error::validation("merge targets must not be merged themselves"));
            }
        }
        for v in &self.extra_scope {
            vdb.fo_var(v).ok_or_else(|| Error::validation(format!("unknown variable `{v}`")))?;
        }
        if let Some((fv, _)) = &self.restriction {
            vdb.fo_var(fv).ok_or_else(|| Error::validation(format!("unknown variable `{fv}`")))?;
            if self.merge.contains_key(fv) {
                return Err(Error::validation("restrict the merge target, not a merged variable"));
            }
        }
        for c in &self.columns {
            vdb.require(c)?;
        }
        Ok(())
    }
}

pub(crate) fn relationship_alias(id: &str) -> String {
    let mut out: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect();
    while out.ends_with('_') {
        out.pop();
    }
    out
}

/// Build the positive count query for `request` with the relationships in
/// `joined` required to hold.
///
/// `columns` must be a subset of the request's columns: entity attributes,
/// attributes of joined relationships and the group column. Indicators are
/// not selected (they are constant `T` for joined relationships).
pub(crate) fn positive_metaquery(
    vdb: &Vdb,
    request: &CountRequest,
    columns: &[String],
    joined: &BTreeSet<String>,
) -> Result<MetaQuery> {
    let scope = request.scope(vdb)?;
    let mut from_list = Vec::new();
    let mut where_list = Vec::new();
    for fv in &scope {
        let var = vdb.fo_var(fv).ok_or_else(|| Error::validation(format!("unknown variable `{fv}`")))?;
        from_list.push(FromItem {
            table: var.entity_table.clone(),
            alias: fv.clone(),
        });
    }
    for rel_id in joined {
        let rel = vdb
            .relationship(rel_id)
            .ok_or_else(|| Error::validation(format!("`{rel_id}` is not a relationship")))?;
        let alias = relationship_alias(rel_id);
        from_list.push(FromItem {
            table: rel.table.clone(),
            alias: alias.clone(),
        });
        for (slot, fv) in rel.fo_vars.iter().enumerate() {
            let rep = request.rep(fv);
            let key = &vdb.fo_var(rep).unwrap().key_column;
            where_list.push(Condition {
                left: ColumnExpr::new(alias.clone(), rel.columns[slot].clone()),
                right: Operand::Column(ColumnExpr::new(rep, key.clone())),
            });
        }
    }
    if let Some((fv, Restriction::Key(key))) = &request.restriction {
        let var = vdb.fo_var(fv).unwrap();
        where_list.push(Condition {
            left: ColumnExpr::new(fv.clone(), var.key_column.clone()),
            right: Operand::Literal(key.clone()),
        });
    }

    let group_column = request.group_column(vdb);
    let mut select_list = vec![SelectItem {
        expr: SelectExpr::CountStar,
        alias: "count".into(),
    }];
    let mut group_by_list = Vec::new();
    for c in columns {
        let expr = if Some(c) == group_column.as_ref() {
            let (fv, _) = request.restriction.as_ref().unwrap();
            ColumnExpr::new(fv.clone(), vdb.fo_var(fv).unwrap().key_column.clone())
        } else {
            let v = vdb.require(c)?;
            match v.kind {
                ParRvKind::EntityAttribute => ColumnExpr::new(request.rep(&v.fo_vars[0]), v.column.clone().unwrap()),
                ParRvKind::RelationshipAttribute => {
                    let rel = v.relationship.as_ref().unwrap();
                    if !joined.contains(rel) {
                        return Err(Error::consistency(format!(
                            "attribute `{c}` selected without joining `{rel}`"
                        )));
                    }
                    ColumnExpr::new(relationship_alias(rel), v.column.clone().unwrap())
                }
                ParRvKind::RelationshipIndicator => {
                    return Err(Error::consistency(format!("indicator `{c}` cannot be selected")));
                }
            }
        };
        select_list.push(SelectItem {
            expr: SelectExpr::Column(expr.clone()),
            alias: c.clone(),
        });
        group_by_list.push(expr);
    }
    if from_list.is_empty() {
        return Err(Error::validation("count query references no table"));
    }
    let mq = MetaQuery {
        select_list,
        from_list,
        where_list,
        group_by_list,
    };
    mq.validate()?;
    Ok(mq)
}

/// Positive-relationship metaquery for a list of par-RVs: every relationship
/// mentioned by the list is joined.
pub fn build_metaquery(vars: &[String], vdb: &Vdb) -> Result<MetaQuery> {
    if vars.is_empty() {
        return Err(Error::validation("count query references no table"));
    }
    let mut joined = BTreeSet::new();
    let mut selected = Vec::new();
    for id in vars {
        let v = vdb.require(id)?;
        if let Some(rel) = &v.relationship {
            joined.insert(rel.clone());
        }
        if v.kind != ParRvKind::RelationshipIndicator {
            selected.push(id.clone());
        }
    }
    positive_metaquery(vdb, &CountRequest::new(vars.iter().cloned()), &selected, &joined)
}

fn quote_ident(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}

fn quote_literal(s: &str) -> String {
    format!("'{}'", s.replace('\'', "''"))
}

fn render_column(c: &ColumnExpr) -> String {
    format!("{}.{}", quote_ident(&c.alias), quote_ident(&c.column))
}

impl MetaQuery {
    pub fn validate(&self) -> Result<()> {
        let aliases: BTreeSet<&str> = self.from_list.iter().map(|f| f.alias.as_str()).collect();
        if aliases.len() != self.from_list.len() {
            return Err(Error::consistency("duplicate alias in FROM list"));
        }
        let known = |c: &ColumnExpr| -> Result<()> {
            if aliases.contains(c.alias.as_str()) {
                Ok(())
            } else {
                Err(Error::consistency(format!("alias `{}` not in FROM list", c.alias)))
            }
        };
        for cond in &self.where_list {
            known(&cond.left)?;
            if let Operand::Column(c) = &cond.right {
                known(c)?;
            }
        }
        let selected: Vec<&ColumnExpr> = self
            .select_list
            .iter()
            .filter_map(|s| match &s.expr {
                SelectExpr::Column(c) => Some(c),
                SelectExpr::CountStar => None,
            })
            .collect();
        for c in &selected {
            known(c)?;
        }
        if selected.len() != self.group_by_list.len() || selected.iter().zip(&self.group_by_list).any(|(a, b)| *a != b) {
            return Err(Error::consistency("GROUP BY list must equal the SELECT list without the count"));
        }
        Ok(())
    }

    /// Output aliases of the grouped columns, in select order.
    pub fn output_columns(&self) -> Vec<String> {
        self.select_list
            .iter()
            .filter(|s| matches!(s.expr, SelectExpr::Column(_)))
            .map(|s| s.alias.clone())
            .collect()
    }

    /// Standard SQL text of the query.
    pub fn render_sql(&self) -> String {
        let mut sql = String::from("SELECT ");
        let items: Vec<String> = self
            .select_list
            .iter()
            .map(|s| match &s.expr {
                SelectExpr::CountStar => format!("COUNT(*) AS {}", quote_ident(&s.alias)),
                SelectExpr::Column(c) => format!("{} AS {}", render_column(c), quote_ident(&s.alias)),
            })
            .collect();
        sql.push_str(&items.join(", "));
        let from: Vec<String> = self
            .from_list
            .iter()
            .map(|f| format!("{} AS {}", quote_ident(&f.table), quote_ident(&f.alias)))
            .collect();
        let _ = write!(sql, "\nFROM {}", from.join(", "));
        if !self.where_list.is_empty() {
            let conds: Vec<String> = self
                .where_list
                .iter()
                .map(|c| {
                    let right = match &c.right {
                        Operand::Column(col) => render_column(col),
                        Operand::Literal(v) => quote_literal(v),
                    };
                    format!("{} = {}", render_column(&c.left), right)
                })
                .collect();
            let _ = write!(sql, "\nWHERE {}", conds.join("\n  AND "));
        }
        if !self.group_by_list.is_empty() {
            let cols: Vec<String> = self.group_by_list.iter().map(render_column).collect();
            let _ = write!(sql, "\nGROUP BY {}", cols.join(", "));
        }
        sql.push('\n');
        sql
    }
}
