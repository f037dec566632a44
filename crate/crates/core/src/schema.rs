//! Schema analysis: from the key catalog to the random variable database (VDB).
//!
//! Tables are classified into entity tables and binary relationship tables
//! following the key-catalog rules (keyless and ternary tables are dropped).
//! Every entity table gets a first-order variable, plus a second copy when a
//! self-relationship references it. Attribute columns become parametrized
//! random variables over those variables; relationship tables become boolean
//! indicators over variable pairs.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;

use crate::dataset::{Dataset, SchemaMetadata, NA};
use crate::error::{Error, Result};

pub const TRUE: &str = "T";
pub const FALSE: &str = "F";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ExclusionReason {
    NoPrimaryKey,
    Ternary,
    /// Composite primary key that is not a pair of foreign keys.
    CompositeEntityKey,
    /// Relationship slot whose referenced table is not an entity table.
    DanglingReference,
}

impl fmt::Display for ExclusionReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExclusionReason::NoPrimaryKey => "no-primary-key",
            ExclusionReason::Ternary => "ternary",
            ExclusionReason::CompositeEntityKey => "composite-entity-key",
            ExclusionReason::DanglingReference => "dangling-reference",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityTable {
    pub name: String,
    pub key_column: String,
}

/// One argument slot of a binary relationship table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationshipSlot {
    pub column: String,
    pub referenced_table: String,
    pub referenced_column: String,
    pub ordinal_position: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationshipTable {
    pub name: String,
    pub slots: [RelationshipSlot; 2],
    pub self_relationship: bool,
    /// Many-one: the table is itself an entity table whose rows point at one
    /// entity of another (or the same) table.
    pub many_one: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Classification {
    pub entity_tables: Vec<EntityTable>,
    pub relationship_tables: Vec<RelationshipTable>,
    pub excluded: Vec<(String, ExclusionReason)>,
}

impl Classification {
    pub fn entity(&self, name: &str) -> Option<&EntityTable> {
        self.entity_tables.iter().find(|e| e.name == name)
    }

    pub fn relationship(&self, name: &str) -> Option<&RelationshipTable> {
        self.relationship_tables.iter().find(|r| r.name == name)
    }

    pub fn is_excluded(&self, name: &str) -> bool {
        self.excluded.iter().any(|(t, _)| t == name)
    }
}

pub fn classify_tables(md: &SchemaMetadata) -> Classification {
    let mut entity_tables = Vec::new();
    let mut pending = Vec::new();
    let mut excluded = Vec::new();

    for table in &md.tables {
        let name = table.name.as_str();
        let pk = md.primary_key(name);
        if pk.is_empty() {
            excluded.push((name.to_string(), ExclusionReason::NoPrimaryKey));
            continue;
        }
        if md.num_entity_columns(name) > 2 {
            excluded.push((name.to_string(), ExclusionReason::Ternary));
            continue;
        }
        let fks: Vec<_> = md.foreign_keys_of(name).collect();
        let slot = |fk: &crate::dataset::ForeignKey| RelationshipSlot {
            column: fk.column.clone(),
            referenced_table: fk.referenced_table.clone(),
            referenced_column: fk.referenced_column.clone(),
            ordinal_position: fk.ordinal_position,
        };
        match pk.len() {
            1 => {
                entity_tables.push(EntityTable {
                    name: name.to_string(),
                    key_column: pk[0].clone(),
                });
                if let Some(fk) = fks.iter().find(|fk| fk.column != pk[0]) {
                    let own = RelationshipSlot {
                        column: pk[0].clone(),
                        referenced_table: name.to_string(),
                        referenced_column: pk[0].clone(),
                        ordinal_position: md.ordinal_position(name, &pk[0]).unwrap(),
                    };
                    let self_relationship = fk.referenced_table == name;
                    pending.push(RelationshipTable {
                        name: name.to_string(),
                        slots: [own, slot(fk)],
                        self_relationship,
                        many_one: true,
                    });
                }
            }
            2 => {
                let mut pk_fks: Vec<_> = fks.iter().filter(|fk| pk.contains(&fk.column)).collect();
                if pk_fks.len() != 2 {
                    excluded.push((name.to_string(), ExclusionReason::CompositeEntityKey));
                    continue;
                }
                pk_fks.sort_by_key(|fk| fk.ordinal_position);
                let (a, b) = (pk_fks[0], pk_fks[1]);
                let self_relationship =
                    a.referenced_table == b.referenced_table && a.referenced_column == b.referenced_column;
                pending.push(RelationshipTable {
                    name: name.to_string(),
                    slots: [slot(a), slot(b)],
                    self_relationship,
                    many_one: false,
                });
            }
            _ => excluded.push((name.to_string(), ExclusionReason::CompositeEntityKey)),
        }
    }

    let mut relationship_tables = Vec::new();
    for rel in pending {
        let resolved = rel.slots.iter().all(|s| {
            entity_tables
                .iter()
                .any(|e| e.name == s.referenced_table && e.key_column == s.referenced_column)
        });
        if resolved {
            relationship_tables.push(rel);
        } else if rel.many_one {
            // The table still stands as an entity table; only its pointer is dropped.
            log::warn!(
                "many-one reference of `{}` does not target an entity key; ignored",
                rel.name
            );
        } else {
            excluded.push((rel.name.clone(), ExclusionReason::DanglingReference));
        }
    }
    for (table, reason) in &excluded {
        log::warn!("table `{table}` excluded from analysis: {reason}");
    }

    Classification {
        entity_tables,
        relationship_tables,
        excluded,
    }
}

/// A typed first-order variable ranging over an entity table's key.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FoVar {
    pub id: String,
    pub entity_table: String,
    pub key_column: String,
    pub index_number: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParRvKind {
    EntityAttribute,
    RelationshipIndicator,
    RelationshipAttribute,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParRv {
    pub id: String,
    pub kind: ParRvKind,
    pub functor: String,
    pub fo_vars: Vec<String>,
    /// Source table; for attributes also the source column.
    pub table: String,
    pub column: Option<String>,
    /// Indicator id of the relationship this variable belongs to.
    pub relationship: Option<String>,
    pub main: bool,
}

impl ParRv {
    pub fn is_indicator(&self) -> bool {
        self.kind == ParRvKind::RelationshipIndicator
    }
}

/// Join metadata for one relationship indicator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Relationship {
    pub id: String,
    pub table: String,
    pub fo_vars: [String; 2],
    /// Columns of `table` matched against the variables' entity keys.
    pub columns: [String; 2],
    pub self_relationship: bool,
    pub many_one: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Domain {
    pub par_rv: String,
    pub values: Vec<String>,
}

/// The random variable database.
#[derive(Debug, Clone, Default)]
pub struct Vdb {
    pub pvariables: Vec<FoVar>,
    pub one_variables: Vec<ParRv>,
    pub two_variables: Vec<ParRv>,
    pub relationships: Vec<ParRv>,
    pub relationship_meta: Vec<Relationship>,
    pub attribute_columns: Vec<(String, String)>,
    pub domains: Vec<Domain>,
    pub excluded_tables: Vec<(String, ExclusionReason)>,
    pub population_sizes: BTreeMap<String, u64>,
    index: HashMap<String, (ParRvKind, usize)>,
}

fn fo_var_prefixes(entities: &[EntityTable], overrides: &BTreeMap<String, String>) -> Result<BTreeMap<String, String>> {
    let mut names: Vec<&str> = entities.iter().map(|e| e.name.as_str()).collect();
    names.sort();
    let free: Vec<&str> = names.iter().copied().filter(|n| !overrides.contains_key(*n)).collect();
    let taken: BTreeSet<&str> = overrides
        .iter()
        .filter(|(t, _)| names.contains(&t.as_str()))
        .map(|(_, v)| v.as_str())
        .collect();
    let max_len = free.iter().map(|n| n.chars().count()).max().unwrap_or(1);
    let prefix = |name: &str, len: usize| -> String {
        let mut chars = name.chars();
        let mut out: String = chars.next().map(|c| c.to_uppercase().collect()).unwrap_or_default();
        out.extend(chars.take(len.saturating_sub(1)));
        out
    };
    let mut chosen = None;
    for len in 1..=max_len {
        let cand: Vec<String> = free.iter().map(|n| prefix(n, len)).collect();
        let unique: BTreeSet<&str> = cand.iter().map(String::as_str).collect();
        let clean = unique.len() == cand.len()
            && cand.iter().all(|c| !taken.contains(c.as_str()) && !c.ends_with(|ch: char| ch.is_ascii_digit()));
        if clean {
            chosen = Some(cand);
            break;
        }
    }
    let chosen = match chosen {
        Some(c) => c,
        None => free.iter().map(|n| format!("{n}_")).collect(),
    };
    let mut out: BTreeMap<String, String> = free.iter().map(|n| n.to_string()).zip(chosen).collect();
    for n in names {
        if let Some(v) = overrides.get(n) {
            out.insert(n.to_string(), v.clone());
        }
    }
    let distinct: BTreeSet<&String> = out.values().collect();
    if distinct.len() != out.len() {
        return Err(Error::validation("first-order variable names collide; set distinct `variable` names"));
    }
    Ok(out)
}

/// Derive first-order variables and par-RVs (without domains).
///
/// `variable_names` maps entity table names to user-chosen variable stems.
pub fn generate_par_rvs(
    classification: &Classification,
    md: &SchemaMetadata,
    variable_names: &BTreeMap<String, String>,
) -> Result<Vdb> {
    let prefixes = fo_var_prefixes(&classification.entity_tables, variable_names)?;
    let self_targets: BTreeSet<&str> = classification
        .relationship_tables
        .iter()
        .filter(|r| r.self_relationship)
        .map(|r| r.slots[1].referenced_table.as_str())
        .collect();

    let mut entities: Vec<&EntityTable> = classification.entity_tables.iter().collect();
    entities.sort_by(|a, b| a.name.cmp(&b.name));
    let mut pvariables = Vec::new();
    for e in &entities {
        let copies = if self_targets.contains(e.name.as_str()) { 2 } else { 1 };
        for index in 0..copies {
            pvariables.push(FoVar {
                id: format!("{}{index}", prefixes[&e.name]),
                entity_table: e.name.clone(),
                key_column: e.key_column.clone(),
                index_number: index,
            });
        }
    }
    let vars_of = |table: &str| -> Vec<&FoVar> { pvariables.iter().filter(|v| v.entity_table == table).collect() };

    // Attribute columns: every non-key column of an included table.
    let mut attribute_columns = Vec::new();
    for t in &md.tables {
        if classification.is_excluded(&t.name) {
            continue;
        }
        let keys = md.key_columns(&t.name);
        for c in &t.columns {
            if !keys.contains(c.as_str()) {
                attribute_columns.push((t.name.clone(), c.clone()));
            }
        }
    }
    attribute_columns.sort();
    let attrs_of = |table: &str| -> Vec<&str> {
        attribute_columns
            .iter()
            .filter(|(t, _)| t == table)
            .map(|(_, c)| c.as_str())
            .collect()
    };

    let mut one_variables = Vec::new();
    for v in &pvariables {
        for col in attrs_of(&v.entity_table) {
            one_variables.push(ParRv {
                id: format!("{col}({})", v.id),
                kind: ParRvKind::EntityAttribute,
                functor: col.to_string(),
                fo_vars: vec![v.id.clone()],
                table: v.entity_table.clone(),
                column: Some(col.to_string()),
                relationship: None,
                main: v.index_number == 0,
            });
        }
    }

    let mut relationships = Vec::new();
    let mut relationship_meta = Vec::new();
    let mut two_variables = Vec::new();
    let mut rels: Vec<&RelationshipTable> = classification.relationship_tables.iter().collect();
    rels.sort_by(|a, b| a.name.cmp(&b.name));
    for rel in rels {
        let functor = if rel.many_one {
            rel.slots[1].column.clone()
        } else {
            rel.name.clone()
        };
        for a in vars_of(&rel.slots[0].referenced_table) {
            for b in vars_of(&rel.slots[1].referenced_table) {
                if rel.self_relationship && a.index_number >= b.index_number {
                    continue;
                }
                let main = if rel.self_relationship {
                    a.index_number == 0 && b.index_number == 1
                } else {
                    a.index_number == 0 && b.index_number == 0
                };
                let id = format!("{functor}({},{})", a.id, b.id);
                relationships.push(ParRv {
                    id: id.clone(),
                    kind: ParRvKind::RelationshipIndicator,
                    functor: functor.clone(),
                    fo_vars: vec![a.id.clone(), b.id.clone()],
                    table: rel.name.clone(),
                    column: None,
                    relationship: Some(id.clone()),
                    main,
                });
                relationship_meta.push(Relationship {
                    id: id.clone(),
                    table: rel.name.clone(),
                    fo_vars: [a.id.clone(), b.id.clone()],
                    columns: [rel.slots[0].column.clone(), rel.slots[1].column.clone()],
                    self_relationship: rel.self_relationship,
                    many_one: rel.many_one,
                });
                if rel.many_one {
                    // Attributes of a many-one table describe its own entities.
                    continue;
                }
                for col in attrs_of(&rel.name) {
                    two_variables.push(ParRv {
                        id: format!("{col}({},{})", a.id, b.id),
                        kind: ParRvKind::RelationshipAttribute,
                        functor: col.to_string(),
                        fo_vars: vec![a.id.clone(), b.id.clone()],
                        table: rel.name.clone(),
                        column: Some(col.to_string()),
                        relationship: Some(id.clone()),
                        main,
                    });
                }
            }
        }
    }

    let mut vdb = Vdb {
        pvariables,
        one_variables,
        two_variables,
        relationships,
        relationship_meta,
        attribute_columns,
        domains: Vec::new(),
        excluded_tables: classification.excluded.clone(),
        population_sizes: BTreeMap::new(),
        index: HashMap::new(),
    };
    vdb.reindex()?;
    Ok(vdb)
}

/// Attach domains and population sizes read from the data.
pub fn build_domains(mut vdb: Vdb, dataset: &Dataset) -> Result<Vdb> {
    let mut domains = Vec::new();
    for v in vdb.par_rvs() {
        let values = match v.kind {
            ParRvKind::RelationshipIndicator => vec![FALSE.to_string(), TRUE.to_string()],
            ParRvKind::EntityAttribute | ParRvKind::RelationshipAttribute => {
                let column = v.column.as_deref().unwrap();
                let table = dataset
                    .table(&v.table)
                    .ok_or_else(|| Error::validation(format!("table `{}` missing from dataset", v.table)))?;
                let idx = table
                    .column_index(column)
                    .ok_or_else(|| Error::validation(format!("column `{}.{column}` missing", v.table)))?;
                let mut values: BTreeSet<String> =
                    table.column(idx).iter().map(|&c| dataset.value(c).to_string()).collect();
                if v.kind == ParRvKind::RelationshipAttribute {
                    values.insert(NA.to_string());
                } else if values.is_empty() {
                    return Err(Error::validation(format!(
                        "entity attribute `{}` has no observed values; table `{}` is empty",
                        v.id, v.table
                    )));
                }
                values.into_iter().collect()
            }
        };
        domains.push(Domain {
            par_rv: v.id.clone(),
            values,
        });
    }
    vdb.domains = domains;
    vdb.population_sizes = vdb
        .pvariables
        .iter()
        .map(|v| {
            let n = dataset.table(&v.entity_table).map(|t| t.num_rows()).unwrap_or(0) as u64;
            (v.entity_table.clone(), n)
        })
        .collect();
    for (table, &n) in &vdb.population_sizes {
        if n == 0 {
            return Err(Error::validation(format!("entity table `{table}` has no rows")));
        }
    }
    Ok(vdb)
}

/// Run the full analysis: classify, generate par-RVs, attach domains.
pub fn analyze(dataset: &Dataset) -> Result<Vdb> {
    let md = dataset.metadata();
    let classification = classify_tables(md);
    let names: BTreeMap<String, String> = dataset
        .manifest()
        .tables
        .iter()
        .filter_map(|t| t.variable.clone().map(|v| (t.name.clone(), v)))
        .collect();
    let vdb = generate_par_rvs(&classification, md, &names)?;
    build_domains(vdb, dataset)
}

impl Vdb {
    fn reindex(&mut self) -> Result<()> {
        let mut index = HashMap::new();
        let lists = [
            (ParRvKind::EntityAttribute, &self.one_variables),
            (ParRvKind::RelationshipIndicator, &self.relationships),
            (ParRvKind::RelationshipAttribute, &self.two_variables),
        ];
        for (kind, list) in lists {
            for (i, v) in list.iter().enumerate() {
                if index.insert(v.id.clone(), (kind, i)).is_some() {
                    return Err(Error::validation(format!(
                        "par-RV id `{}` is generated twice; rename one of the source columns",
                        v.id
                    )));
                }
            }
        }
        self.index = index;
        Ok(())
    }

    /// All par-RVs in id order.
    pub fn par_rvs(&self) -> Vec<&ParRv> {
        let mut all: Vec<&ParRv> = self
            .one_variables
            .iter()
            .chain(&self.relationships)
            .chain(&self.two_variables)
            .collect();
        all.sort_by(|a, b| a.id.cmp(&b.id));
        all
    }

    pub fn ids(&self) -> Vec<String> {
        self.par_rvs().into_iter().map(|v| v.id.clone()).collect()
    }

    pub fn par_rv(&self, id: &str) -> Option<&ParRv> {
        let &(kind, i) = self.index.get(id)?;
        Some(match kind {
            ParRvKind::EntityAttribute => &self.one_variables[i],
            ParRvKind::RelationshipIndicator => &self.relationships[i],
            ParRvKind::RelationshipAttribute => &self.two_variables[i],
        })
    }

    pub fn require(&self, id: &str) -> Result<&ParRv> {
        self.par_rv(id)
            .ok_or_else(|| Error::validation(format!("unknown par-RV `{id}`")))
    }

    pub fn fo_var(&self, id: &str) -> Option<&FoVar> {
        self.pvariables.iter().find(|v| v.id == id)
    }

    pub fn relationship(&self, id: &str) -> Option<&Relationship> {
        self.relationship_meta.iter().find(|r| r.id == id)
    }

    pub fn domain(&self, id: &str) -> Option<&[String]> {
        self.domains
            .iter()
            .find(|d| d.par_rv == id)
            .map(|d| d.values.as_slice())
    }

    pub fn population(&self, fo_var: &str) -> Option<u64> {
        let v = self.fo_var(fo_var)?;
        self.population_sizes.get(&v.entity_table).copied()
    }

    /// Union of the first-order variables of the given par-RVs.
    pub fn fo_vars_of<'a, I>(&self, ids: I) -> Result<BTreeSet<String>>
    where
        I: IntoIterator<Item = &'a String>,
    {
        let mut out = BTreeSet::new();
        for id in ids {
            out.extend(self.require(id)?.fo_vars.iter().cloned());
        }
        Ok(out)
    }

    /// Write the VDB tables as CSV files into `dir`.
    pub fn export(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, header: &[&str], rows: Vec<Vec<String>>| -> Result<()> {
            let path = dir.join(name);
            let mut w = csv::Writer::from_path(&path).map_err(|e| Error::csv(&path, e))?;
            w.write_record(header).map_err(|e| Error::csv(&path, e))?;
            for r in rows {
                w.write_record(&r).map_err(|e| Error::csv(&path, e))?;
            }
            w.flush().map_err(|e| Error::io(&path, e))
        };

        write(
            "AttributeColumns.csv",
            &["TABLE_NAME", "COLUMN_NAME"],
            self.attribute_columns.iter().map(|(t, c)| vec![t.clone(), c.clone()]).collect(),
        )?;

        let mut column_domain = BTreeSet::new();
        for v in self.one_variables.iter().chain(&self.two_variables) {
            for value in self.domain(&v.id).unwrap_or(&[]) {
                column_domain.insert((v.functor.clone(), value.clone()));
            }
        }
        write(
            "Domain.csv",
            &["COLUMN_NAME", "VALUE"],
            column_domain.into_iter().map(|(c, v)| vec![c, v]).collect(),
        )?;
        write(
            "VarDomain.csv",
            &["VarID", "VALUE"],
            self.domains
                .iter()
                .flat_map(|d| d.values.iter().map(move |v| vec![d.par_rv.clone(), v.clone()]))
                .collect(),
        )?;
        write(
            "Pvariables.csv",
            &["Pvid", "TABLE_NAME"],
            self.pvariables
                .iter()
                .map(|v| vec![v.id.clone(), v.entity_table.clone()])
                .collect(),
        )?;
        write(
            "1Variables.csv",
            &["1VarID", "COLUMN_NAME", "Pvid"],
            self.one_variables
                .iter()
                .map(|v| vec![v.id.clone(), v.functor.clone(), v.fo_vars[0].clone()])
                .collect(),
        )?;
        write(
            "2Variables.csv",
            &["2VarID", "COLUMN_NAME", "Pvid1", "Pvid2", "TABLE_NAME"],
            self.two_variables
                .iter()
                .map(|v| {
                    vec![
                        v.id.clone(),
                        v.functor.clone(),
                        v.fo_vars[0].clone(),
                        v.fo_vars[1].clone(),
                        v.table.clone(),
                    ]
                })
                .collect(),
        )?;
        write(
            "Relationship.csv",
            &["RVarID", "TABLE_NAME", "Pvid1", "Pvid2", "COLUMN_NAME1", "COLUMN_NAME2"],
            self.relationship_meta
                .iter()
                .map(|r| {
                    vec![
                        r.id.clone(),
                        r.table.clone(),
                        r.fo_vars[0].clone(),
                        r.fo_vars[1].clone(),
                        r.columns[0].clone(),
                        r.columns[1].clone(),
                    ]
                })
                .collect(),
        )?;
        write(
            "Relationship_FOvariables.csv",
            &["RVarID", "FO-ID", "TABLE_NAME"],
            self.relationship_meta
                .iter()
                .flat_map(|r| {
                    r.fo_vars.iter().map(move |fv| {
                        let table = self.fo_var(fv).map(|v| v.entity_table.clone()).unwrap_or_default();
                        vec![r.id.clone(), fv.clone(), table]
                    })
                })
                .collect(),
        )?;
        write(
            "ExcludedTables.csv",
            &["TABLE_NAME", "REASON"],
            self.excluded_tables
                .iter()
                .map(|(t, r)| vec![t.clone(), r.to_string()])
                .collect(),
        )?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ForeignKeySpec, Manifest, TableSpec};

    fn table(name: &str, cols: &[&str], pk: &[&str], fks: &[(&str, &str, &str)]) -> TableSpec {
        TableSpec {
            name: name.into(),
            file: format!("{name}.csv"),
            columns: cols.iter().map(|s| s.to_string()).collect(),
            primary_key: pk.iter().map(|s| s.to_string()).collect(),
            foreign_keys: fks
                .iter()
                .map(|(c, t, rc)| ForeignKeySpec {
                    column: c.to_string(),
                    references: t.to_string(),
                    referenced_column: rc.to_string(),
                })
                .collect(),
            variable: None,
        }
    }

    fn md(tables: Vec<TableSpec>) -> SchemaMetadata {
        SchemaMetadata::from_manifest(&Manifest { name: None, tables }).unwrap()
    }

    fn university() -> SchemaMetadata {
        md(vec![
            table("Student", &["s_id", "Intelligence", "Ranking"], &["s_id"], &[]),
            table("Professor", &["p_id", "Popularity", "Teachingability"], &["p_id"], &[]),
            table(
                "RA",
                &["p_id", "s_id", "Capability", "Salary"],
                &["p_id", "s_id"],
                &[("p_id", "Professor", "p_id"), ("s_id", "Student", "s_id")],
            ),
        ])
    }

    #[test]
    fn university_classification() {
        let c = classify_tables(&university());
        let mut ents: Vec<_> = c.entity_tables.iter().map(|e| e.name.as_str()).collect();
        ents.sort();
        assert_eq!(ents, ["Professor", "Student"]);
        assert_eq!(c.relationship_tables.len(), 1);
        let ra = &c.relationship_tables[0];
        assert_eq!(ra.name, "RA");
        assert!(!ra.self_relationship && !ra.many_one);
        assert!(c.excluded.is_empty());
    }

    #[test]
    fn university_par_rvs() {
        let m = university();
        let vdb = generate_par_rvs(&classify_tables(&m), &m, &BTreeMap::new()).unwrap();
        let mut ids: Vec<String> = vdb.par_rvs().iter().map(|v| v.id.clone()).collect();
        ids.sort();
        assert_eq!(
            ids,
            [
                "Capability(P0,S0)",
                "Intelligence(S0)",
                "Popularity(P0)",
                "RA(P0,S0)",
                "Ranking(S0)",
                "Salary(P0,S0)",
                "Teachingability(P0)"
            ]
        );
        assert!(vdb.par_rvs().iter().all(|v| v.main));
    }

    #[test]
    fn self_relationship_gets_one_indicator() {
        let m = md(vec![
            table("User", &["uid", "Age"], &["uid"], &[]),
            table(
                "Friend",
                &["u1", "u2"],
                &["u1", "u2"],
                &[("u1", "User", "uid"), ("u2", "User", "uid")],
            ),
        ]);
        let c = classify_tables(&m);
        assert!(c.relationship_tables[0].self_relationship);
        let vdb = generate_par_rvs(&c, &m, &BTreeMap::new()).unwrap();
        let pv: Vec<_> = vdb.pvariables.iter().map(|v| (v.id.as_str(), v.index_number)).collect();
        assert_eq!(pv, [("U0", 0), ("U1", 1)]);
        // Oracle: all ordered variable pairs, filtered by the index ordering rule.
        let pairs: Vec<(u8, u8)> = (0..2u8)
            .flat_map(|a| (0..2u8).map(move |b| (a, b)))
            .filter(|(a, b)| a < b)
            .collect();
        assert_eq!(pairs, [(0, 1)]);
        let inds: Vec<_> = vdb.relationships.iter().map(|v| v.id.as_str()).collect();
        assert_eq!(inds, ["Friend(U0,U1)"]);
        let ages: Vec<_> = vdb.one_variables.iter().map(|v| v.id.as_str()).collect();
        assert_eq!(ages, ["Age(U0)", "Age(U1)"]);
    }

    #[test]
    fn keyless_and_ternary_tables_excluded() {
        let m = md(vec![
            table("A", &["a"], &["a"], &[]),
            table("B", &["b"], &["b"], &[]),
            table("C", &["c"], &["c"], &[]),
            table("Log", &["msg"], &[], &[]),
            table(
                "T",
                &["a", "b", "c"],
                &["a", "b", "c"],
                &[("a", "A", "a"), ("b", "B", "b"), ("c", "C", "c")],
            ),
        ]);
        let c = classify_tables(&m);
        assert!(c.excluded.contains(&("Log".to_string(), ExclusionReason::NoPrimaryKey)));
        assert!(c.excluded.contains(&("T".to_string(), ExclusionReason::Ternary)));
        let vdb = generate_par_rvs(&c, &m, &BTreeMap::new()).unwrap();
        assert!(vdb.par_rvs().iter().all(|v| v.table != "T" && v.table != "Log"));
    }

    #[test]
    fn entity_without_attributes_has_no_one_variables() {
        let m = md(vec![table("Bare", &["id"], &["id"], &[])]);
        let vdb = generate_par_rvs(&classify_tables(&m), &m, &BTreeMap::new()).unwrap();
        assert_eq!(vdb.pvariables.len(), 1);
        assert!(vdb.one_variables.is_empty());
    }

    #[test]
    fn many_one_table_is_entity_and_relationship() {
        let m = md(vec![
            table("Professor", &["p_id", "Rank"], &["p_id"], &[]),
            table("Course", &["c_id", "prof", "Level"], &["c_id"], &[("prof", "Professor", "p_id")]),
        ]);
        let c = classify_tables(&m);
        assert!(c.entity("Course").is_some());
        let rel = c.relationship("Course").unwrap();
        assert!(rel.many_one && !rel.self_relationship);
        let vdb = generate_par_rvs(&c, &m, &BTreeMap::new()).unwrap();
        assert_eq!(vdb.relationships[0].id, "prof(C0,P0)");
        assert!(vdb.two_variables.is_empty());
        assert!(vdb.par_rv("Level(C0)").is_some());
    }

    #[test]
    fn variable_prefixes_disambiguate() {
        let ents = vec![
            EntityTable { name: "Student".into(), key_column: "id".into() },
            EntityTable { name: "Section".into(), key_column: "id".into() },
            EntityTable { name: "Professor".into(), key_column: "id".into() },
        ];
        let p = fo_var_prefixes(&ents, &BTreeMap::new()).unwrap();
        assert_eq!(p["Student"], "St");
        assert_eq!(p["Section"], "Se");
        assert_eq!(p["Professor"], "Pr");
    }
}
