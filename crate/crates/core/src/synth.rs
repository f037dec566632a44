//! Seeded synthetic relational datasets with planted dependencies.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, ForeignKeySpec, Manifest, TableSpec};
use crate::error::{Error, Result};
use crate::predict::TestInstance;
use crate::schema::Vdb;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeSpec {
    pub name: String,
    /// Number of values; values are `0`, `1`, ... as strings.
    pub domain: usize,
    /// Parent attribute: `attr` of the same table, or `Table.attr` of an
    /// endpoint entity for relationship attributes. Must be declared earlier.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depends_on: Option<String>,
    /// Probability that the value copies the parent (mod domain) instead of
    /// being uniform.
    #[serde(default = "default_strength")]
    pub strength: f64,
}

fn default_strength() -> f64 {
    0.9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntitySpec {
    pub name: String,
    pub size: usize,
    #[serde(default)]
    pub attributes: Vec<AttributeSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelationshipSpec {
    pub name: String,
    pub from: String,
    pub to: String,
    pub density: f64,
    #[serde(default)]
    pub attributes: Vec<AttributeSpec>,
}

/// Which atoms to list in the generated test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestSpec {
    pub entity: String,
    pub attribute: String,
    pub instances: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    #[serde(default)]
    pub seed: u64,
    pub entities: Vec<EntitySpec>,
    #[serde(default)]
    pub relationships: Vec<RelationshipSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<TestSpec>,
}

impl SyntheticSpec {
    pub fn parse(text: &str) -> Result<SyntheticSpec> {
        let spec: SyntheticSpec =
            toml::from_str(text).map_err(|e| Error::validation(format!("malformed synthetic spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let entity = |name: &str| self.entities.iter().find(|e| e.name == name);
        let mut tables = std::collections::BTreeSet::new();
        for e in &self.entities {
            if e.size == 0 {
                return Err(Error::validation(format!("entity `{}` must have size ≥ 1", e.name)));
            }
            if !tables.insert(e.name.as_str()) {
                return Err(Error::validation(format!("table `{}` declared twice", e.name)));
            }
            check_attributes(&e.name, &e.attributes, |_| None)?;
        }
        for r in &self.relationships {
            if !tables.insert(r.name.as_str()) {
                return Err(Error::validation(format!("table `{}` declared twice", r.name)));
            }
            if !(0.0..=1.0).contains(&r.density) {
                return Err(Error::validation(format!("density of `{}` must be in [0, 1]", r.name)));
            }
            let (from, to) = match (entity(&r.from), entity(&r.to)) {
                (Some(a), Some(b)) => (a, b),
                _ => {
                    return Err(Error::validation(format!(
                        "relationship `{}` references an undeclared entity",
                        r.name
                    )))
                }
            };
            check_attributes(&r.name, &r.attributes, |dep| {
                let (table, attr) = dep.split_once('.')?;
                [from, to]
                    .into_iter()
                    .find(|e| e.name == table)
                    .and_then(|e| e.attributes.iter().find(|a| a.name == attr))
                    .map(|a| a.domain)
            })?;
        }
        if let Some(t) = &self.test {
            let e = entity(&t.entity)
                .ok_or_else(|| Error::validation(format!("test entity `{}` is not declared", t.entity)))?;
            if !e.attributes.iter().any(|a| a.name == t.attribute) {
                return Err(Error::validation(format!("`{}` has no attribute `{}`", t.entity, t.attribute)));
            }
        }
        Ok(())
    }
}

fn check_attributes<F>(table: &str, attrs: &[AttributeSpec], external: F) -> Result<()>
where
    F: Fn(&str) -> Option<usize>,
{
    for (i, a) in attrs.iter().enumerate() {
        if a.domain == 0 {
            return Err(Error::validation(format!("`{table}.{}` needs a domain of size ≥ 1", a.name)));
        }
        if !(0.0..=1.0).contains(&a.strength) {
            return Err(Error::validation(format!("strength of `{table}.{}` must be in [0, 1]", a.name)));
        }
        if attrs[..i].iter().any(|b| b.name == a.name) {
            return Err(Error::validation(format!("`{table}.{}` declared twice", a.name)));
        }
        if let Some(dep) = &a.depends_on {
            if !attrs[..i].iter().any(|b| &b.name == dep) && external(dep).is_none() {
                return Err(Error::validation(format!(
                    "`{table}.{}` depends on `{dep}`, which is not declared before it",
                    a.name
                )));
            }
        }
    }
    Ok(())
}

fn key_column(entity: &str) -> String {
    format!("{}_id", entity.to_lowercase())
}

fn entity_key(entity: &str, i: usize) -> String {
    format!("{}{i}", entity.to_lowercase())
}

fn draw(rng: &mut ChaCha8Rng, attr: &AttributeSpec, parent: Option<usize>) -> usize {
    match parent {
        Some(p) if rng.gen_bool(attr.strength) => p % attr.domain,
        _ => rng.gen_range(0..attr.domain),
    }
}

/// Generate the dataset described by `spec`.
pub fn generate(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut tables = Vec::new();
    let mut rows = Vec::new();
    // Attribute values by entity, as indices, for dependency lookups.
    let mut values: Vec<Vec<Vec<usize>>> = Vec::new();

    for e in &spec.entities {
        let mut columns = vec![key_column(&e.name)];
        columns.extend(e.attributes.iter().map(|a| a.name.clone()));
        let mut table_values = Vec::with_capacity(e.size);
        let mut table_rows = Vec::with_capacity(e.size);
        for i in 0..e.size {
            let mut v: Vec<usize> = Vec::with_capacity(e.attributes.len());
            for a in &e.attributes {
                let parent = a
                    .depends_on
                    .as_ref()
                    .map(|d| v[e.attributes.iter().position(|b| &b.name == d).unwrap()]);
                v.push(draw(&mut rng, a, parent));
            }
            let mut row = vec![entity_key(&e.name, i)];
            row.extend(v.iter().map(|x| x.to_string()));
            table_rows.push(row);
            table_values.push(v);
        }
        values.push(table_values);
        rows.push(table_rows);
        tables.push(TableSpec {
            name: e.name.clone(),
            file: format!("{}.csv", e.name.to_lowercase()),
            columns,
            primary_key: vec![key_column(&e.name)],
            foreign_keys: Vec::new(),
            variable: None,
        });
    }

    for r in &spec.relationships {
        let fi = spec.entities.iter().position(|e| e.name == r.from).unwrap();
        let ti = spec.entities.iter().position(|e| e.name == r.to).unwrap();
        let (from, to) = (&spec.entities[fi], &spec.entities[ti]);
        let (c1, c2) = if fi == ti {
            (format!("{}1", key_column(&from.name)), format!("{}2", key_column(&to.name)))
        } else {
            (key_column(&from.name), key_column(&to.name))
        };
        let mut columns = vec![c1.clone(), c2.clone()];
        columns.extend(r.attributes.iter().map(|a| a.name.clone()));
        let mut table_rows = Vec::new();
        for i in 0..from.size {
            for j in 0..to.size {
                if !rng.gen_bool(r.density) {
                    continue;
                }
                let mut v: Vec<usize> = Vec::with_capacity(r.attributes.len());
                for a in &r.attributes {
                    let parent = a.depends_on.as_ref().map(|d| match d.split_once('.') {
                        Some((table, attr)) => {
                            let (ent, idx) = if table == from.name { (fi, i) } else { (ti, j) };
                            let pos = spec.entities[ent].attributes.iter().position(|b| b.name == attr).unwrap();
                            values[ent][idx][pos]
                        }
                        None => v[r.attributes.iter().position(|b| &b.name == d).unwrap()],
                    });
                    v.push(draw(&mut rng, a, parent));
                }
                let mut row = vec![entity_key(&from.name, i), entity_key(&to.name, j)];
                row.extend(v.iter().map(|x| x.to_string()));
                table_rows.push(row);
            }
        }
        rows.push(table_rows);
        tables.push(TableSpec {
            name: r.name.clone(),
            file: format!("{}.csv", r.name.to_lowercase()),
            columns,
            primary_key: vec![c1.clone(), c2.clone()],
            foreign_keys: vec![
                ForeignKeySpec {
                    column: c1,
                    references: from.name.clone(),
                    referenced_column: key_column(&from.name),
                },
                ForeignKeySpec {
                    column: c2,
                    references: to.name.clone(),
                    referenced_column: key_column(&to.name),
                },
            ],
            variable: None,
        });
    }

    let manifest = Manifest {
        name: Some("synthetic".into()),
        tables,
    };
    Dataset::from_rows(manifest, rows)
}

/// Test atoms for `spec.test`: distinct entities drawn with the generator seed,
/// labelled with their generated values.
pub fn test_split(spec: &SyntheticSpec, dataset: &Dataset, vdb: &Vdb) -> Result<Vec<TestInstance>> {
    let Some(t) = &spec.test else {
        return Ok(Vec::new());
    };
    let target = vdb
        .one_variables
        .iter()
        .find(|v| v.main && v.table == t.entity && v.column.as_deref() == Some(t.attribute.as_str()))
        .ok_or_else(|| Error::validation(format!("no par-RV for `{}.{}`", t.entity, t.attribute)))?;
    let table = dataset.table(&t.entity).unwrap();
    let key = table.column_index(&key_column(&t.entity)).unwrap();
    let attr = table.column_index(&t.attribute).unwrap();
    let mut rows: Vec<usize> = (0..table.num_rows()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x7e57);
    rows.shuffle(&mut rng);
    if t.instances > rows.len() {
        return Err(Error::validation(format!(
            "test split asks for {} instances but `{}` has {} entities",
            t.instances,
            t.entity,
            rows.len()
        )));
    }
    rows.truncate(t.instances);
    rows.sort_unstable();
    Ok(rows
        .into_iter()
        .map(|r| TestInstance {
            target: target.id.clone(),
            entity: dataset.value(table.code(r, key)).to_string(),
            label: dataset.value(table.code(r, attr)).to_string(),
        })
        .collect())
}
