//! Dataset manifests, CSV ingestion and the schema catalog derived from them.
//!
//! A dataset is described by a TOML manifest listing each table, the CSV file
//! holding its rows, its ordered columns, primary key and foreign keys. All
//! values are categorical strings; they are interned once at load time so the
//! executor can join and group on `u32` codes.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reserved value of a relationship attribute when the relationship is false.
pub const NA: &str = "n/a";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub tables: Vec<TableSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSpec {
    pub name: String,
    /// CSV path, relative to the manifest's directory.
    pub file: String,
    pub columns: Vec<String>,
    #[serde(default)]
    pub primary_key: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub foreign_keys: Vec<ForeignKeySpec>,
    /// Optional short name for the table's first-order variable (`S` gives `S0`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variable: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForeignKeySpec {
    pub column: String,
    pub references: String,
    pub referenced_column: String,
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Manifest> {
        let manifest: Manifest = toml::from_str(text)
            .map_err(|e| Error::validation(format!("malformed dataset manifest: {e}")))?;
        SchemaMetadata::from_manifest(&manifest)?;
        Ok(manifest)
    }

    pub fn from_path(path: &Path) -> Result<Manifest> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Manifest::parse(&text)
            .map_err(|e| Error::validation(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn table(&self, name: &str) -> Option<&TableSpec> {
        self.tables.iter().find(|t| t.name == name)
    }
}

/// One table descriptor of the catalog.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableDescriptor {
    pub name: String,
    pub columns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct ForeignKey {
    pub table: String,
    pub column: String,
    pub referenced_table: String,
    pub referenced_column: String,
    /// 1-based position of `column` within `table`.
    pub ordinal_position: usize,
}

/// The key and position catalog that schema analysis runs on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaMetadata {
    pub tables: Vec<TableDescriptor>,
    pub primary_keys: BTreeMap<String, Vec<String>>,
    pub foreign_keys: Vec<ForeignKey>,
}

impl SchemaMetadata {
    pub fn from_manifest(manifest: &Manifest) -> Result<SchemaMetadata> {
        if manifest.tables.is_empty() {
            return Err(Error::validation("manifest declares no tables"));
        }
        let mut names = HashSet::new();
        for t in &manifest.tables {
            if t.name.is_empty() {
                return Err(Error::validation("table with empty name"));
            }
            if !names.insert(t.name.as_str()) {
                return Err(Error::validation(format!("duplicate table `{}`", t.name)));
            }
            if t.columns.is_empty() {
                return Err(Error::validation(format!("table `{}` has no columns", t.name)));
            }
            let mut cols = HashSet::new();
            for c in &t.columns {
                if c.is_empty() {
                    return Err(Error::validation(format!("table `{}` has an empty column name", t.name)));
                }
                if !cols.insert(c.as_str()) {
                    return Err(Error::validation(format!("duplicate column `{}.{c}`", t.name)));
                }
            }
            let mut pk = HashSet::new();
            for c in &t.primary_key {
                if !cols.contains(c.as_str()) {
                    return Err(Error::validation(format!(
                        "primary key column `{}.{c}` is not a declared column",
                        t.name
                    )));
                }
                if !pk.insert(c.as_str()) {
                    return Err(Error::validation(format!(
                        "primary key of `{}` repeats column `{c}`",
                        t.name
                    )));
                }
            }
            let mut fk_cols = HashSet::new();
            for fk in &t.foreign_keys {
                if !cols.contains(fk.column.as_str()) {
                    return Err(Error::validation(format!(
                        "foreign key column `{}.{}` is not a declared column",
                        t.name, fk.column
                    )));
                }
                if !fk_cols.insert(fk.column.as_str()) {
                    return Err(Error::validation(format!(
                        "column `{}.{}` declares more than one foreign key",
                        t.name, fk.column
                    )));
                }
                let Some(target) = manifest.table(&fk.references) else {
                    return Err(Error::validation(format!(
                        "foreign key `{}.{}` references missing table `{}`",
                        t.name, fk.column, fk.references
                    )));
                };
                if !target.columns.contains(&fk.referenced_column) {
                    return Err(Error::validation(format!(
                        "foreign key `{}.{}` references missing column `{}.{}`",
                        t.name, fk.column, fk.references, fk.referenced_column
                    )));
                }
            }
            if let Some(v) = &t.variable {
                if v.is_empty() || v.ends_with(|c: char| c.is_ascii_digit()) {
                    return Err(Error::validation(format!(
                        "variable name `{v}` of `{}` must be nonempty and not end in a digit",
                        t.name
                    )));
                }
            }
        }

        let tables = manifest
            .tables
            .iter()
            .map(|t| TableDescriptor {
                name: t.name.clone(),
                columns: t.columns.clone(),
            })
            .collect();
        let primary_keys = manifest
            .tables
            .iter()
            .filter(|t| !t.primary_key.is_empty())
            .map(|t| (t.name.clone(), t.primary_key.clone()))
            .collect();
        let mut foreign_keys: Vec<ForeignKey> = manifest
            .tables
            .iter()
            .flat_map(|t| {
                t.foreign_keys.iter().map(move |fk| ForeignKey {
                    table: t.name.clone(),
                    column: fk.column.clone(),
                    referenced_table: fk.references.clone(),
                    referenced_column: fk.referenced_column.clone(),
                    ordinal_position: t.columns.iter().position(|c| *c == fk.column).unwrap() + 1,
                })
            })
            .collect();
        foreign_keys.sort();
        Ok(SchemaMetadata {
            tables,
            primary_keys,
            foreign_keys,
        })
    }

    pub fn table(&self, name: &str) -> Option<&TableDescriptor> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn primary_key(&self, table: &str) -> &[String] {
        self.primary_keys.get(table).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn foreign_keys_of<'a>(&'a self, table: &str) -> impl Iterator<Item = &'a ForeignKey> + 'a {
        let table = table.to_string();
        self.foreign_keys.iter().filter(move |fk| fk.table == table)
    }

    /// Key columns of a table: primary-key columns plus foreign-key columns.
    pub fn key_columns<'a>(&'a self, table: &str) -> BTreeSet<&'a str> {
        self.primary_key(table)
            .iter()
            .map(String::as_str)
            .chain(self.foreign_keys_of(table).map(|fk| fk.column.as_str()))
            .collect()
    }

    /// Number of distinct key (primary or foreign) columns of a table.
    pub fn num_entity_columns(&self, table: &str) -> usize {
        self.key_columns(table).len()
    }

    pub fn ordinal_position(&self, table: &str, column: &str) -> Option<usize> {
        self.table(table)?
            .columns
            .iter()
            .position(|c| c == column)
            .map(|p| p + 1)
    }
}

/// Value interner shared by all tables of a dataset.
#[derive(Debug, Default, Clone)]
pub struct Symbols {
    values: Vec<Arc<str>>,
    index: HashMap<Arc<str>, u32>,
}

impl Symbols {
    pub fn intern(&mut self, value: &str) -> u32 {
        if let Some(&code) = self.index.get(value) {
            return code;
        }
        let code = self.values.len() as u32;
        let value: Arc<str> = Arc::from(value);
        self.values.push(value.clone());
        self.index.insert(value, code);
        code
    }

    pub fn lookup(&self, value: &str) -> Option<u32> {
        self.index.get(value).copied()
    }

    pub fn resolve(&self, code: u32) -> &Arc<str> {
        &self.values[code as usize]
    }
}

/// A loaded table, stored column-major as interned value codes.
#[derive(Debug, Clone)]
pub struct Table {
    pub spec: TableSpec,
    columns: Vec<Vec<u32>>,
    rows: usize,
}

impl Table {
    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn num_rows(&self) -> usize {
        self.rows
    }

    pub fn column_index(&self, column: &str) -> Option<usize> {
        self.spec.columns.iter().position(|c| c == column)
    }

    pub fn column(&self, index: usize) -> &[u32] {
        &self.columns[index]
    }

    pub fn code(&self, row: usize, column: usize) -> u32 {
        self.columns[column][row]
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    manifest: Manifest,
    metadata: SchemaMetadata,
    tables: Vec<Table>,
    symbols: Symbols,
}

impl Dataset {
    /// Load a dataset from its manifest file, validating data against keys.
    pub fn load(manifest_path: &Path) -> Result<Dataset> {
        let manifest = Manifest::from_path(manifest_path)?;
        let root = manifest_path.parent().unwrap_or(Path::new("."));
        let mut rows = Vec::with_capacity(manifest.tables.len());
        for spec in &manifest.tables {
            let path = root.join(&spec.file);
            rows.push(read_table_csv(&path, spec)?);
        }
        Dataset::from_rows(manifest, rows)
    }

    /// Build a dataset from in-memory rows, one row list per manifest table.
    pub fn from_rows(manifest: Manifest, rows: Vec<Vec<Vec<String>>>) -> Result<Dataset> {
        let metadata = SchemaMetadata::from_manifest(&manifest)?;
        if rows.len() != manifest.tables.len() {
            return Err(Error::validation("row sets do not match manifest tables"));
        }
        let mut symbols = Symbols::default();
        let mut tables = Vec::with_capacity(rows.len());
        for (spec, table_rows) in manifest.tables.iter().zip(rows) {
            let width = spec.columns.len();
            let mut columns = vec![Vec::with_capacity(table_rows.len()); width];
            for (i, row) in table_rows.iter().enumerate() {
                if row.len() != width {
                    return Err(Error::validation(format!(
                        "table `{}` row {} has {} fields, expected {width}",
                        spec.name,
                        i + 1,
                        row.len()
                    )));
                }
                for (c, value) in row.iter().enumerate() {
                    if value.is_empty() {
                        return Err(Error::validation(format!(
                            "table `{}` row {} column `{}` is empty",
                            spec.name,
                            i + 1,
                            spec.columns[c]
                        )));
                    }
                    if value == NA {
                        return Err(Error::validation(format!(
                            "table `{}` row {} column `{}` uses the reserved value `{NA}`; rename it",
                            spec.name,
                            i + 1,
                            spec.columns[c]
                        )));
                    }
                    columns[c].push(symbols.intern(value));
                }
            }
            tables.push(Table {
                spec: spec.clone(),
                columns,
                rows: table_rows.len(),
            });
        }
        let dataset = Dataset {
            manifest,
            metadata,
            tables,
            symbols,
        };
        dataset.check_keys()?;
        Ok(dataset)
    }

    fn check_keys(&self) -> Result<()> {
        for table in &self.tables {
            let pk: Vec<usize> = table
                .spec
                .primary_key
                .iter()
                .map(|c| table.column_index(c).unwrap())
                .collect();
            if !pk.is_empty() {
                let mut seen = HashSet::with_capacity(table.rows);
                for row in 0..table.rows {
                    let key: Vec<u32> = pk.iter().map(|&c| table.code(row, c)).collect();
                    if !seen.insert(key) {
                        return Err(Error::validation(format!(
                            "table `{}` repeats primary key at row {}",
                            table.name(),
                            row + 1
                        )));
                    }
                }
            }
            for fk in &table.spec.foreign_keys {
                let target = self.table(&fk.references).unwrap();
                let target_col = target.column_index(&fk.referenced_column).unwrap();
                let present: HashSet<u32> = target.column(target_col).iter().copied().collect();
                let col = table.column_index(&fk.column).unwrap();
                if let Some(row) = table.column(col).iter().position(|v| !present.contains(v)) {
                    return Err(Error::validation(format!(
                        "foreign key `{}.{}` value `{}` at row {} has no match in `{}.{}`",
                        table.name(),
                        fk.column,
                        self.symbols.resolve(table.code(row, col)),
                        row + 1,
                        fk.references,
                        fk.referenced_column
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn metadata(&self) -> &SchemaMetadata {
        &self.metadata
    }

    pub fn tables(&self) -> &[Table] {
        &self.tables
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name() == name)
    }

    pub fn symbols(&self) -> &Symbols {
        &self.symbols
    }

    pub fn value(&self, code: u32) -> &Arc<str> {
        self.symbols.resolve(code)
    }

    /// Rows of a table as strings, in file order.
    pub fn rows(&self, table: &str) -> Option<Vec<Vec<Arc<str>>>> {
        let t = self.table(table)?;
        Some(
            (0..t.rows)
                .map(|r| {
                    (0..t.spec.columns.len())
                        .map(|c| self.symbols.resolve(t.code(r, c)).clone())
                        .collect()
                })
                .collect(),
        )
    }

    /// Write the manifest (as `manifest.toml`) and every table's CSV into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for table in &self.tables {
            let path = dir.join(&table.spec.file);
            let mut w = csv::Writer::from_path(&path).map_err(|e| Error::csv(&path, e))?;
            w.write_record(&table.spec.columns)
                .map_err(|e| Error::csv(&path, e))?;
            for row in 0..table.rows {
                let rec = (0..table.spec.columns.len()).map(|c| &**self.symbols.resolve(table.code(row, c)));
                w.write_record(rec).map_err(|e| Error::csv(&path, e))?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
        }
        let path = dir.join("manifest.toml");
        fs::write(&path, self.manifest.to_toml()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

fn read_table_csv(path: &Path, spec: &TableSpec) -> Result<Vec<Vec<String>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::csv(path, e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if header != spec.columns {
        return Err(Error::validation(format!(
            "{}: header {:?} does not match declared columns {:?} of `{}`",
            path.display(),
            header,
            spec.columns,
            spec.name
        )));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::csv(path, e))?;
        rows.push(record.iter().map(str::to_string).collect());
    }
    Ok(rows)
}

/// Extract the key/position catalog the schema analyzer consumes.
pub fn extract_metadata(dataset: &Dataset) -> SchemaMetadata {
    dataset.metadata.clone()
}
