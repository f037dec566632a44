//! SQLite backend: runs the rendered SQL of each metaquery.

use rusqlite::Connection;

use super::ct::Value;
use super::executor::Backend;
use super::metaquery::MetaQuery;
use crate::dataset::Dataset;
use crate::error::{Error, Result};

pub struct Sqlite {
    conn: Connection,
}

fn backend_err(e: rusqlite::Error) -> Error {
    Error::Backend(e.to_string())
}

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}

impl Sqlite {
    /// Copy every table of `dataset` into a fresh in-memory database.
    pub fn in_memory(dataset: &Dataset) -> Result<Sqlite> {
        let mut conn = Connection::open_in_memory().map_err(backend_err)?;
        load(&mut conn, dataset)?;
        Ok(Sqlite { conn })
    }

    /// Open an existing database file that already holds the dataset tables.
    pub fn open(path: &std::path::Path) -> Result<Sqlite> {
        let conn = Connection::open(path).map_err(backend_err)?;
        Ok(Sqlite { conn })
    }

    /// Connect from a string of the form `sqlite::memory:` or `sqlite:<path>`.
    pub fn connect(spec: &str, dataset: &Dataset) -> Result<Sqlite> {
        match spec.strip_prefix("sqlite:") {
            Some(":memory:") => Sqlite::in_memory(dataset),
            Some(path) if !path.is_empty() => Sqlite::open(std::path::Path::new(path)),
            _ => Err(Error::validation(format!(
                "unsupported connection string `{spec}` (expected `sqlite::memory:` or `sqlite:<path>`)"
            ))),
        }
    }

    pub fn connection(&self) -> &Connection {
        &self.conn
    }
}

fn load(conn: &mut Connection, dataset: &Dataset) -> Result<()> {
    let tx = conn.transaction().map_err(backend_err)?;
    for table in dataset.tables() {
        let cols: Vec<String> = table.spec.columns.iter().map(|c| format!("{} TEXT", quote(c))).collect();
        tx.execute_batch(&format!("CREATE TABLE {} ({});", quote(table.name()), cols.join(", ")))
            .map_err(backend_err)?;
        let placeholders = vec!["?"; table.spec.columns.len()].join(", ");
        let mut stmt = tx
            .prepare(&format!("INSERT INTO {} VALUES ({placeholders})", quote(table.name())))
            .map_err(backend_err)?;
        for row in 0..table.num_rows() {
            let values: Vec<&str> = (0..table.spec.columns.len())
                .map(|c| &**dataset.value(table.code(row, c)))
                .collect();
            stmt.execute(rusqlite::params_from_iter(values)).map_err(backend_err)?;
        }
    }
    tx.commit().map_err(backend_err)
}

impl Backend for Sqlite {
    fn name(&self) -> &str {
        "sqlite"
    }

    fn execute(&self, query: &MetaQuery) -> Result<Vec<(Vec<Value>, u64)>> {
        query.validate()?;
        let sql = query.render_sql();
        let width = query.output_columns().len();
        let mut stmt = self.conn.prepare(&sql).map_err(backend_err)?;
        let rows = stmt
            .query_map([], |row| {
                let count: i64 = row.get(0)?;
                let mut values = Vec::with_capacity(width);
                for i in 0..width {
                    let v: String = row.get(i + 1)?;
                    values.push(Value::from(v));
                }
                Ok((values, count))
            })
            .map_err(backend_err)?;
        let mut out = Vec::new();
        for r in rows {
            let (values, count) = r.map_err(backend_err)?;
            if count > 0 {
                out.push((values, count as u64));
            }
        }
        Ok(out)
    }
}
