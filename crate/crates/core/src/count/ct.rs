use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};

pub type Value = Arc<str>;

/// Counts of joint value assignments to a list of par-RVs.
///
/// Columns are kept sorted by id and rows sorted by value, so two tables with
/// the same statistics compare equal. Only assignments with a positive count
/// are stored.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ContingencyTable {
    columns: Vec<String>,
    rows: BTreeMap<Vec<Value>, u64>,
}

/// A conjunction of `(par-RV = value)` pairs.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct QuerySpec {
    pub conjuncts: Vec<(String, String)>,
}

impl QuerySpec {
    pub fn new<I, A, B>(pairs: I) -> QuerySpec
    where
        I: IntoIterator<Item = (A, B)>,
        A: Into<String>,
        B: Into<String>,
    {
        QuerySpec {
            conjuncts: pairs.into_iter().map(|(a, b)| (a.into(), b.into())).collect(),
        }
    }
}

impl ContingencyTable {
    /// Build a table; duplicate assignments are summed and zero counts dropped.
    pub fn from_rows<I>(columns: Vec<String>, rows: I) -> Result<ContingencyTable>
    where
        I: IntoIterator<Item = (Vec<Value>, u64)>,
    {
        let mut order: Vec<usize> = (0..columns.len()).collect();
        order.sort_by(|&a, &b| columns[a].cmp(&columns[b]));
        if order.windows(2).any(|w| columns[w[0]] == columns[w[1]]) {
            return Err(Error::validation(format!("duplicate contingency table column in {columns:?}")));
        }
        let sorted: Vec<String> = order.iter().map(|&i| columns[i].clone()).collect();
        let identity = order.iter().enumerate().all(|(i, &j)| i == j);
        let mut table = ContingencyTable {
            columns: sorted,
            rows: BTreeMap::new(),
        };
        for (values, count) in rows {
            if values.len() != columns.len() {
                return Err(Error::consistency("contingency row width does not match its columns"));
            }
            let values = if identity {
                values
            } else {
                order.iter().map(|&i| values[i].clone()).collect()
            };
            table.add(values, count);
        }
        Ok(table)
    }

    pub fn empty(columns: Vec<String>) -> Result<ContingencyTable> {
        ContingencyTable::from_rows(columns, std::iter::empty())
    }

    fn add(&mut self, values: Vec<Value>, count: u64) {
        if count > 0 {
            *self.rows.entry(values).or_insert(0) += count;
        }
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn column_index(&self, id: &str) -> Option<usize> {
        self.columns.binary_search_by(|c| c.as_str().cmp(id)).ok()
    }

    pub fn rows(&self) -> impl Iterator<Item = (&[Value], u64)> + '_ {
        self.rows.iter().map(|(k, &v)| (k.as_slice(), v))
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.rows.values().sum()
    }

    /// Count of an assignment given in column order.
    pub fn get(&self, values: &[Value]) -> u64 {
        self.rows.get(values).copied().unwrap_or(0)
    }

    fn indices(&self, subset: &[String]) -> Result<Vec<usize>> {
        subset
            .iter()
            .map(|c| {
                self.column_index(c)
                    .ok_or_else(|| Error::validation(format!("column `{c}` is not in the contingency table")))
            })
            .collect()
    }

    /// Group by `subset` and sum counts.
    pub fn project(&self, subset: &[String]) -> Result<ContingencyTable> {
        let idx = self.indices(subset)?;
        if idx.len() == self.columns.len() {
            return Ok(self.clone());
        }
        let mut sorted: Vec<usize> = idx.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != idx.len() {
            return Err(Error::validation("projection subset repeats a column"));
        }
        let mut out = ContingencyTable {
            columns: sorted.iter().map(|&i| self.columns[i].clone()).collect(),
            rows: BTreeMap::new(),
        };
        for (values, &count) in &self.rows {
            out.add(sorted.iter().map(|&i| values[i].clone()).collect(), count);
        }
        Ok(out)
    }

    /// Number of groundings satisfying every conjunct of `query`.
    pub fn count_of(&self, query: &QuerySpec) -> Result<u64> {
        let ids: Vec<String> = query.conjuncts.iter().map(|(v, _)| v.clone()).collect();
        let idx = self.indices(&ids)?;
        Ok(self
            .rows
            .iter()
            .filter(|(values, _)| {
                idx.iter()
                    .zip(&query.conjuncts)
                    .all(|(&i, (_, want))| &*values[i] == want.as_str())
            })
            .map(|(_, &c)| c)
            .sum())
    }

    /// Row-wise `self - other`; fails if any count would go negative.
    pub fn subtract(&self, other: &ContingencyTable) -> Result<ContingencyTable> {
        if self.columns != other.columns {
            return Err(Error::consistency("subtracting contingency tables over different columns"));
        }
        let mut rows = self.rows.clone();
        for (values, &count) in &other.rows {
            let have = rows.get(values).copied().unwrap_or(0);
            let left = have.checked_sub(count).ok_or_else(|| {
                Error::consistency(format!(
                    "negative count ({have} - {count}) for assignment {values:?} over {:?}",
                    self.columns
                ))
            })?;
            if left == 0 {
                rows.remove(values);
            } else {
                rows.insert(values.clone(), left);
            }
        }
        Ok(ContingencyTable {
            columns: self.columns.clone(),
            rows,
        })
    }

    /// Row-wise sum of two tables over the same columns.
    pub fn merge(&mut self, other: &ContingencyTable) -> Result<()> {
        if self.columns != other.columns {
            return Err(Error::consistency("merging contingency tables over different columns"));
        }
        for (values, &count) in &other.rows {
            self.add(values.clone(), count);
        }
        Ok(())
    }

    /// Divide every count by `factor`, which must divide each count exactly.
    pub fn divide(&self, factor: u64) -> Result<ContingencyTable> {
        if factor == 1 {
            return Ok(self.clone());
        }
        let mut rows = BTreeMap::new();
        for (values, &count) in &self.rows {
            if factor == 0 || count % factor != 0 {
                return Err(Error::consistency(format!(
                    "count {count} is not a multiple of the scope factor {factor}"
                )));
            }
            rows.insert(values.clone(), count / factor);
        }
        Ok(ContingencyTable {
            columns: self.columns.clone(),
            rows,
        })
    }

    /// Rewrite values of the named columns, summing rows that collide.
    pub fn map_values<F>(&self, mut f: F) -> ContingencyTable
    where
        F: FnMut(&str, &Value) -> Value,
    {
        let mut out = ContingencyTable {
            columns: self.columns.clone(),
            rows: BTreeMap::new(),
        };
        for (values, &count) in &self.rows {
            let mapped = values
                .iter()
                .zip(&self.columns)
                .map(|(v, c)| f(c, v))
                .collect();
            out.add(mapped, count);
        }
        out
    }

    /// Keep rows whose `column` equals `value`, then drop that column.
    pub fn slice(&self, column: &str, value: &str) -> Result<ContingencyTable> {
        let i = self
            .column_index(column)
            .ok_or_else(|| Error::validation(format!("column `{column}` is not in the contingency table")))?;
        let mut columns = self.columns.clone();
        columns.remove(i);
        let mut out = ContingencyTable {
            columns,
            rows: BTreeMap::new(),
        };
        for (values, &count) in &self.rows {
            if &*values[i] == value {
                let mut v = values.clone();
                v.remove(i);
                out.add(v, count);
            }
        }
        Ok(out)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
        let mut header: Vec<&str> = self.columns.iter().map(String::as_str).collect();
        header.push("count");
        w.write_record(&header).map_err(|e| Error::csv(path, e))?;
        for (values, count) in &self.rows {
            let mut rec: Vec<String> = values.iter().map(|v| v.to_string()).collect();
            rec.push(count.to_string());
            w.write_record(&rec).map_err(|e| Error::csv(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<ContingencyTable> {
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
        let header: Vec<String> = r
            .headers()
            .map_err(|e| Error::csv(path, e))?
            .iter()
            .map(str::to_string)
            .collect();
        if header.last().map(String::as_str) != Some("count") {
            return Err(Error::validation(format!("{}: last column must be `count`", path.display())));
        }
        let columns = header[..header.len() - 1].to_vec();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::csv(path, e))?;
            let n = rec.len();
            let count: u64 = rec[n - 1]
                .parse()
                .map_err(|_| Error::validation(format!("{}: bad count `{}`", path.display(), &rec[n - 1])))?;
            rows.push((rec.iter().take(n - 1).map(Value::from).collect(), count));
        }
        ContingencyTable::from_rows(columns, rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(s: &str) -> Value {
        Value::from(s)
    }

    fn sample() -> ContingencyTable {
        ContingencyTable::from_rows(
            vec!["b".into(), "a".into()],
            vec![
                (vec![v("x"), v("1")], 2),
                (vec![v("y"), v("1")], 3),
                (vec![v("x"), v("2")], 4),
                (vec![v("x"), v("2")], 1),
                (vec![v("z"), v("2")], 0),
            ],
        )
        .unwrap()
    }

    #[test]
    fn columns_sorted_and_rows_permuted() {
        let ct = sample();
        assert_eq!(ct.columns(), ["a", "b"]);
        assert_eq!(ct.get(&[v("2"), v("x")]), 5);
        assert_eq!(ct.len(), 3);
        assert_eq!(ct.total(), 10);
    }

    #[test]
    fn projections() {
        let ct = sample();
        assert_eq!(ct.project(&["a".into(), "b".into()]).unwrap(), ct);
        let empty = ct.project(&[]).unwrap();
        assert_eq!(empty.len(), 1);
        assert_eq!(empty.get(&[]), 10);
        assert!(ct.project(&["c".into()]).is_err());
    }

    #[test]
    fn subtraction_never_clamps() {
        let ct = sample();
        let a = ct.project(&["a".into()]).unwrap();
        let mut bigger = a.clone();
        bigger.merge(&a).unwrap();
        assert_eq!(bigger.subtract(&a).unwrap(), a);
        assert!(a.subtract(&bigger).is_err());
    }

    #[test]
    fn query_counts() {
        let ct = sample();
        assert_eq!(ct.count_of(&QuerySpec::new([("b", "x")])).unwrap(), 7);
        assert_eq!(ct.count_of(&QuerySpec::new([("b", "x"), ("a", "2")])).unwrap(), 5);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ct.csv");
        let ct = sample();
        ct.write_csv(&path).unwrap();
        assert_eq!(ContingencyTable::read_csv(&path).unwrap(), ct);
    }

    proptest! {
        #[test]
        fn projection_commutes(rows in proptest::collection::vec((0u8..3, 0u8..3, 0u8..2, 1u64..5), 0..30)) {
            let ct = ContingencyTable::from_rows(
                vec!["a".into(), "b".into(), "c".into()],
                rows.iter().map(|&(a, b, c, n)| (vec![v(&a.to_string()), v(&b.to_string()), v(&c.to_string())], n)),
            ).unwrap();
            let ab = ct.project(&["a".into(), "b".into()]).unwrap();
            prop_assert_eq!(ab.project(&["a".into()]).unwrap(), ct.project(&["a".into()]).unwrap());
            prop_assert_eq!(ab.total(), ct.total());
        }
    }
}
