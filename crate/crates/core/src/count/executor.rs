//! Built-in relational executor for metaqueries.
//!
//! Equality conditions between aliases partition the FROM list into join
//! components. Each component is evaluated with hash joins followed by a hash
//! group-by; the per-component groups are then combined by a cartesian product
//! with multiplied counts, which is exactly what `COUNT(*) ... GROUP BY` gives
//! over the cross product of unjoined tables.

use std::collections::HashMap;
use std::hash::Hash;

use super::ct::Value;
use super::metaquery::{MetaQuery, Operand, SelectExpr};
use crate::dataset::{Dataset, Table};
use crate::error::{Error, Result};

/// Something that can evaluate a metaquery into `(group values, count)` rows.
pub trait Backend {
    fn execute(&self, query: &MetaQuery) -> Result<Vec<(Vec<Value>, u64)>>;

    fn name(&self) -> &str;
}

pub struct Builtin<'a> {
    dataset: &'a Dataset,
}

impl<'a> Builtin<'a> {
    pub fn new(dataset: &'a Dataset) -> Builtin<'a> {
        Builtin { dataset }
    }
}

struct Edge {
    a: usize,
    a_col: usize,
    b: usize,
    b_col: usize,
}

/// Partial join result: `tuples` holds one row index per joined alias.
struct Joined {
    aliases: Vec<usize>,
    tuples: Vec<u32>,
}

impl Joined {
    fn len(&self) -> usize {
        if self.aliases.is_empty() {
            0
        } else {
            self.tuples.len() / self.aliases.len()
        }
    }

    fn tuple(&self, i: usize) -> &[u32] {
        let w = self.aliases.len();
        &self.tuples[i * w..(i + 1) * w]
    }
}

fn find(parent: &mut [usize], x: usize) -> usize {
    let mut r = x;
    while parent[r] != r {
        r = parent[r];
    }
    let mut y = x;
    while parent[y] != r {
        let next = parent[y];
        parent[y] = r;
        y = next;
    }
    r
}

impl Backend for Builtin<'_> {
    fn name(&self) -> &str {
        "builtin"
    }

    fn execute(&self, query: &MetaQuery) -> Result<Vec<(Vec<Value>, u64)>> {
        query.validate()?;
        let n = query.from_list.len();
        let alias_index: HashMap<&str, usize> = query
            .from_list
            .iter()
            .enumerate()
            .map(|(i, f)| (f.alias.as_str(), i))
            .collect();
        let tables: Vec<&Table> = query
            .from_list
            .iter()
            .map(|f| {
                self.dataset
                    .table(&f.table)
                    .ok_or_else(|| Error::Backend(format!("unknown table `{}`", f.table)))
            })
            .collect::<Result<_>>()?;
        let col = |alias: usize, name: &str| -> Result<usize> {
            tables[alias]
                .column_index(name)
                .ok_or_else(|| Error::Backend(format!("unknown column `{}.{name}`", tables[alias].name())))
        };

        // Per-alias filters and cross-alias join edges.
        let mut literal: Vec<Vec<(usize, Option<u32>)>> = vec![Vec::new(); n];
        let mut same: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
        let mut edges = Vec::new();
        for cond in &query.where_list {
            let a = alias_index[cond.left.alias.as_str()];
            let a_col = col(a, &cond.left.column)?;
            match &cond.right {
                Operand::Literal(v) => literal[a].push((a_col, self.dataset.symbols().lookup(v))),
                Operand::Column(c) => {
                    let b = alias_index[c.alias.as_str()];
                    let b_col = col(b, &c.column)?;
                    if a == b {
                        same[a].push((a_col, b_col));
                    } else {
                        edges.push(Edge { a, a_col, b, b_col });
                    }
                }
            }
        }
        let rows: Vec<Vec<u32>> = (0..n)
            .map(|i| {
                let t = tables[i];
                (0..t.num_rows() as u32)
                    .filter(|&r| {
                        let r = r as usize;
                        literal[i].iter().all(|&(c, code)| Some(t.code(r, c)) == code)
                            && same[i].iter().all(|&(x, y)| t.code(r, x) == t.code(r, y))
                    })
                    .collect()
            })
            .collect();

        let mut parent: Vec<usize> = (0..n).collect();
        for e in &edges {
            let (ra, rb) = (find(&mut parent, e.a), find(&mut parent, e.b));
            if ra != rb {
                parent[ra] = rb;
            }
        }
        let mut components: Vec<Vec<usize>> = Vec::new();
        let mut root_slot: HashMap<usize, usize> = HashMap::new();
        for i in 0..n {
            let r = find(&mut parent, i);
            let slot = *root_slot.entry(r).or_insert_with(|| {
                components.push(Vec::new());
                components.len() - 1
            });
            components[slot].push(i);
        }

        // Grouped columns: (select position, alias, column index).
        let mut grouped = Vec::new();
        for item in &query.select_list {
            if let SelectExpr::Column(c) = &item.expr {
                let a = alias_index[c.alias.as_str()];
                grouped.push((grouped.len(), a, col(a, &c.column)?));
            }
        }

        let mut combined: Vec<(Vec<u32>, u64)> = vec![(vec![u32::MAX; grouped.len()], 1)];
        for members in &components {
            let joined = join_component(members, &rows, &edges, tables.as_slice());
            let cols: Vec<(usize, usize, usize)> = grouped
                .iter()
                .filter(|(_, a, _)| members.contains(a))
                .map(|&(pos, a, c)| (pos, joined.aliases.iter().position(|&x| x == a).unwrap(), c))
                .collect();
            let mut groups: HashMap<Vec<u32>, u64> = HashMap::new();
            for t in 0..joined.len() {
                let tuple = joined.tuple(t);
                let key: Vec<u32> = cols
                    .iter()
                    .map(|&(_, slot, c)| tables[joined.aliases[slot]].code(tuple[slot] as usize, c))
                    .collect();
                *groups.entry(key).or_insert(0) += 1;
            }
            let mut next = Vec::with_capacity(combined.len() * groups.len());
            for (partial, count) in &combined {
                for (key, &g) in &groups {
                    let mut values = partial.clone();
                    for (&(pos, _, _), &code) in cols.iter().zip(key) {
                        values[pos] = code;
                    }
                    let c = count
                        .checked_mul(g)
                        .ok_or_else(|| Error::Backend("count overflow".into()))?;
                    next.push((values, c));
                }
            }
            combined = next;
            if combined.is_empty() {
                break;
            }
        }

        Ok(combined
            .into_iter()
            .map(|(codes, c)| (codes.into_iter().map(|code| self.dataset.value(code).clone()).collect(), c))
            .collect())
    }
}

fn join_component(members: &[usize], rows: &[Vec<u32>], edges: &[Edge], tables: &[&Table]) -> Joined {
    let start = *members.iter().min_by_key(|&&m| (rows[m].len(), m)).unwrap();
    let mut joined = Joined {
        aliases: vec![start],
        tuples: rows[start].clone(),
    };
    while joined.aliases.len() < members.len() {
        // Next alias: connected to the joined set, fewest candidate rows.
        let next = members
            .iter()
            .copied()
            .filter(|m| !joined.aliases.contains(m))
            .filter(|&m| {
                edges.iter().any(|e| {
                    (e.a == m && joined.aliases.contains(&e.b)) || (e.b == m && joined.aliases.contains(&e.a))
                })
            })
            .min_by_key(|&m| (rows[m].len(), m))
            .expect("component is connected");
        // (slot in joined tuple, column of joined alias, column of next alias)
        let conds: Vec<(usize, usize, usize)> = edges
            .iter()
            .filter_map(|e| {
                if e.a == next {
                    joined.aliases.iter().position(|&x| x == e.b).map(|s| (s, e.b_col, e.a_col))
                } else if e.b == next {
                    joined.aliases.iter().position(|&x| x == e.a).map(|s| (s, e.a_col, e.b_col))
                } else {
                    None
                }
            })
            .collect();
        let left_key = |t: &[u32], i: usize| -> u32 {
            let (slot, c, _) = conds[i];
            tables[joined.aliases[slot]].code(t[slot] as usize, c)
        };
        let right_key = |r: u32, i: usize| -> u32 { tables[next].code(r as usize, conds[i].2) };
        let tuples = match conds.len() {
            1 => hash_join(&joined, &rows[next], |t| left_key(t, 0), |r| right_key(r, 0)),
            2 => hash_join(
                &joined,
                &rows[next],
                |t| ((left_key(t, 0) as u64) << 32) | left_key(t, 1) as u64,
                |r| ((right_key(r, 0) as u64) << 32) | right_key(r, 1) as u64,
            ),
            k => hash_join(
                &joined,
                &rows[next],
                |t| (0..k).map(|i| left_key(t, i)).collect::<Vec<u32>>(),
                |r| (0..k).map(|i| right_key(r, i)).collect::<Vec<u32>>(),
            ),
        };
        joined.aliases.push(next);
        joined.tuples = tuples;
    }
    joined
}

/// Join `left` with candidate rows `right`, building the hash table on the
/// smaller side. Returns flattened tuples with the right row appended.
fn hash_join<K, L, R>(left: &Joined, right: &[u32], left_key: L, right_key: R) -> Vec<u32>
where
    K: Hash + Eq,
    L: Fn(&[u32]) -> K,
    R: Fn(u32) -> K,
{
    let mut out = Vec::new();
    let n = left.len();
    if n <= right.len() {
        let mut table: HashMap<K, Vec<usize>> = HashMap::with_capacity(n);
        for i in 0..n {
            table.entry(left_key(left.tuple(i))).or_default().push(i);
        }
        for &r in right {
            if let Some(hits) = table.get(&right_key(r)) {
                for &i in hits {
                    out.extend_from_slice(left.tuple(i));
                    out.push(r);
                }
            }
        }
    } else {
        let mut table: HashMap<K, Vec<u32>> = HashMap::with_capacity(right.len());
        for &r in right {
            table.entry(right_key(r)).or_default().push(r);
        }
        for i in 0..n {
            let t = left.tuple(i);
            if let Some(hits) = table.get(&left_key(t)) {
                for &r in hits {
                    out.extend_from_slice(t);
                    out.push(r);
                }
            }
        }
    }
    out
}
