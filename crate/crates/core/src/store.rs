//! The system memory: an exact k-d tree over embeddings.
//!
//! Every record is a tree node. Bulk construction splits each subset at the
//! median of its widest axis (lowest axis index on ties); streamed inserts
//! descend to a leaf and hang the new node there, splitting on the axis after
//! its parent's. Left subtrees hold coordinates `<=` the split value, right
//! subtrees `>=`, which keeps the plane-distance bound valid when values
//! repeat.
//!
//! Queries are branch-and-bound on squared `f64` distances. A subtree is
//! skipped only when its plane distance is strictly greater than the best
//! distance so far, so exact ties are always examined and resolved by the
//! lexicographically smallest id.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::encoder::Embedding;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    L2,
    /// L2 between unit-normalized vectors.
    Cosine,
}

impl Metric {
    pub fn prepare(&self, e: &Embedding) -> Embedding {
        match self {
            Metric::L2 => e.clone(),
            Metric::Cosine => e.normalized(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NearestNeighborResult {
    pub id: String,
    pub distance: f64,
}

#[derive(Debug, Clone)]
struct Node {
    record: usize,
    axis: usize,
    split: f64,
    left: Option<usize>,
    right: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct MemoryStore {
    dim: usize,
    metric: Metric,
    ids: Vec<String>,
    embeddings: Vec<Embedding>,
    /// Widened copy of every record, `dim` values per record.
    coords: Vec<f64>,
    index: HashMap<String, usize>,
    nodes: Vec<Node>,
    root: Option<usize>,
}

/// Search counters, for checking pruning.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SearchStats {
    pub distance_evaluations: usize,
}

impl MemoryStore {
    pub fn new(dim: usize) -> Self {
        Self::with_metric(dim, Metric::L2)
    }

    pub fn with_metric(dim: usize, metric: Metric) -> Self {
        Self {
            dim,
            metric,
            ids: Vec::new(),
            embeddings: Vec::new(),
            coords: Vec::new(),
            index: HashMap::new(),
            nodes: Vec::new(),
            root: None,
        }
    }

    /// Balanced bulk construction.
    pub fn build(dim: usize, records: Vec<(String, Embedding)>) -> Result<Self> {
        Self::build_with_metric(dim, Metric::L2, records)
    }

    pub fn build_with_metric(
        dim: usize,
        metric: Metric,
        records: Vec<(String, Embedding)>,
    ) -> Result<Self> {
        let mut store = Self::with_metric(dim, metric);
        for (id, e) in records {
            store.push_record(id, e)?;
        }
        let mut order: Vec<usize> = (0..store.ids.len()).collect();
        store.nodes = Vec::with_capacity(order.len());
        store.root = store.build_subtree(&mut order);
        Ok(store)
    }

    fn push_record(&mut self, id: String, e: Embedding) -> Result<usize> {
        if e.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: e.dim(),
            });
        }
        if self.index.contains_key(&id) {
            return Err(Error::DuplicateId(id));
        }
        let e = self.metric.prepare(&e);
        let record = self.ids.len();
        self.coords.extend(e.values().iter().map(|&v| v as f64));
        self.embeddings.push(e);
        self.index.insert(id.clone(), record);
        self.ids.push(id);
        Ok(record)
    }

    fn coord(&self, record: usize, axis: usize) -> f64 {
        self.coords[record * self.dim + axis]
    }

    fn point(&self, record: usize) -> &[f64] {
        &self.coords[record * self.dim..(record + 1) * self.dim]
    }

    fn widest_axis(&self, records: &[usize]) -> usize {
        let mut best = (0, f64::NEG_INFINITY);
        for axis in 0..self.dim {
            let (lo, hi) = records.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| {
                let v = self.coord(r, axis);
                (lo.min(v), hi.max(v))
            });
            if hi - lo > best.1 {
                best = (axis, hi - lo);
            }
        }
        best.0
    }

    fn build_subtree(&mut self, records: &mut [usize]) -> Option<usize> {
        if records.is_empty() {
            return None;
        }
        let axis = self.widest_axis(records);
        let mid = records.len() / 2;
        records.select_nth_unstable_by(mid, |&a, &b| {
            self.coord(a, axis)
                .total_cmp(&self.coord(b, axis))
                .then(a.cmp(&b))
        });
        let record = records[mid];
        let node = self.nodes.len();
        self.nodes.push(Node {
            record,
            axis,
            split: self.coord(record, axis),
            left: None,
            right: None,
        });
        let (lower, upper) = records.split_at_mut(mid);
        let left = self.build_subtree(lower);
        let right = self.build_subtree(&mut upper[1..]);
        self.nodes[node].left = left;
        self.nodes[node].right = right;
        Some(node)
    }

    /// Streaming insertion. No rebalancing.
    pub fn insert(&mut self, id: impl Into<String>, embedding: Embedding) -> Result<()> {
        let record = self.push_record(id.into(), embedding)?;
        let new_node = self.nodes.len();
        let Some(mut cur) = self.root else {
            self.nodes.push(Node {
                record,
                axis: 0,
                split: self.coord(record, 0),
                left: None,
                right: None,
            });
            self.root = Some(new_node);
            return Ok(());
        };
        loop {
            let Node { axis, split, .. } = self.nodes[cur];
            let go_left = self.coord(record, axis) < split;
            let next = if go_left {
                self.nodes[cur].left
            } else {
                self.nodes[cur].right
            };
            match next {
                Some(n) => cur = n,
                None => {
                    let axis = (axis + 1) % self.dim;
                    self.nodes.push(Node {
                        record,
                        axis,
                        split: self.coord(record, axis),
                        left: None,
                        right: None,
                    });
                    if go_left {
                        self.nodes[cur].left = Some(new_node);
                    } else {
                        self.nodes[cur].right = Some(new_node);
                    }
                    return Ok(());
                }
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    /// Stored records (after metric preparation) in insertion order.
    pub fn records(&self) -> impl Iterator<Item = (&str, &Embedding)> {
        self.ids.iter().map(String::as_str).zip(&self.embeddings)
    }

    pub fn get(&self, id: &str) -> Option<&Embedding> {
        self.index.get(id).map(|&r| &self.embeddings[r])
    }

    /// Ids visited by an in-order walk of the tree.
    pub fn in_order_ids(&self) -> Vec<&str> {
        let mut out = Vec::with_capacity(self.len());
        let mut stack = Vec::new();
        let mut cur = self.root;
        while cur.is_some() || !stack.is_empty() {
            while let Some(n) = cur {
                stack.push(n);
                cur = self.nodes[n].left;
            }
            let n = stack.pop().unwrap();
            out.push(self.ids[self.nodes[n].record].as_str());
            cur = self.nodes[n].right;
        }
        out
    }

    pub fn depth(&self) -> usize {
        let mut max = 0;
        let mut stack: Vec<(usize, usize)> = self.root.map(|r| (r, 1)).into_iter().collect();
        while let Some((n, d)) = stack.pop() {
            max = max.max(d);
            stack.extend(self.nodes[n].left.map(|c| (c, d + 1)));
            stack.extend(self.nodes[n].right.map(|c| (c, d + 1)));
        }
        max
    }

    pub fn nearest(&self, query: &Embedding) -> Result<NearestNeighborResult> {
        self.nearest_with_stats(query).map(|(r, _)| r)
    }

    pub fn nearest_with_stats(
        &self,
        query: &Embedding,
    ) -> Result<(NearestNeighborResult, SearchStats)> {
        if query.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: query.dim(),
            });
        }
        let root = self.root.ok_or(Error::NoRecords)?;
        let q: Vec<f64> = self.metric.prepare(query).to_f64();
        let mut stats = SearchStats::default();
        let mut best: Option<(f64, usize)> = None;
        // (node, squared lower bound on any distance in its subtree)
        let mut stack = vec![(root, 0.0f64)];
        while let Some((n, bound)) = stack.pop() {
            if let Some((best_d, _)) = best {
                if bound > best_d {
                    continue;
                }
            }
            let node = &self.nodes[n];
            let d = squared_distance(&q, self.point(node.record));
            stats.distance_evaluations += 1;
            if better(d, node.record, best, &self.ids) {
                best = Some((d, node.record));
            }
            let diff = q[node.axis] - node.split;
            let (near, far) = if diff < 0.0 {
                (node.left, node.right)
            } else {
                (node.right, node.left)
            };
            if let Some(f) = far {
                stack.push((f, bound.max(diff * diff)));
            }
            if let Some(c) = near {
                stack.push((c, bound));
            }
        }
        let (d, record) = best.expect("non-empty tree yields a neighbor");
        Ok((
            NearestNeighborResult {
                id: self.ids[record].clone(),
                distance: d.sqrt(),
            },
            stats,
        ))
    }

    /// Linear scan with the same metric preparation and tie rule.
    pub fn nearest_linear(&self, query: &Embedding) -> Result<NearestNeighborResult> {
        if query.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: query.dim(),
            });
        }
        let q = self.metric.prepare(query);
        nearest_bruteforce(self.records(), &q)
    }
}

fn better(d: f64, record: usize, best: Option<(f64, usize)>, ids: &[String]) -> bool {
    match best {
        None => true,
        Some((bd, br)) => match d.total_cmp(&bd) {
            Ordering::Less => true,
            Ordering::Equal => ids[record] < ids[br],
            Ordering::Greater => false,
        },
    }
}

#[inline]
fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Exhaustive nearest neighbor: smallest distance, then smallest id.
pub fn nearest_bruteforce<'a, I>(records: I, query: &Embedding) -> Result<NearestNeighborResult>
where
    I: IntoIterator<Item = (&'a str, &'a Embedding)>,
{
    let q = query.to_f64();
    let mut best: Option<(f64, &str)> = None;
    for (id, e) in records {
        let d = squared_distance(&q, &e.to_f64());
        let replace = match best {
            None => true,
            Some((bd, bid)) => d < bd || (d == bd && id < bid),
        };
        if replace {
            best = Some((d, id));
        }
    }
    let (d, id) = best.ok_or(Error::NoRecords)?;
    Ok(NearestNeighborResult {
        id: id.to_owned(),
        distance: d.sqrt(),
    })
}
