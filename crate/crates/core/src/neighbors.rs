//! Nearest-neighbor example selection over normalized `[theta, error]` keys.
//!
//! Keys map each policy dimension into `[0, 1]` using the family bounds and
//! divide the error by a dataset-wide scale, so that both halves of the key
//! have comparable spread. A static k-d tree answers exact k-nearest queries;
//! results are returned farthest first, with the nearest example last.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::dataset::ImprovementDataset;
use crate::envs::{Bounds, ErrorVector, PolicyParams, TaskFamily};

pub const KEY_DIM: usize = 5;
/// Percentile of `||e||` over the dataset used as the error scale.
pub const ERROR_SCALE_PERCENTILE: f64 = 0.95;
const LEAF_SIZE: usize = 8;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NeighborError {
    #[error("cannot build an index over an empty dataset")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborKey(pub [f64; KEY_DIM]);

impl NeighborKey {
    pub fn squared_distance(&self, other: &NeighborKey) -> f64 {
        let mut acc = 0.0;
        for d in 0..KEY_DIM {
            let diff = self.0[d] - other.0[d];
            acc += diff * diff;
        }
        acc
    }
}

/// Maps raw `(theta, error)` pairs to keys.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyNormalizer {
    pub bounds: Bounds,
    pub error_scale: f64,
}

impl KeyNormalizer {
    pub fn new(family: TaskFamily, error_scale: f64) -> Self {
        let error_scale = if error_scale.is_finite() && error_scale > 0.0 {
            error_scale
        } else {
            1.0
        };
        KeyNormalizer {
            bounds: family.bounds(),
            error_scale,
        }
    }

    pub fn for_dataset(dataset: &ImprovementDataset) -> Self {
        let norms: Vec<f64> = dataset
            .examples
            .iter()
            .map(|ex| ErrorVector(ex.error).norm())
            .collect();
        KeyNormalizer::new(dataset.family, percentile(norms, ERROR_SCALE_PERCENTILE))
    }

    pub fn key(&self, theta: &[f64; 3], error: &[f64; 2]) -> NeighborKey {
        let t = self.bounds.normalize(&PolicyParams(*theta));
        NeighborKey([
            t[0],
            t[1],
            t[2],
            error[0] / self.error_scale,
            error[1] / self.error_scale,
        ])
    }
}

pub fn normalize_key(theta: &[f64; 3], error: &[f64; 2], family: TaskFamily, error_scale: f64) -> NeighborKey {
    KeyNormalizer::new(family, error_scale).key(theta, error)
}

/// Linear-interpolated percentile, `q` in `[0, 1]`. NaN for an empty input.
pub fn percentile(mut values: Vec<f64>, q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let pos = q * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    values[lo] + (values[hi] - values[lo]) * (pos - lo as f64)
}

/// One query result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { dim: usize, value: f64, left: usize, right: usize },
}

/// Static k-d tree over 5-D keys. Payloads are positions in the input order.
#[derive(Debug, Clone)]
pub struct KdTree {
    keys: Vec<NeighborKey>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

/// Max-heap entry ordered by `(squared distance, index)`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    dist_sq: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist_sq
            .total_cmp(&other.dist_sq)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl KdTree {
    pub fn build(keys: Vec<NeighborKey>) -> Result<KdTree, NeighborError> {
        if keys.is_empty() {
            return Err(NeighborError::Empty);
        }
        let mut tree = KdTree {
            order: (0..keys.len()).collect(),
            keys,
            nodes: Vec::new(),
        };
        let n = tree.keys.len();
        tree.build_node(0, n);
        Ok(tree)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn key(&self, index: usize) -> &NeighborKey {
        &self.keys[index]
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let dim = self.widest_dim(start, end);
        let keys = &self.keys;
        let mid = (end - start) / 2;
        self.order[start..end].select_nth_unstable_by(mid, |&a, &b| keys[a].0[dim].total_cmp(&keys[b].0[dim]));
        let value = keys[self.order[start + mid]].0[dim];
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build_node(start, start + mid);
        let right = self.build_node(start + mid, end);
        self.nodes[id] = Node::Split { dim, value, left, right };
        id
    }

    fn widest_dim(&self, start: usize, end: usize) -> usize {
        let mut best = (0, f64::NEG_INFINITY);
        for d in 0..KEY_DIM {
            let (lo, hi) = self.order[start..end]
                .iter()
                .map(|&i| self.keys[i].0[d])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            if hi - lo > best.1 {
                best = (d, hi - lo);
            }
        }
        best.0
    }

    /// The `k` nearest keys, farthest first. Equal distances rank the smaller
    /// index as nearer. Returns all keys when `k` exceeds the tree size.
    pub fn nearest(&self, query: &NeighborKey, k: usize) -> Vec<Neighbor> {
        let k = k.min(self.keys.len());
        if k == 0 {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(0, query, k, &mut heap);
        // BinaryHeap::into_sorted_vec is ascending; reverse for farthest first.
        heap.into_sorted_vec()
            .into_iter()
            .rev()
            .map(|c| Neighbor {
                index: c.index,
                distance: c.dist_sq.sqrt(),
            })
            .collect()
    }

    fn search(&self, node: usize, query: &NeighborKey, k: usize, heap: &mut BinaryHeap<Candidate>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &index in &self.order[start..end] {
                    let c = Candidate {
                        dist_sq: query.squared_distance(&self.keys[index]),
                        index,
                    };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().expect("heap is full") {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split { dim, value, left, right } => {
                let diff = query.0[dim] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, query, k, heap);
                // `<=` keeps equal-distance candidates with smaller indices reachable
                if heap.len() < k || diff * diff <= heap.peek().expect("heap is full").dist_sq {
                    self.search(far, query, k, heap);
                }
            }
        }
    }
}

/// Dataset-backed index: normalizer plus tree over every example's key.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    pub normalizer: KeyNormalizer,
    tree: KdTree,
}

impl NeighborIndex {
    pub fn build(dataset: &ImprovementDataset) -> Result<NeighborIndex, NeighborError> {
        let normalizer = KeyNormalizer::for_dataset(dataset);
        let keys = dataset
            .examples
            .iter()
            .map(|ex| normalizer.key(&ex.theta, &ex.error))
            .collect();
        Ok(NeighborIndex {
            normalizer,
            tree: KdTree::build(keys)?,
        })
    }

    pub fn len(&self) -> usize {
        self.tree.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tree.is_empty()
    }

    pub fn key_of(&self, index: usize) -> &NeighborKey {
        self.tree.key(index)
    }

    pub fn key(&self, theta: &[f64; 3], error: &[f64; 2]) -> NeighborKey {
        self.normalizer.key(theta, error)
    }

    pub fn query_knn(&self, key: &NeighborKey, k: usize) -> Vec<Neighbor> {
        self.tree.nearest(key, k)
    }
}
