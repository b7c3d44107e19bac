//! Gini classification trees grown on rank-encoded features.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Column-major, rank-encoded copy of a training matrix.
///
/// `ranks[f][row]` is the position of the row's value among the distinct
/// sorted values `levels[f]`, so node-level sorting works on small integers.
#[derive(Debug, Clone)]
pub struct RankedFeatures {
    pub(crate) ranks: Vec<Vec<u32>>,
    pub(crate) levels: Vec<Vec<f64>>,
}

impl RankedFeatures {
    pub fn new(x: ndarray::ArrayView2<'_, f64>) -> Self {
        let n_rows = x.nrows();
        let mut ranks = Vec::with_capacity(x.ncols());
        let mut levels = Vec::with_capacity(x.ncols());
        let mut order: Vec<u32> = Vec::with_capacity(n_rows);
        for col in x.columns() {
            order.clear();
            order.extend(0..n_rows as u32);
            order.sort_unstable_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]));
            let mut rank = vec![0u32; n_rows];
            let mut lv: Vec<f64> = Vec::new();
            for &r in &order {
                let v = col[r as usize];
                if lv.last() != Some(&v) {
                    lv.push(v);
                }
                rank[r as usize] = (lv.len() - 1) as u32;
            }
            ranks.push(rank);
            levels.push(lv);
        }
        RankedFeatures {
            ranks,
            levels,
        }
    }

    pub fn n_features(&self) -> usize {
        self.ranks.len()
    }
}

/// `feature == LEAF` marks a leaf whose class is stored in `left` (0 or 1).
const LEAF: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub feature: u32,
    pub threshold: f64,
    pub left: u32,
    pub right: u32,
}

impl Node {
    fn leaf(class: bool) -> Self {
        Node {
            feature: LEAF,
            threshold: 0.0,
            left: class as u32,
            right: 0,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.feature == LEAF
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    #[inline]
    pub fn predict_row(&self, row: &[f64]) -> bool {
        let mut node = &self.nodes[0];
        while !node.is_leaf() {
            let next = if row[node.feature as usize] <= node.threshold {
                node.left
            } else {
                node.right
            };
            node = &self.nodes[next as usize];
        }
        node.left == 1
    }

    pub fn max_feature(&self) -> Option<u32> {
        self.nodes.iter().filter(|n| !n.is_leaf()).map(|n| n.feature).max()
    }
}

/// A split candidate: children class counts as (n, positives).
#[derive(Clone, Copy)]
struct Candidate {
    feature: usize,
    /// Highest training rank that goes left.
    cut: u32,
    left: (u64, u64),
    right: (u64, u64),
}

/// Sum over children of (pos² + neg²) / size. Maximising it minimises the
/// weighted Gini impurity of the children.
#[inline]
fn purity(left: (u64, u64), right: (u64, u64)) -> f64 {
    let part = |(n, p): (u64, u64)| (p * p + (n - p) * (n - p)) as f64 / n as f64;
    part(left) + part(right)
}

/// Scores closer than this (relative) count as tied, so that rounding in
/// `purity` cannot reorder splits whose exact values are equal.
const TIE_TOLERANCE: f64 = 1e-12;

#[inline]
fn better(a: f64, b: f64) -> bool {
    a > b + TIE_TOLERANCE * b.abs()
}

/// Per-tree buffers reused across nodes. `counts` is all zeros between uses.
struct Scratch {
    keys: Vec<u64>,
    counts: Vec<[u32; 2]>,
}

pub(crate) struct TreeBuilder<'a> {
    pub data: &'a RankedFeatures,
    pub labels: &'a [bool],
    /// Multiplicity of each training row in the tree's resample.
    pub weights: &'a [u32],
    pub features_per_split: usize,
    pub min_node_size: usize,
}

impl TreeBuilder<'_> {
    /// Grows one tree on `sample` (distinct row indices, each counted
    /// `weights[row]` times). The slice is reordered in place.
    pub fn grow<R: Rng>(&self, sample: &mut [u32], rng: &mut R) -> Tree {
        let n_features = self.data.n_features();
        let mut nodes: Vec<Node> = Vec::new();
        let mut feature_pool: Vec<usize> = (0..n_features).collect();
        let max_levels = self.data.levels.iter().map(Vec::len).max().unwrap_or(0);
        let mut scratch = Scratch {
            keys: Vec::with_capacity(sample.len()),
            counts: vec![[0, 0]; max_levels],
        };
        // (start, end, node slot)
        let mut stack: Vec<(usize, usize, usize)> = vec![(0, sample.len(), 0)];
        nodes.push(Node::leaf(false));

        while let Some((start, end, slot)) = stack.pop() {
            let members = &mut sample[start..end];
            let (mut n, mut pos) = (0u64, 0u64);
            for &r in members.iter() {
                let w = self.weights[r as usize] as u64;
                n += w;
                pos += w * self.labels[r as usize] as u64;
            }

            let split = if pos == 0 || pos == n || n <= self.min_node_size as u64 {
                None
            } else {
                self.best_split(members, (n, pos), &mut feature_pool, &mut scratch, rng)
            };

            match split {
                None => {
                    let class = match (2 * pos).cmp(&n) {
                        std::cmp::Ordering::Greater => true,
                        std::cmp::Ordering::Less => false,
                        std::cmp::Ordering::Equal => rng.random_bool(0.5),
                    };
                    nodes[slot] = Node::leaf(class);
                }
                Some(c) => {
                    let ranks = &self.data.ranks[c.feature];
                    let mut i = 0;
                    for j in 0..members.len() {
                        if ranks[members[j] as usize] <= c.cut {
                            members.swap(i, j);
                            i += 1;
                        }
                    }
                    let lv = &self.data.levels[c.feature];
                    let threshold = 0.5 * (lv[c.cut as usize] + lv[c.cut as usize + 1]);
                    let left = nodes.len();
                    nodes.push(Node::leaf(false));
                    nodes.push(Node::leaf(false));
                    nodes[slot] = Node {
                        feature: c.feature as u32,
                        threshold,
                        left: left as u32,
                        right: left as u32 + 1,
                    };
                    stack.push((start + i, end, left + 1));
                    stack.push((start, start + i, left));
                }
            }
        }
        Tree { nodes }
    }

    fn best_split<R: Rng>(
        &self,
        members: &[u32],
        parent: (u64, u64),
        pool: &mut [usize],
        scratch: &mut Scratch,
        rng: &mut R,
    ) -> Option<Candidate> {
        let n_features = pool.len();
        let m = self.features_per_split.min(n_features);
        // Partial Fisher-Yates: the first m entries are a uniform draw.
        for i in 0..m {
            let j = rng.random_range(i..n_features);
            pool.swap(i, j);
        }
        pool[..m].sort_unstable();

        let (n, pos) = parent;
        let parent_purity = (pos * pos + (n - pos) * (n - pos)) as f64 / n as f64;
        let mut best: Option<(Candidate, f64)> = None;
        let mut consider = |cand: Candidate| {
            let score = purity(cand.left, cand.right);
            let improves = match &best {
                None => better(score, parent_purity),
                Some((_, b)) => better(score, *b),
            };
            if improves {
                best = Some((cand, score));
            }
        };
        for &f in &pool[..m] {
            let ranks = &self.data.ranks[f];
            let (mut lo, mut hi) = (u32::MAX, 0u32);
            for &r in members {
                let k = ranks[r as usize];
                lo = lo.min(k);
                hi = hi.max(k);
            }
            if lo == hi {
                continue;
            }
            let (mut nl, mut pl) = (0u64, 0u64);
            if ((hi - lo) as usize) <= 4 * members.len() {
                // Counting pass over the node's rank range.
                let counts = &mut scratch.counts[..=(hi - lo) as usize];
                for &r in members {
                    let c = &mut counts[(ranks[r as usize] - lo) as usize];
                    let w = self.weights[r as usize];
                    c[0] += w;
                    c[1] += w * self.labels[r as usize] as u32;
                }
                for (k, c) in counts.iter_mut().enumerate() {
                    if c[0] == 0 {
                        continue;
                    }
                    nl += c[0] as u64;
                    pl += c[1] as u64;
                    *c = [0, 0];
                    if nl < n {
                        consider(Candidate {
                            feature: f,
                            cut: lo + k as u32,
                            left: (nl, pl),
                            right: (n - nl, pos - pl),
                        });
                    }
                }
            } else {
                let keys = &mut scratch.keys;
                keys.clear();
                // rank | label | weight, so sorting orders by rank.
                keys.extend(members.iter().map(|&r| {
                    ((ranks[r as usize] as u64) << 33)
                        | ((self.labels[r as usize] as u64) << 32)
                        | self.weights[r as usize] as u64
                }));
                keys.sort_unstable();
                for w in 0..keys.len() - 1 {
                    let count = keys[w] & 0xffff_ffff;
                    nl += count;
                    pl += count * ((keys[w] >> 32) & 1);
                    let (here, next) = ((keys[w] >> 33) as u32, (keys[w + 1] >> 33) as u32);
                    if here != next {
                        consider(Candidate {
                            feature: f,
                            cut: here,
                            left: (nl, pl),
                            right: (n - nl, pos - pl),
                        });
                    }
                }
            }
        }
        best.map(|(c, _)| c)
    }
}
