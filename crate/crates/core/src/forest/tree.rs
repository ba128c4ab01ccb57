use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary classification tree stored as parallel node arrays.
///
/// Node 0 is the root. For internal nodes `feature >= 0` and rows with
/// `x[feature] <= threshold` go to `left`. Every node, internal or leaf, keeps
/// the featured frequency of the training rows that reached it, so a leaf's
/// class-frequency vector is `[1 - p, p]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub feature: Vec<i64>,
    pub threshold: Vec<f64>,
    pub left: Vec<u32>,
    pub right: Vec<u32>,
    pub featured_freq: Vec<f64>,
    pub n_samples: Vec<u64>,
}

/// One node when assembling a tree by hand.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodeSpec {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        featured_freq: f64,
        n_samples: u64,
    },
    Leaf {
        featured_freq: f64,
        n_samples: u64,
    },
}

impl DecisionTree {
    fn empty() -> Self {
        Self {
            feature: Vec::new(),
            threshold: Vec::new(),
            left: Vec::new(),
            right: Vec::new(),
            featured_freq: Vec::new(),
            n_samples: Vec::new(),
        }
    }

    pub fn from_nodes(nodes: &[NodeSpec]) -> Result<Self> {
        let mut t = Self::empty();
        for n in nodes {
            match *n {
                NodeSpec::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    featured_freq,
                    n_samples,
                } => t.push(feature as i64, threshold, left as u32, right as u32, featured_freq, n_samples),
                NodeSpec::Leaf { featured_freq, n_samples } => t.push(-1, 0.0, 0, 0, featured_freq, n_samples),
            };
        }
        t.validate(usize::MAX)?;
        Ok(t)
    }

    fn push(&mut self, feature: i64, threshold: f64, left: u32, right: u32, freq: f64, n: u64) -> usize {
        self.feature.push(feature);
        self.threshold.push(threshold);
        self.left.push(left);
        self.right.push(right);
        self.featured_freq.push(freq);
        self.n_samples.push(n);
        self.feature.len() - 1
    }

    pub fn node_count(&self) -> usize {
        self.feature.len()
    }

    pub fn is_leaf(&self, node: usize) -> bool {
        self.feature[node] < 0
    }

    /// Class-frequency vector `[not featured, featured]` of a node.
    pub fn class_frequencies(&self, node: usize) -> [f64; 2] {
        let p = self.featured_freq[node];
        [1.0 - p, p]
    }

    pub fn depth(&self) -> usize {
        let mut best = 0;
        let mut stack = vec![(0usize, 0usize)];
        while let Some((n, d)) = stack.pop() {
            best = best.max(d);
            if !self.is_leaf(n) {
                stack.push((self.left[n] as usize, d + 1));
                stack.push((self.right[n] as usize, d + 1));
            }
        }
        best
    }

    /// Index of the leaf reached by `x`.
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut n = 0usize;
        while self.feature[n] >= 0 {
            n = if x[self.feature[n] as usize] <= self.threshold[n] {
                self.left[n] as usize
            } else {
                self.right[n] as usize
            };
        }
        n
    }

    /// Node indices from the root to the reached leaf.
    pub fn decision_path(&self, x: &[f64]) -> Vec<usize> {
        let mut path = vec![0usize];
        let mut n = 0usize;
        while self.feature[n] >= 0 {
            n = if x[self.feature[n] as usize] <= self.threshold[n] {
                self.left[n] as usize
            } else {
                self.right[n] as usize
            };
            path.push(n);
        }
        path
    }

    pub fn predict_featured(&self, x: &[f64]) -> f64 {
        self.featured_freq[self.leaf_index(x)]
    }

    /// Checks structural consistency: children in range and forming a tree,
    /// features below `n_features`, frequencies in [0,1].
    pub fn validate(&self, n_features: usize) -> Result<()> {
        let n = self.node_count();
        let bad = |m: String| Err(Error::ModelFormat(m));
        if n == 0 {
            return bad("tree without nodes".into());
        }
        for v in [self.threshold.len(), self.left.len(), self.right.len(), self.featured_freq.len(), self.n_samples.len()] {
            if v != n {
                return bad("node arrays differ in length".into());
            }
        }
        let mut parents = vec![0u32; n];
        for i in 0..n {
            if !(0.0..=1.0).contains(&self.featured_freq[i]) {
                return bad(format!("node {i} frequency out of range"));
            }
            if self.feature[i] >= 0 {
                if self.feature[i] as usize >= n_features {
                    return bad(format!("node {i} uses feature {} of {n_features}", self.feature[i]));
                }
                for c in [self.left[i] as usize, self.right[i] as usize] {
                    if c >= n || c <= i {
                        return bad(format!("node {i} has invalid child {c}"));
                    }
                    parents[c] += 1;
                }
            }
        }
        if parents[0] != 0 || parents[1..].iter().any(|&p| p != 1) {
            return bad("nodes do not form a tree".into());
        }
        Ok(())
    }
}

/// Column-major view of training data shared by all trees.
pub(crate) struct Columns<'a> {
    pub(crate) values: &'a [f64],
    pub(crate) labels: &'a [bool],
    pub(crate) n_rows: usize,
    pub(crate) n_features: usize,
}

impl Columns<'_> {
    fn value(&self, feature: usize, row: u32) -> f64 {
        self.values[feature * self.n_rows + row as usize]
    }
}

pub(crate) struct GrowParams {
    pub(crate) max_depth: Option<usize>,
    pub(crate) min_samples_split: usize,
    pub(crate) max_features: usize,
}

struct Split {
    score: f64,
    feature: usize,
    threshold: f64,
}

/// Between adjacent distinct sorted values `lo < hi`.
fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo + (hi - lo) / 2.0;
    if m < hi {
        m
    } else {
        lo
    }
}

/// Greedy CART growth over the (possibly repeated) sample rows.
pub(crate) fn grow_tree<R: Rng>(data: &Columns<'_>, rows: Vec<u32>, params: &GrowParams, rng: &mut R) -> DecisionTree {
    let mut tree = DecisionTree::empty();
    let mut features: Vec<usize> = (0..data.n_features).collect();
    let mut buf: Vec<(f64, bool)> = Vec::with_capacity(rows.len());

    // (node index, depth, rows)
    let root = tree.push(-1, 0.0, 0, 0, 0.0, 0);
    let mut stack: Vec<(usize, usize, Vec<u32>)> = vec![(root, 0, rows)];
    while let Some((node, depth, rows)) = stack.pop() {
        let n = rows.len();
        let n_pos = rows.iter().filter(|&&r| data.labels[r as usize]).count();
        tree.featured_freq[node] = if n == 0 { 0.0 } else { n_pos as f64 / n as f64 };
        tree.n_samples[node] = n as u64;

        let depth_capped = params.max_depth.is_some_and(|d| depth >= d);
        if depth_capped || n < params.min_samples_split || n_pos == 0 || n_pos == n {
            continue;
        }

        let mut best: Option<Split> = None;
        let mut informative = 0usize;
        for j in 0..features.len() {
            if informative >= params.max_features {
                break;
            }
            let k = rng.random_range(j..features.len());
            features.swap(j, k);
            let f = features[j];

            buf.clear();
            buf.extend(rows.iter().map(|&r| (data.value(f, r), data.labels[r as usize])));
            buf.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            if buf[0].0 == buf[n - 1].0 {
                continue;
            }
            informative += 1;

            let (mut l0, mut l1) = (0f64, 0f64);
            let (t0, t1) = ((n - n_pos) as f64, n_pos as f64);
            for i in 0..n - 1 {
                if buf[i].1 {
                    l1 += 1.0;
                } else {
                    l0 += 1.0;
                }
                if buf[i].0 == buf[i + 1].0 {
                    continue;
                }
                let (r0, r1) = (t0 - l0, t1 - l1);
                // Maximizing this minimizes the weighted Gini impurity.
                let score = (l0 * l0 + l1 * l1) / (l0 + l1) + (r0 * r0 + r1 * r1) / (r0 + r1);
                let threshold = midpoint(buf[i].0, buf[i + 1].0);
                let better = match &best {
                    None => true,
                    Some(b) => {
                        score > b.score
                            || (score == b.score
                                && (f < b.feature || (f == b.feature && threshold < b.threshold)))
                    }
                };
                if better {
                    best = Some(Split {
                        score,
                        feature: f,
                        threshold,
                    });
                }
            }
        }

        let Some(split) = best else { continue };
        let (left_rows, right_rows): (Vec<u32>, Vec<u32>) = rows
            .into_iter()
            .partition(|&r| data.value(split.feature, r) <= split.threshold);
        let left = tree.push(-1, 0.0, 0, 0, 0.0, 0);
        let right = tree.push(-1, 0.0, 0, 0, 0.0, 0);
        tree.feature[node] = split.feature as i64;
        tree.threshold[node] = split.threshold;
        tree.left[node] = left as u32;
        tree.right[node] = right as u32;
        stack.push((right, depth + 1, right_rows));
        stack.push((left, depth + 1, left_rows));
    }
    tree
}
