//! Isolation Forest.
//!
//! Each tree is grown on a uniform subsample drawn without replacement. A
//! node picks a feature uniformly among those that are not constant on the
//! node, then a split value uniformly in that feature's range. Growth stops
//! at `ceil(log2(subsample))`; leaves remember their size so the expected
//! remaining depth `c(size)` can be added when scoring.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_rows, DetectorScores, Method};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

const EULER_GAMMA: f64 = 0.577_215_664_9;
const DEFAULT_SUBSAMPLE: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IForestConfig {
    pub n_trees: usize,
    /// `None` means `min(256, N)`.
    pub subsample: Option<usize>,
    pub seed: u64,
}

impl Default for IForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            subsample: None,
            seed: 0,
        }
    }
}

/// Average path length of an unsuccessful BST search over `n` points.
pub fn average_path_length(n: usize) -> f64 {
    match n {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let n = n as f64;
            2.0 * ((n - 1.0).ln() + EULER_GAMMA) - 2.0 * (n - 1.0) / n
        }
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { size: usize },
    Split { feature: usize, value: f64, left: usize, right: usize },
}

struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn grow(rows: &[Vec<f64>], sample: Vec<usize>, max_depth: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut tree = Tree { nodes: Vec::new() };
        tree.build(rows, sample, 0, max_depth, rng);
        tree
    }

    fn build(
        &mut self,
        rows: &[Vec<f64>],
        points: Vec<usize>,
        depth: usize,
        max_depth: usize,
        rng: &mut ChaCha8Rng,
    ) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { size: points.len() });
        if depth >= max_depth || points.len() <= 1 {
            return id;
        }

        let d = rows[points[0]].len();
        let ranges: Vec<(usize, f64, f64)> = (0..d)
            .filter_map(|j| {
                let (lo, hi) = points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &p| {
                    (lo.min(rows[p][j]), hi.max(rows[p][j]))
                });
                (lo < hi).then_some((j, lo, hi))
            })
            .collect();
        if ranges.is_empty() {
            return id;
        }
        let (feature, lo, hi) = ranges[rng.random_range(0..ranges.len())];
        let value = rng.random_range(lo..hi);
        let (l, r): (Vec<usize>, Vec<usize>) = points.into_iter().partition(|&p| rows[p][feature] < value);
        let left = self.build(rows, l, depth + 1, max_depth, rng);
        let right = self.build(rows, r, depth + 1, max_depth, rng);
        self.nodes[id] = Node::Split { feature, value, left, right };
        id
    }

    fn path_length(&self, x: &[f64]) -> f64 {
        let mut node = 0;
        let mut depth = 0.0;
        loop {
            match self.nodes[node] {
                Node::Leaf { size } => return depth + average_path_length(size),
                Node::Split { feature, value, left, right } => {
                    node = if x[feature] < value { left } else { right };
                    depth += 1.0;
                }
            }
        }
    }
}

/// Isolation scores `2^(-E[h(x)] / c(psi))` for every row.
///
/// `order` lists row indices in the canonical order that subsampling draws
/// from; passing rows sorted by a stable key makes the forest independent
/// of how the caller happened to order the rows.
pub fn iforest_scores(rows: &[Vec<f64>], order: &[usize], config: &IForestConfig) -> Result<Vec<f64>> {
    let n = rows.len();
    check_rows(rows, 2, "isolation forest")?;
    if order.len() != n {
        return Err(Error::LengthMismatch { expected: n, actual: order.len() });
    }
    if config.n_trees == 0 {
        return Err(Error::InvalidConfig("iforest.n_trees must be at least 1".into()));
    }
    let psi = config.subsample.unwrap_or(DEFAULT_SUBSAMPLE).min(n).max(2);
    let max_depth = (psi as f64).log2().ceil() as usize;

    let mut total = vec![0.0; n];
    for t in 0..config.n_trees {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(t as u64);
        let sample: Vec<usize> = index::sample(&mut rng, n, psi).into_iter().map(|i| order[i]).collect();
        let tree = Tree::grow(rows, sample, max_depth, &mut rng);
        for (acc, x) in total.iter_mut().zip(rows) {
            *acc += tree.path_length(x);
        }
    }
    let c = average_path_length(psi);
    Ok(total
        .into_iter()
        .map(|h| 2f64.powf(-(h / config.n_trees as f64) / c))
        .collect())
}

pub fn isolation_forest(matrix: &FeatureMatrix, config: &IForestConfig) -> Result<DetectorScores> {
    let mut order: Vec<usize> = (0..matrix.n_rows()).collect();
    order.sort_by(|&a, &b| matrix.stations[a].cmp(&matrix.stations[b]));
    let scores = iforest_scores(&matrix.values, &order, config)?;
    let psi = config.subsample.unwrap_or(DEFAULT_SUBSAMPLE).min(matrix.n_rows()).max(2);
    let mut out = DetectorScores::new(Method::IForest, scores);
    out.diagnostics.insert("n_trees".into(), config.n_trees as f64);
    out.diagnostics.insert("subsample".into(), psi as f64);
    Ok(out)
}
