//! Local Outlier Factor with tie-inclusive k-neighbourhoods.

use serde::{Deserialize, Serialize};

use super::{check_rows, sq_dist, DetectorScores, Method};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

/// Added to the mean reachability distance so that local reachability
/// density stays finite next to exact duplicates.
pub(crate) const REACH_EPS: f64 = 1e-10;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LofConfig {
    /// `None` means `min(20, N - 1)`.
    pub k: Option<usize>,
}

impl LofConfig {
    pub fn resolve_k(&self, n: usize) -> usize {
        self.k.unwrap_or_else(|| 20.min(n.saturating_sub(1)))
    }
}

/// LOF value for every row using Euclidean distance.
///
/// Points whose k-distance is zero (at least `k` exact duplicates) get 1.
pub fn lof_scores(rows: &[Vec<f64>], k: usize) -> Result<Vec<f64>> {
    let n = rows.len();
    check_rows(rows, 2, "LOF")?;
    if k == 0 || n <= k {
        return Err(Error::InsufficientData(format!("LOF with k={k} needs more than {k} rows, got {n}")));
    }

    let mut dist = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = sq_dist(&rows[i], &rows[j]).sqrt();
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }

    let mut k_distance = vec![0.0; n];
    let mut neighbours: Vec<Vec<usize>> = Vec::with_capacity(n);
    let mut scratch = Vec::with_capacity(n);
    for p in 0..n {
        scratch.clear();
        scratch.extend((0..n).filter(|&o| o != p).map(|o| dist[p][o]));
        let (_, kth, _) = scratch.select_nth_unstable_by(k - 1, f64::total_cmp);
        let kd = *kth;
        k_distance[p] = kd;
        neighbours.push((0..n).filter(|&o| o != p && dist[p][o] <= kd).collect());
    }

    let lrd: Vec<f64> = (0..n)
        .map(|p| {
            let nb = &neighbours[p];
            let reach: f64 = nb.iter().map(|&o| k_distance[o].max(dist[p][o])).sum();
            1.0 / (reach / nb.len() as f64 + REACH_EPS)
        })
        .collect();

    Ok((0..n)
        .map(|p| {
            if k_distance[p] == 0.0 {
                return 1.0;
            }
            let nb = &neighbours[p];
            nb.iter().map(|&o| lrd[o]).sum::<f64>() / (nb.len() as f64 * lrd[p])
        })
        .collect())
}

pub fn lof(matrix: &FeatureMatrix, config: &LofConfig) -> Result<DetectorScores> {
    let k = config.resolve_k(matrix.n_rows());
    let scores = lof_scores(&matrix.values, k)?;
    let mut out = DetectorScores::new(Method::Lof, scores);
    out.diagnostics.insert("k".into(), k as f64);
    Ok(out)
}
