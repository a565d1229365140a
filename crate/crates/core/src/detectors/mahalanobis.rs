//! Mahalanobis distance under a covariance shrunk toward a scaled identity:
//! `(1 - lambda) S + lambda (tr S / d) I`.

use serde::{Deserialize, Serialize};

use super::{check_rows, DetectorScores, Method};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MahalanobisConfig {
    pub shrinkage: f64,
}

impl Default for MahalanobisConfig {
    fn default() -> Self {
        Self { shrinkage: 0.1 }
    }
}

/// Lower-triangular Cholesky factor of a symmetric matrix, or `None` if it
/// is not positive definite.
fn cholesky(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let d = a.len();
    let mut l = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let v = a[i][i] - s;
                if !(v > 0.0) {
                    return None;
                }
                l[i][i] = v.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    Some(l)
}

pub(crate) struct ShrunkCovariance {
    pub mean: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
    pub trace: f64,
}

pub(crate) fn shrunk_covariance(rows: &[Vec<f64>], lambda: f64) -> Result<ShrunkCovariance> {
    let d = check_rows(rows, 2, "Mahalanobis")?;
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let mut cov = vec![vec![0.0; d]; d];
    for r in rows {
        for i in 0..d {
            let di = r[i] - mean[i];
            for j in 0..=i {
                cov[i][j] += di * (r[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in 0..=i {
            cov[i][j] /= n;
            cov[j][i] = cov[i][j];
        }
    }
    let trace: f64 = (0..d).map(|i| cov[i][i]).sum();
    let target = if d > 0 { trace / d as f64 } else { 0.0 };
    for (i, row) in cov.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v *= 1.0 - lambda;
            if i == j {
                *v += lambda * target;
            }
        }
    }
    Ok(ShrunkCovariance { mean, sigma: cov, trace })
}

/// Distances `sqrt((x - mu)' Sigma^-1 (x - mu))` via forward substitution on
/// the Cholesky factor. Returns the scores and the squared ratio of the
/// largest to smallest Cholesky diagonal entry.
pub fn mahalanobis_scores(rows: &[Vec<f64>], shrinkage: f64) -> Result<(Vec<f64>, f64)> {
    if !(0.0..=1.0).contains(&shrinkage) {
        return Err(Error::InvalidConfig(format!("shrinkage must lie in [0, 1], got {shrinkage}")));
    }
    let cov = shrunk_covariance(rows, shrinkage)?;
    if cov.trace <= 0.0 {
        // every column constant: nothing deviates
        return Ok((vec![0.0; rows.len()], 1.0));
    }
    let l = cholesky(&cov.sigma).ok_or_else(|| {
        Error::InvalidConfig("shrunk covariance is not positive definite; raise the shrinkage".into())
    })?;
    let d = cov.mean.len();
    let mut y = vec![0.0; d];
    let scores = rows
        .iter()
        .map(|r| {
            for i in 0..d {
                let s: f64 = (0..i).map(|k| l[i][k] * y[k]).sum();
                y[i] = (r[i] - cov.mean[i] - s) / l[i][i];
            }
            y.iter().map(|v| v * v).sum::<f64>().sqrt()
        })
        .collect();
    let diag = (0..d).map(|i| l[i][i]);
    let (lo, hi) = diag.fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
    Ok((scores, (hi / lo).powi(2)))
}

pub fn mahalanobis(matrix: &FeatureMatrix, config: &MahalanobisConfig) -> Result<DetectorScores> {
    let (scores, ratio) = mahalanobis_scores(&matrix.values, config.shrinkage)?;
    let mut out = DetectorScores::new(Method::Mahalanobis, scores);
    out.diagnostics.insert("shrinkage".into(), config.shrinkage);
    out.diagnostics.insert("cholesky_diag_ratio_sq".into(), ratio);
    Ok(out)
}
