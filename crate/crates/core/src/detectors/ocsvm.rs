//! One-class SVM trained on the dual
//!
//! ```text
//! minimize   1/2 a' K a
//! subject to 0 <= a_i <= 1/(nu N),  sum a_i = 1
//! ```
//!
//! with an RBF kernel, solved by pairwise (SMO) updates with second-order
//! working-set selection.

use serde::{Deserialize, Serialize};

use super::{check_rows, sq_dist, DetectorScores, Gamma, Method};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

/// Floor for the curvature along an update direction.
const TAU: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OcSvmConfig {
    pub nu: f64,
    pub gamma: Gamma,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for OcSvmConfig {
    fn default() -> Self {
        Self {
            nu: 0.1,
            gamma: Gamma::Auto,
            tol: 1e-6,
            max_iter: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcSvmFit {
    pub alpha: Vec<f64>,
    /// Upper box bound `1/(nu N)`.
    pub bound: f64,
    pub rho: f64,
    pub gamma: f64,
    /// `f(x_i) = sum_j a_j K(x_j, x_i) - rho` for every training row.
    pub decision: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub kkt_violation: f64,
    pub converged: bool,
}

impl OcSvmFit {
    pub fn n_support(&self) -> usize {
        self.alpha.iter().filter(|&&a| a > 0.0).count()
    }

    pub fn n_bounded(&self) -> usize {
        self.alpha.iter().filter(|&&a| a >= self.bound).count()
    }
}

/// `1 / (d * median pairwise squared distance)`, or `1/d` when the median is 0.
pub fn resolve_gamma(rows: &[Vec<f64>], gamma: Gamma) -> Result<f64> {
    let d = check_rows(rows, 2, "gamma heuristic")?;
    if d == 0 {
        return Err(Error::InsufficientData("rows have no features".into()));
    }
    match gamma {
        Gamma::Value(g) => Ok(g),
        Gamma::Auto => {
            let mut sq: Vec<f64> = Vec::with_capacity(rows.len() * (rows.len() - 1) / 2);
            for i in 0..rows.len() {
                for j in (i + 1)..rows.len() {
                    sq.push(sq_dist(&rows[i], &rows[j]));
                }
            }
            sq.sort_by(f64::total_cmp);
            let m = sq.len();
            let median = if m % 2 == 1 { sq[m / 2] } else { 0.5 * (sq[m / 2 - 1] + sq[m / 2]) };
            Ok(if median > 0.0 { 1.0 / (d as f64 * median) } else { 1.0 / d as f64 })
        }
    }
}

pub fn fit_one_class(rows: &[Vec<f64>], config: &OcSvmConfig) -> Result<OcSvmFit> {
    let n = rows.len();
    check_rows(rows, 2, "one-class SVM")?;
    let nu = config.nu;
    if !(nu > 0.0 && nu <= 1.0) {
        return Err(Error::InvalidConfig(format!("ocsvm.nu must lie in (0, 1], got {nu}")));
    }
    let gamma = resolve_gamma(rows, config.gamma)?;
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidConfig(format!("ocsvm.gamma must be positive, got {gamma}")));
    }

    let mut kernel = vec![vec![1.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let k = (-gamma * sq_dist(&rows[i], &rows[j])).exp();
            kernel[i][j] = k;
            kernel[j][i] = k;
        }
    }

    let bound = 1.0 / (nu * n as f64);
    let mut alpha = vec![0.0; n];
    let mut remaining = 1.0_f64;
    for a in alpha.iter_mut() {
        if remaining <= 0.0 {
            break;
        }
        *a = bound.min(remaining);
        remaining -= *a;
    }

    let mut grad: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| kernel[i][j] * alpha[j]).sum())
        .collect();

    let mut iterations = 0;
    while iterations < config.max_iter {
        // i: may grow, smallest gradient
        let Some(i) = (0..n)
            .filter(|&t| alpha[t] < bound)
            .min_by(|&a, &b| grad[a].total_cmp(&grad[b]))
        else {
            break;
        };
        let g_min = grad[i];
        let mut g_max = f64::NEG_INFINITY;
        let mut j = None;
        let mut best_gain = f64::NEG_INFINITY;
        for t in 0..n {
            if alpha[t] <= 0.0 {
                continue;
            }
            g_max = g_max.max(grad[t]);
            let diff = grad[t] - g_min;
            if diff > 0.0 {
                let curv = (kernel[i][i] + kernel[t][t] - 2.0 * kernel[i][t]).max(TAU);
                let gain = diff * diff / curv;
                if gain > best_gain {
                    best_gain = gain;
                    j = Some(t);
                }
            }
        }
        if g_max - g_min < config.tol {
            break;
        }
        let Some(j) = j else {
            break;
        };

        let curv = (kernel[i][i] + kernel[j][j] - 2.0 * kernel[i][j]).max(TAU);
        let room_i = bound - alpha[i];
        let room_j = alpha[j];
        let mut step = (grad[j] - grad[i]) / curv;
        if step >= room_i {
            step = room_i;
        }
        if step >= room_j {
            step = room_j;
        }
        if step <= 0.0 {
            break;
        }
        alpha[i] = if step == room_i { bound } else { alpha[i] + step };
        alpha[j] = if step == room_j { 0.0 } else { alpha[j] - step };
        for (t, g) in grad.iter_mut().enumerate() {
            *g += step * (kernel[t][i] - kernel[t][j]);
        }
        iterations += 1;
    }

    // fresh gradient to shed accumulated update error
    let grad: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| kernel[i][j] * alpha[j]).sum())
        .collect();
    let violation = kkt_violation(&alpha, &grad, bound);
    let converged = violation < config.tol;

    let free: Vec<f64> = (0..n)
        .filter(|&t| alpha[t] > 0.0 && alpha[t] < bound)
        .map(|t| grad[t])
        .collect();
    let rho = if !free.is_empty() {
        free.iter().sum::<f64>() / free.len() as f64
    } else {
        let ub = (0..n).filter(|&t| alpha[t] <= 0.0).map(|t| grad[t]).fold(f64::INFINITY, f64::min);
        let lb = (0..n).filter(|&t| alpha[t] >= bound).map(|t| grad[t]).fold(f64::NEG_INFINITY, f64::max);
        match (ub.is_finite(), lb.is_finite()) {
            (true, true) => 0.5 * (ub + lb),
            (true, false) => ub,
            (false, true) => lb,
            (false, false) => 0.0,
        }
    };

    let objective = 0.5 * alpha.iter().zip(&grad).map(|(a, g)| a * g).sum::<f64>();
    Ok(OcSvmFit {
        decision: grad.iter().map(|g| g - rho).collect(),
        alpha,
        bound,
        rho,
        gamma,
        objective,
        iterations,
        kkt_violation: violation,
        converged,
    })
}

fn kkt_violation(alpha: &[f64], grad: &[f64], bound: f64) -> f64 {
    let up = (0..alpha.len()).filter(|&t| alpha[t] < bound).map(|t| grad[t]).fold(f64::INFINITY, f64::min);
    let low = (0..alpha.len()).filter(|&t| alpha[t] > 0.0).map(|t| grad[t]).fold(f64::NEG_INFINITY, f64::max);
    if up.is_finite() && low.is_finite() {
        (low - up).max(0.0)
    } else {
        0.0
    }
}

/// Scores are `-f(x)`: positive outside the learned boundary.
pub fn one_class_svm(matrix: &FeatureMatrix, config: &OcSvmConfig) -> Result<DetectorScores> {
    let fit = fit_one_class(&matrix.values, config)?;
    let mut out = DetectorScores::new(Method::OcSvm, fit.decision.iter().map(|f| -f).collect());
    let d = &mut out.diagnostics;
    d.insert("n_support_vectors".into(), fit.n_support() as f64);
    d.insert("n_bounded_support_vectors".into(), fit.n_bounded() as f64);
    d.insert("kkt_violation".into(), fit.kkt_violation);
    d.insert("iterations".into(), fit.iterations as f64);
    d.insert("gamma".into(), fit.gamma);
    d.insert("rho".into(), fit.rho);
    if !fit.converged {
        out.warnings.push(format!(
            "ConvergenceWarning: KKT violation {:.3e} after {} iterations",
            fit.kkt_violation, fit.iterations
        ));
    }
    Ok(out)
}
