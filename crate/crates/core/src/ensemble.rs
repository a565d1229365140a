//! Rank fusion of the detector outputs.
//!
//! Raw scores become average-tie ranks (1 = most anomalous). Methods are
//! weighted by how little they agree with the others,
//! `w_i = (1 - ac_i) / sum_j (1 - ac_j)` with `ac_i` the mean Spearman
//! correlation of method `i` with the rest, and the weighted mean rank is
//! mapped onto `[0, 1]`.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::detectors::{DetectorScores, Method};
use crate::error::{Error, Result};

/// Below this, `sum(1 - ac_j)` counts as zero and weights fall back to equal.
pub const WEIGHT_DEGENERACY: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankVector {
    pub method: Method,
    pub ranks: Vec<f64>,
}

/// Descending-score ranks starting at 1; exact ties share their mean position.
pub fn average_ranks_desc(scores: &[f64]) -> Vec<f64> {
    let n = scores.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut ranks = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && scores[idx[end]] == scores[idx[start]] {
            end += 1;
        }
        // positions start+1 ..= end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

pub fn to_ranks(scores: &DetectorScores) -> RankVector {
    RankVector {
        method: scores.method,
        ranks: average_ranks_desc(&scores.scores),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub rho: f64,
    /// One of the inputs had zero variance; `rho` is reported as 0.
    pub degenerate: bool,
}

/// Spearman correlation as the Pearson correlation of two rank vectors,
/// which stays valid under ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<Correlation> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch { expected: a.len(), actual: b.len() });
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!("spearman needs at least 2 ranks, got {n}")));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n as f64;
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Ok(Correlation { rho: 0.0, degenerate: true });
    }
    Ok(Correlation {
        rho: (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0),
        degenerate: false,
    })
}

/// `1 - 6 sum d^2 / (n (n^2 - 1))`; only meaningful for tie-free ranks.
pub fn spearman_closed_form(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub methods: Vec<Method>,
    pub rho: Vec<Vec<f64>>,
    pub degenerate_pairs: Vec<(Method, Method)>,
}

impl CorrelationMatrix {
    pub fn from_ranks(ranks: &[RankVector]) -> Result<Self> {
        let k = ranks.len();
        let mut rho = vec![vec![1.0; k]; k];
        let mut degenerate_pairs = Vec::new();
        for i in 0..k {
            for j in (i + 1)..k {
                let c = spearman(&ranks[i].ranks, &ranks[j].ranks)?;
                rho[i][j] = c.rho;
                rho[j][i] = c.rho;
                if c.degenerate {
                    degenerate_pairs.push((ranks[i].method, ranks[j].method));
                }
            }
        }
        Ok(Self {
            methods: ranks.iter().map(|r| r.method).collect(),
            rho,
            degenerate_pairs,
        })
    }

    /// Mean off-diagonal correlation per method.
    pub fn average_correlations(&self) -> Vec<f64> {
        let k = self.rho.len();
        (0..k)
            .map(|i| {
                if k < 2 {
                    return 0.0;
                }
                let s: f64 = (0..k).filter(|&j| j != i).map(|j| self.rho[i][j]).sum();
                s / (k - 1) as f64
            })
            .collect()
    }

    /// Method pairs with correlation at or above `threshold`.
    pub fn redundant_pairs(&self, threshold: f64) -> Vec<(Method, Method)> {
        let k = self.rho.len();
        let mut out = Vec::new();
        for i in 0..k {
            for j in (i + 1)..k {
                if self.rho[i][j] >= threshold {
                    out.push((self.methods[i], self.methods[j]));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub values: Vec<f64>,
    /// `ac_i` after clamping to `[0, 1]`.
    pub average_correlation: Vec<f64>,
    /// All methods perfectly correlated; equal weights were used.
    pub equal_fallback: bool,
}

fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        n => pairwise_sum(&v[..n / 2]) + pairwise_sum(&v[n / 2..]),
    }
}

/// Weights from clamped average correlations.
pub fn weights_from_average(average: &[f64]) -> Weights {
    let ac: Vec<f64> = average.iter().map(|a| a.clamp(0.0, 1.0)).collect();
    let slack: Vec<f64> = ac.iter().map(|a| 1.0 - a).collect();
    let denom = pairwise_sum(&slack);
    let k = ac.len();
    if denom < WEIGHT_DEGENERACY {
        return Weights {
            values: vec![1.0 / k as f64; k],
            average_correlation: ac,
            equal_fallback: true,
        };
    }
    Weights {
        values: slack.iter().map(|s| s / denom).collect(),
        average_correlation: ac,
        equal_fallback: false,
    }
}

pub fn adaptive_weights(corr: &CorrelationMatrix) -> Weights {
    weights_from_average(&corr.average_correlations())
}

/// How fused ranks are mapped to `[0, 1]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `(max - r) / (max - min)` over the observed fused ranks.
    #[default]
    MinMax,
    /// `(N - r) / (N - 1)`.
    Positional,
}

impl FromStr for Normalization {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "min_max" | "minmax" => Ok(Normalization::MinMax),
            "positional" => Ok(Normalization::Positional),
            other => Err(format!("unknown normalization `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleOptions {
    pub normalization: Normalization,
    pub redundancy_threshold: f64,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        Self {
            normalization: Normalization::MinMax,
            redundancy_threshold: 0.7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleFlag {
    EqualWeightFallback,
    DegenerateCorrelation,
    AllRanksTied,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub weights: Weights,
    pub correlation: CorrelationMatrix,
    pub final_rank: Vec<f64>,
    pub anomaly_score: Vec<f64>,
    pub redundancy_pairs: Vec<(Method, Method)>,
    pub ranks: Vec<RankVector>,
    pub flags: Vec<EnsembleFlag>,
}

impl EnsembleResult {
    pub fn method_rank(&self, method: Method, station: usize) -> Option<f64> {
        self.ranks.iter().find(|r| r.method == method).map(|r| r.ranks[station])
    }
}

/// Weighted rank fusion: `final_rank(s) = sum_i w_i rank_i(s)`.
pub fn fuse(
    ranks: &[RankVector],
    weights: &Weights,
    correlation: &CorrelationMatrix,
    options: &EnsembleOptions,
) -> Result<EnsembleResult> {
    if ranks.is_empty() {
        return Err(Error::InsufficientData("no rank vectors to fuse".into()));
    }
    if weights.values.len() != ranks.len() {
        return Err(Error::LengthMismatch { expected: ranks.len(), actual: weights.values.len() });
    }
    let n = ranks[0].ranks.len();
    if let Some(bad) = ranks.iter().find(|r| r.ranks.len() != n) {
        return Err(Error::LengthMismatch { expected: n, actual: bad.ranks.len() });
    }

    let final_rank: Vec<f64> = (0..n)
        .map(|s| ranks.iter().zip(&weights.values).map(|(r, w)| w * r.ranks[s]).sum())
        .collect();

    let mut flags = Vec::new();
    if weights.equal_fallback {
        flags.push(EnsembleFlag::EqualWeightFallback);
    }
    if !correlation.degenerate_pairs.is_empty() {
        flags.push(EnsembleFlag::DegenerateCorrelation);
    }

    let lo = final_rank.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = final_rank.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let anomaly_score = if n == 0 {
        Vec::new()
    } else if hi == lo {
        flags.push(EnsembleFlag::AllRanksTied);
        vec![0.5; n]
    } else {
        match options.normalization {
            Normalization::MinMax => final_rank.iter().map(|r| (hi - r) / (hi - lo)).collect(),
            Normalization::Positional => {
                let nf = n as f64;
                final_rank
                    .iter()
                    .map(|r| ((nf - r) / (nf - 1.0)).clamp(0.0, 1.0))
                    .collect()
            }
        }
    };

    Ok(EnsembleResult {
        weights: weights.clone(),
        correlation: correlation.clone(),
        redundancy_pairs: correlation.redundant_pairs(options.redundancy_threshold),
        final_rank,
        anomaly_score,
        ranks: ranks.to_vec(),
        flags,
    })
}

/// Ranks, correlations, adaptive weights and fusion in one call.
pub fn run_ensemble(scores: &[DetectorScores], options: &EnsembleOptions) -> Result<EnsembleResult> {
    let ranks: Vec<RankVector> = scores.iter().map(to_ranks).collect();
    let corr = CorrelationMatrix::from_ranks(&ranks)?;
    let weights = adaptive_weights(&corr);
    fuse(&ranks, &weights, &corr, options)
}
