//! Rule-based labelling of flagged stations into fraud archetypes.
//!
//! Rules run in a fixed priority order; the first that holds is the primary
//! label and every rule that holds is kept as evidence. "Strong detection"
//! by a method means a top-decile rank for that method.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::detectors::Method;
use crate::ensemble::EnsembleResult;
use crate::error::{Error, Result};
use crate::features::StationFeatureVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PatternLabel {
    GhostStation,
    BlackHole,
    FakeOrigin,
    FunctionLoss,
    MicroTrap,
    Unclassified,
}

impl PatternLabel {
    /// The archetypes a rule can produce, in priority order.
    pub const RULES: [PatternLabel; 5] = [
        PatternLabel::GhostStation,
        PatternLabel::BlackHole,
        PatternLabel::FakeOrigin,
        PatternLabel::FunctionLoss,
        PatternLabel::MicroTrap,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PatternLabel::GhostStation => "GhostStation",
            PatternLabel::BlackHole => "BlackHole",
            PatternLabel::FakeOrigin => "FakeOrigin",
            PatternLabel::FunctionLoss => "FunctionLoss",
            PatternLabel::MicroTrap => "MicroTrap",
            PatternLabel::Unclassified => "Unclassified",
        }
    }
}

impl fmt::Display for PatternLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PatternLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [PatternLabel::Unclassified]
            .into_iter()
            .chain(PatternLabel::RULES)
            .find(|l| l.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown pattern label `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GhostRule {
    pub incomplete_share_min: f64,
    pub entropy_max: f64,
    pub mahalanobis_top_decile: bool,
}

impl Default for GhostRule {
    fn default() -> Self {
        Self { incomplete_share_min: 0.75, entropy_max: 0.55, mahalanobis_top_decile: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlackHoleRule {
    pub exit_only_share_min: f64,
    pub diff_ratio_min: f64,
    pub lof_top_decile: bool,
}

impl Default for BlackHoleRule {
    fn default() -> Self {
        Self { exit_only_share_min: 0.4, diff_ratio_min: 0.2, lof_top_decile: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FakeOriginRule {
    pub entry_only_share_min: f64,
    pub ocsvm_top_decile: bool,
}

impl Default for FakeOriginRule {
    fn default() -> Self {
        Self { entry_only_share_min: 0.4, ocsvm_top_decile: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FunctionLossRule {
    /// Fires when `ratio_bc >= x` or `ratio_bc <= 1/x`.
    pub ratio_bc_max_imbalance: f64,
}

impl Default for FunctionLossRule {
    fn default() -> Self {
        Self { ratio_bc_max_imbalance: 5.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MicroTrapRule {
    pub bc_overlap_min: f64,
    pub total_bottom_quartile: bool,
}

impl Default for MicroTrapRule {
    fn default() -> Self {
        Self { bc_overlap_min: 0.5, total_bottom_quartile: true }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatternRuleConfig {
    pub ghost: GhostRule,
    pub blackhole: BlackHoleRule,
    pub fakeorigin: FakeOriginRule,
    pub functionloss: FunctionLossRule,
    pub microtrap: MicroTrapRule,
}

impl PatternRuleConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = [
            ("ghost.incomplete_share_min", self.ghost.incomplete_share_min),
            ("ghost.entropy_max", self.ghost.entropy_max),
            ("blackhole.exit_only_share_min", self.blackhole.exit_only_share_min),
            ("blackhole.diff_ratio_min", self.blackhole.diff_ratio_min),
            ("fakeorigin.entry_only_share_min", self.fakeorigin.entry_only_share_min),
            ("microtrap.bc_overlap_min", self.microtrap.bc_overlap_min),
        ];
        for (name, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("rules.{name} must lie in [0, 1], got {v}")));
            }
        }
        let x = self.functionloss.ratio_bc_max_imbalance;
        if !(x >= 1.0 && x.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "rules.functionloss.ratio_bc_max_imbalance must be >= 1, got {x}"
            )));
        }
        Ok(())
    }
}

/// Top-decile membership: rank <= ceil(N/10).
pub fn decile_ranks(ranks: &[f64]) -> Vec<bool> {
    let cut = ranks.len().div_ceil(10) as f64;
    ranks.iter().map(|&r| r <= cut).collect()
}

/// Bottom-quartile membership of `values`: at or below the nearest-rank
/// 25th percentile.
pub fn bottom_quartile(values: &[f64]) -> Vec<bool> {
    if values.is_empty() {
        return Vec::new();
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let cut = sorted[values.len().div_ceil(4) - 1];
    values.iter().map(|&v| v <= cut).collect()
}

/// Everything the rules look at for one station.
#[derive(Debug, Clone, Copy)]
pub struct StationEvidence<'a> {
    pub features: &'a StationFeatureVector,
    /// Indexed by [`Method::index`].
    pub method_ranks: [f64; 4],
    pub top_decile: [bool; 4],
    pub low_volume: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub primary: PatternLabel,
    pub evidence: Vec<String>,
}

fn rank_note(ev: &StationEvidence<'_>, m: Method) -> String {
    format!("{}_rank={}", m.as_str(), ev.method_ranks[m.index()])
}

fn check(
    label: PatternLabel,
    ev: &StationEvidence<'_>,
    rules: &PatternRuleConfig,
) -> Option<String> {
    let f = ev.features;
    let strong = |m: Method, required: bool| !required || ev.top_decile[m.index()];
    let parts = match label {
        PatternLabel::GhostStation => {
            let r = &rules.ghost;
            let inc = f.incomplete_share();
            (inc >= r.incomplete_share_min
                && f.entropy <= r.entropy_max
                && strong(Method::Mahalanobis, r.mahalanobis_top_decile))
            .then(|| {
                let mut p = vec![
                    format!("incomplete_share={inc:.3}>={}", r.incomplete_share_min),
                    format!("entropy={:.3}<={}", f.entropy, r.entropy_max),
                ];
                if r.mahalanobis_top_decile {
                    p.push(format!("{} top decile", rank_note(ev, Method::Mahalanobis)));
                }
                p
            })
        }
        PatternLabel::BlackHole => {
            let r = &rules.blackhole;
            (f.exit_only_share >= r.exit_only_share_min
                && f.diff_ratio >= r.diff_ratio_min
                && strong(Method::Lof, r.lof_top_decile))
            .then(|| {
                let mut p = vec![
                    format!("exit_only_share={:.3}>={}", f.exit_only_share, r.exit_only_share_min),
                    format!("diff_ratio={:.3}>={}", f.diff_ratio, r.diff_ratio_min),
                ];
                if r.lof_top_decile {
                    p.push(format!("{} top decile", rank_note(ev, Method::Lof)));
                }
                p
            })
        }
        PatternLabel::FakeOrigin => {
            let r = &rules.fakeorigin;
            (f.entry_only_share >= r.entry_only_share_min && strong(Method::OcSvm, r.ocsvm_top_decile)).then(|| {
                let mut p = vec![format!(
                    "entry_only_share={:.3}>={}",
                    f.entry_only_share, r.entry_only_share_min
                )];
                if r.ocsvm_top_decile {
                    p.push(format!("{} top decile", rank_note(ev, Method::OcSvm)));
                }
                p
            })
        }
        PatternLabel::FunctionLoss => {
            let x = rules.functionloss.ratio_bc_max_imbalance;
            if f.ratio_bc >= x {
                Some(vec![format!("ratio_bc={:.3}>={x}", f.ratio_bc)])
            } else if f.ratio_bc <= 1.0 / x {
                Some(vec![format!("ratio_bc={:.3}<=1/{x}", f.ratio_bc)])
            } else {
                None
            }
        }
        PatternLabel::MicroTrap => {
            let r = &rules.microtrap;
            (f.bc_overlap >= r.bc_overlap_min && (!r.total_bottom_quartile || ev.low_volume)).then(|| {
                let mut p = vec![
                    "placeholder rule".to_string(),
                    format!("bc_overlap={:.3}>={}", f.bc_overlap, r.bc_overlap_min),
                ];
                if r.total_bottom_quartile {
                    p.push(format!("total={} bottom quartile", f.total));
                }
                p
            })
        }
        PatternLabel::Unclassified => None,
    }?;
    Some(format!("{}: {}", label, parts.join(", ")))
}

/// Primary label plus the evidence of every satisfied rule.
pub fn classify(ev: &StationEvidence<'_>, rules: &PatternRuleConfig) -> Classification {
    let mut primary = None;
    let mut evidence = Vec::new();
    for label in PatternLabel::RULES {
        if let Some(e) = check(label, ev, rules) {
            primary.get_or_insert(label);
            evidence.push(e);
        }
    }
    Classification { primary: primary.unwrap_or(PatternLabel::Unclassified), evidence }
}

/// Labels for every station whose anomaly score reaches `flag_threshold`;
/// `None` for the rest. `features` must be aligned with the ensemble rows.
pub fn label_stations(
    features: &[StationFeatureVector],
    ensemble: &EnsembleResult,
    rules: &PatternRuleConfig,
    flag_threshold: f64,
) -> Result<Vec<Option<Classification>>> {
    let n = ensemble.anomaly_score.len();
    if features.len() != n {
        return Err(Error::LengthMismatch { expected: n, actual: features.len() });
    }
    let mut ranks = [const { Vec::new() }; 4];
    for m in Method::ALL {
        ranks[m.index()] = ensemble
            .ranks
            .iter()
            .find(|r| r.method == m)
            .map(|r| r.ranks.clone())
            .ok_or_else(|| Error::InsufficientData(format!("ensemble lacks {} ranks", m.as_str())))?;
    }
    let deciles: Vec<Vec<bool>> = ranks.iter().map(|r| decile_ranks(r)).collect();
    let totals: Vec<f64> = features.iter().map(|f| f.total as f64).collect();
    let low = bottom_quartile(&totals);

    Ok((0..n)
        .map(|s| {
            if ensemble.anomaly_score[s] < flag_threshold {
                return None;
            }
            let ev = StationEvidence {
                features: &features[s],
                method_ranks: std::array::from_fn(|m| ranks[m][s]),
                top_decile: std::array::from_fn(|m| deciles[m][s]),
                low_volume: low[s],
            };
            Some(classify(&ev, rules))
        })
        .collect())
}
