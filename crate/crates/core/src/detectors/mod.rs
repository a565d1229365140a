//! Unsupervised station scorers. Every detector returns one score per matrix
//! row with higher meaning more anomalous.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

mod iforest;
mod lof;
mod mahalanobis;
mod ocsvm;

pub use iforest::{average_path_length, isolation_forest, iforest_scores, IForestConfig};
pub use lof::{lof, lof_scores, LofConfig};
pub use mahalanobis::{mahalanobis, mahalanobis_scores, MahalanobisConfig};
pub use ocsvm::{fit_one_class, one_class_svm, resolve_gamma, OcSvmConfig, OcSvmFit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    IForest,
    Lof,
    OcSvm,
    Mahalanobis,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::IForest, Method::Lof, Method::OcSvm, Method::Mahalanobis];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::IForest => "iforest",
            Method::Lof => "lof",
            Method::OcSvm => "ocsvm",
            Method::Mahalanobis => "mahalanobis",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorScores {
    pub method: Method,
    pub scores: Vec<f64>,
    pub diagnostics: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
}

impl DetectorScores {
    pub(crate) fn new(method: Method, scores: Vec<f64>) -> Self {
        Self {
            method,
            scores,
            diagnostics: BTreeMap::new(),
            warnings: Vec::new(),
        }
    }
}

/// RBF bandwidth: a fixed value or the median heuristic.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub enum Gamma {
    #[default]
    Auto,
    Value(f64),
}

impl FromStr for Gamma {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Gamma::Auto);
        }
        s.parse::<f64>()
            .map(Gamma::Value)
            .map_err(|_| format!("gamma must be `auto` or a positive number, got `{s}`"))
    }
}

impl Serialize for Gamma {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Gamma::Auto => s.serialize_str("auto"),
            Gamma::Value(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for Gamma {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(Gamma::Value(v)),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub iforest: IForestConfig,
    pub lof: LofConfig,
    pub ocsvm: OcSvmConfig,
    pub mahalanobis: MahalanobisConfig,
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.iforest.n_trees == 0 {
            return bad("iforest.n_trees must be at least 1".into());
        }
        if self.iforest.subsample == Some(0) {
            return bad("iforest.subsample must be at least 1".into());
        }
        if self.lof.k == Some(0) {
            return bad("lof.k must be at least 1".into());
        }
        let nu = self.ocsvm.nu;
        if !(nu > 0.0 && nu <= 1.0) {
            return bad(format!("ocsvm.nu must lie in (0, 1], got {nu}"));
        }
        if let Gamma::Value(g) = self.ocsvm.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return bad(format!("ocsvm.gamma must be positive, got {g}"));
            }
        }
        if !(self.ocsvm.tol > 0.0) || self.ocsvm.max_iter == 0 {
            return bad("ocsvm.tol and ocsvm.max_iter must be positive".into());
        }
        let lambda = self.mahalanobis.shrinkage;
        if !(0.0..=1.0).contains(&lambda) {
            return bad(format!("mahalanobis.shrinkage must lie in [0, 1], got {lambda}"));
        }
        Ok(())
    }
}

/// Runs all four detectors, in [`Method::ALL`] order.
pub fn run_all(matrix: &FeatureMatrix, config: &DetectorConfig) -> Result<[DetectorScores; 4]> {
    config.validate()?;
    Ok([
        isolation_forest(matrix, &config.iforest)?,
        lof(matrix, &config.lof)?,
        one_class_svm(matrix, &config.ocsvm)?,
        mahalanobis(matrix, &config.mahalanobis)?,
    ])
}

/// Writes `station,method,score` rows.
pub fn write_scores_csv<W: Write>(writer: W, stations: &[String], scores: &[DetectorScores]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["station", "method", "score"])?;
    for det in scores {
        for (s, v) in stations.iter().zip(&det.scores) {
            w.write_record([s.as_str(), det.method.as_str(), &v.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn check_rows(rows: &[Vec<f64>], min: usize, what: &str) -> Result<usize> {
    let n = rows.len();
    if n < min {
        return Err(Error::InsufficientData(format!("{what} needs at least {min} rows, got {n}")));
    }
    let d = rows[0].len();
    if let Some(r) = rows.iter().find(|r| r.len() != d) {
        return Err(Error::LengthMismatch { expected: d, actual: r.len() });
    }
    Ok(d)
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_parsing() {
        assert_eq!("auto".parse::<Gamma>().unwrap(), Gamma::Auto);
        assert_eq!("0.5".parse::<Gamma>().unwrap(), Gamma::Value(0.5));
        assert!("wide".parse::<Gamma>().is_err());
        let g: Gamma = serde_json::from_str("\"AUTO\"").unwrap();
        assert_eq!(g, Gamma::Auto);
        let g: Gamma = serde_json::from_str("2.0").unwrap();
        assert_eq!(g, Gamma::Value(2.0));
    }

    #[test]
    fn config_bounds() {
        assert!(DetectorConfig::default().validate().is_ok());
        let mut c = DetectorConfig::default();
        c.ocsvm.nu = 0.0;
        assert!(c.validate().is_err());
        let mut c = DetectorConfig::default();
        c.ocsvm.nu = 1.5;
        assert!(c.validate().is_err());
        let mut c = DetectorConfig::default();
        c.mahalanobis.shrinkage = 1.1;
        assert!(c.validate().is_err());
        let mut c = DetectorConfig::default();
        c.ocsvm.gamma = Gamma::Value(-1.0);
        assert!(c.validate().is_err());
    }
}
