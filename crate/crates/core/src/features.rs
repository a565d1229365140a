//! Station feature engineering and the detector input matrix.

use std::collections::HashSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::roles::StationRoleCounts;

/// Column order of [`FeatureMatrix`].
pub const FEATURE_NAMES: [&str; 17] = [
    "count_a",
    "count_b",
    "count_c",
    "count_d",
    "ratio_ad",
    "ratio_bc",
    "diff_ratio",
    "pct_a",
    "pct_b",
    "pct_c",
    "pct_d",
    "entropy",
    "bc_overlap",
    "bc_significance",
    "entry_only_share",
    "exit_only_share",
    "complete_share",
];

pub const N_FEATURES: usize = FEATURE_NAMES.len();

/// Columns whose standard deviation falls below this are treated as constant.
pub const CONSTANT_STD: f64 = 1e-12;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StationFeatureVector {
    pub station: String,
    pub count_a: u64,
    pub count_b: u64,
    pub count_c: u64,
    pub count_d: u64,
    pub total: u64,
    pub ratio_ad: f64,
    pub ratio_bc: f64,
    pub diff_ratio: f64,
    pub pct_a: f64,
    pub pct_b: f64,
    pub pct_c: f64,
    pub pct_d: f64,
    pub entropy: f64,
    pub bc_overlap: f64,
    pub bc_significance: f64,
    pub entry_only_share: f64,
    pub exit_only_share: f64,
    pub complete_share: f64,
}

impl StationFeatureVector {
    /// Values in [`FEATURE_NAMES`] order.
    pub fn values(&self) -> [f64; N_FEATURES] {
        [
            self.count_a as f64,
            self.count_b as f64,
            self.count_c as f64,
            self.count_d as f64,
            self.ratio_ad,
            self.ratio_bc,
            self.diff_ratio,
            self.pct_a,
            self.pct_b,
            self.pct_c,
            self.pct_d,
            self.entropy,
            self.bc_overlap,
            self.bc_significance,
            self.entry_only_share,
            self.exit_only_share,
            self.complete_share,
        ]
    }

    /// Share of tapping tickets that are entry-only or exit-only.
    pub fn incomplete_share(&self) -> f64 {
        self.entry_only_share + self.exit_only_share
    }
}

/// Shannon entropy (bits) of the role distribution, divided by log2(4).
pub fn role_entropy(pcts: [f64; 4]) -> f64 {
    let h: f64 = pcts
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.log2())
        .sum();
    (h / 2.0).clamp(0.0, 1.0)
}

fn share(part: u64, whole: u64) -> f64 {
    if whole == 0 {
        0.0
    } else {
        part as f64 / whole as f64
    }
}

pub fn compute_features(counts: &StationRoleCounts) -> StationFeatureVector {
    let (a, b, c, d) = (counts.count_a, counts.count_b, counts.count_c, counts.count_d);
    let total = a + b + c + d;
    let pcts = [share(a, total), share(b, total), share(c, total), share(d, total)];

    let (small, large) = if counts.keys_b.len() <= counts.keys_c.len() {
        (&counts.keys_b, &counts.keys_c)
    } else {
        (&counts.keys_c, &counts.keys_b)
    };
    let inter = small.iter().filter(|k| large.contains(k)).count() as u64;
    let union = (counts.keys_b.len() + counts.keys_c.len()) as u64 - inter;
    let bc_overlap = share(inter, union);

    let touches = counts.touches();
    StationFeatureVector {
        station: counts.station.clone(),
        count_a: a,
        count_b: b,
        count_c: c,
        count_d: d,
        total,
        ratio_ad: (a as f64 + 1.0) / (d as f64 + 1.0),
        ratio_bc: (b as f64 + 1.0) / (c as f64 + 1.0),
        diff_ratio: share(a.abs_diff(d), a + d),
        pct_a: pcts[0],
        pct_b: pcts[1],
        pct_c: pcts[2],
        pct_d: pcts[3],
        entropy: role_entropy(pcts),
        bc_overlap,
        bc_significance: bc_overlap * total as f64,
        entry_only_share: share(counts.entry_only_touch, touches),
        exit_only_share: share(counts.exit_only_touch, touches),
        complete_share: share(counts.complete_touch, touches),
    }
}

/// Stations × features grid, rows sorted by station id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub stations: Vec<String>,
    pub features: Vec<String>,
    pub values: Vec<Vec<f64>>,
    /// Column means and population standard deviations used by
    /// [`standardize`]; empty until then.
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub constant: Vec<bool>,
}

impl FeatureMatrix {
    /// Builds a matrix from raw rows. Rows are taken in the given order.
    pub fn from_rows(stations: Vec<String>, features: Vec<String>, values: Vec<Vec<f64>>) -> Result<Self> {
        if stations.len() != values.len() {
            return Err(Error::LengthMismatch {
                expected: stations.len(),
                actual: values.len(),
            });
        }
        if let Some(bad) = values.iter().find(|r| r.len() != features.len()) {
            return Err(Error::LengthMismatch {
                expected: features.len(),
                actual: bad.len(),
            });
        }
        let mut seen = HashSet::new();
        for s in &stations {
            if !seen.insert(s.as_str()) {
                return Err(Error::DuplicateStation(s.clone()));
            }
        }
        let d = features.len();
        Ok(Self {
            stations,
            features,
            values,
            means: Vec::new(),
            stds: Vec::new(),
            constant: vec![false; d],
        })
    }

    pub fn n_rows(&self) -> usize {
        self.values.len()
    }

    pub fn n_cols(&self) -> usize {
        self.features.len()
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().map(move |r| r[j])
    }

    /// Writes `station,<feature columns>`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["station".to_string()];
        header.extend(self.features.iter().cloned());
        w.write_record(&header)?;
        for (s, row) in self.stations.iter().zip(&self.values) {
            let mut rec = vec![s.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Standardization statistics as JSON.
    pub fn stats_json(&self) -> serde_json::Value {
        let cols: Vec<_> = self
            .features
            .iter()
            .enumerate()
            .map(|(j, name)| {
                serde_json::json!({
                    "feature": name,
                    "mean": self.means.get(j),
                    "std": self.stds.get(j),
                    "constant": self.constant[j],
                })
            })
            .collect();
        serde_json::json!({ "columns": cols })
    }
}

/// Assembles feature vectors into a matrix sorted by station id.
pub fn build_matrix(vectors: &[StationFeatureVector]) -> Result<FeatureMatrix> {
    if vectors.is_empty() {
        return Err(Error::InsufficientData("no stations to build a feature matrix".into()));
    }
    let mut sorted: Vec<&StationFeatureVector> = vectors.iter().collect();
    sorted.sort_by(|a, b| a.station.cmp(&b.station));
    if let Some(w) = sorted.windows(2).find(|w| w[0].station == w[1].station) {
        return Err(Error::DuplicateStation(w[0].station.clone()));
    }
    FeatureMatrix::from_rows(
        sorted.iter().map(|v| v.station.clone()).collect(),
        FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        sorted.iter().map(|v| v.values().to_vec()).collect(),
    )
}

/// Z-scores every column with the population standard deviation.
///
/// Columns with std below [`CONSTANT_STD`] are flagged and zeroed.
pub fn standardize(matrix: &FeatureMatrix) -> Result<FeatureMatrix> {
    let n = matrix.n_rows();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "standardization needs at least 2 stations, got {n}"
        )));
    }
    let d = matrix.n_cols();
    let mut out = matrix.clone();
    out.means = vec![0.0; d];
    out.stds = vec![0.0; d];
    out.constant = vec![false; d];
    for j in 0..d {
        let mean = matrix.column(j).sum::<f64>() / n as f64;
        let var = matrix.column(j).map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let std = var.sqrt();
        out.means[j] = mean;
        out.stds[j] = std;
        let constant = std < CONSTANT_STD;
        out.constant[j] = constant;
        for row in &mut out.values {
            row[j] = if constant { 0.0 } else { (row[j] - mean) / std };
        }
    }
    Ok(out)
}
