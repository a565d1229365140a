//! End-to-end scoring run and its artifacts.
//!
//! `report.json` is split into `meta` (wall-clock time, paths) and
//! `payload` (everything derived from the input and config). Identical
//! input and config give a byte-identical payload.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use chrono::{FixedOffset, NaiveDate, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::detectors::{run_all, write_scores_csv, DetectorConfig, DetectorScores, Method};
use crate::ensemble::{run_ensemble, EnsembleFlag, EnsembleOptions, EnsembleResult};
use crate::error::{Error, Result};
use crate::features::{build_matrix, compute_features, standardize, FeatureMatrix, StationFeatureVector};
use crate::ingest::{
    assemble_tickets, filter_window, normalize_station_ids, parse_taps, write_rejects, DateWindow, RejectRecord,
    SchemaConfig, StationAliasMap, TicketJourney, UnknownPolicy,
};
use crate::roles::{accumulate, write_role_dump};
use crate::synthgen::ScoredStation;
use crate::taxonomy::{label_stations, Classification, PatternLabel, PatternRuleConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    pub taps: Option<PathBuf>,
    pub aliases: Option<PathBuf>,
    pub unknown_policy: UnknownPolicy,
    pub delimiter: char,
    /// Offset for timestamps without a zone, e.g. `+01:00`.
    pub timezone: String,
}

impl Default for InputConfig {
    fn default() -> Self {
        Self {
            taps: None,
            aliases: None,
            unknown_policy: UnknownPolicy::PassThrough,
            delimiter: ',',
            timezone: "+00:00".into(),
        }
    }
}

impl InputConfig {
    pub fn schema(&self) -> Result<SchemaConfig> {
        if !self.delimiter.is_ascii() {
            return Err(Error::InvalidConfig(format!("delimiter must be ASCII, got {:?}", self.delimiter)));
        }
        let timezone: FixedOffset = self
            .timezone
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("timezone must look like +01:00, got `{}`", self.timezone)))?;
        Ok(SchemaConfig { delimiter: self.delimiter as u8, timezone })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: InputConfig,
    pub window_start: Option<NaiveDate>,
    pub window_end: Option<NaiveDate>,
    /// Seeds the isolation forest; overrides `detectors.iforest.seed`.
    pub seed: u64,
    pub top_k: usize,
    pub flag_threshold: f64,
    pub reject_rate_max: f64,
    pub out: PathBuf,
    /// Also write `roles.csv` with one line per role assignment.
    pub role_dump: bool,
    pub detectors: DetectorConfig,
    pub ensemble: EnsembleOptions,
    pub rules: PatternRuleConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input: InputConfig::default(),
            window_start: None,
            window_end: None,
            seed: 0,
            top_k: 30,
            flag_threshold: 0.7,
            reject_rate_max: 0.05,
            out: PathBuf::from("out"),
            role_dump: false,
            detectors: DetectorConfig::default(),
            ensemble: EnsembleOptions::default(),
            rules: PatternRuleConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 {
            return Err(Error::InvalidConfig("top_k must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.flag_threshold) {
            return Err(Error::InvalidConfig(format!("flag_threshold must lie in [0, 1], got {}", self.flag_threshold)));
        }
        if !(0.0..=1.0).contains(&self.reject_rate_max) {
            return Err(Error::InvalidConfig(format!("reject_rate_max must lie in [0, 1], got {}", self.reject_rate_max)));
        }
        let t = self.ensemble.redundancy_threshold;
        if !(-1.0..=1.0).contains(&t) {
            return Err(Error::InvalidConfig(format!("ensemble.redundancy_threshold must lie in [-1, 1], got {t}")));
        }
        self.window()?;
        self.input.schema()?;
        self.effective_detectors().validate()?;
        self.rules.validate()
    }

    /// Closed date window; a missing bound is open on that side.
    pub fn window(&self) -> Result<Option<DateWindow>> {
        match (self.window_start, self.window_end) {
            (None, None) => Ok(None),
            (s, e) => DateWindow::new(s.unwrap_or(NaiveDate::MIN), e.unwrap_or(NaiveDate::MAX)).map(Some),
        }
    }

    pub fn effective_detectors(&self) -> DetectorConfig {
        let mut d = self.detectors.clone();
        d.iforest.seed = self.seed;
        d
    }

    /// SHA-256 of the canonical JSON form, ignoring input and output paths.
    pub fn config_hash(&self) -> String {
        let mut c = self.clone();
        c.input.taps = None;
        c.input.aliases = None;
        c.out = PathBuf::new();
        c.detectors = self.effective_detectors();
        let json = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

struct HashingReader<R> {
    inner: R,
    hasher: Sha256,
}

impl<R: Read> Read for HashingReader<R> {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.hasher.update(&buf[..n]);
        Ok(n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub input_sha256: String,
    pub data_lines: u64,
    pub records: u64,
    pub line_rejects: u64,
    pub ticket_rejects: u64,
    pub tickets: u64,
    pub tickets_in_window: u64,
    /// Line-level rejects over data lines.
    pub reject_rate: f64,
}

#[derive(Debug)]
pub struct Ingested {
    pub journeys: Vec<TicketJourney>,
    pub rejects: Vec<RejectRecord>,
    pub summary: IngestSummary,
}

/// Parses, normalizes, assembles and windows a tap stream.
pub fn ingest_reader<R: Read>(reader: R, config: &RunConfig) -> Result<Ingested> {
    let schema = config.input.schema()?;
    let aliases = match &config.input.aliases {
        Some(p) => StationAliasMap::from_path(p, config.input.unknown_policy)?,
        None => StationAliasMap::new(config.input.unknown_policy),
    };
    let mut hashing = HashingReader { inner: reader, hasher: Sha256::new() };
    let parsed = parse_taps(&mut hashing, &schema)?;
    // drain anything the CSV reader left unread so the digest covers the file
    std::io::copy(&mut hashing, &mut std::io::sink())?;
    let input_sha256 = hex::encode(hashing.hasher.finalize());

    let mut rejects = parsed.rejects;
    let (records, alias_rejects) = normalize_station_ids(parsed.records, &aliases);
    rejects.extend(alias_rejects);
    let line_rejects = rejects.len() as u64;
    let n_records = records.len() as u64;
    let (mut journeys, ticket_rejects) = assemble_tickets(records);
    let n_ticket_rejects = ticket_rejects.len() as u64;
    rejects.extend(ticket_rejects);
    rejects.sort_by_key(|r| r.line);
    let tickets = journeys.len() as u64;
    if let Some(w) = config.window()? {
        journeys = filter_window(journeys, w)?;
    }
    let data_lines = parsed.data_lines;
    Ok(Ingested {
        summary: IngestSummary {
            input_sha256,
            data_lines,
            records: n_records,
            line_rejects,
            ticket_rejects: n_ticket_rejects,
            tickets,
            tickets_in_window: journeys.len() as u64,
            reject_rate: if data_lines == 0 { 0.0 } else { line_rejects as f64 / data_lines as f64 },
        },
        journeys,
        rejects,
    })
}

pub fn ingest_path(path: &Path, config: &RunConfig) -> Result<Ingested> {
    let f = File::open(path).map_err(|e| Error::file(path, e))?;
    ingest_reader(BufReader::with_capacity(1 << 20, f), config)
}

/// Everything computed from the journeys.
#[derive(Debug, Clone)]
pub struct Analysis {
    /// Aligned with the matrix rows (sorted by station).
    pub vectors: Vec<StationFeatureVector>,
    pub raw: FeatureMatrix,
    pub standardized: FeatureMatrix,
    pub detectors: [DetectorScores; 4],
    pub ensemble: EnsembleResult,
    pub labels: Vec<Option<Classification>>,
}

pub fn analyze(journeys: &[TicketJourney], config: &RunConfig) -> Result<Analysis> {
    let counts = accumulate(journeys);
    // BTreeMap order is station order, which is also the matrix order
    let vectors: Vec<StationFeatureVector> = counts.values().map(compute_features).collect();
    let raw = build_matrix(&vectors)?;
    let standardized = standardize(&raw)?;
    let detectors = run_all(&standardized, &config.effective_detectors())?;
    let ensemble = run_ensemble(&detectors, &config.ensemble)?;
    let labels = label_stations(&vectors, &ensemble, &config.rules, config.flag_threshold)?;
    Ok(Analysis { vectors, raw, standardized, detectors, ensemble, labels })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub generated_at: String,
    pub version: String,
    pub input: Option<PathBuf>,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub seed: u64,
    pub config_hash: String,
    pub n_stations: usize,
    pub flag_threshold: f64,
    pub top_k: usize,
    pub ingest: IngestSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodWeight {
    pub method: Method,
    pub weight: f64,
    pub average_correlation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub methods: Vec<Method>,
    pub matrix: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorReport {
    pub method: Method,
    pub diagnostics: std::collections::BTreeMap<String, f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodEvidence {
    pub method: Method,
    pub rank: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationReportRow {
    pub station: String,
    pub anomaly_score: f64,
    pub final_rank: f64,
    pub methods: Vec<MethodEvidence>,
    pub features: StationFeatureVector,
    pub label: Option<PatternLabel>,
    pub evidence: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportPayload {
    pub run: RunInfo,
    pub weights: Vec<MethodWeight>,
    pub correlation: CorrelationReport,
    pub redundancy_pairs: Vec<(Method, Method)>,
    pub flags: Vec<EnsembleFlag>,
    pub constant_features: Vec<String>,
    pub detectors: Vec<DetectorReport>,
    /// Sorted by anomaly score, highest first; ties by station id.
    pub rows: Vec<StationReportRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub meta: ReportMeta,
    pub payload: ReportPayload,
}

impl Report {
    pub fn build(analysis: &Analysis, ingest: &IngestSummary, config: &RunConfig) -> Self {
        let e = &analysis.ensemble;
        let n = analysis.vectors.len();
        let mut rows: Vec<StationReportRow> = (0..n)
            .map(|s| {
                let label = analysis.labels[s].as_ref();
                StationReportRow {
                    station: analysis.raw.stations[s].clone(),
                    anomaly_score: e.anomaly_score[s],
                    final_rank: e.final_rank[s],
                    methods: analysis
                        .detectors
                        .iter()
                        .map(|d| MethodEvidence {
                            method: d.method,
                            rank: e.method_rank(d.method, s).unwrap_or(f64::NAN),
                            score: d.scores[s],
                        })
                        .collect(),
                    features: analysis.vectors[s].clone(),
                    label: label.map(|c| c.primary),
                    evidence: label.map(|c| c.evidence.clone()).unwrap_or_default(),
                }
            })
            .collect();
        rows.sort_by(|a, b| b.anomaly_score.total_cmp(&a.anomaly_score).then_with(|| a.station.cmp(&b.station)));

        Report {
            meta: ReportMeta {
                generated_at: Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true),
                version: env!("CARGO_PKG_VERSION").into(),
                input: config.input.taps.clone(),
                out: config.out.clone(),
            },
            payload: ReportPayload {
                run: RunInfo {
                    seed: config.seed,
                    config_hash: config.config_hash(),
                    n_stations: n,
                    flag_threshold: config.flag_threshold,
                    top_k: config.top_k,
                    ingest: ingest.clone(),
                },
                weights: e
                    .correlation
                    .methods
                    .iter()
                    .enumerate()
                    .map(|(i, &m)| MethodWeight {
                        method: m,
                        weight: e.weights.values[i],
                        average_correlation: e.weights.average_correlation[i],
                    })
                    .collect(),
                correlation: CorrelationReport { methods: e.correlation.methods.clone(), matrix: e.correlation.rho.clone() },
                redundancy_pairs: e.redundancy_pairs.clone(),
                flags: e.flags.clone(),
                constant_features: analysis
                    .standardized
                    .features
                    .iter()
                    .zip(&analysis.standardized.constant)
                    .filter(|(_, &c)| c)
                    .map(|(f, _)| f.clone())
                    .collect(),
                detectors: analysis
                    .detectors
                    .iter()
                    .map(|d| DetectorReport { method: d.method, diagnostics: d.diagnostics.clone(), warnings: d.warnings.clone() })
                    .collect(),
                rows,
            },
        }
    }

    pub fn payload_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.payload)?)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::file(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::file(path, e))?;
        Ok(serde_json::from_reader(BufReader::new(f))?)
    }

    pub fn scored_stations(&self) -> Vec<ScoredStation> {
        self.payload
            .rows
            .iter()
            .map(|r| ScoredStation { station: r.station.clone(), anomaly_score: r.anomaly_score, label: r.label })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = ["station", "anomaly_score", "final_rank"].map(String::from).to_vec();
        for m in Method::ALL {
            header.push(format!("{m}_rank"));
            header.push(format!("{m}_score"));
        }
        header.extend(crate::features::FEATURE_NAMES.iter().map(|s| s.to_string()));
        header.push("label".into());
        header.push("evidence".into());
        w.write_record(&header)?;
        for r in &self.payload.rows {
            let mut rec = vec![r.station.clone(), r.anomaly_score.to_string(), r.final_rank.to_string()];
            for m in Method::ALL {
                let ev = r.methods.iter().find(|e| e.method == m);
                rec.push(ev.map_or(String::new(), |e| e.rank.to_string()));
                rec.push(ev.map_or(String::new(), |e| e.score.to_string()));
            }
            rec.extend(r.features.values().iter().map(|v| v.to_string()));
            rec.push(r.label.map_or(String::new(), |l| l.to_string()));
            rec.push(r.evidence.join("; "));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Human-readable top-k table.
    pub fn summary(&self, top_k: usize) -> String {
        let p = &self.payload;
        let mut s = String::new();
        let ing = &p.run.ingest;
        let _ = writeln!(s, "railfraud score summary");
        let _ = writeln!(
            s,
            "stations {}  records {}  line rejects {} ({:.2}%)  tickets in window {}",
            p.run.n_stations,
            ing.records,
            ing.line_rejects,
            100.0 * ing.reject_rate,
            ing.tickets_in_window
        );
        let weights: Vec<String> = p.weights.iter().map(|w| format!("{}={:.4}", w.method, w.weight)).collect();
        let _ = writeln!(s, "weights {}", weights.join(" "));
        if !p.redundancy_pairs.is_empty() {
            let pairs: Vec<String> = p.redundancy_pairs.iter().map(|(a, b)| format!("{a}/{b}")).collect();
            let _ = writeln!(s, "redundant pairs {}", pairs.join(" "));
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "{:>4}  {:<16} {:>7} {:>10}  label", "pos", "station", "score", "final_rank");
        for (i, r) in p.rows.iter().take(top_k).enumerate() {
            let label = r.label.map_or("-".to_string(), |l| l.to_string());
            let _ = writeln!(s, "{:>4}  {:<16} {:>7.3} {:>10.3}  {}", i + 1, r.station, r.anomaly_score, r.final_rank, label);
        }
        s
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    File::create(&path).map(BufWriter::new).map_err(|e| Error::file(path, e))
}

/// Writes every artifact of a scoring run into `config.out`.
pub fn write_outputs(report: &Report, analysis: &Analysis, ingested: &Ingested, config: &RunConfig) -> Result<()> {
    let dir = &config.out;
    std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    report.write_json(&dir.join("report.json"))?;
    report.write_csv(create(dir, "report.csv")?)?;
    let summary = dir.join("summary.txt");
    std::fs::write(&summary, report.summary(config.top_k)).map_err(|e| Error::file(summary, e))?;
    write_rejects(create(dir, "rejects.csv")?, &ingested.rejects)?;
    analysis.raw.write_csv(create(dir, "features.csv")?)?;
    let stats = dir.join("standardization.json");
    std::fs::write(&stats, serde_json::to_string_pretty(&analysis.standardized.stats_json())?)
        .map_err(|e| Error::file(stats, e))?;
    write_scores_csv(create(dir, "detector_scores.csv")?, &analysis.raw.stations, &analysis.detectors)?;
    if config.role_dump {
        write_role_dump(create(dir, "roles.csv")?, &ingested.journeys)?;
    }
    Ok(())
}

#[derive(Debug)]
pub struct ScoreOutcome {
    pub report: Report,
    pub analysis: Analysis,
    pub ingest: IngestSummary,
    /// Line-level reject rate exceeded `reject_rate_max`; outputs are
    /// still written.
    pub reject_breach: bool,
}

/// The full `score` command: ingest, analyze, write artifacts.
pub fn run_score(config: &RunConfig) -> Result<ScoreOutcome> {
    config.validate()?;
    let taps = config
        .input
        .taps
        .as_deref()
        .ok_or_else(|| Error::InvalidConfig("no taps input given".into()))?;
    let ingested = ingest_path(taps, config)?;
    let analysis = analyze(&ingested.journeys, config)?;
    let report = Report::build(&analysis, &ingested.summary, config);
    write_outputs(&report, &analysis, &ingested, config)?;
    Ok(ScoreOutcome {
        reject_breach: ingested.summary.reject_rate > config.reject_rate_max,
        ingest: ingested.summary,
        report,
        analysis,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{generate, Injection, SynthConfig};

    fn synth_input(injections: Vec<Injection>) -> Vec<u8> {
        let cfg = SynthConfig {
            n_stations: 30,
            days: 2,
            journeys_per_day: 6_000,
            seed: 4,
            injections,
            ..SynthConfig::default()
        };
        let mut buf = Vec::new();
        generate(&cfg, &mut buf).unwrap();
        buf
    }

    #[test]
    fn pipeline_on_synthetic_input() {
        let input = synth_input(vec![Injection { station: 5, label: PatternLabel::BlackHole, intensity: 0.8 }]);
        let config = RunConfig::default();
        let ing = ingest_reader(input.as_slice(), &config).unwrap();
        assert_eq!(ing.summary.reject_rate, 0.0);
        assert!(ing.rejects.is_empty());
        let analysis = analyze(&ing.journeys, &config).unwrap();
        let report = Report::build(&analysis, &ing.summary, &config);
        let p = &report.payload;
        assert_eq!(p.rows.len(), 30);
        assert!((p.weights.iter().map(|w| w.weight).sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(p.rows.windows(2).all(|w| w[0].anomaly_score >= w[1].anomaly_score));
        assert_eq!(p.rows[0].anomaly_score, 1.0);
        assert_eq!(ing.summary.input_sha256, hex::encode(Sha256::digest(&input)));
    }

    #[test]
    fn payload_is_deterministic() {
        let input = synth_input(vec![]);
        let config = RunConfig::default();
        let run = || {
            let ing = ingest_reader(input.as_slice(), &config).unwrap();
            let a = analyze(&ing.journeys, &config).unwrap();
            Report::build(&a, &ing.summary, &config).payload_json().unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn config_hash_ignores_paths() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.out = "elsewhere".into();
        b.input.taps = Some("x.csv".into());
        assert_eq!(a.config_hash(), b.config_hash());
        b.seed = 1;
        assert_ne!(a.config_hash(), b.config_hash());
    }

    #[test]
    fn config_validation() {
        let mut c = RunConfig { top_k: 0, ..RunConfig::default() };
        assert!(c.validate().is_err());
        c.top_k = 5;
        c.window_start = NaiveDate::from_ymd_opt(2024, 3, 5);
        c.window_end = NaiveDate::from_ymd_opt(2024, 3, 4);
        assert!(matches!(c.validate(), Err(Error::InvalidWindow(_))));
        c.window_end = None;
        assert!(c.validate().is_ok());
        c.input.timezone = "CET".into();
        assert!(c.validate().is_err());
    }

    #[test]
    fn summary_rows_capped_by_top_k() {
        let input = synth_input(vec![]);
        let config = RunConfig::default();
        let ing = ingest_reader(input.as_slice(), &config).unwrap();
        let a = analyze(&ing.journeys, &config).unwrap();
        let report = Report::build(&a, &ing.summary, &config);
        let table_rows = |k| report.summary(k).lines().skip_while(|l| !l.trim_start().starts_with("pos")).count() - 1;
        assert_eq!(table_rows(5), 5);
        assert_eq!(table_rows(100), 30);
    }
}
