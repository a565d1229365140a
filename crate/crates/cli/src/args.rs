use std::path::PathBuf;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use railfraud::detectors::Gamma;
use railfraud::ensemble::Normalization;
use railfraud::ingest::UnknownPolicy;
use railfraud::report::RunConfig;
use railfraud::synthgen::{Injection, SynthConfig};
use railfraud::taxonomy::PatternLabel;

#[derive(Debug, Parser)]
#[command(name = "railfraud", version, about = "Short-ticketing detection on railway tap data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic tap stream with planted fraud stations.
    Synth(SynthArgs),
    /// Run the full pipeline and write reports.
    Score(ScoreArgs),
    /// Compare a report against synthetic ground truth.
    Eval(EvalArgs),
    /// Ingest only: parse, normalize and count rejects.
    Validate(ScoreArgs),
}

/// `STATION:LABEL:INTENSITY`, e.g. `12:GhostStation:0.8`.
fn parse_injection(s: &str) -> Result<Injection, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [station, label, intensity] = parts.as_slice() else {
        return Err(format!("expected STATION:LABEL:INTENSITY, got `{s}`"));
    };
    Ok(Injection {
        station: station.parse().map_err(|_| format!("bad station index `{station}`"))?,
        label: label.parse().map_err(|e: railfraud::Error| e.to_string())?,
        intensity: intensity.parse().map_err(|_| format!("bad intensity `{intensity}`"))?,
    })
}

fn parse_label(s: &str) -> Result<PatternLabel, String> {
    s.parse().map_err(|e: railfraud::Error| e.to_string())
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// TOML file with synth settings; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for taps.csv and truth.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_stations: Option<usize>,
    #[arg(long)]
    pub days: Option<u32>,
    #[arg(long)]
    pub journeys_per_day: Option<u64>,
    #[arg(long)]
    pub start_date: Option<NaiveDate>,
    #[arg(long)]
    pub mass_sigma: Option<f64>,
    #[arg(long)]
    pub missing_exit_rate: Option<f64>,
    #[arg(long)]
    pub missing_entry_rate: Option<f64>,
    /// Replaces the configured injections; repeatable.
    #[arg(long = "inject", value_name = "STATION:LABEL:INTENSITY", value_parser = parse_injection)]
    pub injections: Vec<Injection>,
}

impl SynthArgs {
    pub fn apply(&self, c: &mut SynthConfig) {
        set(&mut c.seed, self.seed);
        set(&mut c.n_stations, self.n_stations);
        set(&mut c.days, self.days);
        set(&mut c.journeys_per_day, self.journeys_per_day);
        set(&mut c.start_date, self.start_date);
        set(&mut c.mass_sigma, self.mass_sigma);
        set(&mut c.noise.missing_exit_rate, self.missing_exit_rate);
        set(&mut c.noise.missing_entry_rate, self.missing_entry_rate);
        if !self.injections.is_empty() {
            c.injections = self.injections.clone();
        }
    }
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// TOML run configuration; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Tap CSV to analyze.
    #[arg(long)]
    pub taps: Option<PathBuf>,
    /// Alias CSV with `raw_id,canonical_id`.
    #[arg(long)]
    pub aliases: Option<PathBuf>,
    #[arg(long)]
    pub unknown_policy: Option<UnknownPolicy>,
    #[arg(long)]
    pub delimiter: Option<char>,
    /// Offset for timestamps without a zone, e.g. +01:00.
    #[arg(long, allow_hyphen_values = true)]
    pub timezone: Option<String>,
    #[arg(long)]
    pub window_start: Option<NaiveDate>,
    #[arg(long)]
    pub window_end: Option<NaiveDate>,
    /// Seed for the isolation forest.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Rows in summary.txt.
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub flag_threshold: Option<f64>,
    #[arg(long)]
    pub reject_rate_max: Option<f64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub role_dump: bool,

    #[arg(long)]
    pub iforest_trees: Option<usize>,
    #[arg(long)]
    pub iforest_subsample: Option<usize>,
    #[arg(long)]
    pub lof_k: Option<usize>,
    #[arg(long)]
    pub ocsvm_nu: Option<f64>,
    /// `auto` or a positive number.
    #[arg(long)]
    pub ocsvm_gamma: Option<Gamma>,
    #[arg(long)]
    pub ocsvm_tol: Option<f64>,
    #[arg(long)]
    pub ocsvm_max_iter: Option<usize>,
    #[arg(long)]
    pub mahalanobis_shrinkage: Option<f64>,

    /// `min-max` or `positional`.
    #[arg(long)]
    pub normalization: Option<Normalization>,
    #[arg(long, allow_hyphen_values = true)]
    pub redundancy_threshold: Option<f64>,

    #[arg(long)]
    pub ghost_incomplete_share_min: Option<f64>,
    #[arg(long)]
    pub ghost_entropy_max: Option<f64>,
    #[arg(long)]
    pub ghost_mahalanobis_top_decile: Option<bool>,
    #[arg(long)]
    pub blackhole_exit_only_share_min: Option<f64>,
    #[arg(long)]
    pub blackhole_diff_ratio_min: Option<f64>,
    #[arg(long)]
    pub blackhole_lof_top_decile: Option<bool>,
    #[arg(long)]
    pub fakeorigin_entry_only_share_min: Option<f64>,
    #[arg(long)]
    pub fakeorigin_ocsvm_top_decile: Option<bool>,
    #[arg(long)]
    pub functionloss_ratio_bc_max_imbalance: Option<f64>,
    #[arg(long)]
    pub microtrap_bc_overlap_min: Option<f64>,
    #[arg(long)]
    pub microtrap_total_bottom_quartile: Option<bool>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl ScoreArgs {
    pub fn apply(&self, c: &mut RunConfig) {
        if self.taps.is_some() {
            c.input.taps = self.taps.clone();
        }
        if self.aliases.is_some() {
            c.input.aliases = self.aliases.clone();
        }
        set(&mut c.input.unknown_policy, self.unknown_policy);
        set(&mut c.input.delimiter, self.delimiter);
        set(&mut c.input.timezone, self.timezone.clone());
        if self.window_start.is_some() {
            c.window_start = self.window_start;
        }
        if self.window_end.is_some() {
            c.window_end = self.window_end;
        }
        set(&mut c.seed, self.seed);
        set(&mut c.top_k, self.top_k);
        set(&mut c.flag_threshold, self.flag_threshold);
        set(&mut c.reject_rate_max, self.reject_rate_max);
        set(&mut c.out, self.out.clone());
        c.role_dump |= self.role_dump;

        let d = &mut c.detectors;
        set(&mut d.iforest.n_trees, self.iforest_trees);
        if self.iforest_subsample.is_some() {
            d.iforest.subsample = self.iforest_subsample;
        }
        if self.lof_k.is_some() {
            d.lof.k = self.lof_k;
        }
        set(&mut d.ocsvm.nu, self.ocsvm_nu);
        set(&mut d.ocsvm.gamma, self.ocsvm_gamma);
        set(&mut d.ocsvm.tol, self.ocsvm_tol);
        set(&mut d.ocsvm.max_iter, self.ocsvm_max_iter);
        set(&mut d.mahalanobis.shrinkage, self.mahalanobis_shrinkage);

        set(&mut c.ensemble.normalization, self.normalization);
        set(&mut c.ensemble.redundancy_threshold, self.redundancy_threshold);

        let r = &mut c.rules;
        set(&mut r.ghost.incomplete_share_min, self.ghost_incomplete_share_min);
        set(&mut r.ghost.entropy_max, self.ghost_entropy_max);
        set(&mut r.ghost.mahalanobis_top_decile, self.ghost_mahalanobis_top_decile);
        set(&mut r.blackhole.exit_only_share_min, self.blackhole_exit_only_share_min);
        set(&mut r.blackhole.diff_ratio_min, self.blackhole_diff_ratio_min);
        set(&mut r.blackhole.lof_top_decile, self.blackhole_lof_top_decile);
        set(&mut r.fakeorigin.entry_only_share_min, self.fakeorigin_entry_only_share_min);
        set(&mut r.fakeorigin.ocsvm_top_decile, self.fakeorigin_ocsvm_top_decile);
        set(&mut r.functionloss.ratio_bc_max_imbalance, self.functionloss_ratio_bc_max_imbalance);
        set(&mut r.microtrap.bc_overlap_min, self.microtrap_bc_overlap_min);
        set(&mut r.microtrap.total_bottom_quartile, self.microtrap_total_bottom_quartile);
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// report.json written by `score`.
    #[arg(long)]
    pub report: PathBuf,
    /// truth.json written by `synth`.
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub k: usize,
    /// Exit with status 4 when recall@k is below this.
    #[arg(long, default_value_t = 0.0)]
    pub floor: f64,
    /// Labels left out of label accuracy; repeatable.
    #[arg(long = "exempt", value_parser = parse_label, default_values_t = [PatternLabel::MicroTrap])]
    pub exempt: Vec<PatternLabel>,
}
