//! `railfraud` command-line tool.
//!
//! Exit status: 0 success, 2 fatal error, 3 reject rate above the limit
//! (outputs still written), 4 recall below the `eval` floor.

mod args;

use std::path::Path;
use std::process::ExitCode;

use clap::Parser;
use railfraud::ingest::write_rejects;
use railfraud::report::{ingest_path, run_score, Report, RunConfig};
use railfraud::synthgen::{generate_to_dir, truth_eval, GroundTruth, SynthConfig};
use railfraud::Error;
use serde::de::DeserializeOwned;

use args::{Cli, Command, EvalArgs, ScoreArgs, SynthArgs};

const EXIT_FATAL: u8 = 2;
const EXIT_REJECTS: u8 = 3;
const EXIT_RECALL: u8 = 4;

fn read_toml<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, Error> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = std::fs::read_to_string(path).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {}", path.display(), e.message())))
}

fn run_config(args: &ScoreArgs) -> Result<RunConfig, Error> {
    let mut config: RunConfig = read_toml(args.config.as_deref())?;
    args.apply(&mut config);
    Ok(config)
}

fn synth(args: &SynthArgs) -> Result<u8, Error> {
    let mut config: SynthConfig = read_toml(args.config.as_deref())?;
    args.apply(&mut config);
    let (truth, stats) = generate_to_dir(&config, &args.out)?;
    println!(
        "wrote {} taps for {} tickets ({} injected stations) to {}",
        stats.taps,
        stats.tickets,
        truth.injected_stations().count(),
        args.out.display()
    );
    Ok(0)
}

fn score(args: &ScoreArgs) -> Result<u8, Error> {
    let config = run_config(args)?;
    let outcome = run_score(&config)?;
    print!("{}", outcome.report.summary(config.top_k));
    for d in &outcome.report.payload.detectors {
        for w in &d.warnings {
            eprintln!("warning: method={} {w}", d.method);
        }
    }
    if outcome.reject_breach {
        eprintln!(
            "warning: kind=reject_rate detail=\"{:.4} of data lines rejected, limit {}\"",
            outcome.ingest.reject_rate, config.reject_rate_max
        );
        return Ok(EXIT_REJECTS);
    }
    Ok(0)
}

fn validate(args: &ScoreArgs) -> Result<u8, Error> {
    let config = run_config(args)?;
    config.validate()?;
    let taps = config
        .input
        .taps
        .as_deref()
        .ok_or_else(|| Error::InvalidConfig("no taps input given".into()))?;
    let ingested = ingest_path(taps, &config)?;
    let s = &ingested.summary;
    println!("data lines {}", s.data_lines);
    println!("records {}", s.records);
    println!("line rejects {}", s.line_rejects);
    println!("ticket rejects {}", s.ticket_rejects);
    println!("tickets {} ({} in window)", s.tickets, s.tickets_in_window);
    println!("reject rate {:.6}", s.reject_rate);
    if args.out.is_some() {
        std::fs::create_dir_all(&config.out).map_err(|e| Error::File { path: config.out.clone(), source: e })?;
        let path = config.out.join("rejects.csv");
        let f = std::fs::File::create(&path).map_err(|e| Error::File { path: path.clone(), source: e })?;
        write_rejects(std::io::BufWriter::new(f), &ingested.rejects)?;
    }
    if s.reject_rate > config.reject_rate_max {
        eprintln!(
            "warning: kind=reject_rate detail=\"{:.4} of data lines rejected, limit {}\"",
            s.reject_rate, config.reject_rate_max
        );
        return Ok(EXIT_REJECTS);
    }
    Ok(0)
}

fn eval(args: &EvalArgs) -> Result<u8, Error> {
    let report = Report::read_json(&args.report)?;
    let truth = GroundTruth::read_json(&args.truth)?;
    let r = truth_eval(&report.scored_stations(), &truth, args.k, &args.exempt)?;
    let show = |v: Option<f64>| v.map_or("absent".to_string(), |v| format!("{v:.4}"));
    println!("injected {}", r.n_injected);
    println!("recall@{} {}", r.k, show(r.recall));
    for (label, recall) in &r.recall_by_label {
        println!("recall@{} {label} {recall:.4}", r.k);
    }
    println!("label_accuracy {}", show(r.label_accuracy));
    for s in &r.recovered {
        let predicted = s.predicted.map_or("-".to_string(), |l| l.to_string());
        println!("  #{} {} truth={} predicted={}", s.position, s.station, s.truth, predicted);
    }
    if let Some(recall) = r.recall {
        if recall < args.floor {
            eprintln!("warning: kind=recall_below_floor detail=\"recall@{} {recall:.4} < {}\"", r.k, args.floor);
            return Ok(EXIT_RECALL);
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Score(a) => score(a),
        Command::Eval(a) => eval(a),
        Command::Validate(a) => validate(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            let detail = e.to_string().replace('\\', "\\\\").replace('"', "\\\"").replace('\n', " ");
            eprintln!("error: kind={} detail=\"{detail}\"", e.kind());
            ExitCode::from(EXIT_FATAL)
        }
    }
}
