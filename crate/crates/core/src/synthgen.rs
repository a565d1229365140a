//! Synthetic tap streams with planted fraud stations.
//!
//! Stations get log-normal "masses", sorted so that index 0 is the busiest.
//! Honest journeys pick origin and destination jointly in proportion to
//! `m_o * m_d` with `o != d` and tap at both ends, minus a little baseline
//! noise. Each injection reshapes the traffic of one station according to
//! its archetype. Every day draws from its own ChaCha stream, so output is
//! a pure function of the config.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use chrono::{Duration, NaiveDate, NaiveDateTime, NaiveTime};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::LogNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{EventKind, Medium, TapRow, TapWriter};
use crate::taxonomy::PatternLabel;

/// Share of retyped Ghost tickets that keep only their entry.
pub const GHOST_ENTRY_SHARE: f64 = 0.63;

const QUOTA_SCALE: u64 = 1_000_000;
const FIRST_ENTRY_SECS: u32 = 5 * 3600;
const LAST_ENTRY_SECS: u32 = 20 * 3600;
const MAX_TRAVEL_MINUTES: i64 = 180;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub missing_exit_rate: f64,
    pub missing_entry_rate: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { missing_exit_rate: 0.02, missing_entry_rate: 0.01 }
    }
}

impl NoiseConfig {
    pub fn none() -> Self {
        Self { missing_exit_rate: 0.0, missing_entry_rate: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Injection {
    pub station: usize,
    pub label: PatternLabel,
    pub intensity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_stations: usize,
    pub days: u32,
    pub journeys_per_day: u64,
    pub seed: u64,
    pub start_date: NaiveDate,
    /// Log-normal sigma of station masses.
    pub mass_sigma: f64,
    pub noise: NoiseConfig,
    pub injections: Vec<Injection>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_stations: 100,
            days: 7,
            journeys_per_day: 130_000,
            seed: 0,
            start_date: NaiveDate::from_ymd_opt(2024, 3, 4).expect("valid date"),
            mass_sigma: 0.6,
            noise: NoiseConfig::default(),
            injections: Vec::new(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_stations < 4 {
            return Err(Error::InvalidConfig(format!("n_stations must be at least 4, got {}", self.n_stations)));
        }
        if self.days == 0 {
            return Err(Error::InvalidConfig("days must be at least 1".into()));
        }
        if !(self.mass_sigma >= 0.0 && self.mass_sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!("mass_sigma must be finite and >= 0, got {}", self.mass_sigma)));
        }
        for (name, rate) in [
            ("noise.missing_exit_rate", self.noise.missing_exit_rate),
            ("noise.missing_entry_rate", self.noise.missing_entry_rate),
        ] {
            if !(0.0..1.0).contains(&rate) {
                return Err(Error::InvalidConfig(format!("{name} must lie in [0, 1), got {rate}")));
            }
        }
        let mut seen = HashSet::new();
        for inj in &self.injections {
            if inj.station >= self.n_stations {
                return Err(Error::InjectionOutOfRange { index: inj.station, n_stations: self.n_stations });
            }
            if !seen.insert(inj.station) {
                return Err(Error::InvalidConfig(format!("station {} is injected twice", inj.station)));
            }
            if !(inj.intensity > 0.0 && inj.intensity <= 1.0) {
                return Err(Error::InvalidConfig(format!("injection intensity must lie in (0, 1], got {}", inj.intensity)));
            }
            if inj.label == PatternLabel::Unclassified {
                return Err(Error::InvalidConfig("Unclassified cannot be injected".into()));
            }
        }
        if self.injections.len() + 3 > self.n_stations {
            return Err(Error::InvalidConfig("too many injections for the station count".into()));
        }
        Ok(())
    }
}

pub fn station_name(index: usize, n_stations: usize) -> String {
    let width = (n_stations.saturating_sub(1)).to_string().len().max(3);
    format!("STN_{index:0width$}")
}

/// Station masses in descending order.
pub fn station_masses(config: &SynthConfig) -> Result<Vec<f64>> {
    let dist = LogNormal::new(0.0, config.mass_sigma)
        .map_err(|e| Error::InvalidConfig(format!("mass_sigma: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut masses: Vec<f64> = (0..config.n_stations).map(|_| dist.sample(&mut rng)).collect();
    masses.sort_by(|a, b| b.total_cmp(a));
    Ok(masses)
}

/// Expected daily number of honest journeys touching each station when
/// pairs are drawn with probability proportional to `m_o * m_d`, `o != d`.
pub fn expected_touches(masses: &[f64], journeys_per_day: u64) -> Vec<f64> {
    let total: f64 = masses.iter().sum();
    let sq: f64 = masses.iter().map(|m| m * m).sum();
    let denom = total * total - sq;
    masses
        .iter()
        .map(|m| journeys_per_day as f64 * 2.0 * m * (total - m) / denom)
        .collect()
}

/// Per-station truth: `None` for honest stations.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    #[serde(with = "truth_labels")]
    pub stations: BTreeMap<String, Option<PatternLabel>>,
    pub injections: Vec<Injection>,
    pub injected_tickets: BTreeSet<String>,
}

mod truth_labels {
    use super::*;
    use serde::{Deserializer, Serializer};

    const NORMAL: &str = "Normal";

    pub fn serialize<S: Serializer>(map: &BTreeMap<String, Option<PatternLabel>>, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_map(map.iter().map(|(k, v)| (k, v.map_or(NORMAL, PatternLabel::as_str))))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<BTreeMap<String, Option<PatternLabel>>, D::Error> {
        let raw = BTreeMap::<String, String>::deserialize(d)?;
        raw.into_iter()
            .map(|(k, v)| {
                let label = if v == NORMAL {
                    None
                } else {
                    Some(v.parse().map_err(serde::de::Error::custom)?)
                };
                Ok((k, label))
            })
            .collect()
    }
}

impl GroundTruth {
    pub fn label(&self, station: &str) -> Option<PatternLabel> {
        self.stations.get(station).copied().flatten()
    }

    pub fn injected_stations(&self) -> impl Iterator<Item = (&str, PatternLabel)> {
        self.stations.iter().filter_map(|(s, l)| l.map(|l| (s.as_str(), l)))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::file(path, e))?;
        let mut w = BufWriter::new(f);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n").map_err(|e| Error::file(path, e))?;
        w.flush().map_err(|e| Error::file(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::file(path, e))?;
        Ok(serde_json::from_reader(BufReader::new(f))?)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthStats {
    pub tickets: u64,
    pub taps: u64,
}

struct Ticket {
    id: String,
    card: Option<String>,
    medium: Medium,
    origin: usize,
    destination: usize,
    entry: Option<(usize, NaiveDateTime)>,
    exit: Option<(usize, NaiveDateTime)>,
}

/// Deterministic "every n-th" selector hitting exactly `ceil(n * p)` of the
/// first `n` calls.
struct Quota {
    step: u64,
    acc: u64,
}

impl Quota {
    fn new(p: f64) -> Self {
        let step = (p * QUOTA_SCALE as f64).round() as u64;
        Self { step, acc: QUOTA_SCALE - 1 }
    }

    fn take(&mut self) -> bool {
        self.acc += self.step;
        if self.acc >= QUOTA_SCALE {
            self.acc -= QUOTA_SCALE;
            true
        } else {
            false
        }
    }
}

struct Network {
    names: Vec<String>,
    index: WeightedIndex<f64>,
    expected: Vec<f64>,
    injected: Vec<bool>,
}

impl Network {
    /// Mass-weighted station outside `exclude` and never an injected one.
    fn pick_clean(&self, rng: &mut ChaCha8Rng, exclude: &[usize]) -> usize {
        loop {
            let s = self.index.sample(rng);
            if !self.injected[s] && !exclude.contains(&s) {
                return s;
            }
        }
    }
}

struct DayGen<'a> {
    config: &'a SynthConfig,
    net: &'a Network,
    rng: ChaCha8Rng,
    day: u32,
    date: NaiveDate,
    seq: u64,
}

impl DayGen<'_> {
    fn next_id(&mut self) -> String {
        self.seq += 1;
        format!("T{:03}-{:07}", self.day, self.seq)
    }

    fn medium(&mut self) -> (Medium, Option<String>) {
        let u: f64 = self.rng.random();
        if u < 0.55 {
            (Medium::Contactless, Some(self.card()))
        } else if u < 0.85 {
            (Medium::Magnetic, None)
        } else {
            (Medium::Barcode, None)
        }
    }

    fn card(&mut self) -> String {
        let pool = 2 * self.config.journeys_per_day.max(1);
        format!("C{:08}", self.rng.random_range(0..pool))
    }

    fn times(&mut self) -> (NaiveDateTime, NaiveDateTime) {
        let secs = self.rng.random_range(FIRST_ENTRY_SECS..LAST_ENTRY_SECS);
        let entry = self.date.and_time(NaiveTime::from_num_seconds_from_midnight_opt(secs, 0).expect("in range"));
        let exit = entry + Duration::minutes(self.rng.random_range(5..=MAX_TRAVEL_MINUTES));
        (entry, exit)
    }

    fn ticket(&mut self, origin: usize, destination: usize) -> Ticket {
        let (medium, card) = self.medium();
        let (t_in, t_out) = self.times();
        Ticket {
            id: self.next_id(),
            card,
            medium,
            origin,
            destination,
            entry: Some((origin, t_in)),
            exit: Some((destination, t_out)),
        }
    }

    fn honest_pair(&mut self) -> (usize, usize) {
        loop {
            let o = self.net.index.sample(&mut self.rng);
            let d = self.net.index.sample(&mut self.rng);
            if o != d {
                return (o, d);
            }
        }
    }

    fn surplus(&mut self, p: f64, s: usize) -> u64 {
        (p * self.net.expected[s]).round() as u64
    }
}

fn write_ticket<W: Write>(out: &mut TapWriter<W>, names: &[String], t: &Ticket, record: &mut u64) -> Result<()> {
    let gate = |station: usize, at: &NaiveDateTime| format!("G{}", (station + at.and_utc().timestamp() as usize) % 4 + 1);
    for (tap, kind) in [(t.entry, EventKind::Entry), (t.exit, EventKind::Exit)] {
        let Some((station, at)) = tap else { continue };
        *record += 1;
        let record_id = format!("R{record:010}");
        let gate_id = gate(station, &at);
        out.write(&TapRow {
            record_id: &record_id,
            ticket_id: &t.id,
            card_id: t.card.as_deref(),
            station_id: &names[station],
            gate_id: Some(&gate_id),
            event_kind: kind,
            timestamp: at.and_utc(),
            declared_origin: &names[t.origin],
            declared_destination: &names[t.destination],
            medium: t.medium,
        })?;
    }
    Ok(())
}

/// Streams the tap CSV to `writer` and returns the matching ground truth.
pub fn generate<W: Write>(config: &SynthConfig, writer: W) -> Result<(GroundTruth, SynthStats)> {
    config.validate()?;
    let masses = station_masses(config)?;
    let n = config.n_stations;
    let names: Vec<String> = (0..n).map(|i| station_name(i, n)).collect();
    let mut injected = vec![false; n];
    let mut by_label: BTreeMap<PatternLabel, Vec<(usize, f64)>> = BTreeMap::new();
    for inj in &config.injections {
        injected[inj.station] = true;
        by_label.entry(inj.label).or_default().push((inj.station, inj.intensity));
    }
    let net = Network {
        index: WeightedIndex::new(&masses).map_err(|e| Error::InvalidConfig(format!("station masses: {e}")))?,
        expected: expected_touches(&masses, config.journeys_per_day),
        names,
        injected,
    };
    let role_of = |label| by_label.get(&label).cloned().unwrap_or_default();
    let ghosts = role_of(PatternLabel::GhostStation);
    let losses = role_of(PatternLabel::FunctionLoss);

    let mut truth = GroundTruth {
        stations: net.names.iter().map(|s| (s.clone(), None)).collect(),
        injections: config.injections.clone(),
        injected_tickets: BTreeSet::new(),
    };
    for inj in &config.injections {
        truth.stations.insert(net.names[inj.station].clone(), Some(inj.label));
    }

    let mut out = TapWriter::new(writer)?;
    let mut stats = SynthStats::default();
    let mut record = 0u64;

    for day in 0..config.days {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1 + day as u64);
        let mut g = DayGen {
            config,
            net: &net,
            rng,
            day,
            date: config.start_date + Duration::days(day as i64),
            seq: 0,
        };
        let mut ghost_quota: Vec<Quota> = ghosts.iter().map(|&(_, p)| Quota::new(p)).collect();
        let mut loss_quota: Vec<Quota> = losses.iter().map(|&(_, p)| Quota::new(p)).collect();
        let mut emit = |t: Ticket, inj: bool, truth: &mut GroundTruth| -> Result<()> {
            if inj {
                truth.injected_tickets.insert(t.id.clone());
            }
            stats.tickets += 1;
            stats.taps += t.entry.is_some() as u64 + t.exit.is_some() as u64;
            write_ticket(&mut out, &net.names, &t, &mut record)
        };

        for _ in 0..config.journeys_per_day {
            let (o, d) = g.honest_pair();
            let mut t = g.ticket(o, d);
            let mut inj = false;

            if let Some(k) = ghosts.iter().position(|&(s, _)| s == o || s == d) {
                if ghost_quota[k].take() {
                    let gs = ghosts[k].0;
                    let other = if o == gs { d } else { o };
                    let (t_in, t_out) = (t.entry.unwrap().1, t.exit.unwrap().1);
                    if g.rng.random::<f64>() < GHOST_ENTRY_SHARE {
                        (t.origin, t.destination) = (gs, other);
                        t.entry = Some((gs, t_in));
                        t.exit = None;
                    } else {
                        (t.origin, t.destination) = (other, gs);
                        t.entry = None;
                        t.exit = Some((gs, t_out));
                    }
                    inj = true;
                }
            }
            if !inj {
                if let Some(k) = losses.iter().position(|&(s, _)| s == d) {
                    if loss_quota[k].take() {
                        let x = g.net.pick_clean(&mut g.rng, &[o, d]);
                        t.exit = t.exit.map(|(_, at)| (x, at));
                        inj = true;
                    }
                }
            }
            if !inj {
                let noise = &config.noise;
                if g.rng.random::<f64>() < noise.missing_exit_rate {
                    t.exit = None;
                } else if g.rng.random::<f64>() < noise.missing_entry_rate {
                    t.entry = None;
                }
            }
            emit(t, inj, &mut truth)?;
        }

        for &(s, p) in by_label.get(&PatternLabel::BlackHole).into_iter().flatten() {
            for _ in 0..g.surplus(p, s) {
                let o = g.net.pick_clean(&mut g.rng, &[s]);
                let mut t = g.ticket(o, s);
                t.entry = None;
                emit(t, true, &mut truth)?;
            }
        }
        for &(s, p) in by_label.get(&PatternLabel::FakeOrigin).into_iter().flatten() {
            for _ in 0..g.surplus(p, s) {
                let d = g.net.pick_clean(&mut g.rng, &[s]);
                let mut t = g.ticket(s, d);
                t.exit = None;
                emit(t, true, &mut truth)?;
            }
        }
        for &(pivot, p) in by_label.get(&PatternLabel::MicroTrap).into_iter().flatten() {
            let pairs = (p * g.net.expected[pivot] / 2.0).round() as u64;
            for _ in 0..pairs {
                let s = g.net.pick_clean(&mut g.rng, &[pivot]);
                let e = g.net.pick_clean(&mut g.rng, &[pivot, s]);
                let card = g.card();
                let (t_in, _) = g.times();
                let t_out = t_in + Duration::minutes(g.rng.random_range(10..=MAX_TRAVEL_MINUTES));
                let first = Ticket {
                    id: g.next_id(),
                    card: Some(card.clone()),
                    medium: Medium::Contactless,
                    origin: s,
                    destination: pivot,
                    entry: Some((s, t_in)),
                    exit: None,
                };
                let second = Ticket {
                    id: g.next_id(),
                    card: Some(card),
                    medium: Medium::Contactless,
                    origin: pivot,
                    destination: e,
                    entry: None,
                    exit: Some((e, t_out)),
                };
                emit(first, true, &mut truth)?;
                emit(second, true, &mut truth)?;
            }
        }
    }
    out.finish()?.flush()?;
    Ok((truth, stats))
}

/// Writes `taps.csv` and `truth.json` into `dir`.
pub fn generate_to_dir(config: &SynthConfig, dir: &Path) -> Result<(GroundTruth, SynthStats)> {
    std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    let taps = dir.join("taps.csv");
    let f = File::create(&taps).map_err(|e| Error::file(&taps, e))?;
    let (truth, stats) = generate(config, BufWriter::with_capacity(1 << 20, f))?;
    truth.write_json(&dir.join("truth.json"))?;
    Ok((truth, stats))
}

/// A scored station as seen by the evaluator.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredStation {
    pub station: String,
    pub anomaly_score: f64,
    pub label: Option<PatternLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveredStation {
    pub station: String,
    pub truth: PatternLabel,
    pub predicted: Option<PatternLabel>,
    pub position: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub k: usize,
    pub n_injected: usize,
    /// Absent when nothing was injected.
    pub recall: Option<f64>,
    pub recall_by_label: BTreeMap<PatternLabel, f64>,
    /// Share of recovered, non-exempt stations whose primary label matches
    /// the injected archetype. Absent when there are none.
    pub label_accuracy: Option<f64>,
    pub exempt_labels: Vec<PatternLabel>,
    pub recovered: Vec<RecoveredStation>,
}

/// Recall@k over injected stations and label accuracy among the recovered.
pub fn truth_eval(
    scored: &[ScoredStation],
    truth: &GroundTruth,
    k: usize,
    exempt: &[PatternLabel],
) -> Result<RecoveryReport> {
    let ours: BTreeSet<&str> = scored.iter().map(|s| s.station.as_str()).collect();
    let theirs: BTreeSet<&str> = truth.stations.keys().map(String::as_str).collect();
    if ours.len() != scored.len() || ours != theirs {
        let missing = theirs.difference(&ours).count();
        let extra = ours.difference(&theirs).count();
        return Err(Error::UniverseMismatch(format!(
            "{missing} truth stations missing from the scores, {extra} scored stations unknown to the truth"
        )));
    }
    let mut order: Vec<&ScoredStation> = scored.iter().collect();
    order.sort_by(|a, b| b.anomaly_score.total_cmp(&a.anomaly_score).then_with(|| a.station.cmp(&b.station)));

    let mut per_label: BTreeMap<PatternLabel, (usize, usize)> = BTreeMap::new();
    let mut recovered = Vec::new();
    for (pos, s) in order.iter().enumerate() {
        let Some(t) = truth.label(&s.station) else { continue };
        let hit = pos < k;
        let e = per_label.entry(t).or_default();
        e.1 += 1;
        if hit {
            e.0 += 1;
            recovered.push(RecoveredStation { station: s.station.clone(), truth: t, predicted: s.label, position: pos + 1 });
        }
    }
    let n_injected: usize = per_label.values().map(|v| v.1).sum();
    let recall = (n_injected > 0).then(|| recovered.len() as f64 / n_injected as f64);
    let judged: Vec<&RecoveredStation> = recovered.iter().filter(|r| !exempt.contains(&r.truth)).collect();
    let label_accuracy = (!judged.is_empty())
        .then(|| judged.iter().filter(|r| r.predicted == Some(r.truth)).count() as f64 / judged.len() as f64);

    Ok(RecoveryReport {
        k,
        n_injected,
        recall,
        recall_by_label: per_label.into_iter().map(|(l, (h, t))| (l, h as f64 / t as f64)).collect(),
        label_accuracy,
        exempt_labels: exempt.to_vec(),
        recovered,
    })
}
