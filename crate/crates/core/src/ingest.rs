//! Tap ingestion: CSV parsing, station-id normalization and ticket assembly.
//!
//! Every per-line defect becomes a [`RejectRecord`]; only an unreadable
//! stream or a wrong header aborts. The invariant callers can rely on is
//! `records.len() + rejects.len() == data_lines` for [`parse_taps`].

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, FixedOffset, NaiveDate, NaiveDateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column order of the tap CSV.
pub const TAP_HEADER: [&str; 10] = [
    "record_id",
    "ticket_id",
    "card_id",
    "station_id",
    "gate_id",
    "event_kind",
    "timestamp",
    "declared_origin",
    "declared_destination",
    "medium",
];

const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%SZ";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EventKind {
    Entry,
    Exit,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Entry => "ENTRY",
            EventKind::Exit => "EXIT",
        }
    }
}

impl FromStr for EventKind {
    type Err = ();

    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        if s.eq_ignore_ascii_case("ENTRY") {
            Ok(EventKind::Entry)
        } else if s.eq_ignore_ascii_case("EXIT") {
            Ok(EventKind::Exit)
        } else {
            Err(())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Medium {
    Magnetic,
    Contactless,
    Barcode,
    Other,
}

impl Medium {
    pub fn as_str(self) -> &'static str {
        match self {
            Medium::Magnetic => "MAGNETIC",
            Medium::Contactless => "CONTACTLESS",
            Medium::Barcode => "BARCODE",
            Medium::Other => "OTHER",
        }
    }
}

impl FromStr for Medium {
    type Err = ();

    /// An empty medium field is read as [`Medium::Other`].
    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s.to_ascii_uppercase().as_str() {
            "MAGNETIC" => Ok(Medium::Magnetic),
            "CONTACTLESS" => Ok(Medium::Contactless),
            "BARCODE" => Ok(Medium::Barcode),
            "OTHER" | "" => Ok(Medium::Other),
            _ => Err(()),
        }
    }
}

/// One validated gate event.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawTapRecord {
    /// 1-based physical line in the source file (header is line 1).
    pub line: u64,
    pub record_id: String,
    pub ticket_id: String,
    pub card_id: Option<String>,
    pub station_id: String,
    pub gate_id: Option<String>,
    pub event_kind: EventKind,
    pub timestamp: DateTime<Utc>,
    pub declared_origin: String,
    pub declared_destination: String,
    pub medium: Medium,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RejectReason {
    FieldCount,
    InvalidUtf8,
    MissingRecordId,
    MissingTicketId,
    MissingStation,
    MissingEventKind,
    BadEventKind,
    MissingTimestamp,
    BadTimestamp,
    MissingDeclaration,
    BadMedium,
    DuplicateRecordId,
    UnknownStation,
    NoTaps,
    InconsistentDeclaration,
    TapsOutOfOrder,
}

impl RejectReason {
    /// Ticket-level reasons; everything else rejects a single input line.
    pub fn is_ticket_level(self) -> bool {
        matches!(
            self,
            RejectReason::NoTaps
                | RejectReason::InconsistentDeclaration
                | RejectReason::TapsOutOfOrder
        )
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RejectRecord {
    pub line: u64,
    pub reason: RejectReason,
}

impl RejectRecord {
    pub fn new(line: u64, reason: RejectReason) -> Self {
        Self { line, reason }
    }
}

/// How the tap CSV is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SchemaConfig {
    pub delimiter: u8,
    /// Offset applied to timestamps that carry no zone designator.
    pub timezone: FixedOffset,
}

impl Default for SchemaConfig {
    fn default() -> Self {
        Self {
            delimiter: b',',
            timezone: FixedOffset::east_opt(0).expect("zero offset"),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParseOutcome {
    pub records: Vec<RawTapRecord>,
    pub rejects: Vec<RejectRecord>,
    pub data_lines: u64,
}

/// Parses a tap CSV stream.
///
/// The header must match [`TAP_HEADER`] exactly (surrounding whitespace is
/// ignored). Later occurrences of an already-seen `record_id` are rejected
/// with [`RejectReason::DuplicateRecordId`].
pub fn parse_taps<R: Read>(reader: R, schema: &SchemaConfig) -> Result<ParseOutcome> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);

    let mut row = csv::ByteRecord::new();
    if !rdr.read_byte_record(&mut row)? {
        return Err(Error::MalformedHeader("empty input".into()));
    }
    check_header(&row)?;

    let mut out = ParseOutcome::default();
    let mut seen: HashSet<String> = HashSet::new();
    while rdr.read_byte_record(&mut row)? {
        out.data_lines += 1;
        let line = row.position().map_or(0, |p| p.line());
        match parse_row(&row, line, schema) {
            Ok(rec) => {
                if seen.contains(&rec.record_id) {
                    out.rejects
                        .push(RejectRecord::new(line, RejectReason::DuplicateRecordId));
                } else {
                    seen.insert(rec.record_id.clone());
                    out.records.push(rec);
                }
            }
            Err(reason) => out.rejects.push(RejectRecord::new(line, reason)),
        }
    }
    Ok(out)
}

fn check_header(row: &csv::ByteRecord) -> Result<()> {
    let names: Vec<String> = row
        .iter()
        .map(|f| String::from_utf8_lossy(f).trim().trim_start_matches('\u{feff}').to_string())
        .collect();
    if names.len() != TAP_HEADER.len() || names.iter().zip(TAP_HEADER).any(|(a, b)| a != b) {
        return Err(Error::MalformedHeader(format!(
            "expected `{}`, found `{}`",
            TAP_HEADER.join(","),
            names.join(",")
        )));
    }
    Ok(())
}

fn parse_row(
    row: &csv::ByteRecord,
    line: u64,
    schema: &SchemaConfig,
) -> std::result::Result<RawTapRecord, RejectReason> {
    if row.len() != TAP_HEADER.len() {
        return Err(RejectReason::FieldCount);
    }
    let mut fields = [""; 10];
    for (slot, raw) in fields.iter_mut().zip(row.iter()) {
        *slot = std::str::from_utf8(raw)
            .map_err(|_| RejectReason::InvalidUtf8)?
            .trim();
    }
    let [record_id, ticket_id, card_id, station_id, gate_id, event_kind, timestamp, origin, destination, medium] =
        fields;

    let required = |v: &str, reason| {
        if v.is_empty() {
            Err(reason)
        } else {
            Ok(v.to_string())
        }
    };
    let optional = |v: &str| (!v.is_empty()).then(|| v.to_string());

    let record_id = required(record_id, RejectReason::MissingRecordId)?;
    let ticket_id = required(ticket_id, RejectReason::MissingTicketId)?;
    let station_id = required(station_id, RejectReason::MissingStation)?;
    if event_kind.is_empty() {
        return Err(RejectReason::MissingEventKind);
    }
    let event_kind = event_kind
        .parse::<EventKind>()
        .map_err(|_| RejectReason::BadEventKind)?;
    if timestamp.is_empty() {
        return Err(RejectReason::MissingTimestamp);
    }
    let timestamp = parse_timestamp(timestamp, schema.timezone).ok_or(RejectReason::BadTimestamp)?;
    let declared_origin = required(origin, RejectReason::MissingDeclaration)?;
    let declared_destination = required(destination, RejectReason::MissingDeclaration)?;
    let medium = medium.parse::<Medium>().map_err(|_| RejectReason::BadMedium)?;

    Ok(RawTapRecord {
        line,
        record_id,
        ticket_id,
        card_id: optional(card_id),
        station_id,
        gate_id: optional(gate_id),
        event_kind,
        timestamp,
        declared_origin,
        declared_destination,
        medium,
    })
}

/// Accepts RFC 3339 timestamps, or naive `YYYY-MM-DDTHH:MM:SS` /
/// `YYYY-MM-DD HH:MM:SS` interpreted in `tz`. Sub-second parts are dropped.
pub fn parse_timestamp(s: &str, tz: FixedOffset) -> Option<DateTime<Utc>> {
    use chrono::Timelike;

    let utc = if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        dt.with_timezone(&Utc)
    } else {
        let naive = NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S%.f")
            .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S%.f"))
            .ok()?;
        tz.from_local_datetime(&naive).single()?.with_timezone(&Utc)
    };
    utc.with_nanosecond(0)
}

pub fn format_timestamp(ts: &DateTime<Utc>) -> String {
    ts.format(TIMESTAMP_FORMAT).to_string()
}

/// What to do with a station string that is neither a known alias nor a
/// canonical id.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnknownPolicy {
    Reject,
    #[default]
    PassThrough,
}

impl FromStr for UnknownPolicy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "reject" => Ok(UnknownPolicy::Reject),
            "pass_through" | "passthrough" => Ok(UnknownPolicy::PassThrough),
            other => Err(format!("unknown policy `{other}`")),
        }
    }
}

/// Raw station string -> canonical station id.
#[derive(Debug, Clone, Default)]
pub struct StationAliasMap {
    aliases: HashMap<String, String>,
    canonical: HashSet<String>,
    pub unknown_policy: UnknownPolicy,
}

impl StationAliasMap {
    pub fn new(unknown_policy: UnknownPolicy) -> Self {
        Self {
            unknown_policy,
            ..Self::default()
        }
    }

    /// Adds `raw -> canonical`. A raw id may only ever map to one canonical id.
    pub fn insert(&mut self, raw: &str, canonical: &str) -> Result<()> {
        let (raw, canonical) = (raw.trim(), canonical.trim());
        if raw.is_empty() || canonical.is_empty() {
            return Err(Error::InvalidConfig("empty station alias".into()));
        }
        if let Some(prev) = self.aliases.get(raw) {
            if prev != canonical {
                return Err(Error::InvalidConfig(format!(
                    "alias `{raw}` maps to both `{prev}` and `{canonical}`"
                )));
            }
            return Ok(());
        }
        self.aliases.insert(raw.to_string(), canonical.to_string());
        self.canonical.insert(canonical.to_string());
        Ok(())
    }

    /// Reads a two-column `raw_id,canonical_id` CSV with header.
    pub fn from_csv<R: Read>(reader: R, unknown_policy: UnknownPolicy) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.len() != 2 || &headers[0] != "raw_id" || &headers[1] != "canonical_id" {
            return Err(Error::MalformedHeader(format!(
                "alias map header must be `raw_id,canonical_id`, found `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut map = Self::new(unknown_policy);
        for row in rdr.records() {
            let row = row?;
            if row.len() != 2 {
                return Err(Error::InvalidConfig(format!(
                    "alias map line {} has {} fields",
                    row.position().map_or(0, |p| p.line()),
                    row.len()
                )));
            }
            map.insert(&row[0], &row[1])?;
        }
        Ok(map)
    }

    pub fn from_path(path: &Path, unknown_policy: UnknownPolicy) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::file(path, e))?;
        Self::from_csv(std::io::BufReader::new(file), unknown_policy)
    }

    /// Canonical id for `raw`, or `None` if unknown. Canonical ids resolve to
    /// themselves, which makes normalization idempotent.
    pub fn resolve<'a>(&'a self, raw: &'a str) -> Option<&'a str> {
        if let Some(c) = self.aliases.get(raw) {
            Some(c)
        } else if self.canonical.contains(raw) {
            Some(raw)
        } else {
            None
        }
    }

    pub fn len(&self) -> usize {
        self.aliases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.aliases.is_empty()
    }
}

/// Rewrites every station field to its canonical id.
pub fn normalize_station_ids(
    records: Vec<RawTapRecord>,
    map: &StationAliasMap,
) -> (Vec<RawTapRecord>, Vec<RejectRecord>) {
    let mut kept = Vec::with_capacity(records.len());
    let mut rejects = Vec::new();
    'records: for mut rec in records {
        for field in [
            &mut rec.station_id,
            &mut rec.declared_origin,
            &mut rec.declared_destination,
        ] {
            match map.resolve(field) {
                Some(c) if c == field.as_str() => {}
                Some(c) => *field = c.to_string(),
                None => match map.unknown_policy {
                    UnknownPolicy::PassThrough => {}
                    UnknownPolicy::Reject => {
                        rejects.push(RejectRecord::new(rec.line, RejectReason::UnknownStation));
                        continue 'records;
                    }
                },
            }
        }
        kept.push(rec);
    }
    (kept, rejects)
}

/// A single observed gate event on a journey.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Tap {
    pub station: String,
    pub at: DateTime<Utc>,
}

/// One ticket with its declared endpoints and observed taps.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TicketJourney {
    pub ticket_id: String,
    pub card_id: Option<String>,
    pub declared_origin: String,
    pub declared_destination: String,
    pub entry_tap: Option<Tap>,
    pub exit_tap: Option<Tap>,
    /// More than one entry or more than one exit was seen.
    pub tap_multiplicity_flag: bool,
    pub service_day: NaiveDate,
}

impl TicketJourney {
    pub fn completeness(&self) -> Completeness {
        match (&self.entry_tap, &self.exit_tap) {
            (Some(_), Some(_)) => Completeness::Complete,
            (Some(_), None) => Completeness::EntryOnly,
            (None, Some(_)) => Completeness::ExitOnly,
            (None, None) => Completeness::NoTaps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Completeness {
    Complete,
    EntryOnly,
    ExitOnly,
    NoTaps,
}

#[derive(Default)]
struct TicketBuilder {
    first_line: u64,
    card_id: Option<String>,
    declaration: Option<(String, String)>,
    inconsistent: bool,
    entry: Option<(DateTime<Utc>, String)>,
    exit: Option<(DateTime<Utc>, String)>,
    n_entries: u32,
    n_exits: u32,
}

/// Groups taps into one [`TicketJourney`] per ticket, sorted by ticket id.
///
/// The earliest entry and latest exit are kept; ties on timestamp go to the
/// lexicographically smallest station so the result does not depend on
/// record order.
pub fn assemble_tickets(records: Vec<RawTapRecord>) -> (Vec<TicketJourney>, Vec<RejectRecord>) {
    let mut tickets: HashMap<String, TicketBuilder> = HashMap::new();
    for rec in records {
        let b = tickets.entry(rec.ticket_id).or_insert_with(|| TicketBuilder {
            first_line: rec.line,
            ..TicketBuilder::default()
        });
        b.first_line = b.first_line.min(rec.line);
        if let Some(card) = rec.card_id {
            if b.card_id.as_ref().is_none_or(|c| card < *c) {
                b.card_id = Some(card);
            }
        }
        match &b.declaration {
            None => b.declaration = Some((rec.declared_origin, rec.declared_destination)),
            Some((o, d)) => {
                if *o != rec.declared_origin || *d != rec.declared_destination {
                    b.inconsistent = true;
                }
            }
        }
        let candidate = (rec.timestamp, rec.station_id);
        match rec.event_kind {
            EventKind::Entry => {
                b.n_entries += 1;
                if b.entry.as_ref().is_none_or(|cur| candidate < *cur) {
                    b.entry = Some(candidate);
                }
            }
            EventKind::Exit => {
                b.n_exits += 1;
                // latest timestamp, smallest station on ties
                let better = b.exit.as_ref().is_none_or(|(t, s)| {
                    candidate.0 > *t || (candidate.0 == *t && candidate.1 < *s)
                });
                if better {
                    b.exit = Some(candidate);
                }
            }
        }
    }

    let mut ids: Vec<String> = tickets.keys().cloned().collect();
    ids.sort_unstable();
    let mut journeys = Vec::with_capacity(ids.len());
    let mut rejects = Vec::new();
    for id in ids {
        let b = tickets.remove(&id).expect("key from map");
        let line = b.first_line;
        let Some((origin, destination)) = b.declaration else {
            rejects.push(RejectRecord::new(line, RejectReason::NoTaps));
            continue;
        };
        if b.inconsistent || origin == destination {
            rejects.push(RejectRecord::new(line, RejectReason::InconsistentDeclaration));
            continue;
        }
        let earliest = match (&b.entry, &b.exit) {
            (Some((e, _)), Some((x, _))) => {
                if e > x {
                    rejects.push(RejectRecord::new(line, RejectReason::TapsOutOfOrder));
                    continue;
                }
                *e
            }
            (Some((e, _)), None) => *e,
            (None, Some((x, _))) => *x,
            (None, None) => {
                rejects.push(RejectRecord::new(line, RejectReason::NoTaps));
                continue;
            }
        };
        journeys.push(TicketJourney {
            ticket_id: id,
            card_id: b.card_id,
            declared_origin: origin,
            declared_destination: destination,
            entry_tap: b.entry.map(|(at, station)| Tap { station, at }),
            exit_tap: b.exit.map(|(at, station)| Tap { station, at }),
            tap_multiplicity_flag: b.n_entries > 1 || b.n_exits > 1,
            service_day: earliest.date_naive(),
        });
    }
    rejects.sort();
    (journeys, rejects)
}

/// Closed interval of service days.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateWindow {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateWindow {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self> {
        if start > end {
            return Err(Error::InvalidWindow(format!("{start} is after {end}")));
        }
        Ok(Self { start, end })
    }

    pub fn contains(&self, day: NaiveDate) -> bool {
        self.start <= day && day <= self.end
    }
}

/// Keeps journeys whose service day lies in the closed window, preserving order.
pub fn filter_window(journeys: Vec<TicketJourney>, window: DateWindow) -> Result<Vec<TicketJourney>> {
    let window = DateWindow::new(window.start, window.end)?;
    Ok(journeys
        .into_iter()
        .filter(|j| window.contains(j.service_day))
        .collect())
}

/// Writes rejects as `line,reason`.
pub fn write_rejects<W: Write>(writer: W, rejects: &[RejectRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["line", "reason"])?;
    for r in rejects {
        w.write_record([r.line.to_string(), r.reason.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Borrowed view of one tap row, used when emitting tap CSVs.
#[derive(Debug, Clone, Copy)]
pub struct TapRow<'a> {
    pub record_id: &'a str,
    pub ticket_id: &'a str,
    pub card_id: Option<&'a str>,
    pub station_id: &'a str,
    pub gate_id: Option<&'a str>,
    pub event_kind: EventKind,
    pub timestamp: DateTime<Utc>,
    pub declared_origin: &'a str,
    pub declared_destination: &'a str,
    pub medium: Medium,
}

impl<'a> From<&'a RawTapRecord> for TapRow<'a> {
    fn from(r: &'a RawTapRecord) -> Self {
        TapRow {
            record_id: &r.record_id,
            ticket_id: &r.ticket_id,
            card_id: r.card_id.as_deref(),
            station_id: &r.station_id,
            gate_id: r.gate_id.as_deref(),
            event_kind: r.event_kind,
            timestamp: r.timestamp,
            declared_origin: &r.declared_origin,
            declared_destination: &r.declared_destination,
            medium: r.medium,
        }
    }
}

/// Streams tap rows in the ingest CSV format.
pub struct TapWriter<W: Write> {
    inner: csv::Writer<W>,
    rows: u64,
}

impl<W: Write> TapWriter<W> {
    pub fn new(writer: W) -> Result<Self> {
        let mut inner = csv::Writer::from_writer(writer);
        inner.write_record(TAP_HEADER)?;
        Ok(Self { inner, rows: 0 })
    }

    pub fn write(&mut self, row: &TapRow<'_>) -> Result<()> {
        let ts = format_timestamp(&row.timestamp);
        self.inner.write_record([
            row.record_id,
            row.ticket_id,
            row.card_id.unwrap_or(""),
            row.station_id,
            row.gate_id.unwrap_or(""),
            row.event_kind.as_str(),
            &ts,
            row.declared_origin,
            row.declared_destination,
            row.medium.as_str(),
        ])?;
        self.rows += 1;
        Ok(())
    }

    /// Data rows written so far (header excluded).
    pub fn rows(&self) -> u64 {
        self.rows
    }

    pub fn finish(mut self) -> Result<W> {
        self.inner.flush()?;
        self.inner
            .into_inner()
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
    }
}
