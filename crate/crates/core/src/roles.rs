//! A/B/C/D role assignment and per-station role tallies.
//!
//! * `A` actual entry: the ticket was tapped in at the station.
//! * `B` declared destination never used: no exit tap at the declared destination.
//! * `C` declared origin never used: no entry tap at the declared origin.
//! * `D` actual exit: the ticket was tapped out at the station.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::ingest::{Completeness, TicketJourney};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    A,
    B,
    C,
    D,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Identifies "the same passenger on the same day": the card when known,
/// otherwise the ticket itself.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct OverlapKey {
    pub holder: String,
    pub day: NaiveDate,
}

impl OverlapKey {
    pub fn for_journey(journey: &TicketJourney) -> Self {
        Self {
            holder: journey
                .card_id
                .clone()
                .unwrap_or_else(|| journey.ticket_id.clone()),
            day: journey.service_day,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoleAssignment<'a> {
    pub ticket_id: &'a str,
    pub station: &'a str,
    pub role: Role,
}

/// Roles one journey contributes.
///
/// An entry away from the declared origin yields both `A` at the entry
/// station and `C` at the declared origin; exits mirror this with `D`/`B`.
pub fn assign_roles<'a>(journey: &'a TicketJourney) -> Vec<RoleAssignment<'a>> {
    let ticket_id = journey.ticket_id.as_str();
    let mut out = Vec::with_capacity(3);
    let mut push = |station: &'a str, role| {
        out.push(RoleAssignment {
            ticket_id,
            station,
            role,
        })
    };
    let origin = journey.declared_origin.as_str();
    let destination = journey.declared_destination.as_str();
    match &journey.entry_tap {
        Some(tap) => {
            push(&tap.station, Role::A);
            if tap.station != origin {
                push(origin, Role::C);
            }
        }
        None => push(origin, Role::C),
    }
    match &journey.exit_tap {
        Some(tap) => {
            push(&tap.station, Role::D);
            if tap.station != destination {
                push(destination, Role::B);
            }
        }
        None => push(destination, Role::B),
    }
    out
}

/// Role tallies for one station.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StationRoleCounts {
    pub station: String,
    pub count_a: u64,
    pub count_b: u64,
    pub count_c: u64,
    pub count_d: u64,
    pub keys_b: HashSet<OverlapKey>,
    pub keys_c: HashSet<OverlapKey>,
    /// Tapping tickets bucketed by journey completeness.
    pub entry_only_touch: u64,
    pub exit_only_touch: u64,
    pub complete_touch: u64,
}

impl StationRoleCounts {
    pub fn new(station: impl Into<String>) -> Self {
        Self {
            station: station.into(),
            ..Self::default()
        }
    }

    pub fn total(&self) -> u64 {
        self.count_a + self.count_b + self.count_c + self.count_d
    }

    pub fn touches(&self) -> u64 {
        self.entry_only_touch + self.exit_only_touch + self.complete_touch
    }

    pub fn count(&self, role: Role) -> u64 {
        match role {
            Role::A => self.count_a,
            Role::B => self.count_b,
            Role::C => self.count_c,
            Role::D => self.count_d,
        }
    }

    /// Monoid merge: counts add, key sets union.
    pub fn merge(&mut self, other: StationRoleCounts) {
        debug_assert_eq!(self.station, other.station);
        self.count_a += other.count_a;
        self.count_b += other.count_b;
        self.count_c += other.count_c;
        self.count_d += other.count_d;
        self.keys_b.extend(other.keys_b);
        self.keys_c.extend(other.keys_c);
        self.entry_only_touch += other.entry_only_touch;
        self.exit_only_touch += other.exit_only_touch;
        self.complete_touch += other.complete_touch;
    }
}

/// Incremental role accumulator. Feed journeys with [`RoleLedger::add`].
#[derive(Debug, Clone, Default)]
pub struct RoleLedger {
    stations: BTreeMap<String, StationRoleCounts>,
}

impl RoleLedger {
    pub fn new() -> Self {
        Self::default()
    }

    fn slot(&mut self, station: &str) -> &mut StationRoleCounts {
        if !self.stations.contains_key(station) {
            self.stations
                .insert(station.to_string(), StationRoleCounts::new(station));
        }
        self.stations.get_mut(station).expect("inserted above")
    }

    pub fn add(&mut self, journey: &TicketJourney) {
        let key = OverlapKey::for_journey(journey);
        for a in assign_roles(journey) {
            let s = self.slot(a.station);
            match a.role {
                Role::A => s.count_a += 1,
                Role::B => {
                    s.count_b += 1;
                    s.keys_b.insert(key.clone());
                }
                Role::C => {
                    s.count_c += 1;
                    s.keys_c.insert(key.clone());
                }
                Role::D => s.count_d += 1,
            }
        }

        let entry = journey.entry_tap.as_ref().map(|t| t.station.as_str());
        let exit = journey.exit_tap.as_ref().map(|t| t.station.as_str());
        let mut touched: Vec<&str> = entry.into_iter().chain(exit).collect();
        touched.dedup();
        let completeness = journey.completeness();
        for station in touched {
            let s = self.slot(station);
            match completeness {
                Completeness::Complete => s.complete_touch += 1,
                Completeness::EntryOnly => s.entry_only_touch += 1,
                Completeness::ExitOnly => s.exit_only_touch += 1,
                Completeness::NoTaps => {}
            }
        }
    }

    pub fn merge(&mut self, other: RoleLedger) {
        for (station, counts) in other.stations {
            match self.stations.get_mut(&station) {
                Some(mine) => mine.merge(counts),
                None => {
                    self.stations.insert(station, counts);
                }
            }
        }
    }

    pub fn into_counts(self) -> BTreeMap<String, StationRoleCounts> {
        self.stations
    }
}

/// Tallies roles over all journeys, keyed by station.
pub fn accumulate<'a, I>(journeys: I) -> BTreeMap<String, StationRoleCounts>
where
    I: IntoIterator<Item = &'a TicketJourney>,
{
    let mut ledger = RoleLedger::new();
    for j in journeys {
        ledger.add(j);
    }
    ledger.into_counts()
}

/// Debug dump as `ticket_id,station,role,key_card,key_day`.
pub fn write_role_dump<'a, W, I>(writer: W, journeys: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a TicketJourney>,
{
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["ticket_id", "station", "role", "key_card", "key_day"])?;
    for j in journeys {
        let key = OverlapKey::for_journey(j);
        let day = key.day.to_string();
        for a in assign_roles(j) {
            w.write_record([a.ticket_id, a.station, &a.role.to_string(), &key.holder, &day])?;
        }
    }
    w.flush()?;
    Ok(())
}
