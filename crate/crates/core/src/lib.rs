//! Unsupervised short-ticketing detection for railway tap data.
//!
//! The pipeline runs in fixed stages:
//!
//! 1. [`ingest`] parses raw gate taps, normalizes station ids and assembles
//!    one [`ingest::TicketJourney`] per ticket.
//! 2. [`roles`] assigns Actual-entry / declared-unused-destination /
//!    declared-unused-origin / Actual-exit roles (A/B/C/D) to stations and
//!    tallies them per station.
//! 3. [`features`] turns the tallies into a 17-column station feature matrix.
//! 4. [`detectors`] scores every station with Isolation Forest, LOF,
//!    One-Class SVM and shrunk-covariance Mahalanobis distance.
//! 5. [`ensemble`] fuses the four rankings with correlation-adaptive weights
//!    into a single 0-1 anomaly score.
//! 6. [`taxonomy`] labels high-scoring stations with a fraud archetype.
//!
//! [`synthgen`] produces labelled synthetic networks for validation and
//! [`report`] wires everything together and writes the run artifacts.

pub mod detectors;
pub mod ensemble;
pub mod error;
pub mod features;
pub mod ingest;
pub mod report;
pub mod roles;
pub mod synthgen;
pub mod taxonomy;

pub use error::{Error, Result};
