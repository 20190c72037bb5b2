//! Interim monitoring of sequential multiple assignment randomized trials
//! (SMARTs) with right-censored survival outcomes.
//!
//! Inverse-probability weighting recovers regime-specific counting processes
//! from the randomized cohort; weighted log-rank (`Lr`) and treatment-difference
//! (`Td`) contrasts are combined into Wald statistics and monitored against
//! group-sequential boundaries built from the joint null distribution across
//! analyses.

#![cfg_attr(not(feature = "std"), no_std)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod boundaries;
pub mod covariance;
pub mod design;
pub mod distributions;
pub mod error;
pub mod linalg;
pub mod monitor;
pub mod processes;
pub mod record;
#[cfg(feature = "serde")]
pub mod serde_inf;
pub mod sim;
pub mod snapshot;
pub mod stats;
pub mod weights;

pub use design::{Arm, DesignKind, Dtr, SmartDesign};
pub use error::{Error, Result};
pub use record::{FlatRecord, PatientRecord, Response, StageTwo};
pub use snapshot::{find_interim_time, snapshot, AnalysisSnapshot};
pub use stats::{StatKind, TestSummary};
