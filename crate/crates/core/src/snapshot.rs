//! Calendar-time views of a trial with administrative censoring.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{arg, Error, Result};
use crate::record::{PatientRecord, StageTwo};

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisSnapshot {
    pub cutoff: f64,
    pub records: Vec<PatientRecord>,
    pub n: usize,
    pub events: usize,
    /// Events in this snapshot over events in the full data it was cut from.
    pub info_fraction: f64,
}

impl AnalysisSnapshot {
    /// Full data treated as the final analysis (no administrative censoring).
    pub fn full(records: &[PatientRecord]) -> Result<Self> {
        snapshot(records, f64::INFINITY)
    }
}

/// Data visible at calendar time `t_cal`.
///
/// A quantity recorded at study time `x` is visible iff `enroll_time + x <= t_cal`.
pub fn snapshot(records: &[PatientRecord], t_cal: f64) -> Result<AnalysisSnapshot> {
    if t_cal.is_nan() {
        return Err(arg("cutoff must not be NaN"));
    }
    let total_events = records.iter().filter(|r| r.delta).count();
    let mut kept = Vec::with_capacity(records.len());
    for r in records.iter().filter(|r| r.enroll_time <= t_cal) {
        let visible = |x: f64| r.enroll_time + x <= t_cal;
        let mut rec = r.clone();
        if !visible(r.u) {
            rec.u = t_cal - r.enroll_time;
            rec.delta = false;
        }
        rec.stage_two = match r.stage_two {
            StageTwo::Reached { t1, .. } if visible(t1) => r.stage_two,
            StageTwo::Reached { .. } => StageTwo::Unknown,
            // eta = 0 is only learned from the stage-one death itself.
            StageTwo::NotReached if rec.delta => StageTwo::NotReached,
            StageTwo::NotReached => StageTwo::Unknown,
            StageTwo::Unknown => StageTwo::Unknown,
        };
        kept.push(rec);
    }
    if kept.is_empty() {
        return Err(Error::EmptySnapshot(t_cal));
    }
    let events = kept.iter().filter(|r| r.delta).count();
    let info_fraction = if total_events == 0 {
        0.0
    } else {
        events as f64 / total_events as f64
    };
    Ok(AnalysisSnapshot { cutoff: t_cal, n: kept.len(), records: kept, events, info_fraction })
}

/// Smallest calendar time at which `ceil(fraction * total events)` events are visible.
pub fn find_interim_time(records: &[PatientRecord], fraction: f64) -> Result<f64> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(arg(format!("information fraction must lie in (0,1), got {fraction}")));
    }
    let mut times: Vec<f64> = records
        .iter()
        .filter(|r| r.delta)
        .map(|r| r.enroll_time + r.u)
        .collect();
    if times.is_empty() {
        return Err(Error::InsufficientData("no events in the full data".into()));
    }
    times.sort_by(f64::total_cmp);
    let target = libm::ceil(fraction * times.len() as f64) as usize;
    Ok(times[target.clamp(1, times.len()) - 1])
}
