//! Interim decisions, operating characteristics and regime survival curves.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::boundaries::{BoundaryMethod, BoundarySet};
use crate::covariance::{influence_vectors, sigma_hat};
use crate::design::{Dtr, SmartDesign};
use crate::error::{arg, Error, Result};
use crate::processes::EventGrid;
use crate::record::PatientRecord;
use crate::sim::{generate_trial, ScenarioConfig};
use crate::snapshot::{find_interim_time, snapshot, AnalysisSnapshot};
use crate::stats::{wald_statistic, StatKind, TestSummary};

/// Contrast vector, linearization covariance and Wald summary for one snapshot.
pub fn analyze_snapshot(snap: &AnalysisSnapshot, design: &SmartDesign, kind: StatKind, tol: f64) -> Result<TestSummary> {
    design.validate()?;
    if snap.events == 0 {
        return Err(Error::InsufficientData(format!("no events observed by t = {}", snap.cutoff)));
    }
    let inf = influence_vectors(snap, design, kind);
    let sigma = sigma_hat(&inf)?;
    wald_statistic(kind, &inf.total(), &sigma, snap.n, tol)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Verdict {
    StopForEfficacy,
    Continue,
    FinalReject,
    FinalAccept,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Decision {
    /// 1-based analysis number.
    pub analysis: usize,
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_inf"))]
    pub cutoff: f64,
    pub n: usize,
    pub events: usize,
    pub statistic: f64,
    pub df: usize,
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_inf"))]
    pub threshold: f64,
    pub verdict: Verdict,
}

/// Evaluates the analyses in order and stops at the first boundary crossing.
pub fn monitor(
    records: &[PatientRecord],
    design: &SmartDesign,
    kind: StatKind,
    thresholds: &[f64],
    times: &[f64],
    tol: f64,
) -> Result<Vec<Decision>> {
    if thresholds.len() != times.len() || times.is_empty() {
        return Err(arg(format!("{} thresholds for {} analysis times", thresholds.len(), times.len())));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(arg("analysis times must be strictly increasing"));
    }
    let last = times.len() - 1;
    let mut out = Vec::with_capacity(times.len());
    for (m, (&t, &b)) in times.iter().zip(thresholds).enumerate() {
        let snap = snapshot(records, t)?;
        let summary = analyze_snapshot(&snap, design, kind, tol)?;
        let reject = summary.t_value > b;
        let verdict = match (reject, m == last) {
            (true, false) => Verdict::StopForEfficacy,
            (false, false) => Verdict::Continue,
            (true, true) => Verdict::FinalReject,
            (false, true) => Verdict::FinalAccept,
        };
        out.push(Decision {
            analysis: m + 1,
            cutoff: t,
            n: snap.n,
            events: snap.events,
            statistic: summary.t_value,
            df: summary.df,
            threshold: b,
            verdict,
        });
        if reject {
            break;
        }
    }
    Ok(out)
}

/// SplitMix64 finalizer, used to derive replicate seeds from a master seed.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn replicate_seed(seed: u64, index: usize) -> u64 {
    splitmix64(seed ^ splitmix64(index as u64))
}

/// Outcome of one simulated monitored trial.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateOutcome {
    pub decisions: Vec<Decision>,
    /// Analysis at which the trial stopped for efficacy before the final one.
    pub stopped_at: Option<usize>,
    pub final_reject: bool,
    pub n_used: usize,
}

/// Simulates one trial and monitors it with interim looks at the given event fractions
/// followed by a final analysis of the complete data.
pub fn run_replicate(
    config: &ScenarioConfig,
    boundaries: &BoundarySet,
    kind: StatKind,
    info: &[f64],
    seed: u64,
    tol: f64,
) -> Result<ReplicateOutcome> {
    if boundaries.thresholds.len() != info.len() + 1 {
        return Err(arg(format!(
            "{} thresholds for {} interim looks plus the final analysis",
            boundaries.thresholds.len(),
            info.len()
        )));
    }
    let records = generate_trial(config, seed)?;
    let mut times = Vec::with_capacity(info.len() + 1);
    for &f in info {
        times.push(find_interim_time(&records, f)?);
    }
    times.push(f64::INFINITY);
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InsufficientData("interim looks coincide; too few events".into()));
    }
    let decisions = monitor(&records, &config.design, kind, &boundaries.thresholds, &times, tol)?;
    let last = decisions.last().expect("monitor returns at least one decision");
    let stopped_at = (last.verdict == Verdict::StopForEfficacy).then_some(last.analysis);
    Ok(ReplicateOutcome {
        stopped_at,
        final_reject: last.verdict == Verdict::FinalReject,
        n_used: if stopped_at.is_some() { last.n } else { config.n },
        decisions,
    })
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OcReport {
    pub scenario: String,
    pub method: BoundaryMethod,
    pub kind: StatKind,
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_inf::seq"))]
    pub thresholds: Vec<f64>,
    pub info: Vec<f64>,
    pub replicates: usize,
    pub seed: u64,
    pub planned_n: usize,
    pub rej_interim: f64,
    /// Conditional on reaching the final analysis.
    pub rej_final: f64,
    pub overall: f64,
    pub expected_n: f64,
    pub se_rej_interim: f64,
    pub se_rej_final: f64,
    pub se_overall: f64,
    pub se_expected_n: f64,
}

fn binomial_se(p: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        libm::sqrt(p * (1.0 - p) / n as f64)
    }
}

/// Aggregates replicate outcomes in the order given.
pub fn tally(
    config: &ScenarioConfig,
    boundaries: &BoundarySet,
    kind: StatKind,
    info: &[f64],
    seed: u64,
    outcomes: &[ReplicateOutcome],
) -> Result<OcReport> {
    let reps = outcomes.len();
    if reps == 0 {
        return Err(arg("no replicates"));
    }
    let stopped = outcomes.iter().filter(|o| o.stopped_at.is_some()).count();
    let continuing = reps - stopped;
    let final_rej = outcomes.iter().filter(|o| o.final_reject).count();
    let rej_interim = stopped as f64 / reps as f64;
    let rej_final = if continuing == 0 { 0.0 } else { final_rej as f64 / continuing as f64 };
    let overall = (stopped + final_rej) as f64 / reps as f64;
    let ns: Vec<f64> = outcomes.iter().map(|o| o.n_used as f64).collect();
    let expected_n = ns.iter().sum::<f64>() / reps as f64;
    let var_n = if reps > 1 {
        ns.iter().map(|x| (x - expected_n) * (x - expected_n)).sum::<f64>() / (reps - 1) as f64
    } else {
        0.0
    };
    Ok(OcReport {
        scenario: config.label.clone(),
        method: boundaries.method,
        kind,
        thresholds: boundaries.thresholds.clone(),
        info: info.to_vec(),
        replicates: reps,
        seed,
        planned_n: config.n,
        rej_interim,
        rej_final,
        overall,
        expected_n,
        se_rej_interim: binomial_se(rej_interim, reps),
        se_rej_final: binomial_se(rej_final, continuing),
        se_overall: binomial_se(overall, reps),
        se_expected_n: libm::sqrt(var_n / reps as f64),
    })
}

/// Minimum replicate count accepted by [`operating_characteristics`].
pub const MIN_REPLICATES: usize = 100;

/// Sequential operating characteristics; replicate `i` uses [`replicate_seed`]`(seed, i)`.
pub fn operating_characteristics(
    config: &ScenarioConfig,
    boundaries: &BoundarySet,
    kind: StatKind,
    info: &[f64],
    reps: usize,
    seed: u64,
    tol: f64,
) -> Result<OcReport> {
    if reps < MIN_REPLICATES {
        return Err(arg(format!("at least {MIN_REPLICATES} replicates are required, got {reps}")));
    }
    let outcomes = (0..reps)
        .map(|i| {
            run_replicate(config, boundaries, kind, info, replicate_seed(seed, i), tol)
                .map_err(|e| replicate_error(i, e))
        })
        .collect::<Result<Vec<_>>>()?;
    tally(config, boundaries, kind, info, seed, &outcomes)
}

/// Attaches the replicate index to a failure.
pub fn replicate_error(index: usize, e: Error) -> Error {
    match e {
        Error::InsufficientData(m) => Error::InsufficientData(format!("replicate {index}: {m}")),
        Error::EmptySnapshot(t) => Error::InsufficientData(format!("replicate {index}: no patients enrolled by t = {t}")),
        other => other,
    }
}

/// Weighted product-limit survival curve of one regime.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SurvivalCurve {
    pub dtr: Dtr,
    /// Times at which the curve drops.
    pub times: Vec<f64>,
    /// Survival just after each time in `times`.
    pub survival: Vec<f64>,
    /// First time the curve is at or below one half.
    pub median: Option<f64>,
}

impl SurvivalCurve {
    pub fn at(&self, t: f64) -> f64 {
        match self.times.partition_point(|&s| s <= t) {
            0 => 1.0,
            k => self.survival[k - 1],
        }
    }

    /// Cumulative hazard `-ln S(t)`.
    pub fn cumulative_hazard(&self, t: f64) -> f64 {
        -libm::log(self.at(t))
    }
}

pub fn survival_curves(snap: &AnalysisSnapshot, design: &SmartDesign) -> Result<Vec<SurvivalCurve>> {
    design.validate()?;
    let grid = EventGrid::build(snap, design);
    let mut out = Vec::with_capacity(grid.dtrs.len());
    for (d, &dtr) in grid.dtrs.iter().enumerate() {
        let mut s = 1.0;
        let mut times = Vec::new();
        let mut survival = Vec::new();
        let mut median = None;
        for (k, &t) in grid.times.iter().enumerate() {
            let (dn, y) = (grid.dnbar[d][k], grid.ybar[d][k]);
            if dn == 0.0 {
                continue;
            }
            if !(y > 0.0) {
                return Err(Error::Numerical(format!("weighted events at t = {t} with an empty weighted risk set")));
            }
            s *= 1.0 - dn / y;
            times.push(t);
            survival.push(s);
            if median.is_none() && s <= 0.5 {
                median = Some(t);
            }
        }
        out.push(SurvivalCurve { dtr, times, survival, median });
    }
    Ok(out)
}
