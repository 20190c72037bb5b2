//! Hand-built instances and a direct-summation reference implementation.
//!
//! Everything here is deliberately naive: weights straight from their
//! definition, processes by looping over patients at every event time.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use smartim_core::{Arm, DesignKind, Dtr, PatientRecord, Response, SmartDesign, StageTwo};

pub const TOL: f64 = 1e-10;

pub fn arm(i: u8) -> Arm {
    Arm::try_from(i).unwrap()
}

pub fn rec(id: u64, enroll: f64, a: u8, stage_two: StageTwo, u: f64, delta: bool) -> PatientRecord {
    PatientRecord { id, enroll_time: enroll, arm: arm(a), stage_two, u, delta, latent: None }
}

pub fn responder(t1: f64, b: u8) -> StageTwo {
    StageTwo::Reached { t1, response: Response::Responder { maintenance: arm(b) } }
}

pub fn non_responder(t1: f64, c: Option<u8>) -> StageTwo {
    StageTwo::Reached { t1, response: Response::NonResponder { salvage: c.map(arm) } }
}

pub fn oracle_weight(design: &SmartDesign, dtr: Dtr, p: &PatientRecord, s: f64) -> f64 {
    let j = p.arm.index();
    if p.arm != dtr.initial {
        return 0.0;
    }
    let first = 1.0 / design.ell[j];
    match p.stage_two {
        StageTwo::Reached { t1, response } if s >= t1 => match response {
            Response::Responder { maintenance } => {
                if maintenance == dtr.maintenance {
                    first / design.p[maintenance.index()]
                } else {
                    0.0
                }
            }
            Response::NonResponder { salvage: Some(c) } => {
                if Some(c) == dtr.salvage {
                    first / design.q.unwrap()[c.index()]
                } else {
                    0.0
                }
            }
            Response::NonResponder { salvage: None } => first,
        },
        _ => first,
    }
}

pub fn event_times(recs: &[PatientRecord]) -> Vec<f64> {
    let mut t: Vec<f64> = recs.iter().filter(|r| r.delta).map(|r| r.u).collect();
    t.sort_by(f64::total_cmp);
    t.dedup();
    t
}

fn at_risk(p: &PatientRecord, s: f64) -> f64 {
    if p.u >= s {
        1.0
    } else {
        0.0
    }
}

fn dn(p: &PatientRecord, s: f64) -> f64 {
    if p.delta && p.u == s {
        1.0
    } else {
        0.0
    }
}

pub fn ybar(design: &SmartDesign, dtr: Dtr, recs: &[PatientRecord], s: f64) -> f64 {
    recs.iter().map(|p| oracle_weight(design, dtr, p, s) * at_risk(p, s)).sum()
}

pub fn nbar(design: &SmartDesign, dtr: Dtr, recs: &[PatientRecord], s: f64) -> f64 {
    recs.iter().map(|p| oracle_weight(design, dtr, p, s) * dn(p, s)).sum()
}

fn non_reference(design: &SmartDesign) -> Vec<Dtr> {
    let r = design.reference();
    design.dtrs().into_iter().filter(|&d| d != r).collect()
}

/// Weighted log-rank contrasts written as `K (dNd/Yd - dNr/Yr)` with
/// `K = Yd Yr / (Yd + Yr)`.
pub fn oracle_lr(design: &SmartDesign, recs: &[PatientRecord]) -> DVector<f64> {
    let r = design.reference();
    let v: Vec<f64> = non_reference(design)
        .into_iter()
        .map(|d| {
            let mut z = 0.0;
            for s in event_times(recs) {
                let (yd, yr) = (ybar(design, d, recs, s), ybar(design, r, recs, s));
                if yd + yr == 0.0 || yd == 0.0 || yr == 0.0 {
                    continue;
                }
                let k = yd * yr / (yd + yr);
                z += k * (nbar(design, d, recs, s) / yd - nbar(design, r, recs, s) / yr);
            }
            z
        })
        .collect();
    DVector::from_vec(v)
}

fn td_hazard(design: &SmartDesign, recs: &[PatientRecord], s: f64) -> f64 {
    let dtrs = design.dtrs();
    let y: f64 = dtrs.iter().map(|&d| ybar(design, d, recs, s)).sum();
    let n: f64 = dtrs.iter().map(|&d| nbar(design, d, recs, s)).sum();
    if y > 0.0 {
        n / y
    } else {
        0.0
    }
}

/// Score vector as a sum over patients of weighted martingale residuals.
pub fn oracle_td(design: &SmartDesign, recs: &[PatientRecord]) -> DVector<f64> {
    let times = event_times(recs);
    let v: Vec<f64> = design
        .dtrs()
        .into_iter()
        .map(|d| {
            recs.iter()
                .map(|p| {
                    times
                        .iter()
                        .map(|&s| {
                            oracle_weight(design, d, p, s)
                                * (dn(p, s) - at_risk(p, s) * td_hazard(design, recs, s))
                        })
                        .sum::<f64>()
                })
                .sum()
        })
        .collect();
    DVector::from_vec(v)
}

/// One row per patient.
pub fn oracle_lr_influence(design: &SmartDesign, recs: &[PatientRecord]) -> DMatrix<f64> {
    let r = design.reference();
    let others = non_reference(design);
    let times = event_times(recs);
    DMatrix::from_fn(recs.len(), others.len(), |i, c| {
        let p = &recs[i];
        let d = others[c];
        let mut z = 0.0;
        for &s in &times {
            let (yd, yr) = (ybar(design, d, recs, s), ybar(design, r, recs, s));
            if yd + yr == 0.0 {
                continue;
            }
            let h = (yr * oracle_weight(design, d, p, s) - yd * oracle_weight(design, r, p, s)) / (yd + yr);
            let n_all: f64 = recs.iter().map(|q| dn(q, s)).sum();
            let y_all: f64 = recs.iter().map(|q| at_risk(q, s)).sum();
            z += h * (dn(p, s) - at_risk(p, s) * n_all / y_all);
        }
        z
    })
}

pub fn oracle_td_influence(design: &SmartDesign, recs: &[PatientRecord]) -> DMatrix<f64> {
    let dtrs = design.dtrs();
    let times = event_times(recs);
    DMatrix::from_fn(recs.len(), dtrs.len(), |i, c| {
        let p = &recs[i];
        let d = dtrs[c];
        let mut z = 0.0;
        for &s in &times {
            let pooled: f64 = dtrs.iter().map(|&e| ybar(design, e, recs, s)).sum();
            if pooled == 0.0 {
                continue;
            }
            let share = ybar(design, d, recs, s) / pooled;
            let w_all: f64 = dtrs.iter().map(|&e| oracle_weight(design, e, p, s)).sum();
            let h = oracle_weight(design, d, p, s) - share * w_all;
            z += h * (dn(p, s) - at_risk(p, s) * td_hazard(design, recs, s));
        }
        z
    })
}

pub fn oracle_sigma(influence: &DMatrix<f64>) -> DMatrix<f64> {
    let n = influence.nrows();
    let p = influence.ncols();
    DMatrix::from_fn(p, p, |a, b| (0..n).map(|i| influence[(i, a)] * influence[(i, b)]).sum::<f64>() / n as f64)
}

/// Wald form through an SVD pseudo-inverse.
pub fn oracle_wald(z: &DVector<f64>, sigma: &DMatrix<f64>, n: usize) -> (f64, usize) {
    let svd = sigma.clone().svd(true, true);
    let top = svd.singular_values.max();
    let cut = 1e-8 * top;
    let rank = svd.singular_values.iter().filter(|&&v| v > cut).count();
    let pinv = if top > 0.0 { svd.pseudo_inverse(cut).unwrap() } else { DMatrix::zeros(sigma.nrows(), sigma.ncols()) };
    ((z.transpose() * pinv * z)[(0, 0)] / n as f64, rank)
}

pub fn assert_close_vec(label: &str, got: &DVector<f64>, want: &DVector<f64>, tol: f64) {
    assert_eq!(got.len(), want.len(), "{label}: length");
    for i in 0..got.len() {
        assert!((got[i] - want[i]).abs() <= tol, "{label}[{i}]: {} vs {}", got[i], want[i]);
    }
}

pub fn assert_close_mat(label: &str, got: &DMatrix<f64>, want: &DMatrix<f64>, tol: f64) {
    assert_eq!(got.shape(), want.shape(), "{label}: shape");
    for (i, (a, b)) in got.iter().zip(want.iter()).enumerate() {
        assert!((a - b).abs() <= tol, "{label} entry {i}: {a} vs {b}");
    }
}

/// Six SMART2 patients with a tie, a stage-one death, and an event at another patient's `t1`.
pub fn smart2_six() -> (SmartDesign, Vec<PatientRecord>) {
    let recs = vec![
        rec(1, 0.0, 1, responder(0.5, 1), 2.0, true),
        rec(2, 0.0, 1, non_responder(0.7, None), 1.2, true),
        rec(3, 0.0, 2, responder(0.4, 2), 1.5, false),
        rec(4, 0.0, 2, StageTwo::NotReached, 0.8, true),
        rec(5, 0.0, 1, responder(0.3, 2), 1.2, true),
        rec(6, 0.0, 2, non_responder(0.8, None), 2.5, true),
    ];
    (SmartDesign::smart2_balanced(), recs)
}

/// Eight SMART1 patients covering every regime path, with ties at `t1`.
pub fn smart1_eight() -> (SmartDesign, Vec<PatientRecord>) {
    let recs = vec![
        rec(1, 0.0, 1, responder(0.5, 1), 1.0, true),
        rec(2, 0.0, 1, non_responder(0.5, Some(2)), 1.0, true),
        rec(3, 0.0, 1, responder(0.2, 2), 2.0, false),
        rec(4, 0.0, 1, StageTwo::NotReached, 0.5, true),
        rec(5, 0.0, 2, responder(1.0, 1), 3.0, true),
        rec(6, 0.0, 2, non_responder(0.6, Some(1)), 1.5, true),
        rec(7, 0.0, 2, non_responder(0.4, Some(2)), 0.9, false),
        rec(8, 0.0, 2, StageTwo::Unknown, 1.8, false),
    ];
    (SmartDesign::smart1_balanced(), recs)
}

/// Ten SMART1 patients under unequal randomization probabilities.
pub fn smart1_ten_unbalanced() -> (SmartDesign, Vec<PatientRecord>) {
    let design = SmartDesign {
        kind: DesignKind::Smart1,
        ell: [0.4, 0.6],
        p: [0.3, 0.7],
        q: Some([0.6, 0.4]),
        reference: None,
    };
    let recs = vec![
        rec(1, 0.0, 1, responder(0.3, 1), 0.9, true),
        rec(2, 0.0, 1, responder(0.4, 2), 1.6, true),
        rec(3, 0.0, 1, non_responder(0.2, Some(1)), 0.7, true),
        rec(4, 0.0, 1, non_responder(0.6, Some(2)), 2.2, false),
        rec(5, 0.0, 1, StageTwo::NotReached, 0.4, true),
        rec(6, 0.0, 2, responder(0.5, 1), 1.6, true),
        rec(7, 0.0, 2, responder(0.9, 2), 0.9, true),
        rec(8, 0.0, 2, non_responder(0.3, Some(1)), 1.1, true),
        rec(9, 0.0, 2, non_responder(0.7, Some(2)), 1.4, false),
        rec(10, 0.0, 2, StageTwo::NotReached, 0.2, true),
    ];
    (design, recs)
}

/// Nine SMART2 patients with staggered entry under unequal probabilities and
/// a non-default reference; meant to be cut at an interim calendar time.
pub fn smart2_nine_staggered() -> (SmartDesign, Vec<PatientRecord>) {
    let design = SmartDesign {
        kind: DesignKind::Smart2,
        ell: [0.65, 0.35],
        p: [0.45, 0.55],
        q: None,
        reference: Some(Dtr::smart2(Arm::Two, Arm::One)),
    };
    let recs = vec![
        rec(1, 0.0, 1, responder(0.5, 1), 1.4, true),
        rec(2, 0.2, 2, responder(0.3, 1), 2.1, true),
        rec(3, 0.4, 1, non_responder(0.6, None), 0.9, true),
        rec(4, 0.5, 2, non_responder(0.2, None), 1.0, true),
        rec(5, 0.9, 1, StageTwo::NotReached, 0.5, true),
        rec(6, 1.0, 2, responder(0.8, 2), 1.7, false),
        rec(7, 1.3, 1, responder(0.2, 2), 0.6, true),
        rec(8, 1.5, 2, StageTwo::NotReached, 0.4, true),
        rec(9, 1.8, 1, non_responder(0.1, None), 0.9, true),
    ];
    (design, recs)
}

pub fn design_strategy() -> impl Strategy<Value = SmartDesign> {
    let prob = || 0.2f64..0.8;
    (any::<bool>(), prob(), prob(), prob()).prop_map(|(one, l, p, q)| SmartDesign {
        kind: if one { DesignKind::Smart1 } else { DesignKind::Smart2 },
        ell: [l, 1.0 - l],
        p: [p, 1.0 - p],
        q: one.then_some([q, 1.0 - q]),
        reference: None,
    })
}

/// Times on a coarse grid so that ties, and events at other patients' `t1`, are common.
fn grid_time(k: u32) -> f64 {
    k as f64 * 0.25
}

fn patient_strategy() -> impl Strategy<Value = (u8, u8, u32, u32, u32, bool, u8, u8)> {
    (1u8..=2, 0u8..4, 0u32..8, 1u32..12, 0u32..12, any::<bool>(), 1u8..=2, 1u8..=2)
}

/// A valid cohort of 1..=max patients for `design`.
pub fn cohort_strategy(max: usize) -> impl Strategy<Value = (SmartDesign, Vec<PatientRecord>)> {
    design_strategy().prop_flat_map(move |design| {
        let kind = design.kind;
        proptest::collection::vec(patient_strategy(), 1..=max).prop_map(move |raw| {
            let recs = raw
                .into_iter()
                .enumerate()
                .map(|(i, (a, status, enroll, u, t1, delta, b, c))| {
                    let u = grid_time(u);
                    let t1 = grid_time(t1).min(u);
                    let stage_two = match status {
                        0 => StageTwo::Unknown,
                        1 => StageTwo::NotReached,
                        2 => responder(t1, b),
                        _ => non_responder(t1, (kind == DesignKind::Smart1).then_some(c)),
                    };
                    rec(i as u64 + 1, grid_time(enroll), a, stage_two, u, delta)
                })
                .collect();
            (design.clone(), recs)
        })
    })
}

/// Ten patients who never reach stage two: each regime collapses onto its first-stage arm.
pub fn single_stage_cohort() -> Vec<PatientRecord> {
    let rows = [
        (1, 0.3, true),
        (1, 0.7, false),
        (1, 0.9, true),
        (1, 1.4, true),
        (1, 2.2, false),
        (2, 0.5, true),
        (2, 0.9, true),
        (2, 0.9, false),
        (2, 1.6, true),
        (2, 3.1, true),
    ];
    rows.iter()
        .enumerate()
        .map(|(i, &(a, u, d))| {
            let stage = if d { StageTwo::NotReached } else { StageTwo::Unknown };
            rec(i as u64 + 1, 0.0, a, stage, u, d)
        })
        .collect()
}

/// Textbook two-sample log-rank: numerator `O2 - E2` and its robust variance
/// (sum of squared per-subject score residuals).
pub fn classical_log_rank(recs: &[PatientRecord]) -> (f64, f64) {
    let times = event_times(recs);
    let group2 = |r: &PatientRecord| r.arm.index() == 1;
    let mut u = 0.0;
    let mut residual = vec![0.0; recs.len()];
    for &t in &times {
        let n: f64 = recs.iter().filter(|r| r.u >= t).count() as f64;
        let n2: f64 = recs.iter().filter(|r| r.u >= t && group2(r)).count() as f64;
        let d: f64 = recs.iter().filter(|r| r.delta && r.u == t).count() as f64;
        let d2: f64 = recs.iter().filter(|r| r.delta && r.u == t && group2(r)).count() as f64;
        u += d2 - d * n2 / n;
        for (i, r) in recs.iter().enumerate() {
            if r.u >= t {
                let x = if group2(r) { 1.0 } else { 0.0 };
                let dn = if r.delta && r.u == t { 1.0 } else { 0.0 };
                residual[i] += (x - n2 / n) * (dn - d / n);
            }
        }
    }
    (u, residual.iter().map(|r| r * r).sum())
}

/// Product-limit estimate at each distinct event time.
pub fn kaplan_meier(recs: &[PatientRecord]) -> Vec<(f64, f64)> {
    let mut s = 1.0;
    let mut out = Vec::new();
    for t in event_times(recs) {
        let n = recs.iter().filter(|r| r.u >= t).count() as f64;
        let d = recs.iter().filter(|r| r.delta && r.u == t).count() as f64;
        s *= 1.0 - d / n;
        out.push((t, s));
    }
    out
}
