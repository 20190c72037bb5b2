//! Covariance of the contrast vectors within and across analyses.
//!
//! The default route is asymptotic linearization: each patient contributes an
//! influence vector `Zhat_i(t)` with `sum_i Zhat_i(t) = Z(t)`, and covariances
//! are averaged outer products of those vectors. A patient-level bootstrap and
//! an independent-increment working model are provided as alternatives.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::design::SmartDesign;
use crate::error::{arg, Error, Result};
use crate::processes::{EventGrid, PatientWeights};
use crate::record::PatientRecord;
use crate::snapshot::{snapshot, AnalysisSnapshot};
use crate::stats::{contrast_vector, td_hazard, StatKind};
use crate::weights::WeightClass;

/// Per-patient influence vectors at one analysis, rows aligned with `ids`.
#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceSet {
    pub kind: StatKind,
    pub cutoff: f64,
    pub ids: Vec<u64>,
    /// `n x p` matrix; row `i` is `Zhat_i(t)`.
    pub vectors: DMatrix<f64>,
}

impl InfluenceSet {
    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    /// `sum_i Zhat_i`, which reproduces the contrast vector.
    pub fn total(&self) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.vectors.column_iter().map(|c| c.sum()))
    }
}

fn prefix(v: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut out = vec![0.0];
    let mut acc = 0.0;
    for x in v {
        acc += x;
        out.push(acc);
    }
    out
}

struct PatientSpan {
    /// Number of event times `< t1` (capped at `at_or_before_u`).
    before_switch: usize,
    at_or_before_u: usize,
    /// Grid index of the patient's own event.
    event: Option<usize>,
}

fn spans(grid: &EventGrid, recs: &[PatientRecord], pw: &[PatientWeights]) -> Vec<PatientSpan> {
    recs.iter()
        .zip(pw)
        .map(|(r, w)| {
            let k_u = grid.times.partition_point(|&t| t <= r.u);
            let k_t = w.switch_at.map_or(k_u, |t1| grid.times.partition_point(|&t| t < t1).min(k_u));
            PatientSpan {
                before_switch: k_t,
                at_or_before_u: k_u,
                event: r.delta.then(|| k_u - 1),
            }
        })
        .collect()
}

/// Integral of a weight with a single jump against a cumulative sum.
#[inline]
fn piecewise(pre: f64, post: f64, cum: &[f64], sp: &PatientSpan) -> f64 {
    pre * cum[sp.before_switch] + post * (cum[sp.at_or_before_u] - cum[sp.before_switch])
}

/// Influence vectors `Zhat_i(t)` for every patient in the snapshot.
pub fn influence_vectors(snapshot: &AnalysisSnapshot, design: &SmartDesign, kind: StatKind) -> InfluenceSet {
    let grid = EventGrid::build(snapshot, design);
    let recs = &snapshot.records;
    let table = WeightClass::table(design);
    let pw: Vec<PatientWeights> = recs.iter().map(|r| PatientWeights::new(design, &grid.dtrs, r)).collect();
    let sp = spans(&grid, recs, &pw);
    let n_t = grid.times.len();
    let n_dtr = grid.dtrs.len();
    let wv = |slots: &[usize], d: usize| table[slots[d]];

    let vectors = match kind {
        StatKind::Lr => {
            let r = design.reference_index();
            let others: Vec<usize> = (0..n_dtr).filter(|&d| d != r).collect();
            let nelson_aalen: Vec<f64> = (0..n_t).map(|k| grid.events[k] / grid.at_risk[k]).collect();
            let mut m = DMatrix::zeros(recs.len(), others.len());
            for (col, &d) in others.iter().enumerate() {
                let share = |k: usize, num: f64| {
                    let denom = grid.ybar[d][k] + grid.ybar[r][k];
                    if denom > 0.0 {
                        num / denom
                    } else {
                        0.0
                    }
                };
                let a = prefix((0..n_t).map(|k| share(k, grid.ybar[r][k]) * nelson_aalen[k]));
                let b = prefix((0..n_t).map(|k| share(k, grid.ybar[d][k]) * nelson_aalen[k]));
                for (i, (w, s)) in pw.iter().zip(&sp).enumerate() {
                    let mut z = -(piecewise(wv(&w.pre, d), wv(&w.post, d), &a, s)
                        - piecewise(wv(&w.pre, r), wv(&w.post, r), &b, s));
                    if let Some(k) = s.event {
                        let slots = w.slots_at(recs[i].u);
                        z += share(k, grid.ybar[r][k] * wv(slots, d) - grid.ybar[d][k] * wv(slots, r));
                    }
                    m[(i, col)] = z;
                }
            }
            m
        }
        StatKind::Td => {
            let hazard = td_hazard(&grid);
            let pooled: Vec<f64> = (0..n_t).map(|k| grid.ybar.iter().map(|v| v[k]).sum()).collect();
            let frac = |d: usize, k: usize| {
                if pooled[k] > 0.0 {
                    grid.ybar[d][k] / pooled[k]
                } else {
                    0.0
                }
            };
            let total = |slots: &[usize]| slots.iter().map(|&c| table[c]).sum::<f64>();
            let p = prefix(hazard.iter().copied());
            let mut m = DMatrix::zeros(recs.len(), n_dtr);
            for d in 0..n_dtr {
                let rcum = prefix((0..n_t).map(|k| frac(d, k) * hazard[k]));
                for (i, (w, s)) in pw.iter().zip(&sp).enumerate() {
                    let mut z = -(piecewise(wv(&w.pre, d), wv(&w.post, d), &p, s)
                        - piecewise(total(&w.pre), total(&w.post), &rcum, s));
                    if let Some(k) = s.event {
                        let slots = w.slots_at(recs[i].u);
                        z += wv(slots, d) - frac(d, k) * total(slots);
                    }
                    m[(i, d)] = z;
                }
            }
            m
        }
    };
    InfluenceSet {
        kind,
        cutoff: snapshot.cutoff,
        ids: recs.iter().map(|r| r.id).collect(),
        vectors,
    }
}

/// `n^{-1} sum_i Zhat_i Zhat_i^T`.
pub fn sigma_hat(influence: &InfluenceSet) -> Result<DMatrix<f64>> {
    let n = influence.n();
    if n < 2 {
        return Err(Error::InsufficientData(format!("covariance needs at least 2 patients, got {n}")));
    }
    Ok(influence.vectors.tr_mul(&influence.vectors) / n as f64)
}

/// Estimate of `cov(n_m^{-1/2} Z(t_m), n_m'^{-1/2} Z(t_m'))` from the patients
/// already enrolled at the earlier analysis.
pub fn cross_cov(earlier: &InfluenceSet, later: &InfluenceSet) -> Result<DMatrix<f64>> {
    let index: BTreeMap<u64, usize> = later.ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let mut acc = DMatrix::zeros(earlier.dim(), later.dim());
    for (i, id) in earlier.ids.iter().enumerate() {
        let j = *index.get(id).ok_or(Error::Alignment(*id))?;
        acc += earlier.vectors.row(i).transpose() * later.vectors.row(j);
    }
    let scale = libm::sqrt(earlier.n() as f64 * later.n() as f64);
    Ok(acc / scale)
}

/// Working covariance of the raw contrast vector `Z(t_final)` given that of
/// `Z(t_interim)`, assuming `cov(Z(t))/n(t)` stays constant.
pub fn approx_final_cov(cov_interim: &DMatrix<f64>, n_interim: usize, n_final: usize) -> Result<DMatrix<f64>> {
    if n_interim < 2 {
        return Err(arg("interim sample size must be at least 2"));
    }
    if n_final < n_interim {
        return Err(arg(format!("final sample size {n_final} is below the interim size {n_interim}")));
    }
    Ok(cov_interim * (n_final as f64 / n_interim as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum CovMethod {
    Linearization,
    Bootstrap,
    IndependentIncrement,
}

/// Block covariance of the stacked normalized vectors `n_m^{-1/2} Z(t_m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovBlocks {
    pub method: CovMethod,
    /// Sample size at each analysis.
    pub n: Vec<usize>,
    /// `blocks[m][m']`; diagonal blocks are `Sigma(t_m)`.
    pub blocks: Vec<Vec<DMatrix<f64>>>,
}

impl CovBlocks {
    fn from_upper(method: CovMethod, n: Vec<usize>, upper: impl Fn(usize, usize) -> Result<DMatrix<f64>>) -> Result<Self> {
        let m = n.len();
        let mut blocks: Vec<Vec<DMatrix<f64>>> = Vec::with_capacity(m);
        for a in 0..m {
            let mut row = Vec::with_capacity(m);
            for earlier in &blocks {
                row.push(earlier[a].transpose());
            }
            for b in a..m {
                row.push(upper(a, b)?);
            }
            blocks.push(row);
        }
        Ok(CovBlocks { method, n, blocks })
    }

    pub fn analyses(&self) -> usize {
        self.n.len()
    }

    pub fn sigma(&self, m: usize) -> &DMatrix<f64> {
        &self.blocks[m][m]
    }

    /// Linearization estimates from influence sets ordered by analysis time.
    pub fn linearization(sets: &[InfluenceSet]) -> Result<Self> {
        if sets.is_empty() {
            return Err(arg("at least one analysis is required"));
        }
        let n = sets.iter().map(InfluenceSet::n).collect();
        Self::from_upper(CovMethod::Linearization, n, |a, b| {
            if a == b {
                sigma_hat(&sets[a])
            } else {
                cross_cov(&sets[a], &sets[b])
            }
        })
    }

    /// Working model built from the first analysis alone: `cov(Z(t_m))` scales
    /// with `n_m` and increments are independent, so `cov(Z(t_m), Z(t_m')) = cov(Z(t_m))`.
    pub fn independent_increments(sigma_first: &DMatrix<f64>, n: &[usize]) -> Result<Self> {
        if n.is_empty() {
            return Err(arg("at least one analysis is required"));
        }
        if n.windows(2).any(|w| w[1] < w[0]) {
            return Err(arg("sample sizes must be nondecreasing across analyses"));
        }
        let n1 = n[0];
        let raw_first = sigma_first * n1 as f64;
        let raw: Vec<DMatrix<f64>> = n.iter().map(|&nm| approx_final_cov(&raw_first, n1, nm)).collect::<Result<_>>()?;
        Self::from_upper(CovMethod::IndependentIncrement, n.to_vec(), |a, b| {
            Ok(&raw[a] / libm::sqrt(n[a] as f64 * n[b] as f64))
        })
    }

    /// The full stacked matrix.
    pub fn stacked(&self) -> DMatrix<f64> {
        let dims: Vec<usize> = (0..self.analyses()).map(|m| self.sigma(m).nrows()).collect();
        let total = dims.iter().sum();
        let mut out = DMatrix::zeros(total, total);
        let mut r0 = 0;
        for a in 0..self.analyses() {
            let mut c0 = 0;
            for b in 0..self.analyses() {
                out.view_mut((r0, c0), (dims[a], dims[b])).copy_from(&self.blocks[a][b]);
                c0 += dims[b];
            }
            r0 += dims[a];
        }
        out
    }
}

/// Default bootstrap replicate count.
pub const DEFAULT_BOOTSTRAP_REPLICATES: usize = 100;

/// Patient-level bootstrap of the stacked normalized contrast vectors.
///
/// Whole patients (with enrollment times) are resampled from `cohort`, the
/// calendar cutoffs are re-applied, and the contrasts recomputed at every cutoff.
pub fn bootstrap_cov(
    cohort: &[PatientRecord],
    cutoffs: &[f64],
    design: &SmartDesign,
    kind: StatKind,
    replicates: usize,
    seed: u64,
) -> Result<CovBlocks> {
    if replicates < 2 {
        return Err(arg("bootstrap needs at least 2 replicates"));
    }
    if cutoffs.is_empty() || cutoffs.windows(2).any(|w| w[1] <= w[0]) {
        return Err(arg("cutoffs must be non-empty and strictly increasing"));
    }
    if cohort.is_empty() {
        return Err(Error::InsufficientData("empty cohort".into()));
    }
    const MAX_ATTEMPTS: usize = 1000;
    let mut draws: Vec<DVector<f64>> = Vec::with_capacity(replicates);
    let mut n_sum = vec![0usize; cutoffs.len()];
    let mut dims = Vec::new();
    let mut degenerate = 0usize;
    let mut sample = Vec::with_capacity(cohort.len());
    for rep in 0..replicates {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(rep as u64);
        let mut attempts = 0;
        let stacked = loop {
            attempts += 1;
            if attempts > MAX_ATTEMPTS {
                return Err(Error::Infeasible("bootstrap resamples are persistently degenerate".into()));
            }
            sample.clear();
            sample.extend((0..cohort.len()).map(|_| cohort[rng.random_range(0..cohort.len())].clone()));
            let snaps: Option<Vec<AnalysisSnapshot>> = cutoffs
                .iter()
                .map(|&t| snapshot(&sample, t).ok().filter(|s| s.events > 0))
                .collect();
            match snaps {
                Some(snaps) => {
                    let parts: Vec<DVector<f64>> = snaps
                        .iter()
                        .map(|s| contrast_vector(s, design, kind) / libm::sqrt(s.n as f64))
                        .collect();
                    for (acc, s) in n_sum.iter_mut().zip(&snaps) {
                        *acc += s.n;
                    }
                    if dims.is_empty() {
                        dims = parts.iter().map(|p| p.len()).collect();
                    }
                    let all: Vec<f64> = parts.iter().flat_map(|p| p.iter().copied()).collect();
                    break DVector::from_vec(all);
                }
                None => degenerate += 1,
            }
        };
        draws.push(stacked);
    }
    if 2 * degenerate > replicates + degenerate {
        return Err(Error::Infeasible(format!(
            "{degenerate} of {} bootstrap resamples had no events at some cutoff",
            replicates + degenerate
        )));
    }
    if degenerate > 0 {
        log::warn!("{degenerate} degenerate bootstrap resamples were redrawn");
    }
    let dim = draws[0].len();
    let mean = draws.iter().fold(DVector::zeros(dim), |a, d| a + d) / replicates as f64;
    let mut cov = DMatrix::zeros(dim, dim);
    for d in &draws {
        let c = d - &mean;
        cov += &c * c.transpose();
    }
    cov /= (replicates - 1) as f64;
    let offsets: Vec<usize> = dims.iter().scan(0, |acc, &d| {
        let o = *acc;
        *acc += d;
        Some(o)
    }).collect();
    let n: Vec<usize> = n_sum.iter().map(|&s| libm::round(s as f64 / replicates as f64) as usize).collect();
    CovBlocks::from_upper(CovMethod::Bootstrap, n, |a, b| {
        Ok(cov.view((offsets[a], offsets[b]), (dims[a], dims[b])).into_owned())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::Arm;
    use crate::record::StageTwo;

    fn rec(id: u64, arm: Arm, u: f64, delta: bool) -> PatientRecord {
        PatientRecord { id, enroll_time: 0.0, arm, stage_two: StageTwo::Unknown, u, delta, latent: None }
    }

    #[test]
    fn single_patient_influence_is_zero() {
        let snap = snapshot(&[rec(1, Arm::One, 1.0, true)], 10.0).unwrap();
        for kind in [StatKind::Lr, StatKind::Td] {
            let inf = influence_vectors(&snap, &SmartDesign::smart1_balanced(), kind);
            assert!(inf.vectors.iter().all(|&x| x.abs() < 1e-15), "{kind:?}");
        }
    }

    #[test]
    fn sigma_needs_two_patients() {
        let snap = snapshot(&[rec(1, Arm::One, 1.0, true)], 10.0).unwrap();
        let inf = influence_vectors(&snap, &SmartDesign::smart2_balanced(), StatKind::Lr);
        assert!(matches!(sigma_hat(&inf), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn zero_influence_gives_zero_sigma() {
        let inf = InfluenceSet {
            kind: StatKind::Lr,
            cutoff: 1.0,
            ids: alloc::vec![1, 2, 3],
            vectors: DMatrix::zeros(3, 3),
        };
        assert_eq!(sigma_hat(&inf).unwrap(), DMatrix::zeros(3, 3));
    }

    #[test]
    fn cross_cov_at_same_time_is_sigma() {
        let data: Vec<_> = (0..6)
            .map(|i| rec(i, if i % 2 == 0 { Arm::One } else { Arm::Two }, 0.3 + i as f64 * 0.2, i != 3))
            .collect();
        let snap = snapshot(&data, 10.0).unwrap();
        let inf = influence_vectors(&snap, &SmartDesign::smart2_balanced(), StatKind::Lr);
        let s = sigma_hat(&inf).unwrap();
        assert!((cross_cov(&inf, &inf).unwrap() - s).norm() < 1e-14);
    }

    #[test]
    fn cross_cov_alignment_and_disjoint_support() {
        let a = InfluenceSet {
            kind: StatKind::Lr,
            cutoff: 1.0,
            ids: alloc::vec![1, 2],
            vectors: DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
        };
        let b = InfluenceSet {
            kind: StatKind::Lr,
            cutoff: 2.0,
            ids: alloc::vec![2, 1, 3],
            vectors: DMatrix::from_row_slice(3, 1, &[5.0, 0.0, 7.0]),
        };
        assert_eq!(cross_cov(&a, &b).unwrap(), DMatrix::zeros(1, 1));
        let missing = InfluenceSet { ids: alloc::vec![4, 5, 6], ..b };
        assert_eq!(cross_cov(&a, &missing), Err(Error::Alignment(1)));
    }

    #[test]
    fn approx_final_cov_cases() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        assert_eq!(approx_final_cov(&m, 50, 50).unwrap(), m);
        assert_eq!(approx_final_cov(&DMatrix::zeros(2, 2), 50, 80).unwrap(), DMatrix::zeros(2, 2));
        assert_eq!(approx_final_cov(&m, 50, 100).unwrap(), &m * 2.0);
        assert!(approx_final_cov(&m, 60, 50).is_err());
    }

    #[test]
    fn independent_increment_blocks() {
        let s = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let c = CovBlocks::independent_increments(&s, &[100, 400]).unwrap();
        assert!((c.sigma(1) - &s).norm() < 1e-12);
        assert!((&c.blocks[0][1] - &s * 0.5).norm() < 1e-12);
        assert_eq!(c.blocks[1][0], c.blocks[0][1].transpose());
    }

    #[test]
    fn identical_resamples_have_zero_covariance() {
        let cohort: Vec<_> = (0..4).map(|i| rec(i, Arm::One, 1.0, true)).collect();
        let c = bootstrap_cov(&cohort, &[f64::INFINITY], &SmartDesign::smart2_balanced(), StatKind::Lr, 2, 9)
            .unwrap();
        assert_eq!(c.stacked(), DMatrix::zeros(3, 3));
        assert_eq!(c.method, CovMethod::Bootstrap);
    }

    #[test]
    fn bootstrap_without_events_fails() {
        let cohort: Vec<_> = (0..4).map(|i| rec(i, Arm::One, 1.0, false)).collect();
        let err = bootstrap_cov(&cohort, &[f64::INFINITY], &SmartDesign::smart2_balanced(), StatKind::Lr, 5, 1);
        assert!(matches!(err, Err(Error::Infeasible(_))));
    }
}
