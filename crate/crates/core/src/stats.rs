//! Weighted log-rank and Tsiatis–Davidian contrast vectors and the Wald form.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::design::SmartDesign;
use crate::distributions::chi2_sf;
use crate::error::{arg, Result};
use crate::linalg::{check_symmetric, generalized_inverse};
use crate::processes::EventGrid;
use crate::snapshot::AnalysisSnapshot;
use crate::weights::{weight, WeightQuery};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum StatKind {
    /// Weighted log-rank against the reference regime.
    Lr,
    /// Score statistic with the all-regime pooled hazard.
    Td,
}

impl StatKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StatKind::Lr => "lr",
            StatKind::Td => "td",
        }
    }
}

impl core::str::FromStr for StatKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lr" => Ok(StatKind::Lr),
            "td" => Ok(StatKind::Td),
            other => Err(arg(format!("unknown statistic `{other}` (expected lr or td)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestSummary {
    pub kind: StatKind,
    pub z: DVector<f64>,
    /// Estimated covariance of `n^{-1/2} Z`.
    pub sigma_hat: DMatrix<f64>,
    pub t_value: f64,
    pub df: usize,
    pub n: usize,
    pub p_value: f64,
}

/// `(Ybar_ref dNbar_d - Ybar_d dNbar_ref) / (Ybar_d + Ybar_ref)`, zero on an empty pair.
#[inline]
pub(crate) fn lr_increment(y_d: f64, dn_d: f64, y_r: f64, dn_r: f64) -> f64 {
    let denom = y_d + y_r;
    if denom > 0.0 {
        (y_r * dn_d - y_d * dn_r) / denom
    } else {
        0.0
    }
}

/// Pooled hazard increments over all regimes.
pub(crate) fn td_hazard(grid: &EventGrid) -> Vec<f64> {
    (0..grid.times.len())
        .map(|k| {
            let y: f64 = grid.ybar.iter().map(|v| v[k]).sum();
            let dn: f64 = grid.dnbar.iter().map(|v| v[k]).sum();
            if y > 0.0 {
                dn / y
            } else {
                0.0
            }
        })
        .collect()
}

pub(crate) fn lr_from_grid(grid: &EventGrid, design: &SmartDesign) -> DVector<f64> {
    let r = design.reference_index();
    let comps = (0..grid.dtrs.len()).filter(|&d| d != r).map(|d| {
        (0..grid.times.len())
            .map(|k| lr_increment(grid.ybar[d][k], grid.dnbar[d][k], grid.ybar[r][k], grid.dnbar[r][k]))
            .sum::<f64>()
    });
    DVector::from_iterator(grid.dtrs.len() - 1, comps)
}

pub(crate) fn td_from_grid(grid: &EventGrid) -> DVector<f64> {
    let hazard = td_hazard(grid);
    let comps = (0..grid.dtrs.len()).map(|d| {
        (0..grid.times.len())
            .map(|k| grid.dnbar[d][k] - grid.ybar[d][k] * hazard[k])
            .sum::<f64>()
    });
    DVector::from_iterator(grid.dtrs.len(), comps)
}

/// Weighted log-rank contrasts of every non-reference regime against the reference.
pub fn lr_vector(snapshot: &AnalysisSnapshot, design: &SmartDesign) -> DVector<f64> {
    lr_from_grid(&EventGrid::build(snapshot, design), design)
}

/// Tsiatis–Davidian score vector, one component per regime.
pub fn td_vector(snapshot: &AnalysisSnapshot, design: &SmartDesign) -> DVector<f64> {
    td_from_grid(&EventGrid::build(snapshot, design))
}

pub fn contrast_vector(snapshot: &AnalysisSnapshot, design: &SmartDesign, kind: StatKind) -> DVector<f64> {
    let grid = EventGrid::build(snapshot, design);
    match kind {
        StatKind::Lr => lr_from_grid(&grid, design),
        StatKind::Td => td_from_grid(&grid),
    }
}

/// The log-rank contrasts in score form: each patient's weighted event minus
/// its share of the pairwise pooled hazard, summed patient by patient.
///
/// Algebraically equal to [`lr_vector`]; evaluated by direct per-patient
/// summation so the two routes can be checked against each other.
pub fn lr_vector_score_form(snapshot: &AnalysisSnapshot, design: &SmartDesign) -> DVector<f64> {
    let grid = EventGrid::build(snapshot, design);
    let r = design.reference_index();
    let dtrs = &grid.dtrs;
    let mut out = Vec::with_capacity(dtrs.len() - 1);
    for d in (0..dtrs.len()).filter(|&d| d != r) {
        let hazard: Vec<f64> = (0..grid.times.len())
            .map(|k| {
                let y = grid.ybar[d][k] + grid.ybar[r][k];
                if y > 0.0 {
                    (grid.dnbar[d][k] + grid.dnbar[r][k]) / y
                } else {
                    0.0
                }
            })
            .collect();
        let mut total = 0.0;
        for rec in &snapshot.records {
            let w = |s: f64| weight(design, WeightQuery { patient: rec, dtr: dtrs[d], s });
            if rec.delta {
                total += w(rec.u);
            }
            for (k, &s) in grid.times.iter().enumerate() {
                if s > rec.u {
                    break;
                }
                total -= w(s) * hazard[k];
            }
        }
        out.push(total);
    }
    DVector::from_vec(out)
}

/// `T = n^{-1} z^T Sigma^g z` with the spectral generalized inverse; `df` is its rank.
pub fn wald_statistic(
    kind: StatKind,
    z: &DVector<f64>,
    sigma_hat: &DMatrix<f64>,
    n: usize,
    tol: f64,
) -> Result<TestSummary> {
    if n == 0 {
        return Err(arg("sample size must be at least 1"));
    }
    if sigma_hat.nrows() != z.len() {
        return Err(arg(format!(
            "covariance is {}x{} but the contrast vector has length {}",
            sigma_hat.nrows(),
            sigma_hat.ncols(),
            z.len()
        )));
    }
    check_symmetric(sigma_hat)?;
    let (g, df) = generalized_inverse(sigma_hat, tol)?;
    let t_value = (z.transpose() * g * z)[(0, 0)].max(0.0) / n as f64;
    Ok(TestSummary {
        kind,
        z: z.clone(),
        sigma_hat: sigma_hat.clone(),
        t_value,
        df,
        n,
        p_value: chi2_sf(t_value, df),
    })
}
