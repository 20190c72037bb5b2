//! End-to-end workflows shared by the CLI and the test suites.

use smartim_core::boundaries::{boundaries, BoundaryMethod, BoundarySet, PsiMatrix};
use smartim_core::boundaries::psi_matrix;
use smartim_core::covariance::{
    bootstrap_cov, influence_vectors, sigma_hat, CovBlocks, InfluenceSet, DEFAULT_BOOTSTRAP_REPLICATES,
};
use smartim_core::monitor::{analyze_snapshot, splitmix64, survival_curves};
use smartim_core::sim::{generate_trial, ScenarioConfig};
use smartim_core::{find_interim_time, snapshot, AnalysisSnapshot, Error, PatientRecord, SmartDesign, StatKind};

use crate::error::Result;
use crate::parallel;
use crate::report::{psi_digest, AnalysisReport, BoundaryReport, CurveReport};

/// How the joint covariance across analyses is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum CovChoice {
    /// Interim covariance only, extended with independent increments.
    Approx,
    /// Linearization with the data available at every analysis.
    Oracle,
    /// Patient-level bootstrap.
    Bootstrap,
}

impl CovChoice {
    /// Error spending re-estimates the covariance at each decision point;
    /// fixed boundaries are set from the interim data alone.
    pub fn default_for(method: BoundaryMethod) -> Self {
        match method {
            BoundaryMethod::Pocock | BoundaryMethod::Obf => CovChoice::Approx,
            BoundaryMethod::LdPocock | BoundaryMethod::LdObf => CovChoice::Oracle,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryRequest {
    pub kind: StatKind,
    pub method: BoundaryMethod,
    pub alpha: f64,
    /// Event fractions of the interim looks; the final analysis is implied.
    pub info: Vec<f64>,
    pub cov: CovChoice,
    pub draws: usize,
    pub seed: u64,
    pub tol: f64,
    pub bootstrap_replicates: usize,
}

impl BoundaryRequest {
    pub fn new(kind: StatKind, method: BoundaryMethod) -> Self {
        BoundaryRequest {
            kind,
            method,
            alpha: 0.05,
            info: vec![0.5],
            cov: CovChoice::default_for(method),
            draws: smartim_core::boundaries::DEFAULT_DRAWS,
            seed: 1,
            tol: smartim_core::linalg::DEFAULT_RANK_TOL,
            bootstrap_replicates: DEFAULT_BOOTSTRAP_REPLICATES,
        }
    }

    fn spending_fractions(&self) -> Vec<f64> {
        self.info.iter().copied().chain([1.0]).collect()
    }
}

#[derive(Debug, Clone)]
pub struct DerivedBoundaries {
    pub boundaries: BoundarySet,
    pub psi: PsiMatrix,
    pub cutoffs: Vec<f64>,
    pub n_per_analysis: Vec<usize>,
}

impl DerivedBoundaries {
    pub fn report(&self) -> BoundaryReport {
        BoundaryReport {
            boundaries: self.boundaries.clone(),
            n_per_analysis: self.n_per_analysis.clone(),
            cutoffs: self.cutoffs.clone(),
            psi_digest: psi_digest(&self.psi),
        }
    }
}

fn check_info(info: &[f64]) -> Result<()> {
    if info.iter().any(|f| !(*f > 0.0 && *f < 1.0)) || info.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Argument("interim event fractions must increase strictly within (0,1)".into()).into());
    }
    Ok(())
}

fn finish(cov: CovBlocks, req: &BoundaryRequest, cutoffs: Vec<f64>) -> Result<DerivedBoundaries> {
    let psi = psi_matrix(&cov, req.tol)?;
    let sample = parallel::sample_joint_t(&psi, req.draws, splitmix64(req.seed))?;
    let set = boundaries(&sample, req.method, req.alpha, &req.spending_fractions())?;
    Ok(DerivedBoundaries { boundaries: set, psi, cutoffs, n_per_analysis: cov.n })
}

/// Boundaries from a complete trial, with interim looks cut at the requested event fractions.
pub fn boundaries_from_trial(records: &[PatientRecord], design: &SmartDesign, req: &BoundaryRequest) -> Result<DerivedBoundaries> {
    design.validate()?;
    check_info(&req.info)?;
    let mut cutoffs = req.info.iter().map(|&f| find_interim_time(records, f)).collect::<smartim_core::Result<Vec<_>>>()?;
    cutoffs.push(f64::INFINITY);
    if cutoffs.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InsufficientData("interim looks coincide; too few events".into()).into());
    }
    let snaps = cutoffs.iter().map(|&t| snapshot(records, t)).collect::<smartim_core::Result<Vec<_>>>()?;
    let cov = match req.cov {
        CovChoice::Approx => {
            let first = influence_vectors(&snaps[0], design, req.kind);
            let n: Vec<usize> = snaps.iter().map(|s| s.n).collect();
            CovBlocks::independent_increments(&sigma_hat(&first)?, &n)?
        }
        CovChoice::Oracle => {
            let sets: Vec<InfluenceSet> = snaps.iter().map(|s| influence_vectors(s, design, req.kind)).collect();
            CovBlocks::linearization(&sets)?
        }
        CovChoice::Bootstrap => {
            bootstrap_cov(records, &cutoffs, design, req.kind, req.bootstrap_replicates, splitmix64(req.seed ^ 0xB007))?
        }
    };
    finish(cov, req, cutoffs)
}

/// Boundaries at an interim analysis from the interim data alone, assuming
/// the later analyses will include `later_n` patients.
pub fn boundaries_from_interim(
    interim: &[PatientRecord],
    design: &SmartDesign,
    later_n: &[usize],
    req: &BoundaryRequest,
) -> Result<DerivedBoundaries> {
    design.validate()?;
    check_info(&req.info)?;
    if req.cov != CovChoice::Approx {
        return Err(Error::Argument("only the approximate covariance is available from interim data".into()).into());
    }
    if later_n.len() != req.info.len() {
        return Err(Error::Argument(format!("{} later sample sizes for {} interim looks", later_n.len(), req.info.len())).into());
    }
    let snap = AnalysisSnapshot::full(interim)?;
    let first = influence_vectors(&snap, design, req.kind);
    let n: Vec<usize> = std::iter::once(snap.n).chain(later_n.iter().copied()).collect();
    let cov = CovBlocks::independent_increments(&sigma_hat(&first)?, &n)?;
    finish(cov, req, vec![f64::NAN; n.len()])
}

/// Boundaries from a large simulated null trial.
pub fn null_boundaries(config: &ScenarioConfig, n: usize, req: &BoundaryRequest) -> Result<DerivedBoundaries> {
    let mut c = config.clone();
    c.n = n;
    let data = generate_trial(&c, req.seed)?;
    boundaries_from_trial(&data, &c.design, req)
}

/// Contrast labels in the order of the statistic's vector.
pub fn contrast_labels(design: &SmartDesign, kind: StatKind) -> Vec<String> {
    let reference = design.reference();
    match kind {
        StatKind::Lr => design.contrasts().iter().map(|d| format!("{d}-{reference}")).collect(),
        StatKind::Td => design.dtrs().iter().map(|d| d.to_string()).collect(),
    }
}

pub fn analyze(records: &[PatientRecord], design: &SmartDesign, kind: StatKind, cutoff: f64, tol: f64) -> Result<AnalysisReport> {
    let snap = snapshot(records, cutoff)?;
    let s = analyze_snapshot(&snap, design, kind, tol)?;
    Ok(AnalysisReport {
        kind,
        cutoff,
        n: snap.n,
        events: snap.events,
        info_fraction: snap.info_fraction,
        contrasts: contrast_labels(design, kind),
        z: s.z.iter().copied().collect(),
        sigma_hat: s.sigma_hat.row_iter().map(|r| r.iter().copied().collect()).collect(),
        t_value: s.t_value,
        df: s.df,
        p_value: s.p_value,
    })
}

pub fn curves(records: &[PatientRecord], design: &SmartDesign, cutoff: f64) -> Result<CurveReport> {
    let snap = snapshot(records, cutoff)?;
    Ok(CurveReport { cutoff, curves: survival_curves(&snap, design)? })
}
