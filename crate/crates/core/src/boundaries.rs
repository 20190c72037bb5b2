//! Joint null distribution of the monitoring statistics and efficacy boundaries.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::covariance::{CovBlocks, CovMethod};
use crate::distributions::{chi2_quantile, normal_quantile, normal_sf};
use crate::error::{arg, Error, Result};
use crate::linalg::{max_abs, psd_factor, retained_spectrum, symmetrize};

/// Default number of Monte Carlo draws.
pub const DEFAULT_DRAWS: usize = 100_000;
/// Draws per independently seeded chunk.
pub const CHUNK: usize = 4096;

const IDENTITY_ERROR: f64 = 1e-3;
const IDENTITY_WARN: f64 = 1e-6;
const PSD_TOL: f64 = 1e-8;

/// Correlation matrix of the stacked whitened contrast vectors
/// `Q(t_m) = L(t_m)^T Z(t_m)`, so that `T(t_m) = |Q(t_m)|^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiMatrix {
    /// Retained rank at each analysis.
    pub ranks: Vec<usize>,
    pub n: Vec<usize>,
    /// `L(t_m)` on the scale of the raw contrast vector.
    pub whiteners: Vec<DMatrix<f64>>,
    pub matrix: DMatrix<f64>,
    pub cov_method: Option<CovMethod>,
}

impl PsiMatrix {
    pub fn analyses(&self) -> usize {
        self.ranks.len()
    }

    fn offset(&self, m: usize) -> usize {
        self.ranks[..m].iter().sum()
    }

    pub fn block(&self, a: usize, b: usize) -> DMatrix<f64> {
        self.matrix
            .view((self.offset(a), self.offset(b)), (self.ranks[a], self.ranks[b]))
            .into_owned()
    }

    /// Independent looks with the given ranks.
    pub fn identity(ranks: &[usize]) -> Self {
        let d = ranks.iter().sum();
        PsiMatrix {
            ranks: ranks.to_vec(),
            n: vec![0; ranks.len()],
            whiteners: Vec::new(),
            matrix: DMatrix::identity(d, d),
            cov_method: None,
        }
    }

    /// Builds `Psi` directly from a matrix; the caller supplies the block ranks.
    pub fn from_matrix(ranks: &[usize], matrix: DMatrix<f64>) -> Result<Self> {
        let d: usize = ranks.iter().sum();
        if matrix.nrows() != d || matrix.ncols() != d {
            return Err(arg(format!("Psi must be {d}x{d}, got {}x{}", matrix.nrows(), matrix.ncols())));
        }
        Ok(PsiMatrix {
            ranks: ranks.to_vec(),
            n: vec![0; ranks.len()],
            whiteners: Vec::new(),
            matrix,
            cov_method: None,
        })
    }
}

pub fn psi_matrix(cov: &CovBlocks, tol: f64) -> Result<PsiMatrix> {
    let mcount = cov.analyses();
    if mcount == 0 {
        return Err(arg("no analyses"));
    }
    for a in 0..mcount {
        for b in 0..mcount {
            let (r, c) = cov.blocks[a][b].shape();
            if r != cov.sigma(a).nrows() || c != cov.sigma(b).nrows() {
                return Err(arg(format!("covariance block ({a},{b}) has inconsistent shape {r}x{c}")));
            }
        }
    }
    // L on the normalized scale; the raw-scale whitener divides by sqrt(n).
    let mut unit = Vec::with_capacity(mcount);
    for m in 0..mcount {
        let sp = retained_spectrum(cov.sigma(m), tol)?;
        if sp.rank() == 0 {
            return Err(Error::InsufficientData(format!("covariance at analysis {} has rank 0", m + 1)));
        }
        let scale = DVector::from_iterator(sp.rank(), sp.values.iter().map(|v| 1.0 / libm::sqrt(*v)));
        unit.push(&sp.vectors * DMatrix::from_diagonal(&scale));
    }
    let ranks: Vec<usize> = unit.iter().map(|l| l.ncols()).collect();
    let d = ranks.iter().sum();
    let mut psi = DMatrix::zeros(d, d);
    let mut r0 = 0;
    for a in 0..mcount {
        let mut c0 = 0;
        for b in 0..mcount {
            let block = unit[a].transpose() * &cov.blocks[a][b] * &unit[b];
            psi.view_mut((r0, c0), (ranks[a], ranks[b])).copy_from(&block);
            c0 += ranks[b];
        }
        r0 += ranks[a];
    }
    let psi = symmetrize(&psi);
    let mut out = PsiMatrix {
        ranks,
        n: cov.n.clone(),
        whiteners: Vec::new(),
        matrix: psi,
        cov_method: Some(cov.method),
    };
    for m in 0..mcount {
        let dev = max_abs(&(out.block(m, m) - DMatrix::identity(out.ranks[m], out.ranks[m])));
        if dev > IDENTITY_ERROR {
            return Err(Error::Numerical(format!(
                "diagonal block {} of Psi deviates from the identity by {dev:e}",
                m + 1
            )));
        }
        if dev > IDENTITY_WARN {
            log::warn!("diagonal block {} of Psi deviates from the identity by {dev:e}", m + 1);
        }
    }
    out.whiteners = unit
        .into_iter()
        .zip(&cov.n)
        .map(|(l, &n)| l / libm::sqrt(n.max(1) as f64))
        .collect();
    Ok(out)
}

/// Draws of `(T(t_1), ..., T(t_M))`, stored draw-major.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSample {
    pub analyses: usize,
    pub values: Vec<f64>,
    pub seed: u64,
    pub ranks: Vec<usize>,
    pub cov_method: Option<CovMethod>,
}

impl JointSample {
    pub fn draws(&self) -> usize {
        self.values.len() / self.analyses
    }

    pub fn draw(&self, i: usize) -> &[f64] {
        &self.values[i * self.analyses..(i + 1) * self.analyses]
    }

    pub fn column(&self, m: usize) -> Vec<f64> {
        self.values.iter().skip(m).step_by(self.analyses).copied().collect()
    }

    /// Cumulative probability of crossing `thresholds` by each analysis.
    pub fn crossing_probabilities(&self, thresholds: &[f64]) -> Vec<f64> {
        let mut counts = vec![0usize; self.analyses];
        for i in 0..self.draws() {
            if let Some(m) = self.draw(i).iter().zip(thresholds).position(|(t, b)| t > b) {
                counts[m] += 1;
            }
        }
        let b = self.draws() as f64;
        counts
            .iter()
            .scan(0usize, |acc, &c| {
                *acc += c;
                Some(*acc as f64 / b)
            })
            .collect()
    }
}

/// Factored `Psi`, ready to generate chunks of draws.
#[derive(Debug, Clone)]
pub struct JointSampler {
    factor: DMatrix<f64>,
    ranks: Vec<usize>,
    cov_method: Option<CovMethod>,
}

impl JointSampler {
    pub fn new(psi: &PsiMatrix) -> Result<Self> {
        Ok(JointSampler {
            factor: psd_factor(&psi.matrix, PSD_TOL)?,
            ranks: psi.ranks.clone(),
            cov_method: psi.cov_method,
        })
    }

    pub fn chunks(b: usize) -> usize {
        b.div_ceil(CHUNK)
    }

    /// Draws for chunk `index` of a run of `b` total draws.
    pub fn chunk(&self, seed: u64, index: usize, b: usize) -> Vec<f64> {
        let len = CHUNK.min(b - index * CHUNK);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index as u64);
        let d = self.factor.nrows();
        let mut z = DVector::zeros(d);
        let mut x = DVector::zeros(d);
        let mut out = Vec::with_capacity(len * self.ranks.len());
        for _ in 0..len {
            for v in z.iter_mut() {
                *v = StandardNormal.sample(&mut rng);
            }
            self.factor.mul_to(&z, &mut x);
            let mut start = 0;
            for &r in &self.ranks {
                out.push(x.rows(start, r).norm_squared());
                start += r;
            }
        }
        out
    }

    pub fn assemble(&self, seed: u64, chunks: Vec<Vec<f64>>) -> JointSample {
        JointSample {
            analyses: self.ranks.len(),
            values: chunks.concat(),
            seed,
            ranks: self.ranks.clone(),
            cov_method: self.cov_method,
        }
    }
}

fn check_draws(b: usize) -> Result<()> {
    if b == 0 {
        return Err(arg("number of draws must be positive"));
    }
    if b < 1000 {
        log::warn!("{b} draws give unstable tail quantiles");
    }
    Ok(())
}

pub fn sample_joint_t(psi: &PsiMatrix, b: usize, seed: u64) -> Result<JointSample> {
    check_draws(b)?;
    let sampler = JointSampler::new(psi)?;
    let chunks = (0..JointSampler::chunks(b)).map(|i| sampler.chunk(seed, i, b)).collect();
    Ok(sampler.assemble(seed, chunks))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum BoundaryMethod {
    Pocock,
    Obf,
    LdPocock,
    LdObf,
}

impl core::str::FromStr for BoundaryMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pocock" => Ok(Self::Pocock),
            "obf" => Ok(Self::Obf),
            "ld-pocock" => Ok(Self::LdPocock),
            "ld-obf" => Ok(Self::LdObf),
            _ => Err(arg(format!("unknown boundary method '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum SpendingKind {
    /// `alpha * ln(1 + (e - 1) t)`
    PocockLike,
    /// `2 (1 - Phi(z_{alpha/2} / sqrt(t)))`
    ObfLike,
}

/// Efficacy thresholds on the chi-square scale; reject at analysis `m` when `T(t_m) > thresholds[m]`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BoundarySet {
    pub method: BoundaryMethod,
    /// Infinite thresholds (never reject) serialize as `null`.
    #[cfg_attr(feature = "serde", serde(with = "crate::serde_inf::seq"))]
    pub thresholds: Vec<f64>,
    pub alpha: f64,
    /// Cumulative type I error spent by each analysis.
    pub spent: Vec<f64>,
    pub info_fractions: Option<Vec<f64>>,
    pub ranks: Vec<usize>,
    pub seed: u64,
    pub draws: usize,
    /// Empirical first-look threshold, reported alongside the analytic one for error spending.
    pub first_look_empirical: Option<f64>,
    pub covariance: Option<CovMethod>,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(arg(format!("alpha must lie in (0,1), got {alpha}")));
    }
    Ok(())
}

/// Largest count `k` with `k / total <= p`.
fn allowed_exceedances(p: f64, total: usize) -> usize {
    let t = total as f64;
    let mut k = libm::floor(p * t) as usize;
    while (k + 1) as f64 / t <= p {
        k += 1;
    }
    while k > 0 && k as f64 / t > p {
        k -= 1;
    }
    k
}

/// Smallest `b` such that at most `k` of `values` exceed it.
fn threshold_allowing(mut values: Vec<f64>, k: usize) -> f64 {
    if k >= values.len() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    values[values.len() - 1 - k]
}

fn fixed_boundary(sample: &JointSample, alpha: f64, method: BoundaryMethod, scale: impl Fn(usize) -> f64) -> Result<BoundarySet> {
    check_alpha(alpha)?;
    if sample.draws() == 0 {
        return Err(arg("empty joint sample"));
    }
    let maxima: Vec<f64> = (0..sample.draws())
        .map(|i| {
            sample
                .draw(i)
                .iter()
                .enumerate()
                .fold(f64::NEG_INFINITY, |acc, (m, t)| acc.max(t / scale(m)))
        })
        .collect();
    let allowed = allowed_exceedances(alpha, sample.draws());
    let mut base = threshold_allowing(maxima, allowed);
    let at = |base: f64| -> Vec<f64> { (0..sample.analyses).map(|m| scale(m) * base).collect() };
    let crossings = |th: &[f64]| {
        (0..sample.draws())
            .filter(|&i| sample.draw(i).iter().zip(th).any(|(t, b)| t > b))
            .count()
    };
    // `t / s > base` and `t > s * base` can disagree in the last bit.
    while crossings(&at(base)) > allowed {
        base = base.next_up();
    }
    let thresholds = at(base);
    Ok(BoundarySet {
        method,
        spent: sample.crossing_probabilities(&thresholds),
        thresholds,
        alpha,
        info_fractions: None,
        ranks: sample.ranks.clone(),
        seed: sample.seed,
        draws: sample.draws(),
        first_look_empirical: None,
        covariance: sample.cov_method,
    })
}

/// Constant threshold across analyses.
pub fn pocock_boundary(sample: &JointSample, alpha: f64) -> Result<BoundarySet> {
    fixed_boundary(sample, alpha, BoundaryMethod::Pocock, |_| 1.0)
}

/// Decreasing thresholds `b_m = sqrt(M/m) b_M`.
pub fn obf_boundary(sample: &JointSample, alpha: f64) -> Result<BoundarySet> {
    let big_m = sample.analyses as f64;
    fixed_boundary(sample, alpha, BoundaryMethod::Obf, |m| libm::sqrt(big_m / (m + 1) as f64))
}

/// Cumulative type I error to spend by information fraction `t`.
pub fn error_spending(kind: SpendingKind, t: f64, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if !(t > 0.0 && t <= 1.0) {
        return Err(arg(format!("information fraction must lie in (0,1], got {t}")));
    }
    if t == 1.0 {
        return Ok(alpha);
    }
    Ok(match kind {
        SpendingKind::PocockLike => alpha * libm::log(1.0 + (core::f64::consts::E - 1.0) * t),
        SpendingKind::ObfLike => 2.0 * normal_sf(normal_quantile(1.0 - alpha / 2.0) / libm::sqrt(t)),
    })
}

/// Lan-DeMets boundaries solved analysis by analysis on the joint sample.
pub fn ld_boundaries(sample: &JointSample, info_fractions: &[f64], kind: SpendingKind, alpha: f64) -> Result<BoundarySet> {
    check_alpha(alpha)?;
    if info_fractions.windows(2).any(|w| w[1] <= w[0]) || info_fractions.last() != Some(&1.0) || info_fractions[0] <= 0.0 {
        return Err(arg("information fractions must increase strictly to 1"));
    }
    let spent: Vec<f64> = info_fractions.iter().map(|&t| error_spending(kind, t, alpha)).collect::<Result<_>>()?;
    let mut out = spending_boundaries(sample, &spent, alpha)?;
    out.method = match kind {
        SpendingKind::PocockLike => BoundaryMethod::LdPocock,
        SpendingKind::ObfLike => BoundaryMethod::LdObf,
    };
    out.info_fractions = Some(info_fractions.to_vec());
    Ok(out)
}

/// Sequential boundaries for an arbitrary cumulative spending schedule.
/// An analysis with nothing left to spend gets an infinite threshold.
pub fn spending_boundaries(sample: &JointSample, spent: &[f64], alpha: f64) -> Result<BoundarySet> {
    check_alpha(alpha)?;
    let mcount = sample.analyses;
    if spent.len() != mcount {
        return Err(arg(format!("{} spending values for {mcount} analyses", spent.len())));
    }
    if sample.draws() == 0 {
        return Err(arg("empty joint sample"));
    }
    if spent.windows(2).any(|w| w[1] < w[0]) || spent.iter().any(|&s| s > alpha) || spent[0] <= 0.0 {
        return Err(Error::Infeasible("spending schedule must be positive, nondecreasing and within alpha".into()));
    }
    let draws = sample.draws();
    let empirical = threshold_allowing(sample.column(0), allowed_exceedances(spent[0], draws));
    let mut thresholds = vec![chi2_quantile(1.0 - spent[0], sample.ranks[0])];
    let mut continuing: Vec<usize> = (0..draws).filter(|&i| sample.draw(i)[0] <= thresholds[0]).collect();
    for m in 1..mcount {
        let increment = spent[m] - spent[m - 1];
        let b = if increment <= 0.0 {
            f64::INFINITY
        } else {
            let values: Vec<f64> = continuing.iter().map(|&i| sample.draw(i)[m]).collect();
            threshold_allowing(values, allowed_exceedances(increment, draws))
        };
        continuing.retain(|&i| sample.draw(i)[m] <= b);
        thresholds.push(b);
    }
    Ok(BoundarySet {
        method: BoundaryMethod::LdPocock,
        thresholds,
        alpha,
        spent: spent.to_vec(),
        info_fractions: None,
        ranks: sample.ranks.clone(),
        seed: sample.seed,
        draws,
        first_look_empirical: Some(empirical),
        covariance: sample.cov_method,
    })
}

/// Dispatches on `method`; `info_fractions` are only used by error spending.
pub fn boundaries(sample: &JointSample, method: BoundaryMethod, alpha: f64, info_fractions: &[f64]) -> Result<BoundarySet> {
    match method {
        BoundaryMethod::Pocock => pocock_boundary(sample, alpha),
        BoundaryMethod::Obf => obf_boundary(sample, alpha),
        BoundaryMethod::LdPocock => ld_boundaries(sample, info_fractions, SpendingKind::PocockLike, alpha),
        BoundaryMethod::LdObf => ld_boundaries(sample, info_fractions, SpendingKind::ObfLike, alpha),
    }
}
