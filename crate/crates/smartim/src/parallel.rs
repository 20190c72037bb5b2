//! Rayon drivers whose output is bitwise identical to the sequential core routines.

use rayon::prelude::*;
use smartim_core::boundaries::{BoundarySet, JointSample, JointSampler, PsiMatrix};
use smartim_core::monitor::{replicate_error, replicate_seed, run_replicate, tally, OcReport, MIN_REPLICATES};
use smartim_core::sim::ScenarioConfig;
use smartim_core::{Error, StatKind};

use crate::error::Result;

pub fn sample_joint_t(psi: &PsiMatrix, b: usize, seed: u64) -> Result<JointSample> {
    if b == 0 {
        return Err(Error::Argument("number of draws must be positive".into()).into());
    }
    if b < 1000 {
        log::warn!("{b} draws give unstable tail quantiles");
    }
    let sampler = JointSampler::new(psi)?;
    let chunks = (0..JointSampler::chunks(b))
        .into_par_iter()
        .map(|i| sampler.chunk(seed, i, b))
        .collect();
    Ok(sampler.assemble(seed, chunks))
}

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
        return Err(Error::Argument(format!("at least {MIN_REPLICATES} replicates are required, got {reps}")).into());
    }
    config.validate()?;
    let outcomes = (0..reps)
        .into_par_iter()
        .map(|i| {
            run_replicate(config, boundaries, kind, info, replicate_seed(seed, i), tol)
                .map_err(|e| replicate_error(i, e))
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(tally(config, boundaries, kind, info, seed, &outcomes)?)
}
