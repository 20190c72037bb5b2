//! Simulation of SMART trials with exponential stage times and uniform censoring.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

use crate::design::{Arm, DesignKind, SmartDesign};
use crate::error::{arg, Error, Result};
use crate::record::{Latent, PatientRecord, Response, StageTwo};

/// Patients per probe when calibrating the censoring bound.
pub const CALIBRATION_SIZE: usize = 50_000;
/// Seed used by presets that calibrate the censoring bound.
pub const PRESET_CALIBRATION_SEED: u64 = 20_240_501;
const NU_RANGE: (f64, f64) = (1e-3, 100.0);
const CALIBRATION_TOL: f64 = 0.005;

/// Scenario parameters. All `theta*` values are exponential rates.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ScenarioConfig {
    pub label: String,
    pub design: SmartDesign,
    pub n: usize,
    pub accrual_years: f64,
    /// Probability of entering the second stage.
    pub p_eta: f64,
    /// Probability of response among those entering the second stage.
    pub p_r: f64,
    /// First-stage rates for patients who die in the first stage, by arm.
    pub theta_n: [f64; 2],
    /// First-stage rates for patients who reach the second stage, by arm.
    pub theta: [f64; 2],
    /// Responder rates indexed by `2j + k`.
    pub theta_r: [f64; 4],
    /// Non-responder rates: `2j + l` for SMART1, `j` for SMART2.
    pub theta_nr: Vec<f64>,
    /// Censoring times are `Uniform(0, nu_cens)`.
    pub nu_cens: f64,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        self.design.validate()?;
        let rates = self.theta_n.iter().chain(&self.theta).chain(&self.theta_r).chain(&self.theta_nr);
        if let Some(r) = rates.clone().find(|r| !(**r > 0.0 && r.is_finite())) {
            return Err(arg(format!("rates must be positive and finite, got {r}")));
        }
        let want = match self.design.kind {
            DesignKind::Smart1 => 4,
            DesignKind::Smart2 => 2,
        };
        if self.theta_nr.len() != want {
            return Err(arg(format!("theta_nr needs {want} entries, got {}", self.theta_nr.len())));
        }
        for (name, p) in [("p_eta", self.p_eta), ("p_r", self.p_r)] {
            if !(p > 0.0 && p < 1.0) {
                return Err(arg(format!("{name} must lie in (0,1), got {p}")));
            }
        }
        if !(self.nu_cens > 0.0 && self.nu_cens.is_finite()) {
            return Err(arg(format!("nu_cens must be positive, got {}", self.nu_cens)));
        }
        if !(self.accrual_years >= 0.0 && self.accrual_years.is_finite()) {
            return Err(arg(format!("accrual_years must be nonnegative, got {}", self.accrual_years)));
        }
        if self.n == 0 {
            return Err(arg("n must be positive"));
        }
        Ok(())
    }
}

/// Everything drawn for one patient before censoring is applied.
#[derive(Debug, Clone, Copy)]
struct Draw {
    enroll: f64,
    arm: Arm,
    eta: bool,
    responder: bool,
    second: Arm,
    t1: f64,
    survival: f64,
    /// Censoring time divided by `nu_cens`.
    censor_unit: f64,
}

fn draw(config: &ScenarioConfig, seed: u64, index: usize) -> Draw {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let d = &config.design;
    let enroll = config.accrual_years * rng.random::<f64>();
    let arm = if rng.random::<f64>() < d.ell[0] { Arm::One } else { Arm::Two };
    let eta = rng.random::<f64>() < config.p_eta;
    let responder = rng.random::<f64>() < config.p_r;
    let j = arm.index();
    let second_prob = if responder { d.p[j] } else { d.q.map_or(1.0, |q| q[j]) };
    let second = if rng.random::<f64>() < second_prob { Arm::One } else { Arm::Two };
    let e1: f64 = Exp1.sample(&mut rng);
    let e2: f64 = Exp1.sample(&mut rng);
    let censor_unit = rng.random::<f64>();
    let (t1, survival) = if eta {
        let t1 = e1 / config.theta[j];
        let rate = if responder {
            config.theta_r[2 * j + second.index()]
        } else {
            match d.kind {
                DesignKind::Smart1 => config.theta_nr[2 * j + second.index()],
                DesignKind::Smart2 => config.theta_nr[j],
            }
        };
        (t1, t1 + e2 / rate)
    } else {
        let t1 = e1 / config.theta_n[j];
        (t1, t1)
    };
    Draw { enroll, arm, eta, responder, second, t1, survival, censor_unit }
}

fn observe(config: &ScenarioConfig, index: usize, d: Draw) -> PatientRecord {
    let v = config.nu_cens * d.censor_unit;
    let u = d.survival.min(v);
    let delta = d.survival <= v;
    let stage_two = if d.eta {
        if d.t1 <= v {
            let response = if d.responder {
                Response::Responder { maintenance: d.second }
            } else {
                Response::NonResponder {
                    salvage: (config.design.kind == DesignKind::Smart1).then_some(d.second),
                }
            };
            StageTwo::Reached { t1: d.t1, response }
        } else {
            StageTwo::Unknown
        }
    } else if delta {
        StageTwo::NotReached
    } else {
        StageTwo::Unknown
    };
    PatientRecord {
        id: index as u64 + 1,
        enroll_time: d.enroll,
        arm: d.arm,
        stage_two,
        u,
        delta,
        latent: Some(Latent { survival: d.survival, censoring: v }),
    }
}

/// One patient; identical to the corresponding entry of [`generate_trial`].
pub fn generate_patient(config: &ScenarioConfig, seed: u64, index: usize) -> PatientRecord {
    observe(config, index, draw(config, seed, index))
}

/// Simulates `config.n` patients with ids `1..=n`. Patient `i` depends only on `(seed, i)`.
pub fn generate_trial(config: &ScenarioConfig, seed: u64) -> Result<Vec<PatientRecord>> {
    config.validate()?;
    Ok((0..config.n).map(|i| generate_patient(config, seed, i)).collect())
}

/// Bisection on `nu_cens` so that the censored fraction of a large simulated
/// cohort (common random numbers across probes) matches `target`.
pub fn calibrate_censoring(config: &ScenarioConfig, target: f64, size: usize, seed: u64) -> Result<f64> {
    if !(target > 0.0 && target < 1.0) {
        return Err(arg(format!("censoring target must lie in (0,1), got {target}")));
    }
    if size == 0 {
        return Err(arg("calibration size must be positive"));
    }
    config.validate()?;
    let draws: Vec<(f64, f64)> = (0..size)
        .map(|i| {
            let d = draw(config, seed, i);
            (d.survival, d.censor_unit)
        })
        .collect();
    let censored = |nu: f64| draws.iter().filter(|(t, c)| *t > nu * c).count() as f64 / size as f64;
    let (mut lo, mut hi) = NU_RANGE;
    let (f_lo, f_hi) = (censored(lo), censored(hi));
    if target > f_lo + CALIBRATION_TOL || target < f_hi - CALIBRATION_TOL {
        return Err(Error::Infeasible(format!(
            "censoring target {target} is outside [{f_hi:.4}, {f_lo:.4}] reachable with nu in ({lo}, {hi})"
        )));
    }
    let mut best = (f64::INFINITY, lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let f = censored(mid);
        let gap = (f - target).abs();
        if gap < best.0 {
            best = (gap, mid);
        }
        if gap <= CALIBRATION_TOL / 10.0 {
            break;
        }
        if f > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if best.0 > CALIBRATION_TOL {
        return Err(Error::Infeasible(format!("could not reach censoring target {target}")));
    }
    Ok(best.1)
}

fn base(label: &str, design: SmartDesign) -> ScenarioConfig {
    ScenarioConfig {
        label: label.to_string(),
        design,
        n: 500,
        accrual_years: 5.0,
        p_eta: 0.9,
        p_r: 0.6,
        theta_n: [5.0; 2],
        theta: [5.0; 2],
        theta_r: [5.0; 4],
        theta_nr: vec![5.0; 4],
        nu_cens: 1.0,
    }
}

/// Named scenarios: `null-smart1`, `null-smart2`, `alt1`..`alt4`, optionally
/// followed by `-eta75` (75% enter the second stage) and `-cens10|20|40`
/// (censoring target in percent). Null scenarios calibrate `nu_cens` to 20%
/// censoring unless told otherwise; alternatives keep their published
/// `nu_cens` unless a censoring target is given.
pub fn preset(name: &str) -> Result<ScenarioConfig> {
    let unknown = || Error::UnknownScenario(name.to_string());
    let mut parts = name.split('-');
    let head = parts.next().ok_or_else(unknown)?;
    let head = if head == "null" {
        match parts.next() {
            Some("smart1") => "null-smart1",
            Some("smart2") => "null-smart2",
            _ => return Err(unknown()),
        }
    } else {
        head
    };
    let mut p_eta = 0.9;
    let mut target = None;
    for part in parts {
        match part {
            "eta90" => p_eta = 0.9,
            "eta75" => p_eta = 0.75,
            _ => {
                let pct: u32 = part.strip_prefix("cens").and_then(|s| s.parse().ok()).ok_or_else(unknown)?;
                if !(1..100).contains(&pct) {
                    return Err(unknown());
                }
                target = Some(pct as f64 / 100.0);
            }
        }
    }
    let mut c = match head {
        "null-smart1" => base(head, SmartDesign::smart1_balanced()),
        "null-smart2" => ScenarioConfig {
            theta_n: [3.0; 2],
            theta: [3.0; 2],
            theta_r: [2.0; 4],
            theta_nr: vec![5.0; 2],
            ..base(head, SmartDesign::smart2_balanced())
        },
        "alt1" => ScenarioConfig {
            theta_r: [2.0, 4.0, 3.0, 4.0],
            theta_nr: vec![3.2, 3.0, 2.9, 2.0],
            nu_cens: 2.5,
            ..base(head, SmartDesign::smart1_balanced())
        },
        "alt2" => ScenarioConfig {
            theta_r: [2.8, 4.6, 2.3, 4.9],
            theta_nr: vec![5.8, 4.3, 5.2, 6.5],
            nu_cens: 2.1,
            ..base(head, SmartDesign::smart1_balanced())
        },
        "alt3" => ScenarioConfig {
            theta_n: [3.0; 2],
            theta: [3.0; 2],
            theta_r: [2.0, 3.2, 2.5, 4.0],
            theta_nr: vec![6.0, 6.0],
            nu_cens: 2.9,
            ..base(head, SmartDesign::smart2_balanced())
        },
        "alt4" => ScenarioConfig {
            theta_n: [3.0; 2],
            theta: [3.0; 2],
            theta_r: [2.7, 6.0, 4.9, 3.0],
            theta_nr: vec![3.8, 7.2],
            nu_cens: 2.8,
            ..base(head, SmartDesign::smart2_balanced())
        },
        _ => return Err(unknown()),
    };
    c.label = name.to_string();
    c.p_eta = p_eta;
    let target = target.or(head.starts_with("null").then_some(0.2));
    if let Some(t) = target {
        c.nu_cens = calibrate_censoring(&c, t, CALIBRATION_SIZE, PRESET_CALIBRATION_SEED)?;
    }
    Ok(c)
}

/// Names accepted by [`preset`] without suffixes.
pub const PRESET_NAMES: [&str; 6] = ["null-smart1", "null-smart2", "alt1", "alt2", "alt3", "alt4"];

#[cfg(test)]
mod tests {
    use super::*;

    fn censoring(records: &[PatientRecord]) -> f64 {
        records.iter().filter(|r| !r.delta).count() as f64 / records.len() as f64
    }

    #[test]
    fn preset_parameters() {
        assert_eq!(preset("alt2").unwrap().theta_r, [2.8, 4.6, 2.3, 4.9]);
        assert_eq!(preset("null-smart2").unwrap().theta_nr, vec![5.0, 5.0]);
        assert_eq!(preset("alt3").unwrap().nu_cens, 2.9);
        let a1 = preset("alt1").unwrap();
        assert_eq!(a1.theta_nr, vec![3.2, 3.0, 2.9, 2.0]);
        assert_eq!(a1.nu_cens, 2.5);
        let a4 = preset("alt4-eta75").unwrap();
        assert_eq!(a4.theta_nr, vec![3.8, 7.2]);
        assert_eq!(a4.p_eta, 0.75);
        assert!(matches!(preset("alt9"), Err(Error::UnknownScenario(_))));
        assert!(matches!(preset("null-smart1-cens0"), Err(Error::UnknownScenario(_))));
    }

    #[test]
    fn deterministic_and_consistent() {
        let c = preset("alt1").unwrap();
        let a = generate_trial(&c, 42).unwrap();
        assert_eq!(a, generate_trial(&c, 42).unwrap());
        assert_ne!(a, generate_trial(&c, 43).unwrap());
        for r in &a {
            r.validate(c.design.kind).unwrap();
            let l = r.latent.unwrap();
            assert!(r.u <= l.survival && r.u <= l.censoring && l.censoring <= c.nu_cens);
        }
        assert_eq!(generate_patient(&c, 42, 17), a[17]);
    }

    #[test]
    fn rate_interpretation_matches_published_censoring() {
        let mut c = preset("alt3").unwrap();
        c.n = 20_000;
        let cens = censoring(&generate_trial(&c, 1).unwrap());
        assert!((cens - 0.20).abs() < 0.03, "{cens}");
    }

    #[test]
    fn calibration_is_monotone() {
        let c = base("null-smart1", SmartDesign::smart1_balanced());
        let lo = calibrate_censoring(&c, 0.1, 20_000, 3).unwrap();
        let mid = calibrate_censoring(&c, 0.2, 20_000, 3).unwrap();
        let hi = calibrate_censoring(&c, 0.4, 20_000, 3).unwrap();
        assert!(lo > mid && mid > hi);
        assert!(calibrate_censoring(&c, 0.0, 100, 3).is_err());
    }
}
