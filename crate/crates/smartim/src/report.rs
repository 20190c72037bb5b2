//! JSON and CSV reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use smartim_core::boundaries::{BoundarySet, PsiMatrix};
use smartim_core::monitor::{Decision, OcReport, SurvivalCurve};
use smartim_core::StatKind;

use crate::error::{Error, Result};
use crate::io::sha256_hex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Format {
    #[default]
    Json,
    Csv,
}

/// Envelope shared by every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report<T> {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: Option<u64>,
    pub scenario: Option<String>,
    /// SHA-256 digests of inputs (data files, configs, Psi).
    pub digests: BTreeMap<String, String>,
    pub result: T,
}

impl<T> Report<T> {
    pub fn new(command: &str, result: T) -> Self {
        Report {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed: None,
            scenario: None,
            digests: BTreeMap::new(),
            result,
        }
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn scenario(mut self, label: impl Into<String>) -> Self {
        self.scenario = Some(label.into());
        self
    }

    pub fn digest(mut self, name: &str, value: impl Into<String>) -> Self {
        self.digests.insert(name.into(), value.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub kind: StatKind,
    #[serde(with = "smartim_core::serde_inf")]
    pub cutoff: f64,
    pub n: usize,
    pub events: usize,
    pub info_fraction: f64,
    pub contrasts: Vec<String>,
    pub z: Vec<f64>,
    pub sigma_hat: Vec<Vec<f64>>,
    pub t_value: f64,
    pub df: usize,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryReport {
    pub boundaries: BoundarySet,
    pub n_per_analysis: Vec<usize>,
    #[serde(with = "smartim_core::serde_inf::seq")]
    pub cutoffs: Vec<f64>,
    pub psi_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveReport {
    #[serde(with = "smartim_core::serde_inf")]
    pub cutoff: f64,
    pub curves: Vec<SurvivalCurve>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorReport {
    pub kind: StatKind,
    pub decisions: Vec<Decision>,
}

/// SHA-256 over the block ranks and the entries of `Psi` (little-endian, column-major).
pub fn psi_digest(psi: &PsiMatrix) -> String {
    let mut bytes = Vec::with_capacity(8 * (psi.ranks.len() + psi.matrix.len()));
    for &r in &psi.ranks {
        bytes.extend_from_slice(&(r as u64).to_le_bytes());
    }
    for &x in psi.matrix.iter() {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    sha256_hex(&bytes)
}

pub fn config_digest<T: Serialize>(value: &T) -> String {
    sha256_hex(serde_json::to_string(value).expect("config serializes").as_bytes())
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format { path: path.display().to_string(), message: e.to_string() })
}

/// Writes to `path`, or to stdout when `path` is `None`.
pub fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => {
            use std::io::Write;
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn num(x: f64) -> String {
    if x.is_finite() {
        x.to_string()
    } else {
        String::new()
    }
}

/// Plot-ready table with one row per curve step, starting from `(0, 1)`.
pub fn curves_csv(curves: &[SurvivalCurve]) -> String {
    let mut s = String::from("dtr,time,survival\n");
    for c in curves {
        let _ = writeln!(s, "{},0,1", c.dtr);
        for (t, v) in c.times.iter().zip(&c.survival) {
            let _ = writeln!(s, "{},{},{}", c.dtr, t, v);
        }
    }
    s
}

pub fn boundaries_csv(b: &BoundarySet) -> String {
    let mut s = String::from("analysis,threshold,spent\n");
    for (m, t) in b.thresholds.iter().enumerate() {
        let _ = writeln!(s, "{},{},{}", m + 1, num(*t), b.spent.get(m).map_or(String::new(), |x| num(*x)));
    }
    s
}

pub fn decisions_csv(decisions: &[Decision]) -> String {
    let mut s = String::from("analysis,cutoff,n,events,statistic,df,threshold,verdict\n");
    for d in decisions {
        let verdict = serde_json::to_value(d.verdict).expect("verdict serializes");
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            d.analysis,
            num(d.cutoff),
            d.n,
            d.events,
            d.statistic,
            d.df,
            num(d.threshold),
            verdict.as_str().unwrap_or_default()
        );
    }
    s
}

pub fn analysis_csv(a: &AnalysisReport) -> String {
    let mut s = String::from("contrast,z\n");
    for (c, z) in a.contrasts.iter().zip(&a.z) {
        let _ = writeln!(s, "{c},{z}");
    }
    s
}

pub fn oc_csv(r: &OcReport) -> String {
    let method = serde_json::to_value(r.method).expect("method serializes");
    format!(
        "scenario,method,kind,replicates,seed,planned_n,rej_interim,rej_final,overall,expected_n,se_rej_interim,se_rej_final,se_overall,se_expected_n\n\
         {},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
        r.scenario,
        method.as_str().unwrap_or_default(),
        r.kind.as_str(),
        r.replicates,
        r.seed,
        r.planned_n,
        r.rej_interim,
        r.rej_final,
        r.overall,
        r.expected_n,
        r.se_rej_interim,
        r.se_rej_final,
        r.se_overall,
        r.se_expected_n
    )
}
