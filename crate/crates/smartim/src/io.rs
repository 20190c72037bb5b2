//! Patient CSV files: `id,enroll_time,a,eta,t1,r,b,c,u,delta`.

use std::collections::BTreeSet;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::Deserialize;
use smartim_core::record::IngestNote;
use smartim_core::{DesignKind, FlatRecord, PatientRecord};

use crate::error::{Error, Result};

pub const COLUMNS: [&str; 10] = ["id", "enroll_time", "a", "eta", "t1", "r", "b", "c", "u", "delta"];

const DAYS_PER_YEAR: f64 = 365.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum TimeUnit {
    #[default]
    Years,
    Days,
}

impl TimeUnit {
    fn to_years(self, x: f64) -> f64 {
        match self {
            TimeUnit::Years => x,
            TimeUnit::Days => x / DAYS_PER_YEAR,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IngestOptions {
    pub kind: DesignKind,
    pub time_unit: TimeUnit,
    /// Spread enrollment uniformly over `[0, window)` in file order,
    /// replacing any `enroll_time` column.
    pub uniform_accrual: Option<f64>,
}

impl IngestOptions {
    pub fn new(kind: DesignKind) -> Self {
        IngestOptions { kind, time_unit: TimeUnit::Years, uniform_accrual: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub records: Vec<PatientRecord>,
    pub notes: Vec<(u64, IngestNote)>,
    /// SHA-256 of the raw file contents.
    pub digest: String,
}

#[derive(Debug, Deserialize)]
struct Row {
    id: u64,
    #[serde(default)]
    enroll_time: Option<f64>,
    a: u8,
    eta: Option<u8>,
    t1: Option<f64>,
    r: Option<u8>,
    b: Option<u8>,
    c: Option<u8>,
    u: f64,
    delta: u8,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::Digest;
    hex::encode(sha2::Sha256::digest(bytes))
}

pub fn read_records(path: &Path, opts: IngestOptions) -> Result<Ingested> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_records(&bytes, &path.display().to_string(), opts)
}

pub fn read_records_from(mut reader: impl Read, label: &str, opts: IngestOptions) -> Result<Ingested> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes).map_err(|e| Error::io(label, e))?;
    parse_records(&bytes, label, opts)
}

fn parse_records(bytes: &[u8], label: &str, opts: IngestOptions) -> Result<Ingested> {
    let format = |message: String| Error::Format { path: label.to_string(), message };
    if let Some(w) = opts.uniform_accrual {
        if !(w >= 0.0 && w.is_finite()) {
            return Err(Error::Usage(format!("accrual window must be nonnegative, got {w}")));
        }
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes);
    let headers = rdr.headers().map_err(|e| format(e.to_string()))?.clone();
    let present: BTreeSet<&str> = headers.iter().collect();
    for col in COLUMNS {
        let optional = col == "enroll_time" && opts.uniform_accrual.is_some();
        if !optional && !present.contains(col) {
            return Err(format(format!("missing required column `{col}`")));
        }
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| format(e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let row: Row = rec
            .deserialize(Some(&headers))
            .map_err(|e| Error::Row { path: label.into(), row: line, message: e.to_string() })?;
        rows.push((line, row));
    }
    let total = rows.len();
    let mut seen = BTreeSet::new();
    let mut records = Vec::with_capacity(total);
    let mut notes = Vec::new();
    for (i, (line, row)) in rows.into_iter().enumerate() {
        let row_err = |message: String| Error::Row { path: label.into(), row: line, message };
        if !seen.insert(row.id) {
            return Err(row_err(format!("duplicate id {}", row.id)));
        }
        let enroll_time = match opts.uniform_accrual {
            Some(w) => w * i as f64 / total as f64,
            None => opts.time_unit.to_years(row.enroll_time.ok_or_else(|| row_err("enroll_time is empty".into()))?),
        };
        let flat = FlatRecord {
            id: row.id,
            enroll_time,
            a: row.a,
            eta: row.eta,
            t1: row.t1.map(|t| opts.time_unit.to_years(t)),
            r: row.r,
            b: row.b,
            c: row.c,
            u: opts.time_unit.to_years(row.u),
            delta: row.delta,
        };
        let (rec, note) = flat.into_record(opts.kind).map_err(|e| row_err(e.to_string()))?;
        if let Some(n) = note {
            log::warn!("{label}, row {line}: id {}: {n:?}", rec.id);
            notes.push((rec.id, n));
        }
        records.push(rec);
    }
    Ok(Ingested { records, notes, digest: sha256_hex(bytes) })
}

pub fn write_records_to(writer: impl Write, records: &[PatientRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let err = |e: csv::Error| Error::Format { path: "<output>".into(), message: e.to_string() };
    for r in records {
        w.serialize(FlatRecord::from(r)).map_err(err)?;
    }
    if records.is_empty() {
        w.write_record(COLUMNS).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io("<output>", e))?;
    Ok(())
}

pub fn write_records(path: &Path, records: &[PatientRecord]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_records_to(std::io::BufWriter::new(file), records)
}
