//! Observed data for one trial participant.

use alloc::format;

use crate::design::{Arm, DesignKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Response {
    Responder { maintenance: Arm },
    /// `salvage` is `Some` in SMART1 and `None` in SMART2.
    NonResponder { salvage: Option<Arm> },
}

/// Second-stage status as known to the analyst.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StageTwo {
    /// Not (yet) observed. The weight stays in its first-stage branch.
    Unknown,
    /// Died during stage one (`eta = 0`).
    NotReached,
    /// Entered stage two after `t1` years; response and second-stage arm known.
    Reached { t1: f64, response: Response },
}

/// Latent survival and censoring times, kept only for simulated data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Latent {
    pub survival: f64,
    pub censoring: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatientRecord {
    pub id: u64,
    /// Calendar time of randomization, in years.
    pub enroll_time: f64,
    pub arm: Arm,
    pub stage_two: StageTwo,
    /// Observed follow-up since randomization, `min(T, V)`.
    pub u: f64,
    pub delta: bool,
    pub latent: Option<Latent>,
}

impl PatientRecord {
    pub fn validate(&self, kind: DesignKind) -> Result<()> {
        let bad = |field: &'static str, reason: alloc::string::String| Error::Validation {
            id: self.id,
            field,
            reason,
        };
        if !(self.enroll_time.is_finite() && self.enroll_time >= 0.0) {
            return Err(bad("enroll_time", format!("must be finite and >= 0, got {}", self.enroll_time)));
        }
        if !(self.u.is_finite() && self.u >= 0.0) {
            return Err(bad("u", format!("must be finite and >= 0, got {}", self.u)));
        }
        if let StageTwo::Reached { t1, response } = self.stage_two {
            if !(t1.is_finite() && t1 >= 0.0) {
                return Err(bad("t1", format!("must be finite and >= 0, got {t1}")));
            }
            if t1 > self.u {
                return Err(bad("t1", format!("stage-one duration {t1} exceeds follow-up {}", self.u)));
            }
            if let Response::NonResponder { salvage } = response {
                match (kind, salvage) {
                    (DesignKind::Smart1, None) => {
                        return Err(bad("c", "SMART1 non-responder needs a salvage arm".into()))
                    }
                    (DesignKind::Smart2, Some(_)) => {
                        return Err(bad("c", "SMART2 non-responders are not re-randomized".into()))
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    /// Whether the response status is observed at study time `s` (`D_i(s)`).
    pub fn response_known_at(&self, s: f64) -> bool {
        matches!(self.stage_two, StageTwo::Reached { t1, .. } if s >= t1)
    }

    pub fn swapped(&self) -> Self {
        let stage_two = match self.stage_two {
            StageTwo::Reached { t1, response } => StageTwo::Reached {
                t1,
                response: match response {
                    Response::Responder { maintenance } => Response::Responder {
                        maintenance: maintenance.swapped(),
                    },
                    Response::NonResponder { salvage } => Response::NonResponder {
                        salvage: salvage.map(Arm::swapped),
                    },
                },
            },
            other => other,
        };
        PatientRecord { arm: self.arm.swapped(), stage_two, ..self.clone() }
    }
}

/// Column-level view of a record: `id,enroll_time,a,eta,t1,r,b,c,u,delta`.
#[derive(Debug, Clone, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FlatRecord {
    pub id: u64,
    pub enroll_time: f64,
    pub a: u8,
    pub eta: Option<u8>,
    pub t1: Option<f64>,
    pub r: Option<u8>,
    pub b: Option<u8>,
    pub c: Option<u8>,
    pub u: f64,
    pub delta: u8,
}

/// Adjustments applied while converting a flat row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IngestNote {
    /// `eta = 1` with missing response: follow-up truncated at `t1` and the
    /// record treated as censored with unknown second-stage status.
    ResponseMissingCensoredAtT1,
}

impl FlatRecord {
    pub fn into_record(self, kind: DesignKind) -> Result<(PatientRecord, Option<IngestNote>)> {
        let id = self.id;
        let bad = |field: &'static str, reason: &str| Error::Validation {
            id,
            field,
            reason: reason.into(),
        };
        let flag = |field: &'static str, v: u8| match v {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(bad(field, "must be 0 or 1")),
        };
        let arm = |field: &'static str, v: u8| Arm::try_from(v).map_err(|_| bad(field, "must be 1 or 2"));

        let a = arm("a", self.a)?;
        let delta = flag("delta", self.delta)?;
        let mut u = self.u;
        let mut delta = delta;
        let mut note = None;

        let stage_two = match self.eta.map(|e| flag("eta", e)).transpose()? {
            None | Some(false) => {
                if self.t1.is_some() || self.r.is_some() || self.b.is_some() || self.c.is_some() {
                    return Err(bad("eta", "second-stage fields present without eta = 1"));
                }
                if self.eta.is_some() {
                    StageTwo::NotReached
                } else {
                    StageTwo::Unknown
                }
            }
            Some(true) => {
                let t1 = self.t1.ok_or_else(|| bad("t1", "required when eta = 1"))?;
                if t1 > u {
                    return Err(bad("t1", "stage-one duration exceeds follow-up u"));
                }
                match self.r.map(|r| flag("r", r)).transpose()? {
                    None => {
                        if self.b.is_some() || self.c.is_some() {
                            return Err(bad("r", "second-stage arm present without a response"));
                        }
                        u = t1;
                        delta = false;
                        note = Some(IngestNote::ResponseMissingCensoredAtT1);
                        StageTwo::Unknown
                    }
                    Some(true) => {
                        if self.c.is_some() {
                            return Err(bad("c", "salvage arm present for a responder"));
                        }
                        let b = self.b.ok_or_else(|| bad("b", "required for responders"))?;
                        StageTwo::Reached {
                            t1,
                            response: Response::Responder { maintenance: arm("b", b)? },
                        }
                    }
                    Some(false) => {
                        if self.b.is_some() {
                            return Err(bad("b", "maintenance arm present for a non-responder"));
                        }
                        let salvage = match (kind, self.c) {
                            (DesignKind::Smart1, Some(c)) => Some(arm("c", c)?),
                            (DesignKind::Smart1, None) => {
                                return Err(bad("c", "required for SMART1 non-responders"))
                            }
                            (DesignKind::Smart2, Some(_)) => {
                                return Err(bad("c", "SMART2 non-responders have no salvage arm"))
                            }
                            (DesignKind::Smart2, None) => None,
                        };
                        StageTwo::Reached { t1, response: Response::NonResponder { salvage } }
                    }
                }
            }
        };

        let rec = PatientRecord {
            id,
            enroll_time: self.enroll_time,
            arm: a,
            stage_two,
            u,
            delta,
            latent: None,
        };
        rec.validate(kind)?;
        Ok((rec, note))
    }
}

impl From<&PatientRecord> for FlatRecord {
    fn from(r: &PatientRecord) -> Self {
        let mut f = FlatRecord {
            id: r.id,
            enroll_time: r.enroll_time,
            a: r.arm.into(),
            u: r.u,
            delta: r.delta as u8,
            ..Default::default()
        };
        match r.stage_two {
            StageTwo::Unknown => {}
            StageTwo::NotReached => f.eta = Some(0),
            StageTwo::Reached { t1, response } => {
                f.eta = Some(1);
                f.t1 = Some(t1);
                match response {
                    Response::Responder { maintenance } => {
                        f.r = Some(1);
                        f.b = Some(maintenance.into());
                    }
                    Response::NonResponder { salvage } => {
                        f.r = Some(0);
                        f.c = salvage.map(u8::from);
                    }
                }
            }
        }
        f
    }
}
