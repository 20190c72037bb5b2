//! Time-dependent inverse-probability weights.
//!
//! A patient randomized to `A_j` carries `1/ell_j` until the response status
//! becomes known at `t1`; from then on the weight is multiplied by the inverse
//! second-stage randomization probability of the arm actually received (or by
//! one for SMART2 non-responders). Paths inconsistent with the regime get 0.

use crate::design::{Arm, DesignKind, Dtr, SmartDesign};
use crate::record::{PatientRecord, Response, StageTwo};

#[derive(Debug, Clone, Copy)]
pub struct WeightQuery<'a> {
    pub patient: &'a PatientRecord,
    pub dtr: Dtr,
    /// Study time (years since randomization).
    pub s: f64,
}

/// The finitely many values a weight can take under a given design.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightClass {
    Zero,
    FirstStage(Arm),
    Responder(Arm, Arm),
    NonResponder(Arm, Arm),
    /// SMART2 non-responder: no second randomization, factor one.
    Unrandomized(Arm),
}

impl WeightClass {
    pub const SLOTS: usize = 13;

    pub fn slot(self) -> usize {
        match self {
            WeightClass::Zero => 0,
            WeightClass::FirstStage(j) => 1 + j.index(),
            WeightClass::Responder(j, k) => 3 + 2 * j.index() + k.index(),
            WeightClass::NonResponder(j, l) => 7 + 2 * j.index() + l.index(),
            WeightClass::Unrandomized(j) => 11 + j.index(),
        }
    }

    pub fn value(self, design: &SmartDesign) -> f64 {
        let first = |j: Arm| 1.0 / design.ell[j.index()];
        match self {
            WeightClass::Zero => 0.0,
            WeightClass::FirstStage(j) | WeightClass::Unrandomized(j) => first(j),
            WeightClass::Responder(j, k) => first(j) * (1.0 / design.p[k.index()]),
            WeightClass::NonResponder(j, l) => {
                let q = design.q.expect("SMART1 design carries salvage probabilities");
                first(j) * (1.0 / q[l.index()])
            }
        }
    }

    /// Value of every slot, indexed by [`WeightClass::slot`].
    pub fn table(design: &SmartDesign) -> [f64; Self::SLOTS] {
        let mut t = [0.0; Self::SLOTS];
        for j in [Arm::One, Arm::Two] {
            t[WeightClass::FirstStage(j).slot()] = WeightClass::FirstStage(j).value(design);
            t[WeightClass::Unrandomized(j).slot()] = WeightClass::Unrandomized(j).value(design);
            for k in [Arm::One, Arm::Two] {
                t[WeightClass::Responder(j, k).slot()] = WeightClass::Responder(j, k).value(design);
                if design.q.is_some() {
                    let c = WeightClass::NonResponder(j, k);
                    t[c.slot()] = c.value(design);
                }
            }
        }
        t
    }
}

/// Weight class before the response status is known.
pub fn first_stage_class(dtr: Dtr, patient: &PatientRecord) -> WeightClass {
    if patient.arm == dtr.initial {
        WeightClass::FirstStage(patient.arm)
    } else {
        WeightClass::Zero
    }
}

/// Weight class once the response status is known.
pub fn second_stage_class(kind: DesignKind, dtr: Dtr, patient: &PatientRecord) -> WeightClass {
    let j = patient.arm;
    if j != dtr.initial {
        return WeightClass::Zero;
    }
    match patient.stage_two {
        StageTwo::Reached { response, .. } => match (response, kind) {
            (Response::Responder { maintenance }, _) if maintenance == dtr.maintenance => {
                WeightClass::Responder(j, maintenance)
            }
            (Response::Responder { .. }, _) => WeightClass::Zero,
            (Response::NonResponder { .. }, DesignKind::Smart2) => WeightClass::Unrandomized(j),
            (Response::NonResponder { salvage }, DesignKind::Smart1) => {
                let l = salvage.expect("validated SMART1 non-responder has a salvage arm");
                if Some(l) == dtr.salvage {
                    WeightClass::NonResponder(j, l)
                } else {
                    WeightClass::Zero
                }
            }
        },
        // D_i(s) = 0 for every s.
        StageTwo::Unknown | StageTwo::NotReached => WeightClass::FirstStage(j),
    }
}

/// Class of `W_{dtr,i}(s)`.
pub fn weight_class(design: &SmartDesign, q: WeightQuery<'_>) -> WeightClass {
    debug_assert!(q.s >= 0.0);
    if q.patient.response_known_at(q.s) {
        second_stage_class(design.kind, q.dtr, q.patient)
    } else {
        first_stage_class(q.dtr, q.patient)
    }
}

/// `W_{dtr,i}(s)`.
pub fn weight(design: &SmartDesign, q: WeightQuery<'_>) -> f64 {
    weight_class(design, q).value(design)
}

/// Study time at which the weight switches to its second-stage value.
pub fn jump_time(patient: &PatientRecord) -> Option<f64> {
    match patient.stage_two {
        StageTwo::Reached { t1, .. } => Some(t1),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;
    use proptest::prelude::*;

    fn patient(arm: Arm, stage_two: StageTwo) -> PatientRecord {
        PatientRecord { id: 1, enroll_time: 0.0, arm, stage_two, u: 5.0, delta: true, latent: None }
    }

    fn responder(arm: Arm, b: Arm, t1: f64) -> PatientRecord {
        patient(arm, StageTwo::Reached { t1, response: Response::Responder { maintenance: b } })
    }

    fn w(d: &SmartDesign, p: &PatientRecord, dtr: &str, s: f64) -> f64 {
        weight(d, WeightQuery { patient: p, dtr: dtr.parse().unwrap(), s })
    }

    #[test]
    fn first_stage_weight() {
        let d = SmartDesign::smart1_balanced();
        let p = responder(Arm::One, Arm::One, 1.0);
        assert_eq!(w(&d, &p, "A1B1C1", 0.5), 2.0);
    }

    #[test]
    fn responder_after_t1() {
        let d = SmartDesign::smart1_balanced();
        let p = responder(Arm::One, Arm::One, 1.0);
        assert_eq!(w(&d, &p, "A1B1C1", 1.0), 4.0);
        assert_eq!(w(&d, &p, "A1B1C2", 3.0), 4.0);
        assert_eq!(w(&d, &p, "A1B2C1", 3.0), 0.0);
    }

    #[test]
    fn other_first_stage_arm_is_zero() {
        let d = SmartDesign::smart1_balanced();
        let p = responder(Arm::Two, Arm::One, 1.0);
        for s in [0.0, 0.9, 1.0, 4.0] {
            assert_eq!(w(&d, &p, "A1B1C1", s), 0.0);
        }
    }

    #[test]
    fn smart2_non_responder_keeps_first_stage_weight() {
        let d = SmartDesign::smart2_balanced();
        let p = patient(
            Arm::One,
            StageTwo::Reached { t1: 0.5, response: Response::NonResponder { salvage: None } },
        );
        assert_eq!(w(&d, &p, "A1B1", 1.0), 2.0);
        assert_eq!(w(&d, &p, "A1B2", 1.0), 2.0);
    }

    #[test]
    fn stage_one_death_never_jumps() {
        let d = SmartDesign { ell: [0.3, 0.7], ..SmartDesign::smart1_balanced() };
        let p = patient(Arm::Two, StageTwo::NotReached);
        assert_eq!(w(&d, &p, "A2B1C2", 4.9), 1.0 / 0.7);
    }

    #[test]
    fn unbalanced_values() {
        let d = SmartDesign {
            ell: [0.25, 0.75],
            p: [0.4, 0.6],
            q: Some([0.2, 0.8]),
            ..SmartDesign::smart1_balanced()
        };
        let nr = patient(
            Arm::One,
            StageTwo::Reached { t1: 0.5, response: Response::NonResponder { salvage: Some(Arm::Two) } },
        );
        assert!((w(&d, &nr, "A1B2C2", 1.0) - 4.0 / 0.8).abs() < 1e-12);
        let r = responder(Arm::Two, Arm::Two, 0.5);
        assert!((w(&d, &r, "A2B2C1", 1.0) - 1.0 / (0.75 * 0.6)).abs() < 1e-12);
    }

    fn arb_patient(kind: DesignKind) -> impl Strategy<Value = PatientRecord> {
        (0..2usize, 0..4usize, 0..2usize, 0.0..2.0f64).prop_map(move |(a, status, arm2, t1)| {
            let arm = Arm::from_index(a);
            let second = Arm::from_index(arm2);
            let stage_two = match status {
                0 => StageTwo::Unknown,
                1 => StageTwo::NotReached,
                2 => StageTwo::Reached { t1, response: Response::Responder { maintenance: second } },
                _ => StageTwo::Reached {
                    t1,
                    response: Response::NonResponder {
                        salvage: (kind == DesignKind::Smart1).then_some(second),
                    },
                },
            };
            patient(arm, stage_two)
        })
    }

    proptest! {
        #[test]
        fn balanced_smart1_mass_is_eight(p in arb_patient(DesignKind::Smart1), s in 0.0..5.0f64) {
            let d = SmartDesign::smart1_balanced();
            let total: f64 = d.dtrs().into_iter()
                .map(|dtr| weight(&d, WeightQuery { patient: &p, dtr, s }))
                .sum();
            prop_assert_eq!(total, 8.0);
        }

        #[test]
        fn weight_is_a_single_step(p in arb_patient(DesignKind::Smart2), s in 0.0..5.0f64, t in 0.0..5.0f64) {
            let d = SmartDesign { ell: [0.4, 0.6], p: [0.3, 0.7], ..SmartDesign::smart2_balanced() };
            let jump = jump_time(&p).unwrap_or(f64::INFINITY);
            for dtr in d.dtrs() {
                let a = weight(&d, WeightQuery { patient: &p, dtr, s });
                let b = weight(&d, WeightQuery { patient: &p, dtr, s: t });
                if (s < jump) == (t < jump) {
                    prop_assert_eq!(a, b);
                }
                prop_assert!(a >= 0.0);
            }
        }

        #[test]
        fn table_matches_value(p in arb_patient(DesignKind::Smart1), s in 0.0..3.0f64) {
            let d = SmartDesign { ell: [0.4, 0.6], p: [0.3, 0.7], q: Some([0.55, 0.45]), ..SmartDesign::smart1_balanced() };
            let table = WeightClass::table(&d);
            let vals: Vec<f64> = d.dtrs().into_iter().map(|dtr| {
                let c = weight_class(&d, WeightQuery { patient: &p, dtr, s });
                prop_assert_eq!(table[c.slot()], c.value(&d));
                Ok(c.value(&d))
            }).collect::<Result<_, _>>()?;
            prop_assert_eq!(vals.len(), 8);
        }
    }
}
