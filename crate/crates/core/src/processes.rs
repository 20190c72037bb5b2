//! Weighted event and at-risk processes evaluated at the observed event times.

use alloc::vec;
use alloc::vec::Vec;

use crate::design::{Dtr, SmartDesign};
use crate::record::PatientRecord;
use crate::snapshot::AnalysisSnapshot;
use crate::weights::{first_stage_class, jump_time, second_stage_class, WeightClass};

/// Per-regime weight slots of one patient before and after `t1`.
#[derive(Debug, Clone)]
pub(crate) struct PatientWeights {
    pub pre: Vec<usize>,
    pub post: Vec<usize>,
    /// `t1` when the jump happens within follow-up.
    pub switch_at: Option<f64>,
}

impl PatientWeights {
    pub fn new(design: &SmartDesign, dtrs: &[Dtr], rec: &PatientRecord) -> Self {
        PatientWeights {
            pre: dtrs.iter().map(|&d| first_stage_class(d, rec).slot()).collect(),
            post: dtrs.iter().map(|&d| second_stage_class(design.kind, d, rec).slot()).collect(),
            switch_at: jump_time(rec).filter(|&t1| t1 <= rec.u),
        }
    }

    pub fn slots_at(&self, s: f64) -> &[usize] {
        match self.switch_at {
            Some(t1) if s >= t1 => &self.post,
            _ => &self.pre,
        }
    }
}

/// All regimes' weighted processes on the common grid of distinct event times.
#[derive(Debug, Clone, PartialEq)]
pub struct EventGrid {
    pub dtrs: Vec<Dtr>,
    pub times: Vec<f64>,
    /// Pooled at-risk count `Y(s)`.
    pub at_risk: Vec<f64>,
    /// Pooled event count `dN(s)`.
    pub events: Vec<f64>,
    /// `Ybar_d(s)`, indexed `[regime][time]`.
    pub ybar: Vec<Vec<f64>>,
    /// `dNbar_d(s)`, indexed `[regime][time]`.
    pub dnbar: Vec<Vec<f64>>,
}

impl EventGrid {
    pub fn build(snapshot: &AnalysisSnapshot, design: &SmartDesign) -> Self {
        let dtrs = design.dtrs();
        let n_dtr = dtrs.len();
        let recs = &snapshot.records;
        let table = WeightClass::table(design);
        let pw: Vec<PatientWeights> = recs.iter().map(|r| PatientWeights::new(design, &dtrs, r)).collect();

        let mut times: Vec<f64> = recs.iter().filter(|r| r.delta).map(|r| r.u).collect();
        times.sort_by(f64::total_cmp);
        times.dedup();

        let mut by_u: Vec<usize> = (0..recs.len()).collect();
        by_u.sort_by(|&a, &b| recs[a].u.total_cmp(&recs[b].u));
        let mut by_switch: Vec<usize> = (0..recs.len()).filter(|&i| pw[i].switch_at.is_some()).collect();
        by_switch.sort_by(|&a, &b| pw[a].switch_at.unwrap().total_cmp(&pw[b].switch_at.unwrap()));

        // Integer occupancy per (regime, weight slot) keeps Ybar exactly zero on empty risk sets.
        let mut counts = vec![[0i64; WeightClass::SLOTS]; n_dtr];
        for w in &pw {
            for (d, &slot) in w.pre.iter().enumerate() {
                counts[d][slot] += 1;
            }
        }
        let mut present = recs.len();

        let n_t = times.len();
        let mut grid = EventGrid {
            dtrs,
            times: Vec::with_capacity(n_t),
            at_risk: Vec::with_capacity(n_t),
            events: Vec::with_capacity(n_t),
            ybar: vec![Vec::with_capacity(n_t); n_dtr],
            dnbar: vec![Vec::with_capacity(n_t); n_dtr],
        };

        let (mut sw, mut rm) = (0, 0);
        for &s in &times {
            while sw < by_switch.len() && pw[by_switch[sw]].switch_at.unwrap() <= s {
                let w = &pw[by_switch[sw]];
                for d in 0..n_dtr {
                    counts[d][w.pre[d]] -= 1;
                    counts[d][w.post[d]] += 1;
                }
                sw += 1;
            }
            while rm < by_u.len() && recs[by_u[rm]].u < s {
                let w = &pw[by_u[rm]];
                let slots = if w.switch_at.is_some() { &w.post } else { &w.pre };
                for d in 0..n_dtr {
                    counts[d][slots[d]] -= 1;
                }
                present -= 1;
                rm += 1;
            }

            let mut dn = 0.0;
            let mut dnbar = vec![0.0; n_dtr];
            let mut k = rm;
            while k < by_u.len() && recs[by_u[k]].u == s {
                let i = by_u[k];
                if recs[i].delta {
                    dn += 1.0;
                    for (d, &slot) in pw[i].slots_at(s).iter().enumerate() {
                        dnbar[d] += table[slot];
                    }
                }
                k += 1;
            }

            grid.times.push(s);
            grid.at_risk.push(present as f64);
            grid.events.push(dn);
            for d in 0..n_dtr {
                let y: f64 = counts[d].iter().zip(&table).map(|(&c, &v)| c as f64 * v).sum();
                grid.ybar[d].push(y);
                grid.dnbar[d].push(dnbar[d]);
            }
        }
        grid
    }

    pub fn dtr_index(&self, dtr: Dtr) -> Option<usize> {
        self.dtrs.iter().position(|&d| d == dtr)
    }
}

/// One regime's weighted counting processes.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedProcesses {
    pub dtr: Dtr,
    pub event_times: Vec<f64>,
    pub nbar_increments: Vec<f64>,
    pub ybar: Vec<f64>,
    pub n_increments: Vec<f64>,
    pub y: Vec<f64>,
}

pub fn weighted_processes(snapshot: &AnalysisSnapshot, design: &SmartDesign, dtr: Dtr) -> WeightedProcesses {
    let mut grid = EventGrid::build(snapshot, design);
    let d = grid.dtr_index(dtr).expect("regime must belong to the design");
    WeightedProcesses {
        dtr,
        event_times: grid.times,
        nbar_increments: grid.dnbar.swap_remove(d),
        ybar: grid.ybar.swap_remove(d),
        n_increments: grid.events,
        y: grid.at_risk,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::Arm;
    use crate::record::{Response, StageTwo};
    use crate::snapshot::snapshot;

    #[test]
    fn single_responder_on_path() {
        let rec = PatientRecord {
            id: 1,
            enroll_time: 0.0,
            arm: Arm::One,
            stage_two: StageTwo::Reached {
                t1: 0.5,
                response: Response::Responder { maintenance: Arm::One },
            },
            u: 1.0,
            delta: true,
            latent: None,
        };
        let snap = snapshot(&[rec], 5.0).unwrap();
        let p = weighted_processes(&snap, &SmartDesign::smart1_balanced(), "A1B1C1".parse().unwrap());
        assert_eq!(p.event_times, [1.0]);
        assert_eq!(p.nbar_increments, [4.0]);
        assert_eq!(p.ybar, [4.0]);
        assert_eq!(p.n_increments, [1.0]);
    }

    #[test]
    fn no_events_gives_empty_processes() {
        let rec = PatientRecord {
            id: 1,
            enroll_time: 0.0,
            arm: Arm::Two,
            stage_two: StageTwo::Unknown,
            u: 1.0,
            delta: false,
            latent: None,
        };
        let snap = snapshot(&[rec], 5.0).unwrap();
        let p = weighted_processes(&snap, &SmartDesign::smart2_balanced(), "A2B1".parse().unwrap());
        assert!(p.event_times.is_empty());
        assert!(p.ybar.is_empty());
    }
}
