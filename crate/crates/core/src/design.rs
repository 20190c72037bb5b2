//! SMART design description and the catalog of embedded regimes.

use alloc::format;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{arg, Result};

/// Treatment option index at one decision point (1 or 2).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "u8", into = "u8"))]
pub enum Arm {
    One,
    Two,
}

impl Arm {
    pub fn index(self) -> usize {
        match self {
            Arm::One => 0,
            Arm::Two => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            Arm::One
        } else {
            Arm::Two
        }
    }

    pub fn swapped(self) -> Self {
        match self {
            Arm::One => Arm::Two,
            Arm::Two => Arm::One,
        }
    }
}

impl TryFrom<u8> for Arm {
    type Error = crate::Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            1 => Ok(Arm::One),
            2 => Ok(Arm::Two),
            other => Err(arg(format!("arm index must be 1 or 2, got {other}"))),
        }
    }
}

impl From<Arm> for u8 {
    fn from(a: Arm) -> u8 {
        a.index() as u8 + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum DesignKind {
    /// Responders and non-responders are both re-randomized (8 regimes).
    Smart1,
    /// Only responders are re-randomized (4 regimes).
    Smart2,
}

/// An embedded dynamic treatment regime `A_j B_k [C_l]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Dtr {
    pub initial: Arm,
    pub maintenance: Arm,
    /// Salvage option for non-responders; `None` for SMART2 regimes.
    pub salvage: Option<Arm>,
}

impl Dtr {
    pub fn smart1(a: Arm, b: Arm, c: Arm) -> Self {
        Dtr { initial: a, maintenance: b, salvage: Some(c) }
    }

    pub fn smart2(a: Arm, b: Arm) -> Self {
        Dtr { initial: a, maintenance: b, salvage: None }
    }

    pub fn swapped(self) -> Self {
        Dtr {
            initial: self.initial.swapped(),
            maintenance: self.maintenance.swapped(),
            salvage: self.salvage.map(Arm::swapped),
        }
    }
}

impl fmt::Display for Dtr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "A{}B{}", u8::from(self.initial), u8::from(self.maintenance))?;
        if let Some(c) = self.salvage {
            write!(f, "C{}", u8::from(c))?;
        }
        Ok(())
    }
}

impl core::str::FromStr for Dtr {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || arg(format!("cannot parse regime label `{s}`"));
        let b = s.as_bytes();
        let digit = |c: u8| match c {
            b'1' => Ok(Arm::One),
            b'2' => Ok(Arm::Two),
            _ => Err(bad()),
        };
        match b {
            [b'A', a, b'B', k] => Ok(Dtr::smart2(digit(*a)?, digit(*k)?)),
            [b'A', a, b'B', k, b'C', l] => Ok(Dtr::smart1(digit(*a)?, digit(*k)?, digit(*l)?)),
            _ => Err(bad()),
        }
    }
}

#[cfg(feature = "serde")]
impl serde::Serialize for Dtr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> core::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[cfg(feature = "serde")]
impl<'de> serde::Deserialize<'de> for Dtr {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> core::result::Result<Self, D::Error> {
        let s = <alloc::string::String as serde::Deserialize>::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Randomization structure of a two-stage SMART.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SmartDesign {
    pub kind: DesignKind,
    /// First-stage randomization probabilities.
    pub ell: [f64; 2],
    /// Maintenance randomization probabilities for responders.
    pub p: [f64; 2],
    /// Salvage randomization probabilities for non-responders (SMART1 only).
    #[cfg_attr(feature = "serde", serde(default))]
    pub q: Option<[f64; 2]>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub reference: Option<Dtr>,
}

const PROB_TOL: f64 = 1e-9;

impl SmartDesign {
    /// SMART1 with every randomization at 1/2.
    pub fn smart1_balanced() -> Self {
        SmartDesign {
            kind: DesignKind::Smart1,
            ell: [0.5, 0.5],
            p: [0.5, 0.5],
            q: Some([0.5, 0.5]),
            reference: None,
        }
    }

    /// SMART2 with every randomization at 1/2.
    pub fn smart2_balanced() -> Self {
        SmartDesign {
            kind: DesignKind::Smart2,
            ell: [0.5, 0.5],
            p: [0.5, 0.5],
            q: None,
            reference: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        fn pair(name: &str, v: [f64; 2]) -> Result<()> {
            if v.iter().any(|&x| !(x > 0.0 && x < 1.0)) {
                return Err(arg(format!("{name} probabilities must lie in (0,1), got {v:?}")));
            }
            if (v[0] + v[1] - 1.0).abs() > PROB_TOL {
                return Err(arg(format!("{name} probabilities must sum to 1, got {v:?}")));
            }
            Ok(())
        }
        pair("first-stage", self.ell)?;
        pair("maintenance", self.p)?;
        match (self.kind, self.q) {
            (DesignKind::Smart1, Some(q)) => pair("salvage", q)?,
            (DesignKind::Smart1, None) => {
                return Err(arg("SMART1 requires salvage probabilities q"))
            }
            (DesignKind::Smart2, Some(_)) => {
                return Err(arg("SMART2 has no salvage randomization; q must be absent"))
            }
            (DesignKind::Smart2, None) => {}
        }
        if let Some(r) = self.reference {
            if !self.dtrs().contains(&r) {
                return Err(arg(format!("reference regime {r} is not embedded in this design")));
            }
        }
        Ok(())
    }

    /// Embedded regimes in canonical order (`A1B1C1, A1B1C2, ..., A2B2C2`).
    pub fn dtrs(&self) -> Vec<Dtr> {
        let arms = [Arm::One, Arm::Two];
        let mut out = Vec::with_capacity(8);
        for &a in &arms {
            for &b in &arms {
                match self.kind {
                    DesignKind::Smart1 => {
                        for &c in &arms {
                            out.push(Dtr::smart1(a, b, c));
                        }
                    }
                    DesignKind::Smart2 => out.push(Dtr::smart2(a, b)),
                }
            }
        }
        out
    }

    pub fn n_dtrs(&self) -> usize {
        match self.kind {
            DesignKind::Smart1 => 8,
            DesignKind::Smart2 => 4,
        }
    }

    pub fn reference(&self) -> Dtr {
        self.reference.unwrap_or(match self.kind {
            DesignKind::Smart1 => Dtr::smart1(Arm::One, Arm::One, Arm::One),
            DesignKind::Smart2 => Dtr::smart2(Arm::One, Arm::One),
        })
    }

    pub fn reference_index(&self) -> usize {
        let r = self.reference();
        self.dtrs().iter().position(|d| *d == r).expect("reference validated")
    }

    /// Non-reference regimes, in catalog order; these index the LR contrast vector.
    pub fn contrasts(&self) -> Vec<Dtr> {
        let r = self.reference();
        self.dtrs().into_iter().filter(|d| *d != r).collect()
    }

    /// Degrees of freedom expected under the null for each statistic family.
    pub fn nominal_df(&self, kind: crate::StatKind) -> usize {
        use crate::StatKind::*;
        match (self.kind, kind) {
            (DesignKind::Smart1, Lr) => 7,
            (DesignKind::Smart1, Td) => 5,
            (DesignKind::Smart2, _) => 3,
        }
    }

    /// Same design with arm labels 1 and 2 exchanged at every decision point.
    pub fn swapped(&self) -> Self {
        let flip = |v: [f64; 2]| [v[1], v[0]];
        SmartDesign {
            kind: self.kind,
            ell: flip(self.ell),
            p: flip(self.p),
            q: self.q.map(flip),
            reference: Some(self.reference().swapped()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    #[test]
    fn catalog_sizes_and_reference() {
        let d1 = SmartDesign::smart1_balanced();
        assert_eq!(d1.dtrs().len(), 8);
        assert_eq!(d1.contrasts().len(), 7);
        assert_eq!(d1.reference().to_string(), "A1B1C1");
        let d2 = SmartDesign::smart2_balanced();
        assert_eq!(d2.dtrs().len(), 4);
        assert_eq!(d2.contrasts().len(), 3);
        assert_eq!(d2.reference_index(), 0);
    }

    #[test]
    fn labels_round_trip() {
        for d in SmartDesign::smart1_balanced().dtrs() {
            let s = d.to_string();
            assert_eq!(s.parse::<Dtr>().unwrap(), d);
        }
        assert!("A3B1".parse::<Dtr>().is_err());
        assert!("A1B1C".parse::<Dtr>().is_err());
    }

    #[test]
    fn rejects_bad_probabilities() {
        let mut d = SmartDesign::smart1_balanced();
        d.ell = [0.6, 0.5];
        assert!(d.validate().is_err());
        let mut d = SmartDesign::smart2_balanced();
        d.q = Some([0.5, 0.5]);
        assert!(d.validate().is_err());
        let mut d = SmartDesign::smart1_balanced();
        d.p = [1.0, 0.0];
        assert!(d.validate().is_err());
    }
}
