//! Macroblock activity classes and the search plan attached to each.
//!
//! A macroblock is placed in the first tier whose SOD *and* DCOG bounds it
//! satisfies. Bounds scale linearly with QP: tier `n` accepts
//! `sod <= qp * k_n` and `dcog <= qp * d_n`. Anything past the third tier
//! is class C4 and gets the exhaustive plan.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ClassifierError {
    #[error("thresholds must satisfy 0 < k1 < k2 < k3 and 0 < d1 < d2 < d3, got k=({k1},{k2},{k3}) d=({d1},{d2},{d3})")]
    InvalidThresholds {
        k1: f64,
        k2: f64,
        k3: f64,
        d1: f64,
        d2: f64,
        d3: f64,
    },
    #[error("qp {0} outside [0, 51]")]
    QpRange(u8),
}

/// QP multipliers for the SOD (`k`) and DCOG (`d`) tier bounds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            k1: 4.0,
            k2: 10.0,
            k3: 20.0,
            d1: 0.5,
            d2: 1.5,
            d3: 3.0,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<(), ClassifierError> {
        let ordered = |a: f64, b: f64, c: f64| 0.0 < a && a < b && b < c;
        if ordered(self.k1, self.k2, self.k3) && ordered(self.d1, self.d2, self.d3) {
            Ok(())
        } else {
            Err(ClassifierError::InvalidThresholds {
                k1: self.k1,
                k2: self.k2,
                k3: self.k3,
                d1: self.d1,
                d2: self.d2,
                d3: self.d3,
            })
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ClassLabel {
    C1,
    C2,
    C3,
    C4,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 4] = [ClassLabel::C1, ClassLabel::C2, ClassLabel::C3, ClassLabel::C4];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Gray level used in class heat maps.
    pub fn gray_level(self) -> u8 {
        match self {
            ClassLabel::C1 => 64,
            ClassLabel::C2 => 128,
            ClassLabel::C3 => 192,
            ClassLabel::C4 => 255,
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "C{}", self.index() + 1)
    }
}

/// Macroblock coding modes. Declaration order is the tie-break order used
/// when two modes reach the same cost.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PartitionMode {
    Skip,
    P16x16,
    P16x8,
    P8x16,
    P8x8,
    P8x4,
    P4x8,
    P4x4,
    Intra,
}

impl PartitionMode {
    pub const INTER: [PartitionMode; 7] = [
        PartitionMode::P16x16,
        PartitionMode::P16x8,
        PartitionMode::P8x16,
        PartitionMode::P8x8,
        PartitionMode::P8x4,
        PartitionMode::P4x8,
        PartitionMode::P4x4,
    ];

    pub const ALL: [PartitionMode; 9] = [
        PartitionMode::Skip,
        PartitionMode::P16x16,
        PartitionMode::P16x8,
        PartitionMode::P8x16,
        PartitionMode::P8x8,
        PartitionMode::P8x4,
        PartitionMode::P4x8,
        PartitionMode::P4x4,
        PartitionMode::Intra,
    ];

    /// Partition width and height; `None` for SKIP and INTRA.
    pub fn partition_size(self) -> Option<(usize, usize)> {
        use PartitionMode::*;
        match self {
            P16x16 => Some((16, 16)),
            P16x8 => Some((16, 8)),
            P8x16 => Some((8, 16)),
            P8x8 => Some((8, 8)),
            P8x4 => Some((8, 4)),
            P4x8 => Some((4, 8)),
            P4x4 => Some((4, 4)),
            Skip | Intra => None,
        }
    }

    pub fn partition_count(self) -> usize {
        self.partition_size().map_or(0, |(w, h)| 256 / (w * h))
    }

    pub fn is_inter(self) -> bool {
        self.partition_size().is_some()
    }

    /// Code number signalled for the mode (SKIP is signalled separately).
    pub fn code_index(self) -> u32 {
        use PartitionMode::*;
        match self {
            Skip => 0,
            P16x16 => 0,
            P16x8 => 1,
            P8x16 => 2,
            P8x8 => 3,
            P8x4 => 4,
            P4x8 => 5,
            P4x4 => 6,
            Intra => 7,
        }
    }

    pub fn name(self) -> &'static str {
        use PartitionMode::*;
        match self {
            Skip => "SKIP",
            P16x16 => "16x16",
            P16x8 => "16x8",
            P8x16 => "8x16",
            P8x8 => "8x8",
            P8x4 => "8x4",
            P4x8 => "4x8",
            P4x4 => "4x4",
            Intra => "INTRA",
        }
    }
}

impl fmt::Display for PartitionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionPlan {
    pub class: ClassLabel,
    pub search_range: u32,
    pub modes: Vec<PartitionMode>,
}

impl DecisionPlan {
    /// The exhaustive plan: range 32 and every mode. Used by the baseline.
    pub fn exhaustive() -> Self {
        plan_for_class(ClassLabel::C4)
    }

    pub fn allows(&self, mode: PartitionMode) -> bool {
        self.modes.contains(&mode)
    }
}

pub fn classify_mb(sod: u32, dcog: f64, qp: u8, t: &Thresholds) -> Result<ClassLabel, ClassifierError> {
    t.validate()?;
    if qp > 51 {
        return Err(ClassifierError::QpRange(qp));
    }
    let q = qp as f64;
    let sod = sod as f64;
    let tiers = [
        (t.k1, t.d1, ClassLabel::C1),
        (t.k2, t.d2, ClassLabel::C2),
        (t.k3, t.d3, ClassLabel::C3),
    ];
    Ok(tiers
        .iter()
        .find(|(k, d, _)| sod <= q * k && dcog <= q * d)
        .map_or(ClassLabel::C4, |&(_, _, class)| class))
}

pub fn plan_for_class(class: ClassLabel) -> DecisionPlan {
    use PartitionMode::*;
    let (search_range, modes) = match class {
        ClassLabel::C1 => (2, vec![Skip, P16x16]),
        ClassLabel::C2 => (4, vec![P16x16, P16x8, P8x16, P8x8]),
        ClassLabel::C3 => (8, PartitionMode::INTER.to_vec()),
        ClassLabel::C4 => (32, PartitionMode::ALL.to_vec()),
    };
    DecisionPlan {
        class,
        search_range,
        modes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // Straight-line transcription of the branch ladder, kept independent of
    // the table-driven implementation above.
    fn ladder(sod: u32, dcog: f64, qp: u8, t: &Thresholds) -> ClassLabel {
        let s = sod as f64;
        let q = qp as f64;
        if s <= q * t.k1 && dcog <= q * t.d1 {
            ClassLabel::C1
        } else if s <= q * t.k2 && dcog <= q * t.d2 {
            ClassLabel::C2
        } else if s <= q * t.k3 && dcog <= q * t.d3 {
            ClassLabel::C3
        } else {
            ClassLabel::C4
        }
    }

    #[test]
    fn default_threshold_examples() {
        let t = Thresholds::default();
        for qp in 1..=51 {
            assert_eq!(classify_mb(0, 0.0, qp, &t).unwrap(), ClassLabel::C1);
        }
        assert_eq!(classify_mb(200, 1.0, 28, &t).unwrap(), ClassLabel::C2);
        assert_eq!(classify_mb(1_000_000, 21.2, 28, &t).unwrap(), ClassLabel::C4);
        // Bounds are inclusive.
        assert_eq!(classify_mb(112, 14.0, 28, &t).unwrap(), ClassLabel::C1);
        assert_eq!(classify_mb(113, 14.0, 28, &t).unwrap(), ClassLabel::C2);
    }

    #[test]
    fn both_conditions_required() {
        let t = Thresholds::default();
        // Tiny SOD but large DCOG falls through to the DCOG-satisfied tier.
        assert_eq!(classify_mb(0, 20.0, 10, &t).unwrap(), ClassLabel::C3);
        assert_eq!(classify_mb(0, 20.0, 5, &t).unwrap(), ClassLabel::C4);
        assert_eq!(classify_mb(0, 12.0, 10, &t).unwrap(), ClassLabel::C2);
        assert_eq!(classify_mb(150, 0.0, 10, &t).unwrap(), ClassLabel::C3);
    }

    #[test]
    fn rejects_bad_input() {
        let mut t = Thresholds::default();
        t.k2 = t.k3;
        assert!(matches!(classify_mb(0, 0.0, 28, &t), Err(ClassifierError::InvalidThresholds { .. })));
        t = Thresholds { d1: 0.0, ..Thresholds::default() };
        assert!(t.validate().is_err());
        assert_eq!(classify_mb(0, 0.0, 52, &Thresholds::default()), Err(ClassifierError::QpRange(52)));
    }

    #[test]
    fn plans() {
        let shape: Vec<_> = ClassLabel::ALL
            .iter()
            .map(|&c| {
                let p = plan_for_class(c);
                assert_eq!(p.class, c);
                (p.search_range, p.modes.len())
            })
            .collect();
        assert_eq!(shape, vec![(2, 2), (4, 4), (8, 7), (32, 9)]);
        use PartitionMode::*;
        assert_eq!(plan_for_class(ClassLabel::C1).modes, vec![Skip, P16x16]);
        assert_eq!(plan_for_class(ClassLabel::C2).modes, vec![P16x16, P16x8, P8x16, P8x8]);
        assert!(!plan_for_class(ClassLabel::C3).allows(Skip));
        assert!(plan_for_class(ClassLabel::C4).allows(Intra));
        assert_eq!(DecisionPlan::exhaustive(), plan_for_class(ClassLabel::C4));
    }

    #[test]
    fn agrees_with_ladder_on_random_triples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = Thresholds::default();
        for _ in 0..100_000 {
            let sod = rng.gen_range(0..=2000);
            let dcog = rng.gen_range(0.0..21.3);
            let qp = rng.gen_range(0..=51);
            assert_eq!(classify_mb(sod, dcog, qp, &t).unwrap(), ladder(sod, dcog, qp, &t));
        }
    }

    fn arb_thresholds() -> impl Strategy<Value = Thresholds> {
        (0.1f64..10.0, 0.1f64..10.0, 0.1f64..10.0, 0.05f64..2.0, 0.05f64..2.0, 0.05f64..2.0).prop_map(
            |(a, b, c, x, y, z)| Thresholds {
                k1: a,
                k2: a + b,
                k3: a + b + c,
                d1: x,
                d2: x + y,
                d3: x + y + z,
            },
        )
    }

    proptest! {
        #[test]
        fn enlarging_a_multiplier_never_raises_the_class(
            t in arb_thresholds(), sod in 0u32..3000, dcog in 0.0f64..21.3, qp in 0u8..=51,
            which in 0usize..6, grow in 0.0f64..5.0,
        ) {
            let before = classify_mb(sod, dcog, qp, &t).unwrap();
            let mut g = t;
            // Growth is capped below the next multiplier to keep the ordering valid.
            match which {
                0 => { g.k1 = (g.k1 + grow).min(g.k2 - 1e-9).max(g.k1) }
                1 => { g.k2 = (g.k2 + grow).min(g.k3 - 1e-9).max(g.k2) }
                2 => { g.k3 += grow }
                3 => { g.d1 = (g.d1 + grow).min(g.d2 - 1e-9).max(g.d1) }
                4 => { g.d2 = (g.d2 + grow).min(g.d3 - 1e-9).max(g.d2) }
                _ => { g.d3 += grow }
            }
            let after = classify_mb(sod, dcog, qp, &g).unwrap();
            prop_assert!(after <= before);
        }

        #[test]
        fn raising_qp_never_raises_the_class(
            t in arb_thresholds(), sod in 0u32..3000, dcog in 0.0f64..21.3, qp in 0u8..51,
        ) {
            let lo = classify_mb(sod, dcog, qp, &t).unwrap();
            let hi = classify_mb(sod, dcog, qp + 1, &t).unwrap();
            prop_assert!(hi <= lo);
            prop_assert_eq!(lo, ladder(sod, dcog, qp, &t));
        }
    }
}
