use nalgebra::DMatrix;
use proptest::prelude::*;
use smartim_core::boundaries::{boundaries, sample_joint_t, BoundaryMethod, JointSample, PsiMatrix, DEFAULT_DRAWS};
use smartim_core::covariance::CovBlocks;
use smartim_core::distributions::chi2_quantile;

const METHODS: [BoundaryMethod; 4] =
    [BoundaryMethod::Pocock, BoundaryMethod::Obf, BoundaryMethod::LdPocock, BoundaryMethod::LdObf];

/// Two looks at half information under independent increments.
fn two_look_psi(rank: usize) -> PsiMatrix {
    let sigma = DMatrix::<f64>::identity(rank, rank);
    let blocks = CovBlocks::independent_increments(&sigma, &[500, 1000]).unwrap();
    smartim_core::boundaries::psi_matrix(&blocks, 1e-8).unwrap()
}

fn rejection(sample: &JointSample, thresholds: &[f64]) -> f64 {
    (0..sample.draws())
        .filter(|&i| sample.draw(i).iter().zip(thresholds).any(|(t, b)| t > b))
        .count() as f64
        / sample.draws() as f64
}

#[test]
fn fresh_samples_reject_at_nominal_level() {
    let psi = two_look_psi(3);
    let fit = sample_joint_t(&psi, DEFAULT_DRAWS, 1).unwrap();
    let fresh = sample_joint_t(&psi, DEFAULT_DRAWS, 2).unwrap();
    for method in METHODS {
        let b = boundaries(&fit, method, 0.05, &[0.5, 1.0]).unwrap();
        let rate = rejection(&fresh, &b.thresholds);
        assert!((rate - 0.05).abs() <= 0.005, "{method:?}: {rate}");
    }
}

#[test]
fn same_seed_same_boundaries() {
    let psi = two_look_psi(7);
    let a = sample_joint_t(&psi, 20_000, 9).unwrap();
    let b = sample_joint_t(&psi, 20_000, 9).unwrap();
    assert_eq!(a, b);
    for method in METHODS {
        assert_eq!(boundaries(&a, method, 0.05, &[0.5, 1.0]).unwrap(), boundaries(&b, method, 0.05, &[0.5, 1.0]).unwrap());
    }
    assert_ne!(sample_joint_t(&psi, 20_000, 10).unwrap().values, a.values);
}

#[test]
fn psi_of_independent_increments_has_root_half_cross_block() {
    let psi = two_look_psi(3);
    assert_eq!(psi.ranks, [3, 3]);
    let cross = psi.block(0, 1);
    let want = DMatrix::<f64>::identity(3, 3) * 0.5f64.sqrt();
    assert!((cross - want).abs().max() < 1e-12);
}

#[test]
fn obf_ratio_is_exact_and_ld_first_look_is_analytic() {
    let sample = sample_joint_t(&two_look_psi(7), DEFAULT_DRAWS, 4).unwrap();
    let obf = boundaries(&sample, BoundaryMethod::Obf, 0.05, &[]).unwrap();
    assert_eq!(obf.thresholds[0], obf.thresholds[1] * 2f64.sqrt());
    for method in [BoundaryMethod::LdPocock, BoundaryMethod::LdObf] {
        let b = boundaries(&sample, method, 0.05, &[0.5, 1.0]).unwrap();
        assert_eq!(b.thresholds[0], chi2_quantile(1.0 - b.spent[0], 7));
        assert!((b.first_look_empirical.unwrap() - b.thresholds[0]).abs() < 0.3);
        assert_eq!(*b.spent.last().unwrap(), 0.05);
    }
}

fn shared_sample() -> &'static JointSample {
    use std::sync::OnceLock;
    static S: OnceLock<JointSample> = OnceLock::new();
    S.get_or_init(|| sample_joint_t(&two_look_psi(5), 50_000, 77).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn larger_alpha_never_raises_thresholds(a in 0.005f64..0.2, extra in 0.0f64..0.1) {
        let sample = shared_sample();
        for method in METHODS {
            let lo = boundaries(sample, method, a, &[0.5, 1.0]).unwrap();
            let hi = boundaries(sample, method, a + extra, &[0.5, 1.0]).unwrap();
            for (x, y) in hi.thresholds.iter().zip(&lo.thresholds) {
                prop_assert!(x <= y, "{method:?}: {x} > {y} at alpha {a} + {extra}");
            }
        }
    }

    #[test]
    fn thresholds_are_positive_and_spending_nondecreasing(a in 0.01f64..0.2) {
        let sample = shared_sample();
        for method in METHODS {
            let b = boundaries(sample, method, a, &[0.5, 1.0]).unwrap();
            prop_assert!(b.thresholds.iter().all(|&t| t > 0.0));
            prop_assert!(b.spent.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(*b.spent.last().unwrap() <= a + 1e-12, "{method:?} {:?}", b.spent);
        }
    }
}
