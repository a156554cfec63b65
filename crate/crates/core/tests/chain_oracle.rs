mod common;

use common::{brute_force_zeta, errors_under, ks, ATOMS};
use idras::surrogate::{estimate_zeta, ResampleFn, ZetaConfig};

#[test]
fn exact_ratio_matches_surrogate_to_truth() {
    let (e, t, _) = errors_under(&brute_force_zeta(), 10_000, 64, 1);
    let d = ks(&e, &t);
    assert!(d < 0.05, "KS {d}");
}

#[test]
fn identity_ratio_is_the_naive_shuffle() {
    let (e, t, naive) = errors_under(&ResampleFn::identity(), 10_000, 64, 2);
    assert!(ks(&naive, &t) < 0.03);
    // the chain is persistent, so the naive law differs from the truth
    assert!(ks(&e, &t) > 0.05);
}

#[test]
fn estimated_ratio_approaches_exact() {
    let exact = brute_force_zeta();
    let mut prev_err = f64::INFINITY;
    for (n, seed) in [(1_000, 3), (100_000, 4)] {
        let (e, _, naive) = errors_under(&ResampleFn::identity(), n, 1, seed);
        let est = estimate_zeta(&e, &naive, &ZetaConfig::default()).unwrap();
        let worst = ATOMS
            .iter()
            .map(|&x| (est.eval(x) / exact.eval(x) - 1.0).abs())
            .fold(0.0, f64::max);
        if n == 100_000 {
            assert!(worst < 0.05, "worst relative bin error {worst}");
        }
        assert!(worst < prev_err);
        prev_err = worst;
    }
}
