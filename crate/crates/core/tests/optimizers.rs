use hydrocal::optim::cobyla::{self, CobylaConfig};
use hydrocal::optim::pso::{self, PsoParams};
use proptest::prelude::*;

fn sphere(x: &[f64]) -> Option<f64> {
    Some(x.iter().map(|v| v * v).sum())
}

fn sphere_mean_best(base: PsoParams) -> f64 {
    let bounds = [(-5.0, 5.0); 10];
    let mut total = 0.0;
    for seed in 0..10 {
        let params = PsoParams { seed, ..base };
        let r = pso::minimize(sphere, &bounds, None, &params).unwrap();
        assert_eq!(r.history.len(), 101);
        for w in r.history.windows(2) {
            assert!(w[1] <= w[0]);
        }
        total += r.best_value;
    }
    total / 10.0
}

#[test]
fn pso_sphere_with_constriction_coefficients() {
    let mean = sphere_mean_best(PsoParams {
        inertia: 0.7298,
        cognitive: 1.49618,
        social: 1.49618,
        ..PsoParams::default()
    });
    assert!(mean < 1e-2, "mean best {mean}");
}

#[test]
fn pso_sphere_with_default_coefficients_improves() {
    // Initial best of 32 uniform points in 10-D is around 30.
    let mean = sphere_mean_best(PsoParams::default());
    assert!(mean < 10.0, "mean best {mean}");
}

#[test]
fn cobyla_disc_problem() {
    let disc = |x: &[f64]| 1.0 - x[0] * x[0] - x[1] * x[1];
    let r = cobyla::minimize(
        |x| x[0] + x[1],
        &[&disc],
        &[0.0, 0.0],
        &[(-2.0, 2.0), (-2.0, 2.0)],
        &CobylaConfig::default(),
    )
    .unwrap();
    let h = -std::f64::consts::FRAC_1_SQRT_2;
    assert!((r.x[0] - h).abs() < 1e-3);
    assert!((r.x[1] - h).abs() < 1e-3);
}

#[test]
fn cobyla_one_dimensional_scan_agrees() {
    // Unimodal 1-D objective; a fine grid locates the same minimizer.
    let f = |x: &[f64]| (x[0].ln() - 2.0f64.ln()).abs() + 0.1 * (x[0] - 2.0).powi(2);
    let r = cobyla::minimize(f, &[], &[0.5], &[(0.01, 10.0)], &CobylaConfig::default()).unwrap();
    let scan = (1..=9990)
        .map(|i| 0.01 + i as f64 * 1e-3)
        .min_by(|a, b| f(&[*a]).total_cmp(&f(&[*b])))
        .unwrap();
    assert!((r.x[0] - scan).abs() < 1e-2, "{} vs {scan}", r.x[0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn cobyla_never_returns_worse_than_start(
        start in proptest::collection::vec(0.05f64..9.5, 1..5),
        target in proptest::collection::vec(0.05f64..9.5, 5),
    ) {
        let n = start.len();
        let f = |x: &[f64]| x.iter().zip(&target).map(|(a, b)| (a - b).abs()).sum::<f64>();
        let f0 = f(&start);
        let r = cobyla::minimize(f, &[], &start, &vec![(0.01, 10.0); n], &CobylaConfig::default()).unwrap();
        prop_assert!(r.f <= f0);
        prop_assert!(r.violation <= 1e-9);
        prop_assert!(r.x.iter().all(|v| (0.01 - 1e-9..=10.0 + 1e-9).contains(v)));
    }

    #[test]
    fn pso_best_inside_and_monotone(seed in 0u64..1000, dims in 1usize..6) {
        let bounds = vec![(0.01, 10.0); dims];
        let params = PsoParams { seed, iterations: 20, ..PsoParams::default() };
        let r = pso::minimize(|x| Some(x.iter().map(|v| (v - 12.0).abs()).sum()), &bounds, Some(&vec![5.0; dims]), &params).unwrap();
        prop_assert!(r.best.iter().all(|v| (0.01..=10.0).contains(v)));
        prop_assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
    }
}
