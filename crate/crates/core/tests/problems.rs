use nalgebra::DVector;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

use indexfree::problems::{make_counterexample, make_random_quadratic_sum, QuadraticIndividual, RandomQuadraticSpec};
use indexfree::rng::stream_rng;

fn random_point(rng: &mut impl Rng, dim: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

fn finite_difference(f: &QuadraticIndividual, w: &DVector<f64>) -> DVector<f64> {
    let h = 1e-6;
    DVector::from_fn(w.len(), |j, _| {
        let mut up = w.clone();
        let mut down = w.clone();
        up[j] += h;
        down[j] -= h;
        (f.value(&up) - f.value(&down)) / (2.0 * h)
    })
}

/// `f(y) − f(x) − ⟨∇f(x), y − x⟩` must lie in `[μ/2, L/2]·‖y − x‖²`.
fn check_curvature(f: &QuadraticIndividual, x: &DVector<f64>, y: &DVector<f64>, l: f64, mu: f64) -> bool {
    let d = y - x;
    let excess = f.value(y) - f.value(x) - f.gradient(x).dot(&d);
    let r2 = d.norm_squared();
    let slack = 1e-9 * (1.0 + f.value(y).abs() + f.value(x).abs());
    excess <= 0.5 * l * r2 + slack && excess >= 0.5 * mu * r2 - slack
}

fn spec_strategy() -> impl Strategy<Value = RandomQuadraticSpec> {
    (1usize..8, 1usize..6, 0.1f64..20.0, 0.0f64..1.0, any::<u64>()).prop_flat_map(|(n, dim, l, frac, seed)| {
        (1..=n).prop_map(move |q| RandomQuadraticSpec {
            n,
            dim,
            smoothness: l,
            strong_convexity: frac * l,
            q_distinct: q,
            seed,
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn gradients_match_finite_differences(spec in spec_strategy()) {
        let p = make_random_quadratic_sum(&spec).unwrap();
        let mut rng = stream_rng(spec.seed, 9);
        for f in p.individuals() {
            for _ in 0..10 {
                let w = random_point(&mut rng, spec.dim, 2.0);
                let g = f.gradient(&w);
                let fd = finite_difference(f, &w);
                prop_assert!((&g - &fd).norm() <= 1e-5 * (1.0 + g.norm()));
            }
        }
    }

    #[test]
    fn smoothness_and_strong_convexity_hold(spec in spec_strategy()) {
        let p = make_random_quadratic_sum(&spec).unwrap();
        let mut rng = stream_rng(spec.seed, 10);
        for _ in 0..100 {
            let i = rng.random_range(0..p.n());
            let x = random_point(&mut rng, spec.dim, 3.0);
            let y = random_point(&mut rng, spec.dim, 3.0);
            prop_assert!(check_curvature(p.individual(i), &x, &y, p.smoothness(), p.strong_convexity()));
        }
    }

    #[test]
    fn proximal_wrapping_shifts_both_constants(spec in spec_strategy(), beta in 0.01f64..10.0) {
        let p = make_random_quadratic_sum(&spec).unwrap();
        let mut rng = stream_rng(spec.seed, 11);
        let center = random_point(&mut rng, spec.dim, 1.0);
        let g = p.proximal(beta, &center);
        prop_assert_eq!(g.smoothness(), p.smoothness() + beta);
        prop_assert_eq!(g.strong_convexity(), p.strong_convexity() + beta);
        prop_assert!(g.strong_convexity() > 0.0);
        for _ in 0..50 {
            let i = rng.random_range(0..g.n());
            let x = random_point(&mut rng, spec.dim, 3.0);
            let y = random_point(&mut rng, spec.dim, 3.0);
            prop_assert!(check_curvature(g.individual(i), &x, &y, g.smoothness(), g.strong_convexity()));
        }
    }

    #[test]
    fn duplicates_give_identical_bits(spec in spec_strategy()) {
        let p = make_random_quadratic_sum(&spec).unwrap();
        let mut rng = stream_rng(spec.seed, 12);
        let w = random_point(&mut rng, spec.dim, 1.5);
        for a in p.individuals() {
            for b in p.individuals() {
                if a.parameter_record() == b.parameter_record() {
                    let (ga, gb) = (a.gradient(&w), b.gradient(&w));
                    prop_assert!(ga.iter().zip(gb.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
                }
            }
        }
        prop_assert_eq!(p.gradient_categories(&w).len(), spec.q_distinct);
    }
}

#[test]
fn spectrum_is_tight() {
    let spec = RandomQuadraticSpec { n: 5, dim: 4, smoothness: 7.0, strong_convexity: 0.5, q_distinct: 5, seed: 3 };
    let p = make_random_quadratic_sum(&spec).unwrap();
    for f in p.individuals() {
        let (lo, hi) = f.eigen_range();
        assert!((lo - 0.5).abs() < 1e-12 && (hi - 7.0).abs() < 1e-12);
    }
}

#[test]
fn counterexample_curvature() {
    let p = make_counterexample(6).unwrap();
    let mut rng = stream_rng(0, 0);
    for _ in 0..100 {
        let i = rng.random_range(0..6);
        let x = random_point(&mut rng, 1, 4.0);
        let y = random_point(&mut rng, 1, 4.0);
        assert!(check_curvature(p.individual(i), &x, &y, 1.0, 1.0));
    }
}

#[test]
fn problems_are_shareable_across_threads() {
    fn assert_sync<T: Send + Sync>() {}
    assert_sync::<indexfree::problems::FiniteSumProblem>();
}
