use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use sgdlab_core::diagnostics::{
    finite_difference_error, gradient_census, ComponentDrift, CensusMode,
};
use sgdlab_core::ingest::{
    generate_quartic, generate_synthetic_logistic, Dataset, NoisePlan, SparseExample,
    SyntheticLogisticSpec,
};
use sgdlab_core::numeric::{dist_sq, dot, norm_sq};
use sgdlab_core::optimizers::{lbfgs_run, Optimizer, RunContext, Svrg};
use sgdlab_core::problems::{LogisticProblem, Objective, QuadraticEnsemble, QuarticProblem};

fn synthetic(n: usize, d: usize, lambda: f64, seed: u64) -> LogisticProblem {
    let spec = SyntheticLogisticSpec { n, d, flip_probability: 0.1, seed };
    let (data, _) = generate_synthetic_logistic(&spec).unwrap();
    LogisticProblem::new(data, lambda).unwrap()
}

fn gaussian(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Vec<f64> {
    (0..d).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn logistic_strategy() -> impl Strategy<Value = (LogisticProblem, Vec<f64>)> {
    (1usize..6, 1usize..5).prop_flat_map(|(n, d)| {
        (
            prop::collection::vec((prop::bool::ANY, prop::collection::vec(-3.0f64..3.0, d)), n),
            prop::collection::vec(-2.0f64..2.0, d),
            0.0f64..1.0,
        )
            .prop_map(move |(rows, w, lambda)| {
                let examples = rows
                    .into_iter()
                    .map(|(pos, x)| SparseExample {
                        label: if pos { 1.0 } else { -1.0 },
                        features: x.into_iter().enumerate().collect(),
                    })
                    .collect();
                (LogisticProblem::new(Dataset::new(examples, d).unwrap(), lambda).unwrap(), w)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn logistic_gradient_matches_finite_differences((p, w) in logistic_strategy(), i in 0usize..6) {
        let i = i % p.n();
        prop_assert!(finite_difference_error(&p, i, &w, 1e-6).unwrap() < 1e-6);
    }

    #[test]
    fn quartic_gradient_matches_finite_differences(
        seed in 0u64..1000,
        w in prop::collection::vec(-2.0f64..2.0, 2),
        i in 0usize..30,
    ) {
        let inst = generate_quartic(30, &[1.0, -0.5], &NoisePlan::small(), seed).unwrap();
        let p = QuarticProblem::new(inst);
        prop_assert!(finite_difference_error(&p, i, &w, 1e-6).unwrap() < 1e-6);
    }

    #[test]
    fn census_invariants(norms in prop::collection::vec(0.0f64..1.0, 1..40), w in -1.0f64..1.0) {
        // centers chosen so that component gradients at the origin are -c_i
        let centers: Vec<f64> = norms.iter().map(|v| v.sqrt() + w).collect();
        let q = QuadraticEnsemble::scalar(&centers);
        let c = gradient_census(&q, &[0.0], &[1e-3, 1e-2, 0.1, 0.5], CensusMode::Exact).unwrap();
        let mut prev = 0.0;
        for e in &c.entries {
            prop_assert!(e.p >= prev);
            prev = e.p;
            prop_assert_eq!(e.m_eps.is_none(), e.p == 1.0);
            if let Some(m) = e.m_eps {
                prop_assert!(m > e.epsilon && m <= c.m_max);
            }
            let total = e.p * e.mean_small.unwrap_or(0.0) + (1.0 - e.p) * e.m_eps.unwrap_or(0.0);
            prop_assert!((total - c.mean_sq_norm).abs() <= 1e-12 * c.mean_sq_norm.max(1e-300));
        }
    }

    #[test]
    fn identical_seeds_give_identical_traces(seed in 0u64..u64::MAX) {
        let q = QuadraticEnsemble::scalar(&[-1.0, 0.5, 3.0]);
        let svrg = Svrg { eta: 0.1, inner: Some(7), epochs: 3, continuation: Default::default() };
        let ctx = RunContext { seed, trace_every: 1, reference: Some(&[2.5 / 3.0]), keep_iterates: true };
        let a = svrg.run(&q, &[4.0], &ctx).unwrap();
        let b = svrg.run(&q, &[4.0], &ctx).unwrap();
        prop_assert_eq!(a.trace, b.trace);
        prop_assert_eq!(a.iterates, b.iterates);
    }
}

#[test]
fn logistic_appendix_inequalities() {
    let p = synthetic(200, 5, 0.1, 11);
    let w_star = lbfgs_run(&p, &[0.0; 5], 10, 1e-12, 1000).unwrap().w;
    let f_star = p.full_value(&w_star);
    let l = p.smoothness().value;
    let mu = p.strong_convexity().unwrap();
    let drift = ComponentDrift::new(&p, &w_star);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let w = gaussian(&mut rng, 5, 2.0);
        let v = gaussian(&mut rng, 5, 2.0);
        let gap = p.full_value(&w) - f_star;
        let g = p.full_grad(&w);
        let tol = 1e-12;
        assert!(norm_sq(&g) <= 2.0 * l * gap + tol);
        assert!(drift.drift(&w) <= 2.0 * l * gap + tol);
        assert!(2.0 * mu * gap <= norm_sq(&g) + tol);

        let gv = p.full_grad(&v);
        let diff: Vec<f64> = w.iter().zip(&v).map(|(a, b)| a - b).collect();
        let lower = dot(&gv, &diff) + 0.5 * mu * norm_sq(&diff);
        assert!(p.full_value(&w) - p.full_value(&v) >= lower - tol);
    }
}

#[test]
fn quartic_local_smoothness_holds_on_fresh_pairs() {
    let inst = generate_quartic(100, &[1.0, -0.5], &NoisePlan::small(), 7).unwrap();
    let p = QuarticProblem::new(inst.clone());
    let l_hat = p.smoothness().value;
    assert_eq!(l_hat, QuarticProblem::new(inst).smoothness().value);

    let radius = p.probe_cloud().radius;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let in_ball = |rng: &mut ChaCha8Rng| loop {
        let w: Vec<f64> = (0..2).map(|_| rng.random_range(-radius..radius)).collect();
        if norm_sq(&w) <= radius * radius {
            return w;
        }
    };
    for _ in 0..10_000 {
        let (a, b) = (in_ball(&mut rng), in_ball(&mut rng));
        let num = dist_sq(&p.full_grad(&a), &p.full_grad(&b)).sqrt();
        assert!(num <= l_hat * dist_sq(&a, &b).sqrt() * (1.0 + 1e-12));
    }
}

#[test]
fn stochastic_gradient_is_unbiased() {
    let p = synthetic(50, 4, 0.02, 5);
    let w = [0.3, -0.2, 0.5, 1.0];
    let full = p.full_grad(&w);
    let draws = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut sum = [0.0f64; 4];
    let mut sum_sq = [0.0f64; 4];
    for _ in 0..draws {
        let g = p.component_grad(rng.random_range(0..p.n()), &w).unwrap();
        for j in 0..4 {
            sum[j] += g[j];
            sum_sq[j] += g[j] * g[j];
        }
    }
    for j in 0..4 {
        let mean = sum[j] / draws as f64;
        let var = sum_sq[j] / draws as f64 - mean * mean;
        let se = (var / draws as f64).sqrt();
        assert!((mean - full[j]).abs() <= 4.0 * se, "coordinate {j}");
    }
}

#[test]
fn svrg_gap_decays_geometrically() {
    let p = synthetic(500, 20, 0.1, 1);
    let w_star = lbfgs_run(&p, &[0.0; 20], 10, 1e-12, 1000).unwrap().w;
    let f_star = p.full_value(&w_star);
    let eta = 1.0 / (10.0 * p.smoothness().value);
    let svrg = Svrg { eta, inner: None, epochs: 10, continuation: Default::default() };
    let ctx = RunContext { seed: 4, trace_every: 1000, ..Default::default() };
    let out = svrg.run(&p, &[0.0; 20], &ctx).unwrap();
    let gaps: Vec<f64> = out.trace.iter().map(|r| r.f_value - f_star).collect();
    assert_eq!(gaps.len(), 11);
    // judge the rate only above the rounding floor of F
    let resolved: Vec<f64> = gaps.iter().copied().take_while(|&g| g > 1e-13).collect();
    assert!(resolved.len() >= 6, "{gaps:?}");
    for pair in resolved.windows(2) {
        assert!(pair[1] / pair[0] < 0.5, "{gaps:?}");
    }
}

#[test]
fn lbfgs_agrees_across_starting_points() {
    let p = synthetic(300, 10, 1.0 / 300.0, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let runs: Vec<_> = (0..2)
        .map(|_| lbfgs_run(&p, &gaussian(&mut rng, 10, 1.0), 10, 1e-12, 10_000).unwrap())
        .collect();
    for r in &runs {
        assert!(r.lbfgs.as_ref().unwrap().converged);
    }
    let (fa, fb) = (p.full_value(&runs[0].w), p.full_value(&runs[1].w));
    assert!((fa - fb).abs() <= 1e-14 * fa.abs().max(1.0));
}
