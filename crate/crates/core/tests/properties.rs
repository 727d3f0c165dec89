use ipla_core::diagnostics::{estimate_c1, estimate_c1_with_noise, fit_rate, w2_1d, w2_to_dirac, EmpiricalLaw};
use ipla_core::model::{check_gradients, probe_convexity, LatentModel, ModelSpec};
use ipla_core::noise::{AggregatedNoise, CounterRng, NoiseSource, ZeroNoise};
use ipla_core::sampler::{ipla_step, rescale, Algorithm, Chain, InitLaw, InitSpec, RunConfig, SystemState};
use ipla_core::toy::{
    gaussian_meanfield_reference, make_gaussian_model, make_logistic_model, synthesize_logistic,
    GaussianHierarchicalParams,
};
use ipla_core::CounterNoise;
use proptest::prelude::*;
use rand::Rng;

fn random_point(rng: &mut CounterRng, d: usize, scale: f64) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-scale..scale)).collect()
}

#[test]
fn bundled_models_pass_gradient_check_at_100_points() {
    let gaussian = make_gaussian_model(GaussianHierarchicalParams {
        y: vec![0.3, -1.2, 0.8],
        sigma_lat: 0.7,
        sigma_obs: 1.4,
    })
    .unwrap();
    let data = synthesize_logistic(17, 5, 200, 1.0, 1.0).unwrap();
    let logistic = make_logistic_model(&data.params).unwrap();
    let models: [&dyn LatentModel; 2] = [&gaussian, &logistic];
    for model in models {
        for k in 0..100 {
            let mut rng = CounterRng::new(99, 1, k);
            let theta = random_point(&mut rng, model.d_theta(), 3.0);
            let x = random_point(&mut rng, model.d_x(), 3.0);
            let h = ipla_core::model::default_fd_step(&theta, &x);
            let r = check_gradients(model, &theta, &x, h).unwrap();
            assert!(r.max_rel_err() < 1e-5, "{} at point {k}: {r:?}", model.name());
        }
    }
}

#[test]
fn logistic_grad_x_respects_lipschitz_bound() {
    let data = synthesize_logistic(5, 4, 60, 0.5, 0.8).unwrap();
    let m = make_logistic_model(&data.params).unwrap();
    let bound = m.grad_x_lipschitz_bound();
    let mut ga = vec![0.0; 4];
    let mut gb = vec![0.0; 4];
    for k in 0..500 {
        let mut rng = CounterRng::new(1, 2, k);
        let theta = [rng.random_range(-2.0..2.0)];
        let xa = random_point(&mut rng, 4, 4.0);
        let xb = random_point(&mut rng, 4, 4.0);
        m.grad_x(&theta, &xa, &mut ga);
        m.grad_x(&theta, &xb, &mut gb);
        let dg: f64 = ga.iter().zip(&gb).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let dx: f64 = xa.iter().zip(&xb).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(dg <= bound * dx * (1.0 + 1e-12));
    }
}

/// Synchronous coupling contracts at rate (1 - γμ) in rescaled coordinates.
#[test]
fn rescaled_synchronous_coupling_contracts() {
    let model = make_gaussian_model(GaussianHierarchicalParams::new(vec![0.4])).unwrap();
    let mu = model.analytic().unwrap().mu.unwrap();
    let limit = model.analytic().unwrap().stability_limit().unwrap();
    for &gamma in &[0.01, 0.1, 0.9 * limit] {
        let n_part = 6;
        let a0 = SystemState::new(vec![3.0], (0..n_part).map(|i| vec![i as f64 - 2.0]).collect()).unwrap();
        let b0 = SystemState::new(vec![-1.0], (0..n_part).map(|i| vec![0.5 * i as f64]).collect()).unwrap();
        let d0 = rescale(&a0).distance(&rescale(&b0));
        let noise = CounterNoise::new(8, 0);
        let mut a = Chain::new(&model, a0, gamma, Algorithm::Ipla, noise).unwrap();
        let mut b = Chain::new(&model, b0, gamma, Algorithm::Ipla, noise).unwrap();
        for n in 1..=200 {
            a.step().unwrap();
            b.step().unwrap();
            let d = rescale(a.state()).distance(&rescale(b.state()));
            let cap = (1.0 - gamma * mu).powi(n) * d0 * (1.0 + 1e-9);
            assert!(d <= cap, "γ={gamma} n={n}: {d} > {cap}");
        }
    }
}

struct Permuted<'a> {
    inner: &'a CounterNoise,
    perm: &'a [usize],
}

impl NoiseSource for Permuted<'_> {
    fn fill(&self, source: usize, step: u64, out: &mut [f64]) {
        let mapped = if source == 0 { 0 } else { self.perm[source - 1] + 1 };
        self.inner.fill(mapped, step, out)
    }
}

fn permuted_run(n_part: usize, perm: &[usize]) -> (SystemState, SystemState) {
    let model = make_gaussian_model(GaussianHierarchicalParams::new(vec![0.2, -0.3])).unwrap();
    let rows: Vec<Vec<f64>> = (0..n_part)
        .map(|i| vec![i as f64 * 0.37 - 1.0, 0.5 - i as f64 * 0.11])
        .collect();
    let permuted_rows: Vec<Vec<f64>> = perm.iter().map(|&p| rows[p].clone()).collect();
    let noise = CounterNoise::new(21, 0);
    let mut a = Chain::new(
        &model,
        SystemState::new(vec![0.9], rows).unwrap(),
        0.05,
        Algorithm::Ipla,
        noise,
    )
    .unwrap();
    let permuted = Permuted { inner: &noise, perm };
    let mut b = Chain::new(
        &model,
        SystemState::new(vec![0.9], permuted_rows).unwrap(),
        0.05,
        Algorithm::Ipla,
        permuted,
    )
    .unwrap();
    a.advance(300).unwrap();
    b.advance(300).unwrap();
    (a.into_state(), b.into_state())
}

#[test]
fn exchangeability_two_particles_is_bit_exact() {
    let (a, b) = permuted_run(2, &[1, 0]);
    assert_eq!(a.theta[0].to_bits(), b.theta[0].to_bits());
    assert_eq!(a.particle(0), b.particle(1));
    assert_eq!(a.particle(1), b.particle(0));
}

#[test]
fn exchangeability_many_particles() {
    let perm = [3, 0, 4, 1, 2];
    let (a, b) = permuted_run(5, &perm);
    // summation order differs, so agreement is up to rounding
    assert!((a.theta[0] - b.theta[0]).abs() < 1e-12);
    for (i, &p) in perm.iter().enumerate() {
        for (u, v) in b.particle(i).iter().zip(a.particle(p)) {
            assert!((u - v).abs() < 1e-12);
        }
    }
}

#[test]
fn long_run_theta_matches_analytic_marginal() {
    let model = make_gaussian_model(GaussianHierarchicalParams::new(vec![0.5])).unwrap();
    let marg = model.analytic().unwrap().theta_marginal.clone().unwrap();
    let n_part = 20;
    let var_target = marg.covariance_diag(n_part)[0];
    let gamma = 0.01;
    let init = InitSpec::point(0.5, 0.5);
    let mut samples = Vec::new();
    for rep in 0..8 {
        let cfg = RunConfig::new(n_part, gamma, 0).with_seed(3).with_init(init.clone());
        let state = cfg.initial_state(1, 1, rep).unwrap();
        let mut chain = Chain::new(&model, state, gamma, Algorithm::Ipla, CounterNoise::new(3, rep)).unwrap();
        chain.advance(1000).unwrap();
        for _ in 0..250 {
            chain.advance(800).unwrap();
            samples.push(chain.state().theta[0]);
        }
    }
    let m = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / m;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (m - 1.0);
    let se = (var / m).sqrt();
    assert!((mean - marg.mean[0]).abs() < 4.0 * se, "mean {mean} ± {se}");
    // Monte Carlo (≈ 9% at 2000 samples, 3σ) plus O(γ) bias
    assert!((var / var_target - 1.0).abs() < 0.15, "var {var} vs {var_target}");
}

#[test]
fn c1_estimate_is_reproducible() {
    let model = make_gaussian_model(GaussianHierarchicalParams::new(vec![0.0])).unwrap();
    let init = InitSpec {
        theta: InitLaw::Point { at: vec![2.0] },
        x: InitLaw::Gaussian {
            mean: vec![0.0],
            scale: 1.0,
        },
    };
    let grid: Vec<RunConfig> = [0.02, 0.01, 0.005]
        .iter()
        .map(|&g| {
            RunConfig::new(10, g, (1.0 / g).round() as u64)
                .with_seed(4)
                .with_replicates(8)
                .with_init(init.clone())
        })
        .collect();
    let a = estimate_c1(&model, &grid, 1e-3).unwrap();
    let b = estimate_c1(&model, &grid, 1e-3).unwrap();
    assert_eq!(a, b);
    assert!(a.c1.is_finite() && a.c1 > 0.0);
    assert!(a.rate().unwrap().slope >= 0.3);
}

/// The single-pass coupling equals running each coarse chain on aggregated noise.
#[test]
fn c1_coupling_matches_aggregated_noise_route() {
    let model = make_gaussian_model(GaussianHierarchicalParams::new(vec![0.3])).unwrap();
    let (gamma, reference, n_part) = (0.02, 0.005, 3);
    let cfg = RunConfig::new(n_part, gamma, 50)
        .with_seed(12)
        .with_init(InitSpec::point(1.0, -1.0));
    let est = estimate_c1(&model, std::slice::from_ref(&cfg), reference).unwrap();

    let init = cfg.initial_state(1, 1, 0).unwrap();
    let fine_noise = CounterNoise::new(12, 0);
    let mut fine = Chain::new(&model, init.clone(), reference, Algorithm::Ipla, fine_noise).unwrap();
    fine.advance(200).unwrap();
    let mut coarse = Chain::new(
        &model,
        init,
        gamma,
        Algorithm::Ipla,
        AggregatedNoise::new(fine_noise, 4),
    )
    .unwrap();
    coarse.advance(50).unwrap();
    let gap = (coarse.state().theta[0] - fine.state().theta[0]).abs();
    assert!(
        (est.points[0].rmse - gap).abs() < 1e-12,
        "{} vs {gap}",
        est.points[0].rmse
    );
}

#[test]
fn noiseless_euler_bias_scales_linearly() {
    let model = make_gaussian_model(GaussianHierarchicalParams::new(vec![0.0])).unwrap();
    let grid: Vec<RunConfig> = [0.04, 0.02, 0.01]
        .iter()
        .map(|&g| RunConfig::new(4, g, (2.0 / g).round() as u64).with_init(InitSpec::point(2.0, -1.0)))
        .collect();
    let est = estimate_c1_with_noise(&model, &grid, 1e-4, |_| ZeroNoise).unwrap();
    let slope = est.rate().unwrap().slope;
    assert!((slope - 1.0).abs() < 0.1 && slope >= 0.5, "slope {slope}");
}

#[test]
fn isotropic_step_moves_all_coordinates() {
    let m = ModelSpec::new(
        2,
        1,
        |t, x| 0.5 * (t[0] * t[0] + t[1] * t[1] + x[0] * x[0]),
        |t, _, g| g.copy_from_slice(t),
        |_, x, g| g.copy_from_slice(x),
    );
    let s = SystemState::new(vec![1.0, -2.0], vec![vec![4.0]; 2]).unwrap();
    let next = ipla_step(&m, &s, 0.1, &ZeroNoise).unwrap();
    assert_eq!(next.theta, vec![0.9, -1.8]);
    assert_eq!(next.particle(1), &[3.6]);
}

proptest! {
    #[test]
    fn probe_stays_in_constant_hessian_spectrum(seed in any::<u64>()) {
        let model = make_gaussian_model(GaussianHierarchicalParams::new(vec![0.1])).unwrap();
        let est = probe_convexity(&model, seed, 50, 2.0).unwrap();
        let lo = (3.0 - 5f64.sqrt()) / 2.0;
        let hi = (3.0 + 5f64.sqrt()) / 2.0;
        prop_assert!(est >= lo - 1e-12 && est <= hi + 1e-12);
    }

    #[test]
    fn kappa_is_strongly_monotone(a in -10.0..10.0f64, b in -10.0..10.0f64) {
        let model = make_gaussian_model(GaussianHierarchicalParams {
            y: vec![0.4, -0.9],
            sigma_lat: 1.0,
            sigma_obs: 1.0,
        }).unwrap();
        let mu = model.analytic().unwrap().mu.unwrap();
        let inner = (a - b) * (model.kappa_grad(a) - model.kappa_grad(b));
        prop_assert!(inner >= mu * (a - b) * (a - b) - 1e-12);
    }

    #[test]
    fn meanfield_semigroup(theta0 in -5.0..5.0f64, m0 in -5.0..5.0f64, t1 in 0.0..3.0f64, t2 in 0.0..3.0f64) {
        let p = GaussianHierarchicalParams::new(vec![0.7]);
        let (a, b) = gaussian_meanfield_reference(&p, theta0, m0, t1 + t2);
        let (c, d) = gaussian_meanfield_reference(&p, theta0, m0, t1);
        let (e, f) = gaussian_meanfield_reference(&p, c, d, t2);
        prop_assert!((a - e).abs() < 1e-12 && (b - f).abs() < 1e-12);
    }

    #[test]
    fn rescaled_distance_identity(
        n in 1usize..8,
        seed in any::<u64>(),
    ) {
        let mut rng = CounterRng::new(seed, 0, 0);
        let make = |rng: &mut CounterRng| {
            SystemState::new(
                random_point(rng, 2, 5.0),
                (0..n).map(|_| random_point(rng, 3, 5.0)).collect(),
            ).unwrap()
        };
        let (s, t) = (make(&mut rng), make(&mut rng));
        let lhs = rescale(&s).distance(&rescale(&t)).powi(2);
        let theta: f64 = s.theta.iter().zip(&t.theta).map(|(a, b)| (a - b).powi(2)).sum();
        let cloud: f64 = s.cloud_flat().iter().zip(t.cloud_flat()).map(|(a, b)| (a - b).powi(2)).sum();
        let rhs = theta + cloud / n as f64;
        prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1.0));
    }

    #[test]
    fn w2_to_dirac_matches_loop(values in prop::collection::vec(prop::collection::vec(-10.0..10.0f64, 3), 1..40), point in prop::collection::vec(-10.0..10.0f64, 3)) {
        let law = EmpiricalLaw::new(values.clone()).unwrap();
        let mut acc = 0.0;
        for v in &values {
            for k in 0..3 {
                acc += (v[k] - point[k]) * (v[k] - point[k]);
            }
        }
        let direct = (acc / values.len() as f64).sqrt();
        prop_assert!((w2_to_dirac(&law, &point).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn w2_1d_is_a_metric(
        a in prop::collection::vec(-10.0..10.0f64, 12),
        b in prop::collection::vec(-10.0..10.0f64, 12),
        c in prop::collection::vec(-10.0..10.0f64, 12),
    ) {
        let (la, lb, lc) = (
            EmpiricalLaw::scalar(a).unwrap(),
            EmpiricalLaw::scalar(b).unwrap(),
            EmpiricalLaw::scalar(c).unwrap(),
        );
        let ab = w2_1d(&la, &lb).unwrap();
        prop_assert!((ab - w2_1d(&lb, &la).unwrap()).abs() < 1e-15);
        prop_assert!(ab <= w2_1d(&la, &lc).unwrap() + w2_1d(&lc, &lb).unwrap() + 1e-12);
        prop_assert_eq!(w2_1d(&la, &la).unwrap(), 0.0);
    }

    #[test]
    fn fit_rate_recovers_planted_slopes(slope_idx in 0usize..3, c in 0.1..10.0f64) {
        let slope = [-1.0, -0.5, 0.5][slope_idx];
        let pts: Vec<(f64, f64)> = [3.0, 30.0, 90.0, 700.0].iter().map(|&s: &f64| (s, c * s.powf(slope))).collect();
        let f = fit_rate(&pts).unwrap();
        prop_assert!((f.slope - slope).abs() < 1e-12);
        prop_assert!((f.r2 - 1.0).abs() < 1e-12);
    }
}
