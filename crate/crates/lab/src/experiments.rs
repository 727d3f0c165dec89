//! Experiment drivers. Each returns plain data; writing files and printing
//! is left to [`crate::commands`].

use ipla_core::diagnostics::{
    dimension_factor, estimate_c1, fit_log_linear, fit_rate, rmse_from_squares, theorem1_bound, BoundInputs,
    BoundTerms, C1Estimate, RateFit, RmseEstimate,
};
use ipla_core::model::{check_gradients, default_fd_step, Block, GradCheckReport};
use ipla_core::noise::CounterRng;
use ipla_core::sampler::{
    coupled_chaos_run, map_replicates, rescale, rescaled_minimiser, run_chain, Algorithm, Chain, ChaosRecord,
    RecorderSpec, RunConfig, RunRecord,
};
use ipla_core::toy::GaussianHierarchicalParams;
use ipla_core::{CounterNoise, Error, LatentModel};
use rand::Rng;
use rayon::prelude::*;

use crate::config::{ExperimentConfig, Fault, GradcheckConfig, ReferenceConfig};
use crate::LabError;

type Result<T> = std::result::Result<T, LabError>;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum()
}

/// Sample mean and standard error of the mean.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

fn theta_star(model: &dyn LatentModel) -> Option<Vec<f64>> {
    model.analytic().and_then(|a| a.theta_star.clone())
}

fn require_theta_star(model: &dyn LatentModel, what: &str) -> Result<Vec<f64>> {
    theta_star(model).ok_or_else(|| {
        Error::UnsupportedModel(format!(
            "{what} needs an analytic θ* and the `{}` model has none",
            model.name()
        ))
        .into()
    })
}

fn steps_for(time: f64, gamma: f64) -> u64 {
    (time / gamma).round() as u64
}

/// RMS over replicates of `‖z₀ - z*‖` in rescaled coordinates, when the
/// joint minimiser is known.
pub fn initial_distance(model: &dyn LatentModel, run: &RunConfig) -> Result<Option<f64>> {
    let Some(info) = model.analytic() else {
        return Ok(None);
    };
    let (Some(ts), Some(xs)) = (&info.theta_star, &info.x_star) else {
        return Ok(None);
    };
    let target = rescaled_minimiser(ts, xs, run.n_particles);
    let mut total = 0.0;
    for r in 0..run.replicates {
        let s = run.initial_state(model.d_theta(), model.d_x(), r)?;
        total += rescale(&s).distance(&target).powi(2);
    }
    Ok(Some((total / run.replicates as f64).sqrt()))
}

/// Bound terms after `n` steps of `run`, or `None` if `μ` or the minimiser is unknown.
pub fn bound_terms(model: &dyn LatentModel, run: &RunConfig, n: u64, c1: Option<f64>) -> Result<Option<BoundTerms>> {
    let Some(info) = model.analytic() else {
        return Ok(None);
    };
    let (Some(mu), Some(z0)) = (info.mu, initial_distance(model, run)?) else {
        return Ok(None);
    };
    let terms = theorem1_bound(&BoundInputs {
        mu,
        lipschitz: info.lipschitz,
        d_theta: model.d_theta(),
        d_x: model.d_x(),
        n_particles: run.n_particles,
        n,
        gamma: run.gamma,
        z0_dist: z0,
        c1,
    })?;
    Ok(Some(terms))
}

/// Coupled strong-error runs described by `calibration`.
pub fn calibrate(cfg: &ExperimentConfig, model: &dyn LatentModel) -> Result<Option<C1Estimate>> {
    let Some(cal) = &cfg.calibration else {
        return Ok(None);
    };
    let grid: Vec<RunConfig> = cal
        .gamma_grid
        .iter()
        .map(|&g| RunConfig {
            n_particles: cal.n_particles.unwrap_or(cfg.run.n_particles),
            gamma: g,
            n_steps: steps_for(cal.horizon, g),
            seed: cfg.run.seed,
            init: cfg.run.init.clone(),
            replicates: cal.replicates,
        })
        .collect();
    Ok(Some(estimate_c1(model, &grid, cal.reference_gamma)?))
}

/// The discretisation constant: a fixed `c1` wins over calibration.
pub struct Discretization {
    pub c1: Option<f64>,
    pub calibration: Option<C1Estimate>,
}

pub fn resolve_c1(cfg: &ExperimentConfig, model: &dyn LatentModel) -> Result<Discretization> {
    if let Some(c1) = cfg.c1 {
        return Ok(Discretization {
            c1: Some(c1),
            calibration: None,
        });
    }
    let calibration = calibrate(cfg, model)?;
    Ok(Discretization {
        c1: calibration.as_ref().map(|c| c.c1),
        calibration,
    })
}

pub struct AlgorithmRun {
    pub record: RunRecord,
    /// Final-iterate RMSE to `θ*` over replicates.
    pub rmse: Option<RmseEstimate>,
}

pub struct RunOutcome {
    pub runs: Vec<AlgorithmRun>,
    /// Bound for the IPLA iterate after `n_steps`.
    pub bound: Option<BoundTerms>,
    pub discretization: Discretization,
}

pub fn run(cfg: &ExperimentConfig, model: &dyn LatentModel) -> Result<RunOutcome> {
    let star = theta_star(model);
    let mut runs = Vec::new();
    for algorithm in cfg.algorithm.algorithms() {
        let record = run_chain(model, &cfg.run, algorithm, RecorderSpec { stride: cfg.stride })?;
        let rmse = star.as_ref().map(|ts| {
            let sq: Vec<f64> = record.replicates.iter().map(|r| sq_dist(&r.final_theta, ts)).collect();
            rmse_from_squares(&sq)
        });
        runs.push(AlgorithmRun { record, rmse });
    }
    let discretization = resolve_c1(cfg, model)?;
    let bound = bound_terms(model, &cfg.run, cfg.run.n_steps, discretization.c1)?;
    Ok(RunOutcome {
        runs,
        bound,
        discretization,
    })
}

/// Per-replicate time averages of `‖θ_n - θ*‖²` over steps after `burn_in_steps`.
pub fn stationary_squares(
    model: &dyn LatentModel,
    run: &RunConfig,
    algorithm: Algorithm,
    theta_star: &[f64],
    burn_in_steps: u64,
) -> Result<Vec<f64>> {
    if burn_in_steps >= run.n_steps {
        return Err(LabError::config("burn_in", "leaves no steps to average over"));
    }
    let kept = run.n_steps - burn_in_steps;
    let out = map_replicates(model, run, algorithm, |_, chain| {
        chain.advance(burn_in_steps)?;
        let mut acc = 0.0;
        for _ in 0..kept {
            chain.step()?;
            acc += sq_dist(&chain.state().theta, theta_star);
        }
        Ok(acc / kept as f64)
    })?;
    Ok(out)
}

pub struct StationaryPoint {
    pub n_particles: usize,
    pub squares: Vec<f64>,
    pub estimate: RmseEstimate,
    /// `√(2 d_θ / (N μ))` when `μ` is known.
    pub concentration: Option<f64>,
}

pub struct DecayPoint {
    pub n: u64,
    pub time: f64,
    pub squares: Vec<f64>,
    pub estimate: RmseEstimate,
}

pub enum SweepResult {
    NParticles {
        points: Vec<StationaryPoint>,
        fit: Option<RateFit>,
    },
    Iterations {
        points: Vec<DecayPoint>,
        /// Stationary error level: concentration plus discretisation term.
        floor: f64,
        /// Leading points with RMSE at least three times the floor.
        prefix: usize,
        fit: Option<RateFit>,
    },
    Gamma {
        estimate: C1Estimate,
        fit: Option<RateFit>,
    },
}

pub struct SweepOutcome {
    pub results: Vec<(Algorithm, SweepResult)>,
    pub warnings: Vec<String>,
}

fn try_fit(
    points: &[(f64, f64)],
    fitter: fn(&[(f64, f64)]) -> ipla_core::Result<RateFit>,
    warnings: &mut Vec<String>,
    what: &str,
) -> Option<RateFit> {
    if points.len() < 3 {
        warnings.push(format!(
            "{what}: {} usable point(s), at least 3 are needed for a fit",
            points.len()
        ));
        return None;
    }
    match fitter(points) {
        Ok(f) => Some(f),
        Err(e) => {
            warnings.push(format!("{what}: fit skipped ({e})"));
            None
        }
    }
}

pub fn n_particle_sweep(
    cfg: &ExperimentConfig,
    model: &dyn LatentModel,
    sizes: &[usize],
    algorithm: Algorithm,
    warnings: &mut Vec<String>,
) -> Result<SweepResult> {
    let star = require_theta_star(model, "the n_particles sweep")?;
    let mu = model.analytic().and_then(|a| a.mu);
    let burn = steps_for(cfg.burn_in_time(), cfg.run.gamma);
    let mut points = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let run = RunConfig {
            n_particles: n,
            ..cfg.run.clone()
        };
        let squares = stationary_squares(model, &run, algorithm, &star, burn)?;
        let estimate = rmse_from_squares(&squares);
        points.push(StationaryPoint {
            n_particles: n,
            squares,
            estimate,
            concentration: mu.map(|m| (2.0 * model.d_theta() as f64 / (n as f64 * m)).sqrt()),
        });
    }
    let xy: Vec<(f64, f64)> = points.iter().map(|p| (p.n_particles as f64, p.estimate.rmse)).collect();
    let fit = try_fit(&xy, fit_rate, warnings, "n_particles sweep");
    Ok(SweepResult::NParticles { points, fit })
}

/// RMSE to `θ*` across replicates at each checkpoint step.
pub fn error_decay(
    model: &dyn LatentModel,
    run: &RunConfig,
    algorithm: Algorithm,
    theta_star: &[f64],
    checkpoints: &[u64],
) -> Result<Vec<DecayPoint>> {
    let per_rep = map_replicates(model, run, algorithm, |_, chain| {
        let mut out = Vec::with_capacity(checkpoints.len());
        for &n in checkpoints {
            chain.advance(n - chain.state().step)?;
            out.push(sq_dist(&chain.state().theta, theta_star));
        }
        Ok(out)
    })?;
    Ok(checkpoints
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let squares: Vec<f64> = per_rep.iter().map(|v| v[k]).collect();
            DecayPoint {
                n,
                time: n as f64 * run.gamma,
                estimate: rmse_from_squares(&squares),
                squares,
            }
        })
        .collect())
}

pub fn iteration_sweep(
    cfg: &ExperimentConfig,
    model: &dyn LatentModel,
    checkpoints: &[u64],
    algorithm: Algorithm,
    c1: Option<f64>,
    warnings: &mut Vec<String>,
) -> Result<SweepResult> {
    let star = require_theta_star(model, "the iterations sweep")?;
    let mu = model.analytic().and_then(|a| a.mu).ok_or_else(|| {
        LabError::from(Error::UnsupportedModel(
            "the iterations sweep needs the convexity constant μ".into(),
        ))
    })?;
    let points = error_decay(model, &cfg.run, algorithm, &star, checkpoints)?;
    let (dt, dx, n) = (model.d_theta(), model.d_x(), cfg.run.n_particles);
    let concentration = (2.0 * dt as f64 / (n as f64 * mu)).sqrt();
    let disc = match c1 {
        Some(c) => c * dimension_factor(dt, dx, n) * cfg.run.gamma.sqrt(),
        None => {
            warnings.push(
                "iterations sweep: no discretisation constant, error floor uses the concentration term only".into(),
            );
            0.0
        }
    };
    let floor = concentration + disc;
    let prefix = points.iter().take_while(|p| p.estimate.rmse >= 3.0 * floor).count();
    let xy: Vec<(f64, f64)> = points[..prefix].iter().map(|p| (p.time, p.estimate.rmse)).collect();
    let fit = try_fit(&xy, fit_log_linear, warnings, "iterations sweep");
    Ok(SweepResult::Iterations {
        points,
        floor,
        prefix,
        fit,
    })
}

pub fn gamma_sweep(
    cfg: &ExperimentConfig,
    model: &dyn LatentModel,
    gammas: &[f64],
    warnings: &mut Vec<String>,
) -> Result<SweepResult> {
    let horizon = cfg.run.horizon();
    let reference_gamma = match &cfg.calibration {
        Some(c) => c.reference_gamma,
        None => {
            let r = gammas[0] / 100.0;
            warnings.push(format!(
                "gamma sweep: no calibration block, reference step defaults to {r}"
            ));
            r
        }
    };
    let grid: Vec<RunConfig> = gammas
        .iter()
        .map(|&g| RunConfig {
            gamma: g,
            n_steps: steps_for(horizon, g),
            ..cfg.run.clone()
        })
        .collect();
    let estimate = estimate_c1(model, &grid, reference_gamma)?;
    let xy: Vec<(f64, f64)> = estimate.points.iter().map(|p| (p.gamma, p.rmse)).collect();
    let fit = try_fit(&xy, fit_rate, warnings, "gamma sweep");
    Ok(SweepResult::Gamma { estimate, fit })
}

pub fn sweep(cfg: &ExperimentConfig, model: &dyn LatentModel) -> Result<SweepOutcome> {
    use crate::config::Sweep;
    let mut warnings = Vec::new();
    let mut results = Vec::new();
    match &cfg.sweep {
        Sweep::None => return Err(LabError::config("sweep", "the sweep command needs a sweep list")),
        Sweep::NParticles(sizes) => {
            for alg in cfg.algorithm.algorithms() {
                results.push((alg, n_particle_sweep(cfg, model, sizes, alg, &mut warnings)?));
            }
        }
        Sweep::Iterations(checkpoints) => {
            let c1 = resolve_c1(cfg, model)?.c1;
            for alg in cfg.algorithm.algorithms() {
                results.push((alg, iteration_sweep(cfg, model, checkpoints, alg, c1, &mut warnings)?));
            }
        }
        Sweep::Gamma(gammas) => {
            if cfg.algorithm.algorithms() != [Algorithm::Ipla] {
                warnings.push("gamma sweep: strong-error calibration runs IPLA only".into());
            }
            results.push((Algorithm::Ipla, gamma_sweep(cfg, model, gammas, &mut warnings)?));
        }
    }
    Ok(SweepOutcome { results, warnings })
}

/// IPLA and PGD at one recorded step.
pub struct CompareRow {
    pub step: u64,
    pub time: f64,
    pub rmse_ipla: Option<RmseEstimate>,
    pub rmse_pgd: Option<RmseEstimate>,
    /// RMS over replicates of `‖θ^IPLA - θ^PGD‖`.
    pub gap: RmseEstimate,
}

/// Final `θ` of one algorithm tested against the reference run.
pub struct ReferenceCheck {
    pub algorithm: Algorithm,
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
    /// `|mean - ref| / √(se² + se_ref²)` per coordinate.
    pub z: Vec<f64>,
}

pub struct ReferenceOutcome {
    pub config: RunConfig,
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
    pub checks: Vec<ReferenceCheck>,
}

impl ReferenceOutcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().flat_map(|c| &c.z).all(|z| *z <= 3.0)
    }
}

pub struct CompareOutcome {
    pub rows: Vec<CompareRow>,
    /// Post-burn-in time-averaged RMSE of (IPLA, PGD).
    pub stationary: Option<(RmseEstimate, RmseEstimate)>,
    pub final_ipla: Vec<Vec<f64>>,
    pub final_pgd: Vec<Vec<f64>>,
    pub reference: Option<ReferenceOutcome>,
}

struct CompareReplicate {
    ipla: Vec<Vec<f64>>,
    pgd: Vec<Vec<f64>>,
    stationary: (f64, f64),
}

fn record_steps(n_steps: u64, stride: u64) -> Vec<u64> {
    let mut steps = vec![0];
    if stride > 0 {
        steps.extend((1..).map(|k| k * stride).take_while(|&s| s < n_steps));
    }
    if n_steps > 0 {
        steps.push(n_steps);
    }
    steps
}

fn coordinate_stats(samples: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let d = samples[0].len();
    (0..d)
        .map(|k| mean_se(&samples.iter().map(|s| s[k]).collect::<Vec<_>>()))
        .unzip()
}

pub fn compare(cfg: &ExperimentConfig, model: &dyn LatentModel) -> Result<CompareOutcome> {
    let run = &cfg.run;
    run.validate(model)?;
    let star = theta_star(model);
    let steps = record_steps(run.n_steps, cfg.stride);
    let burn = steps_for(cfg.burn_in_time(), run.gamma).min(run.n_steps);
    let kept = run.n_steps - burn;

    let reps: Vec<Result<CompareReplicate>> = (0..run.replicates)
        .into_par_iter()
        .map(|r| {
            let state = run.initial_state(model.d_theta(), model.d_x(), r)?;
            let noise = || CounterNoise::new(run.seed, r);
            let mut ipla = Chain::new(model, state.clone(), run.gamma, Algorithm::Ipla, noise())?;
            let mut pgd = Chain::new(model, state, run.gamma, Algorithm::Pgd, noise())?;
            let mut out = CompareReplicate {
                ipla: Vec::with_capacity(steps.len()),
                pgd: Vec::with_capacity(steps.len()),
                stationary: (0.0, 0.0),
            };
            let mut next = steps.iter().peekable();
            for n in 0..=run.n_steps {
                if n > 0 {
                    ipla.step()?;
                    pgd.step()?;
                    if let (Some(ts), true) = (&star, n > burn) {
                        out.stationary.0 += sq_dist(&ipla.state().theta, ts) / kept as f64;
                        out.stationary.1 += sq_dist(&pgd.state().theta, ts) / kept as f64;
                    }
                }
                if next.peek() == Some(&&n) {
                    next.next();
                    out.ipla.push(ipla.state().theta.clone());
                    out.pgd.push(pgd.state().theta.clone());
                }
            }
            Ok(out)
        })
        .collect();
    let reps = reps.into_iter().collect::<Result<Vec<_>>>()?;

    let rows = steps
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let rmse = |pick: fn(&CompareReplicate) -> &Vec<Vec<f64>>| {
                star.as_ref().map(|ts| {
                    let sq: Vec<f64> = reps.iter().map(|r| sq_dist(&pick(r)[k], ts)).collect();
                    rmse_from_squares(&sq)
                })
            };
            let gap: Vec<f64> = reps.iter().map(|r| sq_dist(&r.ipla[k], &r.pgd[k])).collect();
            CompareRow {
                step: n,
                time: n as f64 * run.gamma,
                rmse_ipla: rmse(|r| &r.ipla),
                rmse_pgd: rmse(|r| &r.pgd),
                gap: rmse_from_squares(&gap),
            }
        })
        .collect();

    let stationary = (star.is_some() && kept > 0).then(|| {
        let a: Vec<f64> = reps.iter().map(|r| r.stationary.0).collect();
        let b: Vec<f64> = reps.iter().map(|r| r.stationary.1).collect();
        (rmse_from_squares(&a), rmse_from_squares(&b))
    });
    let final_ipla: Vec<Vec<f64>> = reps
        .iter()
        .map(|r| r.ipla.last().cloned().unwrap_or_default())
        .collect();
    let final_pgd: Vec<Vec<f64>> = reps.iter().map(|r| r.pgd.last().cloned().unwrap_or_default()).collect();

    let reference = match &cfg.reference {
        Some(rf) => Some(reference_check(model, run, rf, &final_ipla, &final_pgd)?),
        None => None,
    };
    Ok(CompareOutcome {
        rows,
        stationary,
        final_ipla,
        final_pgd,
        reference,
    })
}

/// The reference configuration: finer step, longer run, more particles and
/// an independent seed.
pub fn reference_config(run: &RunConfig, rf: &ReferenceConfig) -> RunConfig {
    RunConfig {
        n_particles: run.n_particles * rf.particle_multiplier,
        gamma: run.gamma / rf.gamma_divisor as f64,
        n_steps: run.n_steps * rf.steps_multiplier,
        seed: run.seed ^ 0x9E37_79B9_7F4A_7C15,
        init: run.init.clone(),
        replicates: rf.replicates,
    }
}

fn reference_check(
    model: &dyn LatentModel,
    run: &RunConfig,
    rf: &ReferenceConfig,
    final_ipla: &[Vec<f64>],
    final_pgd: &[Vec<f64>],
) -> Result<ReferenceOutcome> {
    let config = reference_config(run, rf);
    let record = run_chain(model, &config, Algorithm::Ipla, RecorderSpec::default())?;
    let (mean, se) = coordinate_stats(&record.final_thetas());
    let checks = [(Algorithm::Ipla, final_ipla), (Algorithm::Pgd, final_pgd)]
        .into_iter()
        .map(|(algorithm, finals)| {
            let (m, s) = coordinate_stats(finals);
            let z = (0..m.len())
                .map(|k| (m[k] - mean[k]).abs() / (s[k] * s[k] + se[k] * se[k]).sqrt())
                .collect();
            ReferenceCheck {
                algorithm,
                mean: m,
                se: s,
                z,
            }
        })
        .collect();
    Ok(ReferenceOutcome {
        config,
        mean,
        se,
        checks,
    })
}

pub struct ChaosOutcome {
    pub records: Vec<ChaosRecord>,
    pub fit: Option<RateFit>,
    pub warnings: Vec<String>,
}

pub fn chaos(cfg: &ExperimentConfig, params: &GaussianHierarchicalParams) -> Result<ChaosOutcome> {
    use crate::config::Sweep;
    let sizes = match &cfg.sweep {
        Sweep::NParticles(v) => v.clone(),
        Sweep::None => vec![cfg.run.n_particles],
        _ => {
            return Err(LabError::config(
                "sweep",
                "the chaos experiment sweeps n_particles only",
            ))
        }
    };
    let mut records = Vec::with_capacity(sizes.len());
    for n in sizes {
        let run = RunConfig {
            n_particles: n,
            ..cfg.run.clone()
        };
        records.push(coupled_chaos_run(params, &run)?);
    }
    let mut warnings = Vec::new();
    let xy: Vec<(f64, f64)> = records
        .iter()
        .map(|r| (r.n_particles as f64, r.mean_theta_sup()))
        .collect();
    let fit = try_fit(&xy, fit_rate, &mut warnings, "chaos");
    Ok(ChaosOutcome { records, fit, warnings })
}

/// Negates `∇_θ U`; a planted defect for exercising the gradient check.
pub struct FlippedTheta<'a>(pub &'a dyn LatentModel);

impl LatentModel for FlippedTheta<'_> {
    fn d_theta(&self) -> usize {
        self.0.d_theta()
    }
    fn d_x(&self) -> usize {
        self.0.d_x()
    }
    fn potential(&self, theta: &[f64], x: &[f64]) -> f64 {
        self.0.potential(theta, x)
    }
    fn grad_theta(&self, theta: &[f64], x: &[f64], out: &mut [f64]) {
        self.0.grad_theta(theta, x, out);
        out.iter_mut().for_each(|v| *v = -*v);
    }
    fn grad_x(&self, theta: &[f64], x: &[f64], out: &mut [f64]) {
        self.0.grad_x(theta, x, out)
    }
    fn name(&self) -> &str {
        "flipped-theta-gradient"
    }
}

pub struct GradcheckOutcome {
    pub points: usize,
    pub tolerance: f64,
    pub theta_max: f64,
    pub x_max: f64,
    /// Index of the point with the largest error and its report.
    pub worst_point: usize,
    pub worst: GradCheckReport,
    pub worst_theta: Vec<f64>,
    pub worst_x: Vec<f64>,
}

impl GradcheckOutcome {
    pub fn passed(&self) -> bool {
        self.theta_max < self.tolerance && self.x_max < self.tolerance
    }

    pub fn worst_block(&self) -> &'static str {
        match self.worst.worst_block() {
            Block::Theta => "theta",
            Block::X => "x",
        }
    }
}

/// Seeded probe points, uniform in the cube of half-width `radius`.
pub fn gradcheck_points(model: &dyn LatentModel, g: &GradcheckConfig) -> Vec<(Vec<f64>, Vec<f64>)> {
    (0..g.points)
        .map(|i| {
            let mut rng = CounterRng::new(g.seed, 0x6772_6164, i as u64);
            let mut draw = |d: usize| {
                (0..d)
                    .map(|_| rng.random_range(-g.radius..=g.radius))
                    .collect::<Vec<_>>()
            };
            let theta = draw(model.d_theta());
            let x = draw(model.d_x());
            (theta, x)
        })
        .collect()
}

pub fn gradcheck(model: &dyn LatentModel, g: &GradcheckConfig) -> Result<GradcheckOutcome> {
    let flipped;
    let model: &dyn LatentModel = match g.inject_fault {
        Some(Fault::FlipThetaGradient) => {
            flipped = FlippedTheta(model);
            &flipped
        }
        None => model,
    };
    let mut out: Option<GradcheckOutcome> = None;
    let (mut theta_max, mut x_max) = (0.0f64, 0.0f64);
    for (i, (theta, x)) in gradcheck_points(model, g).into_iter().enumerate() {
        let h = g.h.unwrap_or_else(|| default_fd_step(&theta, &x));
        let report = check_gradients(model, &theta, &x, h)?;
        theta_max = theta_max.max(report.theta_rel_err);
        x_max = x_max.max(report.x_rel_err);
        if out
            .as_ref()
            .is_none_or(|o| report.max_rel_err() > o.worst.max_rel_err())
        {
            out = Some(GradcheckOutcome {
                points: g.points,
                tolerance: g.tolerance,
                theta_max: 0.0,
                x_max: 0.0,
                worst_point: i,
                worst: report,
                worst_theta: theta,
                worst_x: x,
            });
        }
    }
    let mut out = out.expect("at least one probe point");
    out.theta_max = theta_max;
    out.x_max = x_max;
    Ok(out)
}

pub struct BoundRow {
    pub n_particles: usize,
    pub gamma: f64,
    pub n: u64,
    pub z0_dist: f64,
    pub terms: BoundTerms,
}

/// Bound terms at the run configuration, or along the sweep when one is set.
pub fn bound_table(cfg: &ExperimentConfig, model: &dyn LatentModel, c1: Option<f64>) -> Result<Vec<BoundRow>> {
    use crate::config::Sweep;
    let base = &cfg.run;
    let runs: Vec<RunConfig> = match &cfg.sweep {
        Sweep::None => vec![base.clone()],
        Sweep::NParticles(v) => v
            .iter()
            .map(|&n| RunConfig {
                n_particles: n,
                ..base.clone()
            })
            .collect(),
        Sweep::Gamma(v) => v
            .iter()
            .map(|&g| RunConfig {
                gamma: g,
                n_steps: steps_for(base.horizon(), g),
                ..base.clone()
            })
            .collect(),
        Sweep::Iterations(v) => v
            .iter()
            .map(|&n| RunConfig {
                n_steps: n,
                ..base.clone()
            })
            .collect(),
    };
    let mut rows = Vec::with_capacity(runs.len());
    for run in runs {
        let z0 = initial_distance(model, &run)?;
        let terms = bound_terms(model, &run, run.n_steps, c1)?;
        let (Some(z0), Some(terms)) = (z0, terms) else {
            return Err(Error::UnsupportedModel(format!(
                "the bound needs μ, θ* and x* and the `{}` model lacks them",
                model.name()
            ))
            .into());
        };
        rows.push(BoundRow {
            n_particles: run.n_particles,
            gamma: run.gamma,
            n: run.n_steps,
            z0_dist: z0,
            terms,
        });
    }
    Ok(rows)
}
