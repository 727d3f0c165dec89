//! Particle updates, chain driver and the propagation-of-chaos coupling.
//!
//! One step of either algorithm reads the state at step `n` only:
//!
//! ```text
//! θ ← θ - (γ/N) Σ_j ∇_θ U(θ, X^j) + √(2γ/N) ξ⁰      (ξ⁰ omitted for PGD)
//! X^i ← X^i - γ ∇_x U(θ, X^i) + √(2γ) ξ^i
//! ```
//!
//! The `θ`-drift is summed over particles in index order, so the result does
//! not depend on how replicates are scheduled.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::LatentModel;
use crate::noise::{CounterNoise, NoiseSource};
use crate::toy::{gaussian_meanfield_reference, make_gaussian_model, GaussianHierarchicalParams};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    /// Noise in both `θ` and the particles.
    Ipla,
    /// Particle gradient baseline: `θ` follows the particle-averaged drift only.
    Pgd,
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Algorithm::Ipla => "ipla",
            Algorithm::Pgd => "pgd",
        })
    }
}

/// `(θ_n, X_n^{1:N})` with the step counter and elapsed time `nγ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub theta: Vec<f64>,
    /// Row-major `N × d_x`.
    cloud: Vec<f64>,
    d_x: usize,
    pub step: u64,
    pub time: f64,
}

impl SystemState {
    pub fn new(theta: Vec<f64>, cloud: Vec<Vec<f64>>) -> Result<Self> {
        let d_x = cloud.first().map_or(0, Vec::len);
        if cloud.is_empty() || d_x == 0 {
            return Err(Error::invalid("cloud", "need at least one nonempty particle"));
        }
        if cloud.iter().any(|row| row.len() != d_x) {
            return Err(Error::invalid("cloud", "particles must share a dimension"));
        }
        Self::from_flat(theta, cloud.into_iter().flatten().collect(), d_x)
    }

    pub fn from_flat(theta: Vec<f64>, cloud: Vec<f64>, d_x: usize) -> Result<Self> {
        if theta.is_empty() || d_x == 0 || cloud.is_empty() || !cloud.len().is_multiple_of(d_x) {
            return Err(Error::invalid("state", "inconsistent dimensions"));
        }
        if theta.iter().chain(&cloud).any(|v| !v.is_finite()) {
            return Err(Error::invalid("state", "entries must be finite"));
        }
        Ok(Self {
            theta,
            cloud,
            d_x,
            step: 0,
            time: 0.0,
        })
    }

    pub fn n_particles(&self) -> usize {
        self.cloud.len() / self.d_x
    }

    pub fn d_x(&self) -> usize {
        self.d_x
    }

    pub fn particle(&self, i: usize) -> &[f64] {
        &self.cloud[i * self.d_x..(i + 1) * self.d_x]
    }

    pub fn particles(&self) -> impl Iterator<Item = &[f64]> {
        self.cloud.chunks_exact(self.d_x)
    }

    pub fn cloud_flat(&self) -> &[f64] {
        &self.cloud
    }

    /// Per-coordinate mean and (population) variance of the cloud.
    pub fn cloud_moments(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.n_particles() as f64;
        let mut mean = vec![0.0; self.d_x];
        for p in self.particles() {
            for (m, v) in mean.iter_mut().zip(p) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; self.d_x];
        for p in self.particles() {
            for ((s, v), m) in var.iter_mut().zip(p).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= n);
        (mean, var)
    }

    fn check_dims<M: LatentModel + ?Sized>(&self, model: &M) -> Result<()> {
        if self.theta.len() != model.d_theta() || self.d_x != model.d_x() {
            return Err(Error::invalid("state", "dimensions do not match the model"));
        }
        Ok(())
    }
}

/// Working memory for one step: the noise block and a gradient buffer.
///
/// Noise layout: `d_θ` entries for source 0, then `d_x` per particle.
#[derive(Debug, Clone)]
pub struct StepBuffers {
    pub noise: Vec<f64>,
    grad: Vec<f64>,
    drift: Vec<f64>,
}

impl StepBuffers {
    pub fn new(d_theta: usize, d_x: usize, n_particles: usize) -> Self {
        Self {
            noise: vec![0.0; d_theta + n_particles * d_x],
            grad: vec![0.0; d_theta.max(d_x)],
            drift: vec![0.0; d_theta],
        }
    }

    /// Pulls the block for `step` from every source.
    pub fn fill_noise<S: NoiseSource + ?Sized>(
        &mut self,
        noise: &S,
        step: u64,
        algorithm: Algorithm,
        d_theta: usize,
        d_x: usize,
    ) {
        let (theta_part, cloud_part) = self.noise.split_at_mut(d_theta);
        match algorithm {
            Algorithm::Ipla => noise.fill(0, step, theta_part),
            Algorithm::Pgd => theta_part.fill(0.0),
        }
        for (i, block) in cloud_part.chunks_exact_mut(d_x).enumerate() {
            noise.fill(i + 1, step, block);
        }
    }
}

/// Advances `state` by one step using the noise already in `buf.noise`.
pub fn step_with_buffers<M: LatentModel + ?Sized>(
    model: &M,
    state: &mut SystemState,
    gamma: f64,
    algorithm: Algorithm,
    buf: &mut StepBuffers,
) -> Result<()> {
    let d_theta = state.theta.len();
    let d_x = state.d_x;
    let n = state.n_particles();
    let diverged = |particle| Error::DivergedState {
        step: state.step,
        particle,
    };

    buf.drift.iter_mut().for_each(|v| *v = 0.0);
    for (i, x) in state.cloud.chunks_exact(d_x).enumerate() {
        let g = &mut buf.grad[..d_theta];
        model.grad_theta(&state.theta, x, g);
        if g.iter().any(|v| !v.is_finite()) {
            return Err(diverged(Some(i)));
        }
        for (acc, gi) in buf.drift.iter_mut().zip(g.iter()) {
            *acc += gi;
        }
    }

    let x_scale = (2.0 * gamma).sqrt();
    let (theta_noise, cloud_noise) = buf.noise.split_at(d_theta);
    for (i, (x, xi)) in state
        .cloud
        .chunks_exact_mut(d_x)
        .zip(cloud_noise.chunks_exact(d_x))
        .enumerate()
    {
        let g = &mut buf.grad[..d_x];
        model.grad_x(&state.theta, x, g);
        for ((xk, gk), nk) in x.iter_mut().zip(g.iter()).zip(xi) {
            *xk += -gamma * gk + x_scale * nk;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(diverged(Some(i)));
        }
    }

    let inv_n = 1.0 / n as f64;
    let theta_scale = match algorithm {
        Algorithm::Ipla => (2.0 * gamma * inv_n).sqrt(),
        Algorithm::Pgd => 0.0,
    };
    for ((t, d), nk) in state.theta.iter_mut().zip(&buf.drift).zip(theta_noise) {
        *t += -gamma * inv_n * d + theta_scale * nk;
    }
    if state.theta.iter().any(|v| !v.is_finite()) {
        return Err(diverged(None));
    }

    state.step += 1;
    state.time = state.step as f64 * gamma;
    Ok(())
}

fn single_step<M, S>(model: &M, s: &SystemState, gamma: f64, algorithm: Algorithm, noise: &S) -> Result<SystemState>
where
    M: LatentModel + ?Sized,
    S: NoiseSource + ?Sized,
{
    s.check_dims(model)?;
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::invalid("gamma", format!("must be positive, got {gamma}")));
    }
    let mut next = s.clone();
    let mut buf = StepBuffers::new(s.theta.len(), s.d_x, s.n_particles());
    buf.fill_noise(noise, s.step, algorithm, s.theta.len(), s.d_x);
    step_with_buffers(model, &mut next, gamma, algorithm, &mut buf)?;
    Ok(next)
}

/// One IPLA step. The increment for the transition out of step `n` is the
/// noise block at index `n`.
pub fn ipla_step<M, S>(model: &M, s: &SystemState, gamma: f64, noise: &S) -> Result<SystemState>
where
    M: LatentModel + ?Sized,
    S: NoiseSource + ?Sized,
{
    single_step(model, s, gamma, Algorithm::Ipla, noise)
}

/// One step of the baseline without `θ`-noise.
pub fn pgd_step<M, S>(model: &M, s: &SystemState, gamma: f64, noise: &S) -> Result<SystemState>
where
    M: LatentModel + ?Sized,
    S: NoiseSource + ?Sized,
{
    single_step(model, s, gamma, Algorithm::Pgd, noise)
}

/// A chain bound to a model, step size, algorithm and noise source.
pub struct Chain<'m, M: ?Sized, S> {
    model: &'m M,
    state: SystemState,
    gamma: f64,
    algorithm: Algorithm,
    noise: S,
    buf: StepBuffers,
}

impl<'m, M: LatentModel + ?Sized, S: NoiseSource> Chain<'m, M, S> {
    pub fn new(model: &'m M, state: SystemState, gamma: f64, algorithm: Algorithm, noise: S) -> Result<Self> {
        state.check_dims(model)?;
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::invalid("gamma", format!("must be positive, got {gamma}")));
        }
        let buf = StepBuffers::new(state.theta.len(), state.d_x, state.n_particles());
        Ok(Self {
            model,
            state,
            gamma,
            algorithm,
            noise,
            buf,
        })
    }

    pub fn step(&mut self) -> Result<()> {
        let (dt, dx) = (self.state.theta.len(), self.state.d_x);
        self.buf
            .fill_noise(&self.noise, self.state.step, self.algorithm, dt, dx);
        step_with_buffers(self.model, &mut self.state, self.gamma, self.algorithm, &mut self.buf)
    }

    pub fn advance(&mut self, steps: u64) -> Result<()> {
        for _ in 0..steps {
            self.step()?;
        }
        Ok(())
    }

    pub fn state(&self) -> &SystemState {
        &self.state
    }

    pub fn into_state(self) -> SystemState {
        self.state
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

/// Law of an initial coordinate block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InitLaw {
    /// Point mass; a single value is broadcast to every coordinate.
    Point { at: Vec<f64> },
    /// Independent `N(mean_k, scale²)` coordinates.
    Gaussian { mean: Vec<f64>, scale: f64 },
}

impl Default for InitLaw {
    fn default() -> Self {
        InitLaw::Point { at: vec![0.0] }
    }
}

impl InitLaw {
    pub fn mean(&self, dim: usize) -> Result<Vec<f64>> {
        let m = match self {
            InitLaw::Point { at } => at,
            InitLaw::Gaussian { mean, .. } => mean,
        };
        match m.len() {
            1 => Ok(vec![m[0]; dim]),
            l if l == dim => Ok(m.clone()),
            l => Err(Error::invalid("init", format!("expected 1 or {dim} values, got {l}"))),
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        let mean = self.mean(dim)?;
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("init", "values must be finite"));
        }
        if let InitLaw::Gaussian { scale, .. } = self {
            if !(scale.is_finite() && *scale >= 0.0) {
                return Err(Error::invalid(
                    "init.scale",
                    format!("must be nonnegative, got {scale}"),
                ));
            }
        }
        Ok(())
    }

    fn draw(&self, z: &[f64], out: &mut [f64]) {
        let mean = self.mean(out.len()).expect("validated");
        match self {
            InitLaw::Point { .. } => out.copy_from_slice(&mean),
            InitLaw::Gaussian { scale, .. } => {
                for ((o, m), zk) in out.iter_mut().zip(&mean).zip(z) {
                    *o = m + scale * zk;
                }
            }
        }
    }
}

/// Initial law of `θ_0` and of each particle `X_0^i` (drawn iid).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSpec {
    #[serde(default)]
    pub theta: InitLaw,
    #[serde(default)]
    pub x: InitLaw,
}

impl InitSpec {
    pub fn point(theta: f64, x: f64) -> Self {
        Self {
            theta: InitLaw::Point { at: vec![theta] },
            x: InitLaw::Point { at: vec![x] },
        }
    }

    pub fn validate(&self, d_theta: usize, d_x: usize) -> Result<()> {
        self.theta.validate(d_theta)?;
        self.x.validate(d_x)
    }

    /// Draws the initial state from the replicate's initialisation streams.
    pub fn draw(&self, d_theta: usize, d_x: usize, n_particles: usize, noise: &CounterNoise) -> Result<SystemState> {
        self.validate(d_theta, d_x)?;
        let mut z = vec![0.0; d_theta.max(d_x)];
        let mut theta = vec![0.0; d_theta];
        noise.init_block(0, &mut z[..d_theta]);
        self.theta.draw(&z[..d_theta], &mut theta);
        let mut cloud = vec![0.0; n_particles * d_x];
        for (i, row) in cloud.chunks_exact_mut(d_x).enumerate() {
            noise.init_block(i + 1, &mut z[..d_x]);
            self.x.draw(&z[..d_x], row);
        }
        SystemState::from_flat(theta, cloud, d_x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub n_particles: usize,
    pub gamma: f64,
    pub n_steps: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub init: InitSpec,
    #[serde(default = "one_replicate")]
    pub replicates: u32,
}

fn one_replicate() -> u32 {
    1
}

impl RunConfig {
    pub fn new(n_particles: usize, gamma: f64, n_steps: u64) -> Self {
        Self {
            n_particles,
            gamma,
            n_steps,
            seed: 0,
            init: InitSpec::default(),
            replicates: 1,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_init(mut self, init: InitSpec) -> Self {
        self.init = init;
        self
    }

    pub fn with_replicates(mut self, replicates: u32) -> Self {
        self.replicates = replicates;
        self
    }

    pub fn horizon(&self) -> f64 {
        self.n_steps as f64 * self.gamma
    }

    pub fn validate<M: LatentModel + ?Sized>(&self, model: &M) -> Result<()> {
        if self.n_particles == 0 {
            return Err(Error::invalid("n_particles", "must be positive"));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::invalid("gamma", format!("must be positive, got {}", self.gamma)));
        }
        if self.replicates == 0 {
            return Err(Error::invalid("replicates", "must be positive"));
        }
        if let Some(limit) = model.analytic().and_then(|a| a.stability_limit()) {
            if self.gamma >= limit {
                return Err(Error::GammaOutOfRange {
                    gamma: self.gamma,
                    limit,
                });
            }
        }
        self.init.validate(model.d_theta(), model.d_x())
    }

    pub fn initial_state(&self, d_theta: usize, d_x: usize, replicate: u32) -> Result<SystemState> {
        self.init
            .draw(d_theta, d_x, self.n_particles, &CounterNoise::new(self.seed, replicate))
    }
}

/// Runs `f` on a fresh chain for every replicate and returns the results in
/// replicate order. Replicates may execute on any number of threads.
pub fn map_replicates<M, T, F>(model: &M, cfg: &RunConfig, algorithm: Algorithm, f: F) -> Result<Vec<T>>
where
    M: LatentModel + ?Sized,
    T: Send,
    F: Fn(u32, &mut Chain<'_, M, CounterNoise>) -> Result<T> + Sync,
{
    cfg.validate(model)?;
    let results: Vec<Result<T>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let state = cfg.initial_state(model.d_theta(), model.d_x(), r)?;
            let mut chain = Chain::new(model, state, cfg.gamma, algorithm, CounterNoise::new(cfg.seed, r))?;
            f(r, &mut chain)
        })
        .collect();
    results.into_iter().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RecorderSpec {
    /// Record `θ` every `stride` steps; `0` records only the endpoints.
    pub stride: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPoint {
    pub step: u64,
    pub time: f64,
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateRecord {
    pub replicate: u32,
    pub trajectory: Vec<TrajectoryPoint>,
    pub initial_theta: Vec<f64>,
    pub final_theta: Vec<f64>,
    pub cloud_mean: Vec<f64>,
    pub cloud_var: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub config: RunConfig,
    pub algorithm: Algorithm,
    pub replicates: Vec<ReplicateRecord>,
}

impl RunRecord {
    pub fn final_thetas(&self) -> Vec<Vec<f64>> {
        self.replicates.iter().map(|r| r.final_theta.clone()).collect()
    }
}

/// Executes `n_steps` of `algorithm` for every replicate.
pub fn run_chain<M: LatentModel + ?Sized>(
    model: &M,
    cfg: &RunConfig,
    algorithm: Algorithm,
    recorder: RecorderSpec,
) -> Result<RunRecord> {
    let replicates = map_replicates(model, cfg, algorithm, |r, chain| {
        let point = |s: &SystemState| TrajectoryPoint {
            step: s.step,
            time: s.time,
            theta: s.theta.clone(),
        };
        let initial_theta = chain.state().theta.clone();
        let mut trajectory = vec![point(chain.state())];
        for _ in 0..cfg.n_steps {
            chain.step()?;
            let s = chain.state();
            if recorder.stride > 0 && s.step % recorder.stride == 0 && s.step != cfg.n_steps {
                trajectory.push(point(s));
            }
        }
        if cfg.n_steps > 0 {
            trajectory.push(point(chain.state()));
        }
        let (cloud_mean, cloud_var) = chain.state().cloud_moments();
        Ok(ReplicateRecord {
            replicate: r,
            trajectory,
            initial_theta,
            final_theta: chain.state().theta.clone(),
            cloud_mean,
            cloud_var,
        })
    })?;
    Ok(RunRecord {
        config: cfg.clone(),
        algorithm,
        replicates,
    })
}

/// `(θ, N^{-1/2} x_1, …, N^{-1/2} x_N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RescaledState {
    pub z: Vec<f64>,
}

impl RescaledState {
    pub fn distance(&self, other: &RescaledState) -> f64 {
        assert_eq!(self.z.len(), other.z.len(), "rescaled states of different size");
        self.z
            .iter()
            .zip(&other.z)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

pub fn rescale(s: &SystemState) -> RescaledState {
    let scale = (s.n_particles() as f64).sqrt().recip();
    let mut z = Vec::with_capacity(s.theta.len() + s.cloud.len());
    z.extend_from_slice(&s.theta);
    z.extend(s.cloud.iter().map(|v| v * scale));
    RescaledState { z }
}

/// Rescaled image of the joint minimiser `(θ*, x*)` replicated over `N` particles.
pub fn rescaled_minimiser(theta_star: &[f64], x_star: &[f64], n_particles: usize) -> RescaledState {
    let state = SystemState::from_flat(theta_star.to_vec(), x_star.repeat(n_particles), x_star.len())
        .expect("minimiser must be finite");
    rescale(&state)
}

/// Distances between an IPLA run and its mean-field counterpart.
#[derive(Debug, Clone, PartialEq)]
pub struct ChaosRecord {
    pub n_particles: usize,
    /// `sup_n |θ_n - θ_n^MF|` per replicate.
    pub theta_sup: Vec<f64>,
    /// `sup_n ‖X_n^1 - X_n^{1,MF}‖` per replicate.
    pub particle_sup: Vec<f64>,
}

impl ChaosRecord {
    pub fn mean_theta_sup(&self) -> f64 {
        self.theta_sup.iter().sum::<f64>() / self.theta_sup.len() as f64
    }

    pub fn se_theta_sup(&self) -> f64 {
        let m = self.theta_sup.len() as f64;
        if m < 2.0 {
            return f64::NAN;
        }
        let mean = self.mean_theta_sup();
        let var = self.theta_sup.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
        (var / m).sqrt()
    }
}

/// Couples IPLA with the mean-field system on the Gaussian model.
///
/// The mean-field `θ` is an Euler discretisation at the same step whose drift
/// uses the exact latent mean `m(t)`; its particles receive the same Brownian
/// increments as the IPLA particles.
pub fn coupled_chaos_run(p: &GaussianHierarchicalParams, cfg: &RunConfig) -> Result<ChaosRecord> {
    let model = make_gaussian_model(p.clone())?;
    cfg.validate(&model)?;
    let results: Vec<Result<(f64, f64)>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let state = cfg.initial_state(1, p.d_x(), r)?;
            coupled_chaos_replicate(p, cfg, state, &CounterNoise::new(cfg.seed, r))
        })
        .collect();
    let (theta_sup, particle_sup) = results.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();
    Ok(ChaosRecord {
        n_particles: cfg.n_particles,
        theta_sup,
        particle_sup,
    })
}

/// One coupled replicate from `state`; returns `(θ sup-distance, particle sup-distance)`.
pub fn coupled_chaos_replicate<S: NoiseSource + ?Sized>(
    p: &GaussianHierarchicalParams,
    cfg: &RunConfig,
    mut state: SystemState,
    noise: &S,
) -> Result<(f64, f64)> {
    let model = make_gaussian_model(p.clone())?;
    state.check_dims(&model)?;
    let gamma = cfg.gamma;
    let d_x = p.d_x();
    let theta_drift = d_x as f64 / (p.sigma_lat * p.sigma_lat);
    let m0 = cfg.init.x.mean(d_x)?.iter().sum::<f64>() / d_x as f64;
    let theta0 = state.theta[0];

    let mut mf_theta = [theta0];
    let mut mf_cloud = state.cloud.clone();
    let mut buf = StepBuffers::new(1, d_x, state.n_particles());
    let mut grad = vec![0.0; d_x];
    let x_scale = (2.0 * gamma).sqrt();
    let (mut theta_sup, mut particle_sup) = (0.0f64, 0.0f64);

    for n in 0..cfg.n_steps {
        let (_, m_n) = gaussian_meanfield_reference(p, theta0, m0, n as f64 * gamma);
        buf.fill_noise(noise, n, Algorithm::Ipla, 1, d_x);
        for (x, xi) in mf_cloud.chunks_exact_mut(d_x).zip(buf.noise[1..].chunks_exact(d_x)) {
            model.grad_x(&mf_theta, x, &mut grad);
            for ((xk, gk), nk) in x.iter_mut().zip(&grad).zip(xi) {
                *xk += -gamma * gk + x_scale * nk;
            }
        }
        mf_theta[0] -= gamma * theta_drift * (mf_theta[0] - m_n);
        step_with_buffers(&model, &mut state, gamma, Algorithm::Ipla, &mut buf)?;

        theta_sup = theta_sup.max((state.theta[0] - mf_theta[0]).abs());
        let dist: f64 = state
            .particle(0)
            .iter()
            .zip(&mf_cloud[..d_x])
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        particle_sup = particle_sup.max(dist);
    }
    Ok((theta_sup, particle_sup))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelSpec;
    use crate::noise::ZeroNoise;
    use crate::toy::make_gaussian_model;

    fn toy() -> crate::toy::GaussianModel {
        make_gaussian_model(GaussianHierarchicalParams::new(vec![0.0])).unwrap()
    }

    #[test]
    fn hand_computed_ipla_step() {
        let m = toy();
        let s = SystemState::new(vec![0.0], vec![vec![2.0]]).unwrap();
        let next = ipla_step(&m, &s, 0.1, &ZeroNoise).unwrap();
        assert!((next.theta[0] - 0.2).abs() < 1e-12);
        assert!((next.particle(0)[0] - 1.6).abs() < 1e-12);
        assert_eq!(next.step, 1);
        assert!((next.time - 0.1).abs() < 1e-15);
        let pgd = pgd_step(&m, &s, 0.1, &ZeroNoise).unwrap();
        assert_eq!(pgd, next);
    }

    #[test]
    fn stationary_point_is_fixed_without_noise() {
        let m = toy();
        let s = SystemState::new(vec![0.0], vec![vec![0.0]; 3]).unwrap();
        let next = ipla_step(&m, &s, 0.05, &ZeroNoise).unwrap();
        assert_eq!(next.theta, s.theta);
        assert_eq!(next.cloud_flat(), s.cloud_flat());
        assert_eq!(next.step, 1);
    }

    #[test]
    fn theta_gap_after_one_step_is_noise_term() {
        let m = toy();
        let s = SystemState::new(vec![0.3], vec![vec![1.0], vec![-0.5], vec![0.2], vec![2.0]]).unwrap();
        let noise = CounterNoise::new(11, 0);
        let gamma = 0.01;
        let a = ipla_step(&m, &s, gamma, &noise).unwrap();
        let b = pgd_step(&m, &s, gamma, &noise).unwrap();
        let mut xi0 = [0.0];
        noise.fill(0, 0, &mut xi0);
        let expect = (2.0 * gamma / 4.0).sqrt() * xi0[0].abs();
        assert!(((a.theta[0] - b.theta[0]).abs() - expect).abs() < 1e-12);
        assert_eq!(a.cloud_flat(), b.cloud_flat());
    }

    #[test]
    fn step_reconstructs_from_gradients_and_noise() {
        let p = GaussianHierarchicalParams {
            y: vec![0.5, -1.0],
            sigma_lat: 0.9,
            sigma_obs: 1.2,
        };
        let m = make_gaussian_model(p).unwrap();
        let s = SystemState::new(vec![0.7], vec![vec![0.1, 0.2], vec![-1.0, 0.4], vec![0.0, 3.0]]).unwrap();
        let noise = CounterNoise::new(5, 2);
        let gamma = 0.02;
        let next = ipla_step(&m, &s, gamma, &noise).unwrap();

        let n = 3.0;
        let mut drift = 0.0;
        let mut g = [0.0];
        for x in s.particles() {
            m.grad_theta(&s.theta, x, &mut g);
            drift += g[0];
        }
        let mut xi = [0.0];
        noise.fill(0, 0, &mut xi);
        let theta = s.theta[0] - gamma / n * drift + (2.0 * gamma / n).sqrt() * xi[0];
        assert!((next.theta[0] - theta).abs() < 1e-12);
        for i in 0..3 {
            let mut gx = [0.0; 2];
            m.grad_x(&s.theta, s.particle(i), &mut gx);
            let mut z = [0.0; 2];
            noise.fill(i + 1, 0, &mut z);
            for k in 0..2 {
                let expect = s.particle(i)[k] - gamma * gx[k] + (2.0 * gamma).sqrt() * z[k];
                assert!((next.particle(i)[k] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn increment_variances_match_noise_scales() {
        // U = (θ² + x²)/2: subtracting the drift leaves the noise increments
        let m = ModelSpec::new(
            1,
            1,
            |t, x| 0.5 * (t[0] * t[0] + x[0] * x[0]),
            |t, _, g| g[0] = t[0],
            |_, x, g| g[0] = x[0],
        );
        let (gamma, n_part) = (0.01, 4usize);
        let mut state = SystemState::new(vec![0.0], vec![vec![0.0]; n_part]).unwrap();
        let noise = CounterNoise::new(2024, 0);
        let steps = 100_000;
        let (mut th, mut xs, mut th_pgd) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..steps {
            let next = ipla_step(&m, &state, gamma, &noise).unwrap();
            th.push(next.theta[0] - (state.theta[0] - gamma * state.theta[0]));
            xs.push(next.particle(0)[0] - (state.particle(0)[0] - gamma * state.particle(0)[0]));
            let p = pgd_step(&m, &state, gamma, &noise).unwrap();
            th_pgd.push(p.theta[0] - (state.theta[0] - gamma * state.theta[0]));
            state = next;
        }
        let var = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>() / v.len() as f64;
        let se = |target: f64| target * (2.0 / steps as f64).sqrt();
        let target_theta = 2.0 * gamma / n_part as f64;
        assert!((var(&th) - target_theta).abs() < 3.0 * se(target_theta), "{}", var(&th));
        assert!((var(&xs) - 2.0 * gamma).abs() < 3.0 * se(2.0 * gamma), "{}", var(&xs));
        assert!(var(&th_pgd) < 1e-24);
    }

    #[test]
    fn divergence_names_particle() {
        let m = ModelSpec::new(
            1,
            1,
            |_, _| 0.0,
            |_, _, g| g[0] = 0.0,
            |_, x, g| g[0] = if x[0] > 1.0 { f64::INFINITY } else { 0.0 },
        );
        let s = SystemState::new(vec![0.0], vec![vec![0.0], vec![2.0]]).unwrap();
        match ipla_step(&m, &s, 0.1, &ZeroNoise) {
            Err(Error::DivergedState {
                step: 0,
                particle: Some(1),
            }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rescale_by_hand() {
        let s = SystemState::new(vec![0.0], vec![vec![1.0, 1.0]; 4]).unwrap();
        let z = rescale(&s).z;
        assert_eq!(z, vec![0.0, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5]);
        let one = SystemState::new(vec![0.3], vec![vec![1.5, -2.0]]).unwrap();
        assert_eq!(rescale(&one).z, vec![0.3, 1.5, -2.0]);
    }

    #[test]
    fn zero_steps_returns_initial_draw() {
        let m = toy();
        let cfg = RunConfig::new(5, 0.01, 0).with_init(InitSpec::point(1.5, 0.0));
        let rec = run_chain(&m, &cfg, Algorithm::Ipla, RecorderSpec { stride: 1 }).unwrap();
        assert_eq!(rec.replicates[0].final_theta, vec![1.5]);
        assert_eq!(rec.replicates[0].trajectory.len(), 1);
    }

    #[test]
    fn run_chain_is_deterministic_and_records_stride() {
        let m = toy();
        let cfg = RunConfig::new(10, 0.05, 25)
            .with_seed(3)
            .with_replicates(3)
            .with_init(InitSpec {
                theta: InitLaw::Gaussian {
                    mean: vec![1.0],
                    scale: 0.5,
                },
                x: InitLaw::Gaussian {
                    mean: vec![0.0],
                    scale: 1.0,
                },
            });
        let a = run_chain(&m, &cfg, Algorithm::Ipla, RecorderSpec { stride: 10 }).unwrap();
        let b = run_chain(&m, &cfg, Algorithm::Ipla, RecorderSpec { stride: 10 }).unwrap();
        assert_eq!(a, b);
        let steps: Vec<u64> = a.replicates[0].trajectory.iter().map(|p| p.step).collect();
        assert_eq!(steps, vec![0, 10, 20, 25]);
        assert_ne!(a.replicates[0].final_theta, a.replicates[1].final_theta);
        assert_ne!(a.replicates[0].initial_theta, a.replicates[1].initial_theta);
    }

    #[test]
    fn gamma_window_is_enforced() {
        let m = toy();
        let cfg = RunConfig::new(10, 0.5, 10);
        assert!(matches!(cfg.validate(&m), Err(Error::GammaOutOfRange { .. })));
        let cfg = RunConfig::new(10, 0.0, 10);
        assert!(matches!(cfg.validate(&m), Err(Error::InvalidArgument { .. })));
    }

    #[test]
    fn chaos_fixed_point_is_zero() {
        let p = GaussianHierarchicalParams::new(vec![0.6]);
        let cfg = RunConfig::new(4, 0.01, 200).with_init(InitSpec::point(0.6, 0.6));
        let state = cfg.initial_state(1, 1, 0).unwrap();
        let (t, x) = coupled_chaos_replicate(&p, &cfg, state, &ZeroNoise).unwrap();
        assert_eq!(t, 0.0);
        assert_eq!(x, 0.0);
    }

    #[test]
    fn chaos_single_step_by_hand() {
        let p = GaussianHierarchicalParams::new(vec![0.0]);
        let gamma = 0.01;
        let cfg = RunConfig::new(1, gamma, 1).with_init(InitSpec::point(1.0, 0.0));
        let noise = CounterNoise::new(4, 0);
        let state = cfg.initial_state(1, 1, 0).unwrap();
        let (t, x) = coupled_chaos_replicate(&p, &cfg, state, &noise).unwrap();
        // drifts coincide at step 0 (X_0 = m_0), so only the θ-noise separates them
        let mut xi = [0.0];
        noise.fill(0, 0, &mut xi);
        assert!((t - (2.0 * gamma).sqrt() * xi[0].abs()).abs() < 1e-14);
        assert_eq!(x, 0.0);

        // with a spread initial cloud and no noise, the gap is γ·|X_0 - m_0|
        let cfg = RunConfig::new(1, gamma, 1).with_init(InitSpec {
            theta: InitLaw::Point { at: vec![1.0] },
            x: InitLaw::Point { at: vec![0.0] },
        });
        let state = SystemState::new(vec![1.0], vec![vec![0.8]]).unwrap();
        let (t, _) = coupled_chaos_replicate(&p, &cfg, state, &ZeroNoise).unwrap();
        assert!((t - gamma * 0.8).abs() < 1e-15);
    }
}
