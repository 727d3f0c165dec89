//! Latent-variable model abstraction and assumption validators.

use rand::Rng;

use crate::noise::CounterRng;
use crate::{Error, Result};

/// A latent-variable model given by its negative log joint density
/// `U(θ, x) = -log p_θ(x, y)` with the observed data `y` fixed at
/// construction.
///
/// Implementations must be pure: the samplers call them concurrently.
pub trait LatentModel: Send + Sync {
    fn d_theta(&self) -> usize;
    fn d_x(&self) -> usize;
    fn potential(&self, theta: &[f64], x: &[f64]) -> f64;
    /// Writes `∇_θ U(θ, x)` into `out` (length `d_theta`).
    fn grad_theta(&self, theta: &[f64], x: &[f64], out: &mut [f64]);
    /// Writes `∇_x U(θ, x)` into `out` (length `d_x`).
    fn grad_x(&self, theta: &[f64], x: &[f64], out: &mut [f64]);

    fn analytic(&self) -> Option<&AnalyticInfo> {
        None
    }

    fn name(&self) -> &str {
        "model"
    }
}

impl<T: LatentModel + ?Sized> LatentModel for &T {
    fn d_theta(&self) -> usize {
        (**self).d_theta()
    }
    fn d_x(&self) -> usize {
        (**self).d_x()
    }
    fn potential(&self, theta: &[f64], x: &[f64]) -> f64 {
        (**self).potential(theta, x)
    }
    fn grad_theta(&self, theta: &[f64], x: &[f64], out: &mut [f64]) {
        (**self).grad_theta(theta, x, out)
    }
    fn grad_x(&self, theta: &[f64], x: &[f64], out: &mut [f64]) {
        (**self).grad_x(theta, x, out)
    }
    fn analytic(&self) -> Option<&AnalyticInfo> {
        (**self).analytic()
    }
    fn name(&self) -> &str {
        (**self).name()
    }
}

impl<T: LatentModel + ?Sized> LatentModel for Box<T> {
    fn d_theta(&self) -> usize {
        (**self).d_theta()
    }
    fn d_x(&self) -> usize {
        (**self).d_x()
    }
    fn potential(&self, theta: &[f64], x: &[f64]) -> f64 {
        (**self).potential(theta, x)
    }
    fn grad_theta(&self, theta: &[f64], x: &[f64], out: &mut [f64]) {
        (**self).grad_theta(theta, x, out)
    }
    fn grad_x(&self, theta: &[f64], x: &[f64], out: &mut [f64]) {
        (**self).grad_x(theta, x, out)
    }
    fn analytic(&self) -> Option<&AnalyticInfo> {
        (**self).analytic()
    }
    fn name(&self) -> &str {
        (**self).name()
    }
}

/// Gaussian moments of the stationary `θ`-marginal `π^N_Θ`.
///
/// The variance scales as `1/N`; `variance_unit` holds the `N = 1` diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaMarginal {
    pub mean: Vec<f64>,
    pub variance_unit: Vec<f64>,
}

impl ThetaMarginal {
    pub fn covariance_diag(&self, n_particles: usize) -> Vec<f64> {
        self.variance_unit.iter().map(|v| v / n_particles as f64).collect()
    }
}

/// Known structure of a model: minimiser, convexity and smoothness constants.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnalyticInfo {
    /// Maximiser of the marginal likelihood.
    pub theta_star: Option<Vec<f64>>,
    /// Latent coordinate of the joint minimiser of `U`.
    pub x_star: Option<Vec<f64>>,
    /// Strong convexity constant of `U`.
    pub mu: Option<f64>,
    /// Lipschitz constant of `∇U`.
    pub lipschitz: Option<f64>,
    pub theta_marginal: Option<ThetaMarginal>,
}

impl AnalyticInfo {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("mu", self.mu), ("lipschitz", self.lipschitz)] {
            if let Some(v) = v {
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::invalid(name, format!("must be positive, got {v}")));
                }
            }
        }
        if let (Some(mu), Some(l)) = (self.mu, self.lipschitz) {
            if mu > l {
                return Err(Error::invalid("mu", format!("mu = {mu} exceeds L = {l}")));
            }
        }
        Ok(())
    }

    /// Upper end of the step-size window `min(1/L, 2/μ)`, when both are known.
    pub fn stability_limit(&self) -> Option<f64> {
        match (self.mu, self.lipschitz) {
            (Some(mu), Some(l)) => Some((1.0 / l).min(2.0 / mu)),
            _ => None,
        }
    }
}

type PotentialFn = dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync;
type GradFn = dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync;

/// A model assembled from closures.
pub struct ModelSpec {
    d_theta: usize,
    d_x: usize,
    potential: Box<PotentialFn>,
    grad_theta: Box<GradFn>,
    grad_x: Box<GradFn>,
    analytic: Option<AnalyticInfo>,
}

impl ModelSpec {
    pub fn new(
        d_theta: usize,
        d_x: usize,
        potential: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
        grad_theta: impl Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
        grad_x: impl Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        assert!(d_theta > 0 && d_x > 0, "dimensions must be positive");
        Self {
            d_theta,
            d_x,
            potential: Box::new(potential),
            grad_theta: Box::new(grad_theta),
            grad_x: Box::new(grad_x),
            analytic: None,
        }
    }

    pub fn with_analytic(mut self, info: AnalyticInfo) -> Self {
        self.analytic = Some(info);
        self
    }
}

impl std::fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelSpec")
            .field("d_theta", &self.d_theta)
            .field("d_x", &self.d_x)
            .field("analytic", &self.analytic)
            .finish_non_exhaustive()
    }
}

impl LatentModel for ModelSpec {
    fn d_theta(&self) -> usize {
        self.d_theta
    }
    fn d_x(&self) -> usize {
        self.d_x
    }
    fn potential(&self, theta: &[f64], x: &[f64]) -> f64 {
        (self.potential)(theta, x)
    }
    fn grad_theta(&self, theta: &[f64], x: &[f64], out: &mut [f64]) {
        (self.grad_theta)(theta, x, out)
    }
    fn grad_x(&self, theta: &[f64], x: &[f64], out: &mut [f64]) {
        (self.grad_x)(theta, x, out)
    }
    fn analytic(&self) -> Option<&AnalyticInfo> {
        self.analytic.as_ref()
    }
}

/// Gradient block of a [`LatentModel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Theta,
    X,
}

impl std::fmt::Display for Block {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Block::Theta => "theta",
            Block::X => "x",
        })
    }
}

/// Agreement between analytic gradients and central differences of `U`.
///
/// Errors are `max_i |g_i - fd_i| / (1 + |g_i|)` per block.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub theta_rel_err: f64,
    pub x_rel_err: f64,
    pub theta_worst_coord: usize,
    pub x_worst_coord: usize,
    pub theta_grad_norm: f64,
    pub x_grad_norm: f64,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.theta_rel_err.max(self.x_rel_err)
    }

    pub fn worst_block(&self) -> Block {
        if self.theta_rel_err >= self.x_rel_err {
            Block::Theta
        } else {
            Block::X
        }
    }
}

/// Default central-difference step `1e-5 · (1 + ‖(θ, x)‖∞)`.
pub fn default_fd_step(theta: &[f64], x: &[f64]) -> f64 {
    let inf = theta.iter().chain(x).fold(0.0f64, |m, v| m.max(v.abs()));
    1e-5 * (1.0 + inf)
}

fn finite_potential<M: LatentModel + ?Sized>(model: &M, theta: &[f64], x: &[f64]) -> Result<f64> {
    let u = model.potential(theta, x);
    if u.is_finite() {
        Ok(u)
    } else {
        Err(Error::NonFiniteEvaluation {
            what: format!("U at theta={theta:?}, x={x:?}"),
        })
    }
}

fn block_error(analytic: &[f64], numeric: &[f64]) -> (f64, usize) {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / (1.0 + a.abs()))
        .enumerate()
        .fold(
            (0.0, 0),
            |(best, at), (i, e)| if e > best { (e, i) } else { (best, at) },
        )
}

/// Compares the model's analytic gradients at `(θ, x)` against central
/// differences of `U` with step `h`.
pub fn check_gradients<M: LatentModel + ?Sized>(
    model: &M,
    theta: &[f64],
    x: &[f64],
    h: f64,
) -> Result<GradCheckReport> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::invalid("h", format!("must be positive, got {h}")));
    }
    if theta.len() != model.d_theta() || x.len() != model.d_x() {
        return Err(Error::invalid("point", "dimensions do not match the model"));
    }
    if theta.iter().chain(x).any(|v| !v.is_finite()) {
        return Err(Error::invalid("point", "coordinates must be finite"));
    }
    finite_potential(model, theta, x)?;

    let mut g_theta = vec![0.0; theta.len()];
    let mut g_x = vec![0.0; x.len()];
    model.grad_theta(theta, x, &mut g_theta);
    model.grad_x(theta, x, &mut g_x);
    if g_theta.iter().chain(&g_x).any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteEvaluation {
            what: "analytic gradient".into(),
        });
    }

    let mut probe = theta.to_vec();
    let mut fd_theta = vec![0.0; theta.len()];
    for i in 0..theta.len() {
        probe[i] = theta[i] + h;
        let up = finite_potential(model, &probe, x)?;
        probe[i] = theta[i] - h;
        let down = finite_potential(model, &probe, x)?;
        probe[i] = theta[i];
        fd_theta[i] = (up - down) / (2.0 * h);
    }

    let mut probe = x.to_vec();
    let mut fd_x = vec![0.0; x.len()];
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = finite_potential(model, theta, &probe)?;
        probe[i] = x[i] - h;
        let down = finite_potential(model, theta, &probe)?;
        probe[i] = x[i];
        fd_x[i] = (up - down) / (2.0 * h);
    }

    let (theta_rel_err, theta_worst_coord) = block_error(&g_theta, &fd_theta);
    let (x_rel_err, x_worst_coord) = block_error(&g_x, &fd_x);
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    Ok(GradCheckReport {
        theta_rel_err,
        x_rel_err,
        theta_worst_coord,
        x_worst_coord,
        theta_grad_norm: norm(&g_theta),
        x_grad_norm: norm(&g_x),
    })
}

const PROBE_STREAM: u64 = 0x7072_6f62_6500_0000;
const MAX_RESAMPLES: usize = 16;

/// Heuristic lower estimate of the strong convexity constant of `U`.
///
/// Draws `trials` pairs `v, v'` uniformly from the cube `[-radius, radius]^d`
/// and returns the smallest `⟨v - v', ∇U(v) - ∇U(v')⟩ / ‖v - v'‖²`. This is a
/// sample minimum, not a certificate.
pub fn probe_convexity<M: LatentModel + ?Sized>(model: &M, seed: u64, trials: usize, radius: f64) -> Result<f64> {
    if trials < 2 {
        return Err(Error::invalid("trials", "at least 2 trials are required"));
    }
    if !(radius.is_finite() && radius > 0.0) {
        return Err(Error::invalid("radius", format!("must be positive, got {radius}")));
    }
    let (dt, dx) = (model.d_theta(), model.d_x());
    let dim = dt + dx;
    let mut v = vec![0.0; dim];
    let mut w = vec![0.0; dim];
    let mut gv = vec![0.0; dim];
    let mut gw = vec![0.0; dim];
    let mut best = f64::INFINITY;

    for trial in 0..trials {
        let mut rng = CounterRng::new(seed, PROBE_STREAM, trial as u64);
        let mut sq = 0.0;
        for _ in 0..MAX_RESAMPLES {
            for (a, b) in v.iter_mut().zip(w.iter_mut()) {
                *a = rng.random_range(-radius..radius);
                *b = rng.random_range(-radius..radius);
            }
            sq = v.iter().zip(&w).map(|(a, b)| (a - b) * (a - b)).sum();
            if sq > 1e-24 {
                break;
            }
        }
        if sq <= 1e-24 {
            continue;
        }
        full_gradient(model, &v, &mut gv);
        full_gradient(model, &w, &mut gw);
        if gv.iter().chain(&gw).any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteEvaluation {
                what: "gradient during convexity probe".into(),
            });
        }
        let inner: f64 = v
            .iter()
            .zip(&w)
            .zip(gv.iter().zip(&gw))
            .map(|((a, b), (ga, gb))| (a - b) * (ga - gb))
            .sum();
        best = best.min(inner / sq);
    }

    if best.is_finite() {
        Ok(best)
    } else {
        Err(Error::DegenerateProbe)
    }
}

fn full_gradient<M: LatentModel + ?Sized>(model: &M, v: &[f64], out: &mut [f64]) {
    let dt = model.d_theta();
    let (theta, x) = v.split_at(dt);
    let (gt, gx) = out.split_at_mut(dt);
    model.grad_theta(theta, x, gt);
    model.grad_x(theta, x, gx);
}

#[cfg(test)]
mod tests {
    use super::*;

    /// U = ((x - θ)² + x²) / 2
    fn quadratic() -> ModelSpec {
        ModelSpec::new(
            1,
            1,
            |t, x| 0.5 * ((x[0] - t[0]).powi(2) + x[0] * x[0]),
            |t, x, g| g[0] = t[0] - x[0],
            |t, x, g| g[0] = 2.0 * x[0] - t[0],
        )
    }

    fn isotropic(dt: usize, dx: usize) -> ModelSpec {
        ModelSpec::new(
            dt,
            dx,
            |t, x| 0.5 * t.iter().chain(x).map(|v| v * v).sum::<f64>(),
            |t, _, g| g.copy_from_slice(t),
            |_, x, g| g.copy_from_slice(x),
        )
    }

    #[test]
    fn quadratic_gradients_agree_with_differences() {
        let r = check_gradients(&quadratic(), &[0.3], &[-0.7], 1e-5).unwrap();
        assert!(r.theta_rel_err < 1e-6, "{r:?}");
        assert!(r.x_rel_err < 1e-6, "{r:?}");
    }

    #[test]
    fn flipped_theta_gradient_is_detected() {
        let bad = ModelSpec::new(
            1,
            1,
            |t, x| 0.5 * ((x[0] - t[0]).powi(2) + x[0] * x[0]),
            |t, x, g| g[0] = -(t[0] - x[0]),
            |t, x, g| g[0] = 2.0 * x[0] - t[0],
        );
        // at θ = 1, x = 1 the true ∇θU is 0, so evaluate off the diagonal
        let r = check_gradients(&bad, &[1.0], &[-1.0], 1e-5).unwrap();
        let g: f64 = 2.0; // true ∇θU(1, -1)
        let expected = (2.0 * g).abs() / (1.0 + g.abs());
        assert!((r.theta_rel_err - expected).abs() < 1e-6, "{r:?}");
        assert_eq!(r.worst_block(), Block::Theta);
        assert!(r.x_rel_err < 1e-6);
    }

    #[test]
    fn flipped_gradient_at_unit_point() {
        // U = θ²/2 + x²/2 + θx, ∇θU(1,1) = 2; flipping gives |−2 − 2| / (1 + 2)
        let bad = ModelSpec::new(
            1,
            1,
            |t, x| 0.5 * t[0] * t[0] + 0.5 * x[0] * x[0] + t[0] * x[0],
            |t, x, g| g[0] = -(t[0] + x[0]),
            |t, x, g| g[0] = x[0] + t[0],
        );
        let r = check_gradients(&bad, &[1.0], &[1.0], 1e-5).unwrap();
        assert!((r.theta_rel_err - 4.0 / 3.0).abs() < 1e-6, "{r:?}");
    }

    #[test]
    fn non_finite_potential_is_reported() {
        let m = ModelSpec::new(
            1,
            1,
            |t, _| if t[0] > 0.0 { f64::NAN } else { 0.0 },
            |_, _, g| g[0] = 0.0,
            |_, _, g| g[0] = 0.0,
        );
        let err = check_gradients(&m, &[0.0], &[0.0], 1e-3).unwrap_err();
        assert!(matches!(err, Error::NonFiniteEvaluation { .. }));
    }

    #[test]
    fn rejects_nonpositive_step() {
        assert!(check_gradients(&quadratic(), &[0.0], &[0.0], 0.0).is_err());
    }

    #[test]
    fn default_step_scales_with_input() {
        assert!((default_fd_step(&[0.0], &[0.0]) - 1e-5).abs() < 1e-20);
        assert!((default_fd_step(&[-3.0], &[1.0]) - 4e-5).abs() < 1e-20);
    }

    #[test]
    fn isotropic_probe_is_exactly_one() {
        for seed in 0..5 {
            let mu = probe_convexity(&isotropic(2, 3), seed, 100, 5.0).unwrap();
            assert!((mu - 1.0).abs() < 1e-12, "{mu}");
        }
    }

    #[test]
    fn quadratic_probe_lies_in_spectrum() {
        let lo = (3.0 - 5f64.sqrt()) / 2.0;
        let hi = (3.0 + 5f64.sqrt()) / 2.0;
        for seed in 0..10 {
            let mu = probe_convexity(&quadratic(), seed, 1000, 3.0).unwrap();
            assert!(mu >= lo - 1e-12 && mu <= hi + 1e-12, "{mu}");
            assert!(mu < lo + 0.05, "1000 trials should approach λ_min, got {mu}");
        }
    }

    #[test]
    fn rank_deficient_probe_is_near_zero() {
        let flat = ModelSpec::new(
            1,
            1,
            |t, x| 0.5 * (t[0] - x[0]).powi(2),
            |t, x, g| g[0] = t[0] - x[0],
            |t, x, g| g[0] = x[0] - t[0],
        );
        let mu = probe_convexity(&flat, 1, 1000, 1.0).unwrap();
        assert!((-1e-12..0.01).contains(&mu), "{mu}");
    }

    #[test]
    fn probe_is_deterministic() {
        let a = probe_convexity(&quadratic(), 77, 50, 1.0).unwrap();
        let b = probe_convexity(&quadratic(), 77, 50, 1.0).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn probe_needs_two_trials() {
        assert!(probe_convexity(&quadratic(), 0, 1, 1.0).is_err());
    }

    #[test]
    fn analytic_info_rejects_mu_above_l() {
        let info = AnalyticInfo {
            mu: Some(3.0),
            lipschitz: Some(2.0),
            ..Default::default()
        };
        assert!(info.validate().is_err());
        let ok = AnalyticInfo {
            mu: Some(0.5),
            lipschitz: Some(2.0),
            ..Default::default()
        };
        ok.validate().unwrap();
        assert_eq!(ok.stability_limit(), Some(0.5));
    }
}
