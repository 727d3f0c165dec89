//! Error functionals, the three-term error bound and convergence-rate fits.

use rayon::prelude::*;

use crate::model::LatentModel;
use crate::noise::{CounterNoise, NoiseSource};
use crate::sampler::{step_with_buffers, Algorithm, RunConfig, StepBuffers};
use crate::{Error, Result};

/// `M` iid draws of a `d`-dimensional statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalLaw {
    samples: Vec<Vec<f64>>,
}

impl EmpiricalLaw {
    pub fn new(samples: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = samples.first() else {
            return Err(Error::EmptySample);
        };
        let d = first.len();
        if d == 0 || samples.iter().any(|s| s.len() != d) {
            return Err(Error::invalid("samples", "all samples must share a positive dimension"));
        }
        if samples.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("samples", "entries must be finite"));
        }
        Ok(Self { samples })
    }

    pub fn scalar(values: impl IntoIterator<Item = f64>) -> Result<Self> {
        Self::new(values.into_iter().map(|v| vec![v]).collect())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples[0].len()
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    fn squared_distances<'a>(&'a self, point: &'a [f64]) -> impl Iterator<Item = f64> + 'a {
        self.samples
            .iter()
            .map(move |s| s.iter().zip(point).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
    }

    fn check_point(&self, point: &[f64]) -> Result<()> {
        if point.len() != self.dim() {
            return Err(Error::SizeMismatch {
                left: self.dim(),
                right: point.len(),
            });
        }
        Ok(())
    }
}

/// `W₂(law, δ_point) = E[‖S - point‖²]^{1/2}`.
pub fn w2_to_dirac(law: &EmpiricalLaw, point: &[f64]) -> Result<f64> {
    if law.is_empty() {
        return Err(Error::EmptySample);
    }
    law.check_point(point)?;
    let total: f64 = law.squared_distances(point).sum();
    Ok((total / law.len() as f64).sqrt())
}

/// Root-mean-square distance to a point with its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmseEstimate {
    pub rmse: f64,
    /// Delta-method error: `SE(mean d²) / (2·rmse)`.
    pub se: f64,
}

pub fn rmse_with_se(law: &EmpiricalLaw, point: &[f64]) -> Result<RmseEstimate> {
    law.check_point(point)?;
    let sq: Vec<f64> = law.squared_distances(point).collect();
    Ok(rmse_from_squares(&sq))
}

/// RMSE and delta-method standard error from per-replicate squared errors.
pub fn rmse_from_squares(sq: &[f64]) -> RmseEstimate {
    let m = sq.len() as f64;
    let mean = sq.iter().sum::<f64>() / m;
    let rmse = mean.sqrt();
    let se = if sq.len() < 2 || rmse == 0.0 {
        0.0
    } else {
        let var = sq.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
        (var / m).sqrt() / (2.0 * rmse)
    };
    RmseEstimate { rmse, se }
}

/// Exact `W₂` between two equal-size one-dimensional samples (sorted coupling).
pub fn w2_1d(a: &EmpiricalLaw, b: &EmpiricalLaw) -> Result<f64> {
    if a.dim() != 1 || b.dim() != 1 {
        return Err(Error::invalid("law", "w2_1d needs one-dimensional samples"));
    }
    if a.len() != b.len() {
        return Err(Error::SizeMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let sorted = |l: &EmpiricalLaw| {
        let mut v: Vec<f64> = l.samples.iter().map(|s| s[0]).collect();
        v.sort_by(f64::total_cmp);
        v
    };
    let (sa, sb) = (sorted(a), sorted(b));
    let total: f64 = sa.iter().zip(&sb).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((total / sa.len() as f64).sqrt())
}

/// Inputs to the three-term error bound on `E[‖θ_n - θ*‖²]^{1/2}`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundInputs {
    pub mu: f64,
    pub lipschitz: Option<f64>,
    pub d_theta: usize,
    pub d_x: usize,
    pub n_particles: usize,
    pub n: u64,
    pub gamma: f64,
    /// `‖z₀ - z*‖` in rescaled coordinates.
    pub z0_dist: f64,
    /// Discretisation constant; calibrated empirically.
    pub c1: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundTerms {
    pub concentration: f64,
    pub ergodic: f64,
    /// `None` when no discretisation constant was supplied.
    pub discretization: Option<f64>,
    pub total: f64,
}

/// `1 + √(d_θ/N + d_x)`
pub fn dimension_factor(d_theta: usize, d_x: usize, n_particles: usize) -> f64 {
    1.0 + (d_theta as f64 / n_particles as f64 + d_x as f64).sqrt()
}

pub fn theorem1_bound(b: &BoundInputs) -> Result<BoundTerms> {
    if !(b.mu.is_finite() && b.mu > 0.0) {
        return Err(Error::invalid("mu", format!("must be positive, got {}", b.mu)));
    }
    if b.d_theta == 0 || b.d_x == 0 || b.n_particles == 0 {
        return Err(Error::invalid("dimensions", "d_theta, d_x and N must be positive"));
    }
    if !(b.gamma.is_finite() && b.gamma > 0.0) {
        return Err(Error::invalid("gamma", format!("must be positive, got {}", b.gamma)));
    }
    if !(b.z0_dist.is_finite() && b.z0_dist >= 0.0) {
        return Err(Error::invalid("z0_dist", "must be nonnegative"));
    }
    if let Some(l) = b.lipschitz {
        let limit = (1.0 / l).min(2.0 / b.mu);
        if b.gamma >= limit {
            return Err(Error::GammaOutOfRange { gamma: b.gamma, limit });
        }
    }
    let (dt, dx, n) = (b.d_theta as f64, b.d_x as f64, b.n_particles as f64);
    let concentration = (2.0 * dt / (n * b.mu)).sqrt();
    let ergodic = (-b.mu * b.n as f64 * b.gamma).exp() * (b.z0_dist + ((dx * n + dt) / (n * b.mu)).sqrt());
    let discretization =
        b.c1.map(|c| c * dimension_factor(b.d_theta, b.d_x, b.n_particles) * b.gamma.sqrt());
    Ok(BoundTerms {
        concentration,
        ergodic,
        discretization,
        total: concentration + ergodic + discretization.unwrap_or(0.0),
    })
}

/// Ordinary least-squares line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

fn least_squares(xs: &[f64], ys: &[f64]) -> RateFit {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    let r2 = if ss_tot <= f64::EPSILON * f64::EPSILON {
        1.0
    } else {
        1.0 - ss_res / ss_tot
    };
    RateFit { slope, intercept, r2 }
}

fn check_fit_points(points: &[(f64, f64)]) -> Result<()> {
    if points.len() < 3 {
        return Err(Error::invalid(
            "points",
            format!("need at least 3 points, got {}", points.len()),
        ));
    }
    let mut scales: Vec<f64> = points.iter().map(|p| p.0).collect();
    scales.sort_by(f64::total_cmp);
    if scales.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::invalid("points", "scales must be distinct"));
    }
    Ok(())
}

/// Fits `log(error) = intercept + slope · log(scale)`.
pub fn fit_rate(points: &[(f64, f64)]) -> Result<RateFit> {
    if let Some(p) = points
        .iter()
        .find(|(s, e)| !(*s > 0.0 && *e > 0.0 && s.is_finite() && e.is_finite()))
    {
        return Err(Error::DomainError(format!(
            "log-log fit needs positive values, got {p:?}"
        )));
    }
    check_fit_points(points)?;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    Ok(least_squares(&xs, &ys))
}

/// Fits `log(error) = intercept + slope · t` (exponential decay rate in `t`).
pub fn fit_log_linear(points: &[(f64, f64)]) -> Result<RateFit> {
    if let Some(p) = points
        .iter()
        .find(|(t, e)| !(t.is_finite() && *e > 0.0 && e.is_finite()))
    {
        return Err(Error::DomainError(format!(
            "semi-log fit needs positive errors, got {p:?}"
        )));
    }
    check_fit_points(points)?;
    let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    Ok(least_squares(&xs, &ys))
}

#[derive(Debug, Clone, PartialEq)]
pub struct C1Point {
    pub gamma: f64,
    /// RMSE between coarse and reference `θ` endpoints over replicates.
    pub rmse: f64,
    pub se: f64,
    /// `rmse / ((1 + √(d_θ/N + d_x)) √γ)`
    pub implied_c1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct C1Estimate {
    pub points: Vec<C1Point>,
    pub reference_gamma: f64,
    /// Largest implied constant over the grid.
    pub c1: f64,
}

impl C1Estimate {
    /// Largest over smallest implied constant.
    pub fn spread(&self) -> f64 {
        let (lo, hi) = self.points.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), p| {
            (lo.min(p.implied_c1), hi.max(p.implied_c1))
        });
        hi / lo
    }

    pub fn rate(&self) -> Result<RateFit> {
        let pts: Vec<(f64, f64)> = self.points.iter().map(|p| (p.gamma, p.rmse)).collect();
        fit_rate(&pts)
    }
}

/// Calibrates the discretisation constant by strong coupling.
///
/// Every grid configuration is run alongside a reference chain at
/// `reference_gamma` that shares its Brownian path: coarse increments are the
/// normalised sums of the reference increments they span.
pub fn estimate_c1<M: LatentModel + ?Sized>(model: &M, grid: &[RunConfig], reference_gamma: f64) -> Result<C1Estimate> {
    estimate_c1_with_noise(model, grid, reference_gamma, |r| CounterNoise::new(grid[0].seed, r))
}

/// [`estimate_c1`] with a caller-chosen fine noise source per replicate.
pub fn estimate_c1_with_noise<M, S, F>(
    model: &M,
    grid: &[RunConfig],
    reference_gamma: f64,
    noise_for: F,
) -> Result<C1Estimate>
where
    M: LatentModel + ?Sized,
    S: NoiseSource,
    F: Fn(u32) -> S + Sync,
{
    let first = grid
        .first()
        .ok_or_else(|| Error::invalid("grid", "empty step-size grid"))?;
    for cfg in grid {
        cfg.validate(model)?;
    }
    if !(reference_gamma.is_finite() && reference_gamma > 0.0) {
        return Err(Error::invalid("reference_gamma", "must be positive"));
    }
    let horizon = first.horizon();
    let mut ratios = Vec::with_capacity(grid.len());
    for cfg in grid {
        if cfg.n_particles != first.n_particles
            || cfg.seed != first.seed
            || cfg.replicates != first.replicates
            || cfg.init != first.init
        {
            return Err(Error::invalid(
                "grid",
                "configurations must share N, seed, replicates and init",
            ));
        }
        if (cfg.horizon() - horizon).abs() > 1e-9 * horizon.max(1.0) {
            return Err(Error::invalid("grid", "configurations must share the horizon n_T·γ"));
        }
        let r = (cfg.gamma / reference_gamma).round();
        if r < 2.0 || (r * reference_gamma - cfg.gamma).abs() > 1e-9 * cfg.gamma {
            return Err(Error::invalid(
                "reference_gamma",
                format!("{} is not a proper divisor of γ = {}", reference_gamma, cfg.gamma),
            ));
        }
        ratios.push(r as u64);
    }
    let fine_steps = first.n_steps * ratios[0];
    let (dt, dx, n) = (model.d_theta(), model.d_x(), first.n_particles);

    let per_replicate: Vec<Result<Vec<f64>>> = (0..first.replicates)
        .into_par_iter()
        .map(|r| {
            let noise = noise_for(r);
            let init = first.initial_state(dt, dx, r)?;
            let mut fine = init.clone();
            let mut fine_buf = StepBuffers::new(dt, dx, n);
            let mut coarse: Vec<_> = grid.iter().map(|_| init.clone()).collect();
            let mut coarse_buf: Vec<_> = grid.iter().map(|_| StepBuffers::new(dt, dx, n)).collect();
            for b in coarse_buf.iter_mut() {
                b.noise.fill(0.0);
            }
            for k in 0..fine_steps {
                fine_buf.fill_noise(&noise, k, Algorithm::Ipla, dt, dx);
                for (g, cfg) in grid.iter().enumerate() {
                    let buf = &mut coarse_buf[g];
                    for (acc, z) in buf.noise.iter_mut().zip(&fine_buf.noise) {
                        *acc += z;
                    }
                    if (k + 1) % ratios[g] == 0 {
                        let scale = (ratios[g] as f64).sqrt().recip();
                        buf.noise.iter_mut().for_each(|v| *v *= scale);
                        step_with_buffers(model, &mut coarse[g], cfg.gamma, Algorithm::Ipla, buf)?;
                        buf.noise.fill(0.0);
                    }
                }
                step_with_buffers(model, &mut fine, reference_gamma, Algorithm::Ipla, &mut fine_buf)?;
            }
            Ok(coarse
                .iter()
                .map(|c| {
                    c.theta
                        .iter()
                        .zip(&fine.theta)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                })
                .collect())
        })
        .collect();
    let per_replicate = per_replicate.into_iter().collect::<Result<Vec<_>>>()?;

    let factor = dimension_factor(dt, dx, n);
    let points: Vec<C1Point> = grid
        .iter()
        .enumerate()
        .map(|(g, cfg)| {
            let sq: Vec<f64> = per_replicate.iter().map(|v| v[g]).collect();
            let est = rmse_from_squares(&sq);
            C1Point {
                gamma: cfg.gamma,
                rmse: est.rmse,
                se: est.se,
                implied_c1: est.rmse / (factor * cfg.gamma.sqrt()),
            }
        })
        .collect();
    let c1 = points.iter().map(|p| p.implied_c1).fold(0.0, f64::max);
    Ok(C1Estimate {
        points,
        reference_gamma,
        c1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn law(v: &[f64]) -> EmpiricalLaw {
        EmpiricalLaw::scalar(v.iter().copied()).unwrap()
    }

    #[test]
    fn w2_to_dirac_examples() {
        assert_eq!(w2_to_dirac(&law(&[1.5, 1.5]), &[1.5]).unwrap(), 0.0);
        assert!((w2_to_dirac(&law(&[0.0, 2.0]), &[1.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((w2_to_dirac(&law(&[0.0, 0.0, 3.0]), &[0.0]).unwrap() - 3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn empty_law_is_rejected() {
        assert!(matches!(EmpiricalLaw::new(vec![]), Err(Error::EmptySample)));
    }

    #[test]
    fn w2_1d_examples() {
        assert_eq!(w2_1d(&law(&[0.3, -1.0]), &law(&[0.3, -1.0])).unwrap(), 0.0);
        assert!((w2_1d(&law(&[0.0, 0.0]), &law(&[1.0, 1.0])).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(w2_1d(&law(&[0.0, 1.0]), &law(&[1.0, 0.0])).unwrap(), 0.0);
        assert!(matches!(
            w2_1d(&law(&[0.0, 1.0]), &law(&[1.0])),
            Err(Error::SizeMismatch { left: 2, right: 1 })
        ));
    }

    #[test]
    fn delta_method_se() {
        // squared errors {1, 9}: mean 5, sd 4√2/√2... sample var = 32/1 → SE(mean) = 4
        let est = rmse_from_squares(&[1.0, 9.0]);
        assert!((est.rmse - 5f64.sqrt()).abs() < 1e-15);
        assert!((est.se - 4.0 / (2.0 * 5f64.sqrt())).abs() < 1e-15);
    }

    fn inputs() -> BoundInputs {
        BoundInputs {
            mu: 0.38197,
            lipschitz: None,
            d_theta: 1,
            d_x: 1,
            n_particles: 100,
            n: 1000,
            gamma: 0.01,
            z0_dist: 1.0,
            c1: Some(0.5),
        }
    }

    #[test]
    fn bound_limit_is_concentration_term() {
        let b = BoundInputs {
            n: u64::MAX / 2,
            gamma: 1e-12,
            ..inputs()
        };
        let t = theorem1_bound(&b).unwrap();
        assert!((t.concentration - (2.0f64 / 38.197).sqrt()).abs() < 1e-12);
        assert!((t.total - 0.22885).abs() < 1e-4, "{}", t.total);
    }

    #[test]
    fn bound_at_step_zero() {
        let b = BoundInputs {
            n: 0,
            z0_dist: 0.0,
            ..inputs()
        };
        let t = theorem1_bound(&b).unwrap();
        assert!((t.ergodic - ((100.0f64 + 1.0) / (100.0 * 0.38197)).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn bound_without_c1_flags_missing_term() {
        let t = theorem1_bound(&BoundInputs { c1: None, ..inputs() }).unwrap();
        assert!(t.discretization.is_none());
        assert!((t.total - t.concentration - t.ergodic).abs() < 1e-15);
    }

    #[test]
    fn bound_rejects_gamma_outside_window() {
        let b = BoundInputs {
            lipschitz: Some(2.618),
            gamma: 0.5,
            ..inputs()
        };
        assert!(matches!(theorem1_bound(&b), Err(Error::GammaOutOfRange { .. })));
    }

    #[test]
    fn bound_terms_are_monotone() {
        let mut prev = f64::INFINITY;
        for n in [1, 2, 5, 10, 100, 1000, 10_000] {
            let t = theorem1_bound(&BoundInputs {
                n_particles: n,
                ..inputs()
            })
            .unwrap();
            assert!(t.concentration < prev);
            prev = t.concentration;
        }
        let mut prev = f64::INFINITY;
        for n in [0, 1, 10, 100, 1000] {
            let t = theorem1_bound(&BoundInputs { n, ..inputs() }).unwrap();
            assert!(t.ergodic <= prev);
            prev = t.ergodic;
        }
        let mut prev = 0.0;
        for gamma in [1e-4, 1e-3, 1e-2, 0.1] {
            let t = theorem1_bound(&BoundInputs { gamma, ..inputs() }).unwrap();
            assert!(t.discretization.unwrap() >= prev);
            prev = t.discretization.unwrap();
        }
    }

    #[test]
    fn fit_rate_examples() {
        let f = fit_rate(&[(10.0, 1.0), (100.0, 10f64.powf(-0.5)), (1000.0, 0.1)]).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-12 && (f.r2 - 1.0).abs() < 1e-12);
        let f = fit_rate(&[(1.0, 3.0), (2.0, 3.0), (5.0, 3.0)]).unwrap();
        assert!(f.slope.abs() < 1e-15);
        let f = fit_rate(&[(1.0, 2.0), (4.0, 1.0), (16.0, 0.5)]).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-12);
    }

    #[test]
    fn fit_rate_errors() {
        assert!(matches!(
            fit_rate(&[(1.0, 1.0), (2.0, 0.0), (3.0, 1.0)]),
            Err(Error::DomainError(_))
        ));
        assert!(fit_rate(&[(1.0, 1.0), (2.0, 1.0)]).is_err());
        assert!(fit_rate(&[(1.0, 1.0), (1.0, 2.0), (3.0, 1.0)]).is_err());
    }

    #[test]
    fn fit_log_linear_recovers_decay() {
        let pts: Vec<(f64, f64)> = (0..6).map(|k| (k as f64, 3.0 * (-0.4 * k as f64).exp())).collect();
        let f = fit_log_linear(&pts).unwrap();
        assert!((f.slope + 0.4).abs() < 1e-12 && (f.intercept - 3f64.ln()).abs() < 1e-12);
    }
}
