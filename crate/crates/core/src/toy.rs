//! Bundled models with known structure: a Gaussian hierarchical model with
//! closed-form marginal likelihood, and Bayesian logistic regression.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::model::{AnalyticInfo, LatentModel, ThetaMarginal};
use crate::noise::CounterRng;
use crate::{Error, Result};

/// `x ~ N(θ·1, σ_lat² I)`, `y | x ~ N(x, σ_obs² I)` with scalar `θ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianHierarchicalParams {
    pub y: Vec<f64>,
    #[serde(default = "one")]
    pub sigma_lat: f64,
    #[serde(default = "one")]
    pub sigma_obs: f64,
}

fn one() -> f64 {
    1.0
}

impl GaussianHierarchicalParams {
    pub fn new(y: Vec<f64>) -> Self {
        Self {
            y,
            sigma_lat: 1.0,
            sigma_obs: 1.0,
        }
    }

    pub fn d_x(&self) -> usize {
        self.y.len()
    }

    pub fn y_mean(&self) -> f64 {
        self.y.iter().sum::<f64>() / self.y.len() as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.y.is_empty() {
            return Err(Error::invalid("y", "at least one observation is required"));
        }
        if self.y.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("y", "observations must be finite"));
        }
        for (name, s) in [("sigma_lat", self.sigma_lat), ("sigma_obs", self.sigma_obs)] {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::invalid(name, format!("must be positive, got {s}")));
            }
        }
        Ok(())
    }

    /// Drift matrix of the mean-field skeleton in `(θ - ȳ, m - ȳ)`.
    fn meanfield_matrix(&self) -> [[f64; 2]; 2] {
        let a = self.sigma_lat * self.sigma_lat;
        let b = self.sigma_obs * self.sigma_obs;
        let d = self.d_x() as f64;
        [[d / a, -d / a], [-1.0 / a, 1.0 / a + 1.0 / b]]
    }
}

#[derive(Debug, Clone)]
pub struct GaussianModel {
    params: GaussianHierarchicalParams,
    inv_lat: f64,
    inv_obs: f64,
    info: AnalyticInfo,
}

/// Eigenvalues of `[[p, q], [q, r]]`, ascending.
fn sym2_eigenvalues(p: f64, q: f64, r: f64) -> (f64, f64) {
    let mid = 0.5 * (p + r);
    let rad = (0.25 * (p - r) * (p - r) + q * q).sqrt();
    (mid - rad, mid + rad)
}

pub fn make_gaussian_model(p: GaussianHierarchicalParams) -> Result<GaussianModel> {
    p.validate()?;
    let a = p.sigma_lat * p.sigma_lat;
    let b = p.sigma_obs * p.sigma_obs;
    let d = p.d_x() as f64;
    let y_bar = p.y_mean();

    // The Hessian of U is constant. Restricted to span{(1, 0), (0, 1/√d)} it
    // is the 2×2 block below; on the complement it is (1/a + 1/b)·I, which
    // lies between the block's eigenvalues.
    let (mu, lipschitz) = sym2_eigenvalues(d / a, -d.sqrt() / a, 1.0 / a + 1.0 / b);

    let x_star = p.y.iter().map(|yk| (b * y_bar + a * yk) / (a + b)).collect();
    let info = AnalyticInfo {
        theta_star: Some(vec![y_bar]),
        x_star: Some(x_star),
        mu: Some(mu),
        lipschitz: Some(lipschitz),
        // κ(θ) = Σ_k (y_k - θ)² / (2(a + b)) + const
        theta_marginal: Some(ThetaMarginal {
            mean: vec![y_bar],
            variance_unit: vec![(a + b) / d],
        }),
    };
    Ok(GaussianModel {
        params: p,
        inv_lat: 1.0 / a,
        inv_obs: 1.0 / b,
        info,
    })
}

impl GaussianModel {
    pub fn params(&self) -> &GaussianHierarchicalParams {
        &self.params
    }

    /// `∇κ(θ)` with `κ = -log k`.
    pub fn kappa_grad(&self, theta: f64) -> f64 {
        let d = self.params.d_x() as f64;
        d * (theta - self.params.y_mean()) / (1.0 / self.inv_lat + 1.0 / self.inv_obs)
    }
}

impl LatentModel for GaussianModel {
    fn d_theta(&self) -> usize {
        1
    }

    fn d_x(&self) -> usize {
        self.params.y.len()
    }

    fn potential(&self, theta: &[f64], x: &[f64]) -> f64 {
        let t = theta[0];
        let mut prior = 0.0;
        let mut lik = 0.0;
        for (xk, yk) in x.iter().zip(&self.params.y) {
            prior += (xk - t) * (xk - t);
            lik += (yk - xk) * (yk - xk);
        }
        0.5 * (prior * self.inv_lat + lik * self.inv_obs)
    }

    #[inline]
    fn grad_theta(&self, theta: &[f64], x: &[f64], out: &mut [f64]) {
        let t = theta[0];
        out[0] = x.iter().map(|xk| t - xk).sum::<f64>() * self.inv_lat;
    }

    #[inline]
    fn grad_x(&self, theta: &[f64], x: &[f64], out: &mut [f64]) {
        let t = theta[0];
        for ((o, xk), yk) in out.iter_mut().zip(x).zip(&self.params.y) {
            *o = (xk - t) * self.inv_lat + (xk - yk) * self.inv_obs;
        }
    }

    fn analytic(&self) -> Option<&AnalyticInfo> {
        Some(&self.info)
    }

    fn name(&self) -> &str {
        "gaussian"
    }
}

/// Exact solution of the Gaussian model's mean-field skeleton
///
/// ```text
/// dθ/dt = -(d/σ_lat²)(θ - m)
/// dm/dt = -((m - θ)/σ_lat² + (m - ȳ)/σ_obs²)
/// ```
///
/// where `m` is the coordinate mean of the latent law. For unit scales and
/// `d_x = 1` this is `dθ/dt = -(θ - m)`, `dm/dt = -(2m - θ - ȳ)`.
pub fn gaussian_meanfield_reference(p: &GaussianHierarchicalParams, theta0: f64, m0: f64, t: f64) -> (f64, f64) {
    let y_bar = p.y_mean();
    let e = expm_neg(p.meanfield_matrix(), t);
    let u0 = [theta0 - y_bar, m0 - y_bar];
    (
        y_bar + e[0][0] * u0[0] + e[0][1] * u0[1],
        y_bar + e[1][0] * u0[0] + e[1][1] * u0[1],
    )
}

/// `exp(-A t)` for a 2×2 matrix with distinct real eigenvalues (Sylvester).
fn expm_neg(a: [[f64; 2]; 2], t: f64) -> [[f64; 2]; 2] {
    let tr = a[0][0] + a[1][1];
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let disc = (tr * tr - 4.0 * det).max(0.0).sqrt();
    let l1 = 0.5 * (tr + disc);
    let l2 = 0.5 * (tr - disc);
    assert!(disc > 0.0, "mean-field drift must have distinct eigenvalues");
    let (e1, e2) = ((-l1 * t).exp(), (-l2 * t).exp());
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            let id = if i == j { 1.0 } else { 0.0 };
            out[i][j] = (e1 * (a[i][j] - l2 * id) - e2 * (a[i][j] - l1 * id)) / (l1 - l2);
        }
    }
    out
}

/// Bayesian logistic regression with a Gaussian prior of mean `θ·1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticRegressionParams {
    /// Covariate rows `v_j`, each of length `d_x`.
    pub covariates: Vec<Vec<f64>>,
    /// Labels in `{0, 1}`.
    pub labels: Vec<u8>,
    pub sigma: f64,
}

impl LogisticRegressionParams {
    pub fn d_x(&self) -> usize {
        self.covariates.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.covariates.is_empty() {
            return Err(Error::invalid("covariates", "at least one row is required"));
        }
        let d = self.d_x();
        if d == 0 {
            return Err(Error::invalid("covariates", "rows must be nonempty"));
        }
        if self.covariates.len() != self.labels.len() {
            return Err(Error::invalid(
                "labels",
                format!("{} labels for {} rows", self.labels.len(), self.covariates.len()),
            ));
        }
        for (j, row) in self.covariates.iter().enumerate() {
            if row.len() != d {
                return Err(Error::invalid(
                    "covariates",
                    format!("row {j} has length {}", row.len()),
                ));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("covariates", format!("row {j} is not finite")));
            }
        }
        if let Some(j) = self.labels.iter().position(|&l| l > 1) {
            return Err(Error::invalid("labels", format!("label {j} is not 0 or 1")));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::invalid("sigma", format!("must be positive, got {}", self.sigma)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LogisticModel {
    d_x: usize,
    /// Row-major `d_y × d_x`.
    v: Vec<f64>,
    y: Vec<f64>,
    inv_var: f64,
    log_norm: f64,
    row_norm_sq_sum: f64,
}

pub fn make_logistic_model(p: &LogisticRegressionParams) -> Result<LogisticModel> {
    p.validate()?;
    let d_x = p.d_x();
    let v: Vec<f64> = p.covariates.iter().flatten().copied().collect();
    let row_norm_sq_sum = v.iter().map(|a| a * a).sum();
    let var = p.sigma * p.sigma;
    Ok(LogisticModel {
        d_x,
        v,
        y: p.labels.iter().map(|&l| f64::from(l)).collect(),
        inv_var: 1.0 / var,
        log_norm: 0.5 * d_x as f64 * (2.0 * std::f64::consts::PI * var).ln(),
        row_norm_sq_sum,
    })
}

#[inline]
pub fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(u: f64) -> f64 {
    u.max(0.0) + (-u.abs()).exp().ln_1p()
}

impl LogisticModel {
    pub fn d_y(&self) -> usize {
        self.y.len()
    }

    /// Lipschitz bound of `x ↦ ∇_x U(θ, x)`: `1/σ² + ¼ Σ_j ‖v_j‖²`.
    pub fn grad_x_lipschitz_bound(&self) -> f64 {
        self.inv_var + 0.25 * self.row_norm_sq_sum
    }

    fn rows(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.v.chunks_exact(self.d_x).zip(self.y.iter().copied())
    }
}

impl LatentModel for LogisticModel {
    fn d_theta(&self) -> usize {
        1
    }

    fn d_x(&self) -> usize {
        self.d_x
    }

    fn potential(&self, theta: &[f64], x: &[f64]) -> f64 {
        let t = theta[0];
        let prior: f64 = x.iter().map(|xk| (xk - t) * (xk - t)).sum::<f64>() * 0.5 * self.inv_var;
        // -[y log s(u) + (1 - y) log s(-u)] = softplus(u) - y·u
        let lik: f64 = self
            .rows()
            .map(|(row, y)| {
                let u: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
                softplus(u) - y * u
            })
            .sum();
        self.log_norm + lik + prior
    }

    #[inline]
    fn grad_theta(&self, theta: &[f64], x: &[f64], out: &mut [f64]) {
        let t = theta[0];
        out[0] = -x.iter().map(|xk| xk - t).sum::<f64>() * self.inv_var;
    }

    fn grad_x(&self, theta: &[f64], x: &[f64], out: &mut [f64]) {
        let t = theta[0];
        for (o, xk) in out.iter_mut().zip(x) {
            *o = (xk - t) * self.inv_var;
        }
        for (row, y) in self.rows() {
            let u: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
            let r = y - sigmoid(u);
            for (o, a) in out.iter_mut().zip(row) {
                *o -= r * a;
            }
        }
    }

    fn name(&self) -> &str {
        "logistic"
    }
}

/// A synthetic logistic-regression dataset and the latent draw behind it.
#[derive(Debug, Clone)]
pub struct SyntheticLogistic {
    pub params: LogisticRegressionParams,
    pub theta_gen: f64,
    pub x_gen: Vec<f64>,
}

const SYNTH_LATENT: u64 = 0x7379_6e00_0000_0001;
const SYNTH_ROWS: u64 = 0x7379_6e00_0000_0002;

/// Draws `x ~ N(θ_gen·1, σ² I)`, covariates `v_j ~ N(0, I/d_x)` and labels
/// `y_j ~ Bernoulli(s(v_jᵀx))`.
pub fn synthesize_logistic(seed: u64, d_x: usize, d_y: usize, theta_gen: f64, sigma: f64) -> Result<SyntheticLogistic> {
    if d_x == 0 || d_y == 0 {
        return Err(Error::invalid("d_x/d_y", "dimensions must be positive"));
    }
    let mut rng = CounterRng::new(seed, SYNTH_LATENT, 0);
    let x_gen: Vec<f64> = (0..d_x)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            theta_gen + sigma * z
        })
        .collect();
    let scale = (d_x as f64).sqrt().recip();
    let mut covariates = Vec::with_capacity(d_y);
    let mut labels = Vec::with_capacity(d_y);
    for j in 0..d_y {
        let mut rng = CounterRng::new(seed, SYNTH_ROWS, j as u64);
        let row: Vec<f64> = (0..d_x)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                scale * z
            })
            .collect();
        let u: f64 = row.iter().zip(&x_gen).map(|(a, b)| a * b).sum();
        labels.push(u8::from(rng.random::<f64>() < sigmoid(u)));
        covariates.push(row);
    }
    let params = LogisticRegressionParams {
        covariates,
        labels,
        sigma,
    };
    params.validate()?;
    Ok(SyntheticLogistic {
        params,
        theta_gen,
        x_gen,
    })
}

/// Reads a dataset with header `v_1,...,v_dx,label`.
pub fn read_logistic_csv(path: impl AsRef<Path>, sigma: f64) -> Result<LogisticRegressionParams> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
    let headers = rdr
        .headers()
        .map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?
        .clone();
    let cols = headers.len();
    if cols < 2 {
        return Err(Error::Dataset("header needs at least one covariate and `label`".into()));
    }
    for (k, name) in headers.iter().take(cols - 1).enumerate() {
        if name.trim() != format!("v_{}", k + 1) {
            return Err(Error::Dataset(format!(
                "column {} must be `v_{}`, found `{name}`",
                k + 1,
                k + 1
            )));
        }
    }
    if headers[cols - 1].trim() != "label" {
        return Err(Error::Dataset(format!(
            "last column must be `label`, found `{}`",
            &headers[cols - 1]
        )));
    }

    let mut covariates = Vec::new();
    let mut labels = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Dataset(e.to_string()))?;
        let row_no = line + 2;
        let mut row = Vec::with_capacity(cols - 1);
        for field in rec.iter().take(cols - 1) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::Dataset(format!("row {row_no}: `{field}` is not a number")))?;
            row.push(v);
        }
        let label = match rec[cols - 1].trim() {
            "0" => 0,
            "1" => 1,
            other => return Err(Error::Dataset(format!("row {row_no}: label `{other}` is not 0 or 1"))),
        };
        covariates.push(row);
        labels.push(label);
    }
    let params = LogisticRegressionParams {
        covariates,
        labels,
        sigma,
    };
    params.validate()?;
    Ok(params)
}

pub fn write_logistic_csv(path: impl AsRef<Path>, p: &LogisticRegressionParams) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref()).map_err(|e| Error::Dataset(e.to_string()))?;
    let mut header: Vec<String> = (1..=p.d_x()).map(|k| format!("v_{k}")).collect();
    header.push("label".into());
    w.write_record(&header).map_err(|e| Error::Dataset(e.to_string()))?;
    for (row, label) in p.covariates.iter().zip(&p.labels) {
        let mut rec: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        rec.push(label.to_string());
        w.write_record(&rec).map_err(|e| Error::Dataset(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
