//! JSON experiment configuration. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use ipla_core::sampler::{Algorithm, RunConfig};
use ipla_core::toy::{
    make_gaussian_model, make_logistic_model, read_logistic_csv, synthesize_logistic, GaussianHierarchicalParams,
    SyntheticLogistic,
};
use ipla_core::LatentModel;
use serde::{Deserialize, Serialize};

use crate::LabError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Run,
    Sweep,
    Compare,
    Chaos,
    Gradcheck,
    Bound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelConfig {
    Gaussian(GaussianHierarchicalParams),
    Logistic(LogisticConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogisticConfig {
    #[serde(default = "unit")]
    pub sigma: f64,
    /// CSV with header `v_1,...,v_dx,label`; relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub d_x: usize,
    pub d_y: usize,
    #[serde(default)]
    pub theta_gen: f64,
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Sweep {
    #[default]
    None,
    NParticles(Vec<usize>),
    Gamma(Vec<f64>),
    Iterations(Vec<u64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlgorithmChoice {
    #[default]
    Ipla,
    Pgd,
    Both,
}

impl AlgorithmChoice {
    pub fn algorithms(self) -> Vec<Algorithm> {
        match self {
            AlgorithmChoice::Ipla => vec![Algorithm::Ipla],
            AlgorithmChoice::Pgd => vec![Algorithm::Pgd],
            AlgorithmChoice::Both => vec![Algorithm::Ipla, Algorithm::Pgd],
        }
    }
}

/// Coupled strong-error runs that fix the discretisation constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationConfig {
    pub gamma_grid: Vec<f64>,
    pub reference_gamma: f64,
    pub horizon: f64,
    pub replicates: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_particles: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    /// Negates `∇_θ U`; used to exercise the gradient checker.
    FlipThetaGradient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckConfig {
    #[serde(default = "default_points")]
    pub points: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_radius")]
    pub radius: f64,
    /// Fixed difference step; `1e-5·(1 + ‖input‖∞)` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inject_fault: Option<Fault>,
}

fn default_points() -> usize {
    100
}
fn default_radius() -> f64 {
    3.0
}
fn default_tolerance() -> f64 {
    1e-5
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            points: default_points(),
            seed: 0,
            radius: default_radius(),
            h: None,
            tolerance: default_tolerance(),
            inject_fault: None,
        }
    }
}

/// High-resolution IPLA run used as the oracle when `θ*` has no closed form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceConfig {
    #[serde(default = "ten")]
    pub gamma_divisor: u64,
    #[serde(default = "ten")]
    pub steps_multiplier: u64,
    #[serde(default = "four")]
    pub particle_multiplier: usize,
    pub replicates: u32,
}

fn ten() -> u64 {
    10
}
fn four() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<Experiment>,
    pub model: ModelConfig,
    pub run: RunConfig,
    #[serde(default)]
    pub sweep: Sweep,
    #[serde(default)]
    pub algorithm: AlgorithmChoice,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Record `θ` every `stride` steps (`0`: endpoints only).
    #[serde(default)]
    pub stride: u64,
    /// Time discarded before stationary averages; defaults to half the horizon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<f64>,
    /// Fixed discretisation constant; takes precedence over `calibration`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<CalibrationConfig>,
    #[serde(default)]
    pub gradcheck: GradcheckConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceConfig>,
    /// Directory that relative dataset paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, LabError> {
        serde_json::from_str(text)
            .map_err(|e| LabError::config(&format!("line {} column {}", e.line(), e.column()), e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, LabError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LabError::config("--config", format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serialises");
        s.push('\n');
        s
    }

    /// Structural checks that do not need the model.
    pub fn validate(&self) -> Result<(), LabError> {
        let r = &self.run;
        if r.n_particles == 0 {
            return Err(LabError::config("run.n_particles", "must be positive"));
        }
        if !(r.gamma.is_finite() && r.gamma > 0.0) {
            return Err(LabError::config(
                "run.gamma",
                format!("must be positive, got {}", r.gamma),
            ));
        }
        if r.replicates == 0 {
            return Err(LabError::config("run.replicates", "must be positive"));
        }
        match &self.sweep {
            Sweep::None => {}
            Sweep::NParticles(v) => check_increasing("sweep.n_particles", v.iter().map(|&n| n as f64))?,
            Sweep::Gamma(v) => check_increasing("sweep.gamma", v.iter().copied())?,
            Sweep::Iterations(v) => check_increasing("sweep.iterations", v.iter().map(|&n| n as f64))?,
        }
        if let Some(b) = self.burn_in {
            if !(b.is_finite() && b >= 0.0 && b < r.horizon()) {
                return Err(LabError::config("burn_in", "must lie in [0, n_steps·gamma)"));
            }
        }
        if let Some(c) = self.c1 {
            if !(c.is_finite() && c >= 0.0) {
                return Err(LabError::config("c1", "must be nonnegative"));
            }
        }
        if let Some(c) = &self.calibration {
            check_increasing("calibration.gamma_grid", c.gamma_grid.iter().copied())?;
            if !(c.reference_gamma > 0.0 && c.horizon > 0.0 && c.replicates > 0) {
                return Err(LabError::config(
                    "calibration",
                    "reference_gamma, horizon and replicates must be positive",
                ));
            }
        }
        if self.gradcheck.points == 0 || self.gradcheck.radius.is_nan() || self.gradcheck.radius <= 0.0 {
            return Err(LabError::config("gradcheck", "points and radius must be positive"));
        }
        if let Some(h) = self.gradcheck.h {
            if !(h.is_finite() && h > 0.0) {
                return Err(LabError::config("gradcheck.h", "must be positive"));
            }
        }
        if let Some(rf) = &self.reference {
            if rf.gamma_divisor == 0 || rf.steps_multiplier == 0 || rf.particle_multiplier == 0 || rf.replicates == 0 {
                return Err(LabError::config(
                    "reference",
                    "multipliers and replicates must be positive",
                ));
            }
        }
        Ok(())
    }

    pub fn burn_in_time(&self) -> f64 {
        self.burn_in.unwrap_or(0.5 * self.run.horizon())
    }

    pub fn build_model(&self) -> Result<BuiltModel, LabError> {
        match &self.model {
            ModelConfig::Gaussian(p) => {
                let model = make_gaussian_model(p.clone()).map_err(|e| field_error("model.gaussian", e))?;
                Ok(BuiltModel {
                    model: Box::new(model),
                    gaussian: Some(p.clone()),
                    synthetic: None,
                })
            }
            ModelConfig::Logistic(l) => {
                let (params, synthetic) = match (&l.dataset, &l.synthetic) {
                    (Some(path), None) => {
                        let path = self.base_dir.join(path);
                        (read_logistic_csv(&path, l.sigma)?, None)
                    }
                    (None, Some(s)) => {
                        let data = synthesize_logistic(s.seed, s.d_x, s.d_y, s.theta_gen, l.sigma)
                            .map_err(|e| field_error("model.logistic.synthetic", e))?;
                        (data.params.clone(), Some(data))
                    }
                    _ => {
                        return Err(LabError::config(
                            "model.logistic",
                            "exactly one of `dataset` or `synthetic` is required",
                        ))
                    }
                };
                let model = make_logistic_model(&params).map_err(|e| field_error("model.logistic", e))?;
                Ok(BuiltModel {
                    model: Box::new(model),
                    gaussian: None,
                    synthetic,
                })
            }
        }
    }
}

fn field_error(field: &str, e: ipla_core::Error) -> LabError {
    LabError::config(field, e.to_string())
}

fn check_increasing(field: &str, values: impl Iterator<Item = f64>) -> Result<(), LabError> {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        return Err(LabError::config(field, "list must be nonempty"));
    }
    if v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(LabError::config(field, "entries must be positive"));
    }
    if v.windows(2).any(|w| w[1] <= w[0]) {
        return Err(LabError::config(field, "entries must be strictly increasing"));
    }
    Ok(())
}

pub struct BuiltModel {
    pub model: Box<dyn LatentModel>,
    pub gaussian: Option<GaussianHierarchicalParams>,
    pub synthetic: Option<SyntheticLogistic>,
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "model": {"gaussian": {"y": [0.0]}},
        "run": {"n_particles": 10, "gamma": 0.01, "n_steps": 100}
    }"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.sweep, Sweep::None);
        assert_eq!(cfg.algorithm, AlgorithmChoice::Ipla);
        assert_eq!(cfg.run.replicates, 1);
        assert_eq!(cfg.gradcheck.points, 100);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MINIMAL.replace("\"n_steps\": 100", "\"n_steps\": 100, \"typo\": 1");
        let err = ExperimentConfig::from_json(&text).unwrap_err();
        assert!(err.to_string().contains("typo"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn zero_gamma_names_field() {
        let text = MINIMAL.replace("0.01", "0.0");
        let err = ExperimentConfig::from_json(&text).unwrap().validate().unwrap_err();
        assert!(err.to_string().contains("run.gamma"), "{err}");
    }

    #[test]
    fn sweep_lists_must_increase() {
        let text = MINIMAL.replace("\"run\"", "\"sweep\": {\"n_particles\": [10, 10]}, \"run\"");
        let err = ExperimentConfig::from_json(&text).unwrap().validate().unwrap_err();
        assert!(err.to_string().contains("sweep.n_particles"));
        let text = MINIMAL.replace("\"run\"", "\"sweep\": {\"gamma\": []}, \"run\"");
        assert!(ExperimentConfig::from_json(&text).unwrap().validate().is_err());
    }

    #[test]
    fn echo_round_trips() {
        let text = MINIMAL.replace(
            "\"run\"",
            "\"sweep\": {\"iterations\": [1, 5, 9]}, \"c1\": 0.3, \"run\"",
        );
        let cfg = ExperimentConfig::from_json(&text).unwrap();
        let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn logistic_needs_one_data_source() {
        let text = r#"{
            "model": {"logistic": {"sigma": 1.0}},
            "run": {"n_particles": 10, "gamma": 0.01, "n_steps": 100}
        }"#;
        let cfg = ExperimentConfig::from_json(text).unwrap();
        assert!(matches!(cfg.build_model(), Err(LabError::Config { .. })));
    }
}
