//! Interacting particle Langevin dynamics for maximum marginal likelihood
//! estimation in latent-variable models.
//!
//! A model is described by its negative log joint density `U(θ, x)` and the
//! two partial gradients (see [`LatentModel`]). The parameter `θ` and a cloud
//! of `N` latent particles are advanced jointly by an Euler–Maruyama scheme
//! whose `θ`-noise scales as `√(2γ/N)`, so the `θ`-marginal of the stationary
//! law behaves like `k(θ)^N` and concentrates at the maximiser of the
//! marginal likelihood as `N` grows.
//!
//! Modules:
//! - [`model`]: the model abstraction and gradient / convexity validators.
//! - [`toy`]: Gaussian hierarchical and Bayesian logistic regression models.
//! - [`noise`]: counter-keyed Gaussian noise streams.
//! - [`sampler`]: IPLA and the noiseless-`θ` particle gradient baseline.
//! - [`diagnostics`]: Wasserstein distances, error bounds and rate fits.

pub mod diagnostics;
mod error;
pub mod model;
pub mod noise;
pub mod sampler;
pub mod toy;

pub use error::{Error, Result};
pub use model::{AnalyticInfo, LatentModel, ThetaMarginal};
pub use noise::{CounterNoise, NoiseSource, ZeroNoise};
pub use sampler::{Algorithm, RunConfig, SystemState};
