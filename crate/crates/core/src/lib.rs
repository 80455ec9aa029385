//! Bayesian low-rank matrix completion.
//!
//! The unknown `m1 x m2` matrix is modelled as `theta = M N^T` with
//! `M` (`m1 x K`) and `N` (`m2 x K`). Column `h` of both factors shares a
//! prior variance `gamma[h]`, and the prior on `gamma` decides how
//! aggressively unused columns are switched off. Observations enter
//! through a tempered Gaussian quasi-likelihood
//!
//! ```text
//! rho(M, N, gamma) ∝ exp(-(lambda/n) Σ_k (Y_k - (M N^T)_{i_k j_k})^2) π(M, N, gamma)
//! ```
//!
//! Two inference backends are provided:
//!
//! * [`gibbs`]: exact block Gibbs sampling over rows of `M`, rows of `N`,
//!   then `gamma`, for all four column-scale priors in [`PriorSpec`].
//! * [`vb`]: coordinate-ascent variational Bayes for the inverse-gamma prior.
//!
//! [`experiments`] reproduces the synthetic benchmark protocol and [`io`]
//! handles MovieLens ingestion, splitting and result emission.

pub mod conditionals;
pub mod error;
pub mod experiments;
pub mod gibbs;
pub mod io;
mod linalg;
pub mod model;
pub mod quadrature;
pub mod rng;
pub mod vb;

pub use error::{Error, Result};
pub use model::{
    holdout_rmse, holdout_rmse_clipped, predict_entry, rmse, FactorMatrix, FactorState,
    ObservationSet, PosteriorSummary, Predictor, PriorSpec, Rating, SamplerConfig, ThetaMean,
};
pub use rng::RngStream;
