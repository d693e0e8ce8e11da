//! Bayesian spatiotemporal modeling of groundwater arsenic surveys.
//!
//! The crate is organized by pipeline stage:
//!
//! * [`geo_basis`]: pruned tensor-product cubic B-spline bases with analytic
//!   Laplacians, evaluated into sparse design matrices, plus the squared
//!   exponential GP kernel.
//! * [`measurement`]: ordered-logistic calibration of 9-level field kits
//!   against laboratory log concentrations.
//! * [`models`]: the resampled-panel and blanket-survey hierarchical
//!   posteriors as differentiable log densities.
//! * [`sampler`]: a multi-chain NUTS/HMC engine with dual averaging and
//!   diagonal mass adaptation, plus split-R-hat and bulk-ESS diagnostics.
//! * [`summaries`]: well-level predictions, exceedance probabilities,
//!   mixing-coefficient curves, trend statistics and predictive checks.
//! * [`data_io`]: CSV ingestion, coordinate standardization and a forward
//!   simulator of the generative model.
//! * [`config`]: the flat key-value model specification file.

pub mod config;
pub mod data_io;
pub mod geo_basis;
pub mod measurement;
pub mod models;
pub mod pipeline;
pub mod sampler;
pub mod sparse;
pub mod stats;
pub mod summaries;

pub use config::ModelSpec;
pub use geo_basis::{BasisSystem, GpKernelParams, KnotGrid, Location};
pub use measurement::CalibrationModel;
pub use sampler::{PosteriorDraws, SamplerConfig};
