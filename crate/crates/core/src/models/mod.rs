//! Hierarchical posteriors as differentiable log densities over flat,
//! unconstrained parameter vectors.
//!
//! Positive scales are sampled on the log scale; the unconstrained densities
//! include the log-Jacobian. Outside the support a density evaluates to
//! `f64::NEG_INFINITY`.

mod blanket;
mod layout;
mod resampled;

pub use blanket::{
    extract_theta1_delta, prior_log_density, BlanketComponents, BlanketData, BlanketModel, BlanketParams,
};
pub use layout::{Block, ParamLayout};
pub use resampled::{
    autoregression_knots, ResampledComponents, ResampledData, ResampledModel, ResampledParams,
};

use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch in {matrix}: expected {expected}, found {found}")]
    DimensionMismatch {
        matrix: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("parameter vector has length {found}, layout needs {expected}")]
    ParameterLength { expected: usize, found: usize },
    #[error("kit category {0} outside 1..9")]
    Category(u8),
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error(transparent)]
    Basis(#[from] crate::geo_basis::BasisError),
}

/// Form of the data-dependent part γ(θ₁) of the mixing coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixingVariant {
    /// `α_y exp(θ₁/2) + α_θ θ₁`
    ExpPlusLinear,
    /// `α_y exp(θ₁)`
    LinearInExp,
    /// `0`
    Constant,
}

impl MixingVariant {
    /// γ(θ₁) and dγ/dθ₁.
    #[inline]
    pub fn gamma(self, alpha_y: f64, alpha_theta: f64, theta1: f64) -> (f64, f64) {
        match self {
            Self::ExpPlusLinear => {
                let e = (theta1 / 2.0).exp();
                (alpha_y * e + alpha_theta * theta1, 0.5 * alpha_y * e + alpha_theta)
            }
            Self::LinearInExp => {
                let e = theta1.exp();
                (alpha_y * e, alpha_y * e)
            }
            Self::Constant => (0.0, 0.0),
        }
    }

    /// Partial derivatives of γ with respect to `(α_y, α_θ)`.
    #[inline]
    pub fn gamma_coef_grad(self, theta1: f64) -> (f64, f64) {
        match self {
            Self::ExpPlusLinear => ((theta1 / 2.0).exp(), theta1),
            Self::LinearInExp => (theta1.exp(), 0.0),
            Self::Constant => (0.0, 0.0),
        }
    }
}

impl FromStr for MixingVariant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "exp_plus_linear" => Ok(Self::ExpPlusLinear),
            "linear_in_exp" => Ok(Self::LinearInExp),
            "constant" => Ok(Self::Constant),
            _ => Err("expected exp_plus_linear, linear_in_exp or constant".into()),
        }
    }
}

impl std::fmt::Display for MixingVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::ExpPlusLinear => "exp_plus_linear",
            Self::LinearInExp => "linear_in_exp",
            Self::Constant => "constant",
        })
    }
}
