//! Flat `key = value` model specification with `#` comments.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::models::MixingVariant;
use crate::sampler::SamplerConfig;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: unknown key {key:?}; valid keys: {valid}")]
    UnknownKey { line: usize, key: String, valid: String },
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("line {line}: invalid value {value:?} for {key}: {reason}")]
    InvalidValue {
        line: usize,
        key: String,
        value: String,
        reason: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Resampled,
    Blanket,
}

impl FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "resampled" => Ok(Self::Resampled),
            "blanket" => Ok(Self::Blanket),
            _ => Err("expected resampled or blanket".into()),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Resampled => "resampled",
            Self::Blanket => "blanket",
        })
    }
}

/// Prior hyperparameters of the blanket-survey model. Normal priors are
/// given by their standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlanketPriors {
    pub beta0_mean: f64,
    pub beta0_sd: f64,
    pub beta_sd: f64,
    pub alpha_y_sd: f64,
    pub alpha_theta_sd: f64,
    pub alpha_delta_sd: f64,
    pub beta_delta_sd: f64,
    pub sigma_shape: f64,
    pub sigma_scale: f64,
}

impl Default for BlanketPriors {
    fn default() -> Self {
        Self {
            beta0_mean: 4.0,
            beta0_sd: 2.0,
            beta_sd: 0.5,
            alpha_y_sd: 0.2,
            alpha_theta_sd: 0.5,
            alpha_delta_sd: 1.0,
            beta_delta_sd: 1.0,
            sigma_shape: 5.0,
            sigma_scale: 5.0,
        }
    }
}

/// Prior hyperparameters of the resampled-panel model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResampledPriors {
    /// sd of the linear coefficient and of the first spline coefficient
    pub spline_start_sd: f64,
    /// random-walk step sd between consecutive spline coefficients
    pub spline_step_sd: f64,
    pub sigma_shape: f64,
    pub sigma_scale: f64,
    pub mu_mean: f64,
    pub mu_sd: f64,
    pub gp_shape: f64,
    pub gp_scale: f64,
    /// length unit (standardized coordinates) in which the ρ prior is stated
    pub rho_unit: f64,
}

impl Default for ResampledPriors {
    fn default() -> Self {
        Self {
            spline_start_sd: 1.0,
            spline_step_sd: 0.5,
            sigma_shape: 3.0,
            sigma_scale: 3.0,
            mu_mean: 4.0,
            mu_sd: 1.0,
            gp_shape: 5.0,
            gp_scale: 5.0,
            rho_unit: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSpec {
    pub model: ModelKind,
    pub mixing: MixingVariant,
    pub n_east_inner: usize,
    pub laplacian_divisor: f64,
    /// Overrides the east extent used for standardization (metres).
    pub east_extent_m: Option<f64>,
    /// Overrides the reference depth d₀ (metres).
    pub d0_m: Option<f64>,
    /// Inner knots of the autoregression spline, at these many evenly spaced
    /// quantiles of the observed log values.
    pub spline_quantiles: usize,
    /// Margin (log units) added beyond the observed range for the boundary
    /// knots of the autoregression spline.
    pub spline_margin: f64,
    pub blanket_priors: BlanketPriors,
    pub resampled_priors: ResampledPriors,
    pub sampler: SamplerConfig,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            model: ModelKind::Blanket,
            mixing: MixingVariant::ExpPlusLinear,
            n_east_inner: 30,
            laplacian_divisor: 1000.0,
            east_extent_m: None,
            d0_m: None,
            spline_quantiles: 9,
            spline_margin: 1.0,
            blanket_priors: BlanketPriors::default(),
            resampled_priors: ResampledPriors::default(),
            sampler: SamplerConfig::default(),
        }
    }
}

struct KeyDoc {
    key: &'static str,
    doc: &'static str,
}

const KEYS: &[KeyDoc] = &[
    KeyDoc { key: "model", doc: "resampled | blanket" },
    KeyDoc { key: "mixing", doc: "exp_plus_linear | linear_in_exp | constant" },
    KeyDoc { key: "n_east_inner", doc: "inner knots across the east extent (>= 4)" },
    KeyDoc { key: "laplacian_divisor", doc: "the stored Laplacian matrix is ΔB divided by this" },
    KeyDoc { key: "east_extent_m", doc: "standardization length in metres (auto = data east extent)" },
    KeyDoc { key: "d0_m", doc: "reference depth in metres (auto = mean depth of the data)" },
    KeyDoc { key: "spline_quantiles", doc: "inner knots of the autoregression spline (quantiles of log y)" },
    KeyDoc { key: "spline_margin", doc: "log-unit margin beyond the data range for the spline boundary knots" },
    KeyDoc { key: "prior.beta0_mean", doc: "blanket: mean of the surface intercept" },
    KeyDoc { key: "prior.beta0_sd", doc: "blanket: sd of the surface intercept" },
    KeyDoc { key: "prior.beta_sd", doc: "blanket: sd of each surface coefficient" },
    KeyDoc { key: "prior.alpha_y_sd", doc: "blanket: sd of alpha_y" },
    KeyDoc { key: "prior.alpha_theta_sd", doc: "blanket: sd of alpha_theta" },
    KeyDoc { key: "prior.alpha_delta_sd", doc: "blanket: sd of alpha_delta" },
    KeyDoc { key: "prior.beta_delta_sd", doc: "blanket: sd of beta_delta" },
    KeyDoc { key: "prior.sigma_shape", doc: "blanket: inverse-gamma shape for sigma_obs and tau" },
    KeyDoc { key: "prior.sigma_scale", doc: "blanket: inverse-gamma scale for sigma_obs and tau" },
    KeyDoc { key: "prior.rs_spline_start_sd", doc: "resampled: sd of the linear and first spline coefficients" },
    KeyDoc { key: "prior.rs_spline_step_sd", doc: "resampled: random-walk sd between spline coefficients" },
    KeyDoc { key: "prior.rs_sigma_shape", doc: "resampled: inverse-gamma shape for sigma_S and sigma_L" },
    KeyDoc { key: "prior.rs_sigma_scale", doc: "resampled: inverse-gamma scale for sigma_S and sigma_L" },
    KeyDoc { key: "prior.rs_mu_mean", doc: "resampled: mean of the GP mean" },
    KeyDoc { key: "prior.rs_mu_sd", doc: "resampled: sd of the GP mean" },
    KeyDoc { key: "prior.rs_gp_shape", doc: "resampled: inverse-gamma shape for GP amplitude and length scale" },
    KeyDoc { key: "prior.rs_gp_scale", doc: "resampled: inverse-gamma scale for GP amplitude and length scale" },
    KeyDoc { key: "prior.rs_rho_unit", doc: "resampled: unit (standardized) in which the length-scale prior is stated" },
    KeyDoc { key: "sampler.chains", doc: "number of chains" },
    KeyDoc { key: "sampler.warmup", doc: "warmup iterations per chain" },
    KeyDoc { key: "sampler.draws", doc: "retained draws per chain" },
    KeyDoc { key: "sampler.target_accept", doc: "dual-averaging target acceptance in (0, 1)" },
    KeyDoc { key: "sampler.max_tree_depth", doc: "NUTS maximum tree depth" },
    KeyDoc { key: "sampler.fixed_steps", doc: "0 = dynamic NUTS, otherwise static HMC with this many leapfrog steps" },
    KeyDoc { key: "sampler.seed", doc: "64-bit seed" },
];

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "auto".to_string(), |x| x.to_string())
}

impl ModelSpec {
    pub fn valid_keys() -> Vec<&'static str> {
        KEYS.iter().map(|k| k.key).collect()
    }

    fn value_of(&self, key: &str) -> String {
        let b = &self.blanket_priors;
        let r = &self.resampled_priors;
        let s = &self.sampler;
        match key {
            "model" => self.model.to_string(),
            "mixing" => self.mixing.to_string(),
            "n_east_inner" => self.n_east_inner.to_string(),
            "laplacian_divisor" => self.laplacian_divisor.to_string(),
            "east_extent_m" => fmt_opt(self.east_extent_m),
            "d0_m" => fmt_opt(self.d0_m),
            "spline_quantiles" => self.spline_quantiles.to_string(),
            "spline_margin" => self.spline_margin.to_string(),
            "prior.beta0_mean" => b.beta0_mean.to_string(),
            "prior.beta0_sd" => b.beta0_sd.to_string(),
            "prior.beta_sd" => b.beta_sd.to_string(),
            "prior.alpha_y_sd" => b.alpha_y_sd.to_string(),
            "prior.alpha_theta_sd" => b.alpha_theta_sd.to_string(),
            "prior.alpha_delta_sd" => b.alpha_delta_sd.to_string(),
            "prior.beta_delta_sd" => b.beta_delta_sd.to_string(),
            "prior.sigma_shape" => b.sigma_shape.to_string(),
            "prior.sigma_scale" => b.sigma_scale.to_string(),
            "prior.rs_spline_start_sd" => r.spline_start_sd.to_string(),
            "prior.rs_spline_step_sd" => r.spline_step_sd.to_string(),
            "prior.rs_sigma_shape" => r.sigma_shape.to_string(),
            "prior.rs_sigma_scale" => r.sigma_scale.to_string(),
            "prior.rs_mu_mean" => r.mu_mean.to_string(),
            "prior.rs_mu_sd" => r.mu_sd.to_string(),
            "prior.rs_gp_shape" => r.gp_shape.to_string(),
            "prior.rs_gp_scale" => r.gp_scale.to_string(),
            "prior.rs_rho_unit" => r.rho_unit.to_string(),
            "sampler.chains" => s.n_chains.to_string(),
            "sampler.warmup" => s.n_warmup.to_string(),
            "sampler.draws" => s.n_draws.to_string(),
            "sampler.target_accept" => s.target_accept.to_string(),
            "sampler.max_tree_depth" => s.max_tree_depth.to_string(),
            "sampler.fixed_steps" => s.fixed_steps.unwrap_or(0).to_string(),
            "sampler.seed" => s.seed.to_string(),
            _ => unreachable!("key table and accessors out of sync: {key}"),
        }
    }

    /// The full configuration with every key and its documentation, as
    /// written by `config init`.
    pub fn to_config_text(&self) -> String {
        let mut out = String::from("# model specification (key = value, '#' starts a comment)\n");
        for k in KEYS {
            let _ = writeln!(out, "\n# {}\n{} = {}", k.doc, k.key, self.value_of(k.key));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut spec = ModelSpec::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line,
                    text: raw.to_string(),
                });
            };
            spec.set(line, key.trim(), value.trim())?;
        }
        Ok(spec)
    }

    /// Sets one key from its text value.
    pub fn set(&mut self, line: usize, key: &str, value: &str) -> Result<(), ConfigError> {
        let invalid = |reason: String| ConfigError::InvalidValue {
            line,
            key: key.to_string(),
            value: value.to_string(),
            reason,
        };
        fn num<T: FromStr>(v: &str) -> Result<T, String>
        where
            T::Err: std::fmt::Display,
        {
            v.parse::<T>().map_err(|e| e.to_string())
        }
        let pos = |v: &str| -> Result<f64, String> {
            let x: f64 = num(v)?;
            if x > 0.0 && x.is_finite() {
                Ok(x)
            } else {
                Err("must be positive and finite".into())
            }
        };
        let finite = |v: &str| -> Result<f64, String> {
            let x: f64 = num(v)?;
            if x.is_finite() {
                Ok(x)
            } else {
                Err("must be finite".into())
            }
        };
        let opt = |v: &str| -> Result<Option<f64>, String> {
            if v == "auto" {
                Ok(None)
            } else {
                pos(v).map(Some)
            }
        };
        let count = |v: &str| -> Result<usize, String> {
            let n: usize = num(v)?;
            if n > 0 {
                Ok(n)
            } else {
                Err("must be positive".into())
            }
        };
        let b = &mut self.blanket_priors;
        let r = &mut self.resampled_priors;
        let s = &mut self.sampler;
        let res: Result<(), String> = (|| {
            match key {
                "model" => self.model = value.parse()?,
                "mixing" => self.mixing = value.parse()?,
                "n_east_inner" => {
                    let n = count(value)?;
                    if n < 4 {
                        return Err("must be at least 4".into());
                    }
                    self.n_east_inner = n;
                }
                "laplacian_divisor" => self.laplacian_divisor = pos(value)?,
                "east_extent_m" => self.east_extent_m = opt(value)?,
                "d0_m" => self.d0_m = opt(value)?,
                "spline_quantiles" => self.spline_quantiles = count(value)?,
                "spline_margin" => self.spline_margin = pos(value)?,
                "prior.beta0_mean" => b.beta0_mean = finite(value)?,
                "prior.beta0_sd" => b.beta0_sd = pos(value)?,
                "prior.beta_sd" => b.beta_sd = pos(value)?,
                "prior.alpha_y_sd" => b.alpha_y_sd = pos(value)?,
                "prior.alpha_theta_sd" => b.alpha_theta_sd = pos(value)?,
                "prior.alpha_delta_sd" => b.alpha_delta_sd = pos(value)?,
                "prior.beta_delta_sd" => b.beta_delta_sd = pos(value)?,
                "prior.sigma_shape" => b.sigma_shape = pos(value)?,
                "prior.sigma_scale" => b.sigma_scale = pos(value)?,
                "prior.rs_spline_start_sd" => r.spline_start_sd = pos(value)?,
                "prior.rs_spline_step_sd" => r.spline_step_sd = pos(value)?,
                "prior.rs_sigma_shape" => r.sigma_shape = pos(value)?,
                "prior.rs_sigma_scale" => r.sigma_scale = pos(value)?,
                "prior.rs_mu_mean" => r.mu_mean = finite(value)?,
                "prior.rs_mu_sd" => r.mu_sd = pos(value)?,
                "prior.rs_gp_shape" => r.gp_shape = pos(value)?,
                "prior.rs_gp_scale" => r.gp_scale = pos(value)?,
                "prior.rs_rho_unit" => r.rho_unit = pos(value)?,
                "sampler.chains" => s.n_chains = count(value)?,
                "sampler.warmup" => s.n_warmup = count(value)?,
                "sampler.draws" => s.n_draws = count(value)?,
                "sampler.target_accept" => {
                    let t: f64 = num(value)?;
                    if !(t > 0.0 && t < 1.0) {
                        return Err("must lie in (0, 1)".into());
                    }
                    s.target_accept = t;
                }
                "sampler.max_tree_depth" => s.max_tree_depth = count(value)?,
                "sampler.fixed_steps" => {
                    let n: usize = num(value)?;
                    s.fixed_steps = (n > 0).then_some(n);
                }
                "sampler.seed" => s.seed = num(value)?,
                _ => return Err(String::new()),
            }
            Ok(())
        })();
        match res {
            Ok(()) => Ok(()),
            Err(e) if e.is_empty() => Err(ConfigError::UnknownKey {
                line,
                key: key.to_string(),
                valid: Self::valid_keys().join(", "),
            }),
            Err(e) => Err(invalid(e)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dump_then_parse_is_identity() {
        let mut spec = ModelSpec::default();
        spec.mixing = MixingVariant::Constant;
        spec.d0_m = Some(15.29);
        spec.sampler.seed = 42;
        spec.sampler.fixed_steps = Some(64);
        let parsed = ModelSpec::parse(&spec.to_config_text()).unwrap();
        assert_eq!(parsed, spec);
    }

    #[test]
    fn unknown_key_lists_valid_keys() {
        let err = ModelSpec::parse("model = blanket\nbogus = 3\n").unwrap_err();
        match err {
            ConfigError::UnknownKey { line, key, valid } => {
                assert_eq!(line, 2);
                assert_eq!(key, "bogus");
                assert!(valid.contains("sampler.seed"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn comments_and_bad_values() {
        let spec = ModelSpec::parse("# hi\nmodel = resampled  # trailing\n\n").unwrap();
        assert_eq!(spec.model, ModelKind::Resampled);
        assert!(matches!(
            ModelSpec::parse("sampler.target_accept = 1.5"),
            Err(ConfigError::InvalidValue { .. })
        ));
        assert!(matches!(ModelSpec::parse("just words"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(ModelSpec::parse("n_east_inner = 2"), Err(ConfigError::InvalidValue { .. })));
    }
}
