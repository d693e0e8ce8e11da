//! Blanket-survey model: lab readings of survey 1 and kit readings of
//! survey 2 tied together by a spline surface, its Laplacian and a mixing
//! autoregression.
//!
//! ```text
//! log y₁ᵢ ~ N(β₀ + B₁ᵢβ + β_depth(d₁ᵢ - d₀), σ_obs)
//! θ₁ᵢ     = β₀ + B₂ᵢβ,   δᵢ = ΔB₂ᵢβ
//! θ₂ᵢ     ~ N(θ₁ᵢ + α_δ + (β_δ + γ(θ₁ᵢ)) δᵢ, τ)
//! η₂ᵢ     ~ N(θ₂ᵢ + β_depth(d₂ᵢ - d₀), σ_obs)
//! w₂ᵢ     ~ OrderedLogit(ĉ + β̂ η₂ᵢ)
//! ```

use serde::{Deserialize, Serialize};

use super::{MixingVariant, ModelError, ParamLayout};
use crate::config::BlanketPriors;
use crate::geo_basis::BasisSystem;
use crate::measurement::{CalibrationModel, N_CATEGORIES};
use crate::sampler::LogDensity;
use crate::sparse::{CsrMatrix, LinearOperator};
use crate::stats::{inv_gamma_lpdf, normal_lpdf};

/// Observations and design matrices. Depths are already centered at d₀.
#[derive(Debug, Clone)]
pub struct BlanketData<M = CsrMatrix> {
    pub log_y1: Vec<f64>,
    pub depth1: Vec<f64>,
    pub kit2: Vec<u8>,
    pub depth2: Vec<f64>,
    /// `n₁ × L`
    pub basis1: M,
    /// `n₂ × L`
    pub basis2: M,
    /// `n₂ × L`
    pub laplacian2: M,
}

impl<M: LinearOperator> BlanketData<M> {
    pub fn n1(&self) -> usize {
        self.log_y1.len()
    }

    pub fn n2(&self) -> usize {
        self.kit2.len()
    }

    pub fn n_basis(&self) -> usize {
        self.basis1.ncols()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let l = self.n_basis();
        let checks: [(&'static str, usize, usize); 8] = [
            ("survey-1 depths", self.n1(), self.depth1.len()),
            ("survey-2 depths", self.n2(), self.depth2.len()),
            ("survey-1 basis matrix rows", self.n1(), self.basis1.nrows()),
            ("survey-2 basis matrix rows", self.n2(), self.basis2.nrows()),
            ("survey-2 Laplacian matrix rows", self.n2(), self.laplacian2.nrows()),
            ("survey-2 basis matrix columns", l, self.basis2.ncols()),
            ("survey-2 Laplacian matrix columns", l, self.laplacian2.ncols()),
            ("survey-1 basis matrix columns", l, self.basis1.ncols()),
        ];
        for (matrix, expected, found) in checks {
            if expected != found {
                return Err(ModelError::DimensionMismatch {
                    matrix,
                    expected,
                    found,
                });
            }
        }
        if let Some(&w) = self.kit2.iter().find(|w| !(1..=N_CATEGORIES as u8).contains(w)) {
            return Err(ModelError::Category(w));
        }
        if self.log_y1.iter().chain(&self.depth1).chain(&self.depth2).any(|v| !v.is_finite()) {
            return Err(ModelError::InvalidData("non-finite observation or depth".into()));
        }
        Ok(())
    }
}

/// Constrained parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlanketParams {
    pub beta0: f64,
    pub beta: Vec<f64>,
    pub beta_depth: f64,
    pub sigma_obs: f64,
    pub theta2: Vec<f64>,
    pub eta2: Vec<f64>,
    pub alpha_y: f64,
    pub alpha_theta: f64,
    pub alpha_delta: f64,
    pub beta_delta: f64,
    pub tau: f64,
}

impl BlanketParams {
    pub fn zeros(n_basis: usize, n2: usize) -> Self {
        Self {
            beta0: 0.0,
            beta: vec![0.0; n_basis],
            beta_depth: 0.0,
            sigma_obs: 0.0,
            theta2: vec![0.0; n2],
            eta2: vec![0.0; n2],
            alpha_y: 0.0,
            alpha_theta: 0.0,
            alpha_delta: 0.0,
            beta_delta: 0.0,
            tau: 0.0,
        }
    }

    /// Unconstrained sampling layout. θ₂ is sampled through its
    /// standardized innovation `(θ₂ - E[θ₂ | θ₁, δ]) / τ`, which removes the
    /// funnel between τ and weakly identified θ₂.
    pub fn layout(n_basis: usize, n2: usize) -> ParamLayout {
        ParamLayout::new()
            .scalar("beta0")
            .vector("beta", n_basis)
            .scalar("beta_depth")
            .scalar("log_sigma_obs")
            .vector("theta2_raw", n2)
            .vector("eta2", n2)
            .scalar("alpha_y")
            .scalar("alpha_theta")
            .scalar("alpha_delta")
            .scalar("beta_delta")
            .scalar("log_tau")
    }

    /// Layout of exported draws: constrained parameters followed by the
    /// derived θ₁ and δ.
    pub fn output_layout(n_basis: usize, n2: usize) -> ParamLayout {
        ParamLayout::new()
            .scalar("beta0")
            .vector("beta", n_basis)
            .scalar("beta_depth")
            .scalar("sigma_obs")
            .vector("theta2", n2)
            .vector("eta2", n2)
            .scalar("alpha_y")
            .scalar("alpha_theta")
            .scalar("alpha_delta")
            .scalar("beta_delta")
            .scalar("tau")
            .vector("theta1", n2)
            .vector("delta", n2)
    }

    /// Number of free parameters: `L + 1 + 1 + 1 + 2 n₂ + 4 + 1`.
    pub fn free_parameter_count(n_basis: usize, n2: usize) -> usize {
        Self::layout(n_basis, n2).dim()
    }

    fn unpack(x: &[f64], n_basis: usize, n2: usize, exp_scales: bool) -> Self {
        let mut i = 0;
        let mut take = |n: usize| {
            let s = &x[i..i + n];
            i += n;
            s
        };
        let scale = |v: f64| if exp_scales { v.exp() } else { v };
        Self {
            beta0: take(1)[0],
            beta: take(n_basis).to_vec(),
            beta_depth: take(1)[0],
            sigma_obs: scale(take(1)[0]),
            theta2: take(n2).to_vec(),
            eta2: take(n2).to_vec(),
            alpha_y: take(1)[0],
            alpha_theta: take(1)[0],
            alpha_delta: take(1)[0],
            beta_delta: take(1)[0],
            tau: scale(take(1)[0]),
        }
    }

    fn pack_into(&self, out: &mut Vec<f64>, sigma: f64, tau: f64) {
        out.push(self.beta0);
        out.extend_from_slice(&self.beta);
        out.push(self.beta_depth);
        out.push(sigma);
        out.extend_from_slice(&self.theta2);
        out.extend_from_slice(&self.eta2);
        out.extend([self.alpha_y, self.alpha_theta, self.alpha_delta, self.beta_delta, tau]);
    }

    /// Constrained values in `layout` order (without derived quantities).
    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.pack_into(&mut out, self.sigma_obs, self.tau);
        out
    }
}

/// Additive pieces of the log posterior (no Jacobian).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlanketComponents {
    pub survey1: f64,
    pub dynamics: f64,
    pub eta_link: f64,
    pub kit: f64,
    pub prior: f64,
}

impl BlanketComponents {
    pub fn total(&self) -> f64 {
        self.survey1 + self.dynamics + self.eta_link + self.kit + self.prior
    }
}

/// θ₁ = β₀ + Bβ and δ = ΔBβ at the locations of `basis2`.
pub fn extract_theta1_delta(beta0: f64, beta: &[f64], basis2: &BasisSystem) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
    theta1_delta(beta0, beta, &basis2.basis, &basis2.laplacian)
}

fn theta1_delta<M: LinearOperator>(beta0: f64, beta: &[f64], basis: &M, lap: &M) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
    for (matrix, m) in [("basis matrix", basis), ("Laplacian matrix", lap)] {
        if m.ncols() != beta.len() {
            return Err(ModelError::DimensionMismatch {
                matrix,
                expected: beta.len(),
                found: m.ncols(),
            });
        }
    }
    if basis.nrows() != lap.nrows() {
        return Err(ModelError::DimensionMismatch {
            matrix: "Laplacian matrix",
            expected: basis.nrows(),
            found: lap.nrows(),
        });
    }
    let mut theta1 = basis.matvec(beta);
    theta1.iter_mut().for_each(|t| *t += beta0);
    Ok((theta1, lap.matvec(beta)))
}

/// Prior terms. `β_depth` has a flat prior; θ₂ and η₂ are given by the
/// model's conditionals, not here.
pub fn prior_log_density(params: &BlanketParams, priors: &BlanketPriors) -> f64 {
    prior_with_grad(params, priors, None)
}

fn prior_with_grad(p: &BlanketParams, pr: &BlanketPriors, grad: Option<&mut BlanketParams>) -> f64 {
    if !(p.sigma_obs > 0.0 && p.tau > 0.0) {
        return f64::NEG_INFINITY;
    }
    let mut lp = normal_lpdf(p.beta0, pr.beta0_mean, pr.beta0_sd);
    lp += p.beta.iter().map(|&b| normal_lpdf(b, 0.0, pr.beta_sd)).sum::<f64>();
    lp += normal_lpdf(p.alpha_y, 0.0, pr.alpha_y_sd);
    lp += normal_lpdf(p.alpha_theta, 0.0, pr.alpha_theta_sd);
    lp += normal_lpdf(p.alpha_delta, 0.0, pr.alpha_delta_sd);
    lp += normal_lpdf(p.beta_delta, 0.0, pr.beta_delta_sd);
    lp += inv_gamma_lpdf(p.sigma_obs, pr.sigma_shape, pr.sigma_scale);
    lp += inv_gamma_lpdf(p.tau, pr.sigma_shape, pr.sigma_scale);
    if let Some(g) = grad {
        let dn = |x: f64, m: f64, s: f64| -(x - m) / (s * s);
        let dig = |x: f64| -(pr.sigma_shape + 1.0) / x + pr.sigma_scale / (x * x);
        g.beta0 += dn(p.beta0, pr.beta0_mean, pr.beta0_sd);
        for (gb, &b) in g.beta.iter_mut().zip(&p.beta) {
            *gb += dn(b, 0.0, pr.beta_sd);
        }
        g.alpha_y += dn(p.alpha_y, 0.0, pr.alpha_y_sd);
        g.alpha_theta += dn(p.alpha_theta, 0.0, pr.alpha_theta_sd);
        g.alpha_delta += dn(p.alpha_delta, 0.0, pr.alpha_delta_sd);
        g.beta_delta += dn(p.beta_delta, 0.0, pr.beta_delta_sd);
        g.sigma_obs += dig(p.sigma_obs);
        g.tau += dig(p.tau);
    }
    lp
}

#[derive(Debug, Clone)]
pub struct BlanketModel<M = CsrMatrix> {
    pub data: BlanketData<M>,
    pub calibration: CalibrationModel,
    pub variant: MixingVariant,
    pub priors: BlanketPriors,
    layout: ParamLayout,
}

impl<M: LinearOperator> BlanketModel<M> {
    pub fn new(
        data: BlanketData<M>,
        calibration: CalibrationModel,
        variant: MixingVariant,
        priors: BlanketPriors,
    ) -> Result<Self, ModelError> {
        data.validate()?;
        let layout = BlanketParams::layout(data.n_basis(), data.n2());
        Ok(Self {
            data,
            calibration,
            variant,
            priors,
            layout,
        })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn output_layout(&self) -> ParamLayout {
        BlanketParams::output_layout(self.data.n_basis(), self.data.n2())
    }

    fn check(&self, p: &BlanketParams) -> Result<(), ModelError> {
        let (l, n2) = (self.data.n_basis(), self.data.n2());
        for (expected, found) in [(l, p.beta.len()), (n2, p.theta2.len()), (n2, p.eta2.len())] {
            if expected != found {
                return Err(ModelError::ParameterLength { expected, found });
            }
        }
        Ok(())
    }

    /// Log posterior (up to a constant) on the constrained scale, without
    /// the change-of-variables Jacobian.
    pub fn log_density(&self, params: &BlanketParams) -> Result<f64, ModelError> {
        Ok(self.components(params)?.total())
    }

    pub fn components(&self, params: &BlanketParams) -> Result<BlanketComponents, ModelError> {
        self.check(params)?;
        Ok(self.evaluate(params, None, false))
    }

    /// Log density and its gradient with respect to the constrained
    /// parameters.
    pub fn log_density_grad(&self, params: &BlanketParams) -> Result<(f64, BlanketParams), ModelError> {
        self.check(params)?;
        let mut g = BlanketParams::zeros(self.data.n_basis(), self.data.n2());
        let c = self.evaluate(params, Some(&mut g), false);
        Ok((c.total(), g))
    }

    /// θ₁, δ and the conditional mean of θ₂ at the survey-2 wells.
    fn surface(&self, p: &BlanketParams) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (theta1, delta) = theta1_delta(p.beta0, &p.beta, &self.data.basis2, &self.data.laplacian2)
            .expect("validated at construction");
        let mean2 = theta1
            .iter()
            .zip(&delta)
            .map(|(&t1, &d)| t1 + p.alpha_delta + (p.beta_delta + self.variant.gamma(p.alpha_y, p.alpha_theta, t1).0) * d)
            .collect();
        (theta1, delta, mean2)
    }

    /// Constrained parameters and θ₁, δ from an unconstrained point.
    fn unpack(&self, x: &[f64]) -> (BlanketParams, Vec<f64>, Vec<f64>) {
        let mut p = BlanketParams::unpack(x, self.data.n_basis(), self.data.n2(), true);
        let (theta1, delta, mean2) = self.surface(&p);
        for (t, m) in p.theta2.iter_mut().zip(&mean2) {
            *t = m + p.tau * *t;
        }
        (p, theta1, delta)
    }

    pub fn from_unconstrained(&self, x: &[f64]) -> BlanketParams {
        self.unpack(x).0
    }

    pub fn to_unconstrained(&self, p: &BlanketParams) -> Vec<f64> {
        let (_, _, mean2) = self.surface(p);
        let mut q = p.clone();
        for (t, m) in q.theta2.iter_mut().zip(&mean2) {
            *t = (*t - m) / p.tau;
        }
        let mut out = Vec::new();
        q.pack_into(&mut out, p.sigma_obs.ln(), p.tau.ln());
        out
    }

    /// Constrained draw vector (in `output_layout` order) from an
    /// unconstrained point.
    pub fn constrain_with_generated(&self, x: &[f64]) -> Vec<f64> {
        let (p, theta1, delta) = self.unpack(x);
        let mut out = p.to_vec();
        out.extend(theta1);
        out.extend(delta);
        out
    }

    /// With `noncentered`, the gradient is taken with the standardized
    /// innovation of θ₂ held fixed instead of θ₂ itself; `grad.theta2` is
    /// still ∂/∂θ₂ and `grad.tau` includes the per-well log τ Jacobian.
    fn evaluate(&self, p: &BlanketParams, mut grad: Option<&mut BlanketParams>, noncentered: bool) -> BlanketComponents {
        let d = &self.data;
        let nan = BlanketComponents {
            survey1: f64::NEG_INFINITY,
            dynamics: 0.0,
            eta_link: 0.0,
            kit: 0.0,
            prior: 0.0,
        };
        if !(p.sigma_obs > 0.0 && p.tau > 0.0) {
            return nan;
        }
        let (sigma, tau) = (p.sigma_obs, p.tau);
        let (ln_sigma, ln_tau) = (sigma.ln(), tau.ln());
        const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

        // survey 1
        let mut mu1 = d.basis1.matvec(&p.beta);
        let mut survey1 = 0.0;
        let mut r1 = vec![0.0; d.n1()];
        for i in 0..d.n1() {
            mu1[i] += p.beta0 + p.beta_depth * d.depth1[i];
            let z = (d.log_y1[i] - mu1[i]) / sigma;
            survey1 += -0.5 * z * z - ln_sigma - HALF_LN_2PI;
            r1[i] = z / sigma;
        }

        // latent surface at survey-2 locations
        let (theta1, delta) =
            theta1_delta(p.beta0, &p.beta, &d.basis2, &d.laplacian2).expect("validated at construction");

        let n2 = d.n2();
        let mut dynamics = 0.0;
        let mut eta_link = 0.0;
        let mut kit = 0.0;
        let mut d_theta1 = vec![0.0; n2];
        let mut d_delta = vec![0.0; n2];
        let mut g_alpha_delta = 0.0;
        let mut g_beta_delta = 0.0;
        let mut g_alpha_y = 0.0;
        let mut g_alpha_theta = 0.0;
        let mut g_tau = 0.0;
        let mut g_sigma = 0.0;
        let mut g_beta_depth = 0.0;
        let want_grad = grad.is_some();
        let mut g_theta2 = if want_grad { vec![0.0; n2] } else { Vec::new() };
        let mut g_eta2 = if want_grad { vec![0.0; n2] } else { Vec::new() };

        for i in 0..n2 {
            let t1 = theta1[i];
            let (gamma, dgamma) = self.variant.gamma(p.alpha_y, p.alpha_theta, t1);
            let coef = p.beta_delta + gamma;
            let mean2 = t1 + p.alpha_delta + coef * delta[i];
            let z2 = (p.theta2[i] - mean2) / tau;
            dynamics += -0.5 * z2 * z2 - ln_tau - HALF_LN_2PI;

            let mean_eta = p.theta2[i] + p.beta_depth * d.depth2[i];
            let z3 = (p.eta2[i] - mean_eta) / sigma;
            eta_link += -0.5 * z3 * z3 - ln_sigma - HALF_LN_2PI;

            let (lk, dlk) = self.calibration.term_unchecked(d.kit2[i] as usize, p.eta2[i]);
            kit += lk;

            if want_grad {
                let e2 = z2 / tau;
                let e3 = z3 / sigma;
                // adjoint of mean2; non-centered, θ₂ moves with it
                let a = if noncentered { e3 } else { e2 };
                g_theta2[i] -= e2;
                d_theta1[i] += a * (1.0 + dgamma * delta[i]);
                d_delta[i] += a * coef;
                g_alpha_delta += a;
                g_beta_delta += a * delta[i];
                let (gy, gt) = self.variant.gamma_coef_grad(t1);
                g_alpha_y += a * delta[i] * gy;
                g_alpha_theta += a * delta[i] * gt;
                g_tau += -1.0 / tau + z2 * z2 / tau;
                if noncentered {
                    g_tau += (e3 - e2) * z2 + 1.0 / tau;
                }

                g_eta2[i] -= e3;
                g_theta2[i] += e3;
                g_beta_depth += e3 * d.depth2[i];
                g_sigma += -1.0 / sigma + z3 * z3 / sigma;

                g_eta2[i] += dlk;
            }
        }

        let mut g_prior = grad.as_deref_mut();
        let prior = prior_with_grad(p, &self.priors, g_prior.take());

        if let Some(g) = grad {
            // survey 1
            for i in 0..d.n1() {
                g.beta0 += r1[i];
                g.beta_depth += r1[i] * d.depth1[i];
                let z = r1[i] * sigma;
                g.sigma_obs += -1.0 / sigma + z * z / sigma;
            }
            d.basis1.t_matvec_add(&r1, &mut g.beta);
            // survey 2 through θ₁ and δ
            g.beta0 += d_theta1.iter().sum::<f64>();
            d.basis2.t_matvec_add(&d_theta1, &mut g.beta);
            d.laplacian2.t_matvec_add(&d_delta, &mut g.beta);
            for i in 0..n2 {
                g.theta2[i] += g_theta2[i];
                g.eta2[i] += g_eta2[i];
            }
            g.alpha_delta += g_alpha_delta;
            g.beta_delta += g_beta_delta;
            g.alpha_y += g_alpha_y;
            g.alpha_theta += g_alpha_theta;
            g.tau += g_tau;
            g.sigma_obs += g_sigma;
            g.beta_depth += g_beta_depth;
        }

        BlanketComponents {
            survey1,
            dynamics,
            eta_link,
            kit,
            prior,
        }
    }
}

impl<M: LinearOperator> LogDensity for BlanketModel<M> {
    fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn logp_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let (l, n2) = (self.data.n_basis(), self.data.n2());
        let (p, _, _) = self.unpack(x);
        let mut g = BlanketParams::zeros(l, n2);
        let total = self.evaluate(&p, Some(&mut g), true).total();
        // log-scale change of variables for σ_obs and τ, and θ₂ = m + τ z
        let sigma_grad = g.sigma_obs * p.sigma_obs + 1.0;
        let tau_grad = g.tau * p.tau + 1.0;
        g.theta2.iter_mut().for_each(|v| *v *= p.tau);
        let mut packed = Vec::with_capacity(grad.len());
        g.pack_into(&mut packed, sigma_grad, tau_grad);
        grad.copy_from_slice(&packed);
        let log_tau = x[self.layout.dim() - 1];
        let value = total + x[self.layout.range("log_sigma_obs").unwrap().start] + (n2 + 1) as f64 * log_tau;
        if value.is_nan() || grad.iter().any(|v| !v.is_finite()) {
            f64::NEG_INFINITY
        } else {
            value
        }
    }
}
