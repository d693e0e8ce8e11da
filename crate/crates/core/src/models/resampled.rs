//! Resampled-panel model: wells measured in 2000, 2014 and 2015.
//!
//! ```text
//! log ỹₜᵢ        ~ N(θₜᵢ + β_depth(dᵢ - d₀), σ_S),   θ₂₀₁₅ ≡ θ₂₀₁₄
//! θ₂₀₀₀          ~ GP(μ, K(α, ρ))
//! θ₂₀₁₄ - θ₂₀₀₀  ~ N(β_lin θ₂₀₀₀ + Σ β_l B_l(θ₂₀₀₀), σ_L)
//! ```

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::Serialize;

use super::{ModelError, ParamLayout};
use crate::config::ResampledPriors;
use crate::geo_basis::{bspline_1d_local, n_basis_for_knots, GpKernelParams, Location, GP_JITTER};
use crate::sampler::LogDensity;
use crate::stats::{inv_gamma_lpdf, normal_lpdf, quantile};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Knots of the autoregression spline: `n_quantiles` evenly spaced inner
/// quantiles of the observed log values, framed by boundary knots `margin`
/// beyond the observed range.
pub fn autoregression_knots(log_values: &[f64], n_quantiles: usize, margin: f64) -> Result<Vec<f64>, ModelError> {
    if log_values.len() < 2 || log_values.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::InvalidData("need at least two finite log values for spline knots".into()));
    }
    if !(margin > 0.0) {
        return Err(ModelError::InvalidData("spline margin must be positive".into()));
    }
    let lo = log_values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = log_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut knots = vec![lo - margin];
    knots.extend((1..=n_quantiles).map(|k| quantile(log_values, k as f64 / (n_quantiles + 1) as f64)));
    knots.push(hi + margin);
    // ties among quantiles (heavily rounded data) are dropped
    knots.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    Ok(knots)
}

/// Panel observations. Depths are centered at d₀; locations are standardized.
#[derive(Debug, Clone)]
pub struct ResampledData {
    pub log_y2000: Vec<f64>,
    pub log_y2014: Vec<f64>,
    pub log_y2015: Vec<f64>,
    pub depth: Vec<f64>,
    pub locations: Vec<Location>,
    pub knots: Vec<f64>,
}

impl ResampledData {
    pub fn n_wells(&self) -> usize {
        self.log_y2000.len()
    }

    pub fn n_spline(&self) -> usize {
        n_basis_for_knots(self.knots.len())
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let n = self.n_wells();
        for (matrix, found) in [
            ("2014 observations", self.log_y2014.len()),
            ("2015 observations", self.log_y2015.len()),
            ("depths", self.depth.len()),
            ("locations", self.locations.len()),
        ] {
            if found != n {
                return Err(ModelError::DimensionMismatch {
                    matrix,
                    expected: n,
                    found,
                });
            }
        }
        if n < 2 {
            return Err(ModelError::InvalidData("panel needs at least two wells".into()));
        }
        let finite = self
            .log_y2000
            .iter()
            .chain(&self.log_y2014)
            .chain(&self.log_y2015)
            .chain(&self.depth)
            .all(|v| v.is_finite());
        if !finite || self.locations.iter().any(|l| !(l.east.is_finite() && l.north.is_finite())) {
            return Err(ModelError::InvalidData("non-finite panel entry".into()));
        }
        if self.knots.len() < 2 || self.knots.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(ModelError::InvalidData("spline knots must be strictly increasing".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResampledParams {
    pub mu: f64,
    pub alpha: f64,
    pub rho: f64,
    pub beta_depth: f64,
    pub sigma_s: f64,
    pub sigma_l: f64,
    pub beta_lin: f64,
    pub beta_spline: Vec<f64>,
    pub theta2000: Vec<f64>,
    pub theta2014: Vec<f64>,
}

impl ResampledParams {
    pub fn zeros(n_spline: usize, n_wells: usize) -> Self {
        Self {
            mu: 0.0,
            alpha: 0.0,
            rho: 0.0,
            beta_depth: 0.0,
            sigma_s: 0.0,
            sigma_l: 0.0,
            beta_lin: 0.0,
            beta_spline: vec![0.0; n_spline],
            theta2000: vec![0.0; n_wells],
            theta2014: vec![0.0; n_wells],
        }
    }

    pub fn layout(n_spline: usize, n_wells: usize) -> ParamLayout {
        Self::named_layout(n_spline, n_wells, ["log_alpha", "log_rho", "log_sigma_s", "log_sigma_l"])
    }

    pub fn output_layout(n_spline: usize, n_wells: usize) -> ParamLayout {
        Self::named_layout(n_spline, n_wells, ["alpha", "rho", "sigma_s", "sigma_l"])
    }

    fn named_layout(n_spline: usize, n_wells: usize, scales: [&str; 4]) -> ParamLayout {
        ParamLayout::new()
            .scalar("mu")
            .scalar(scales[0])
            .scalar(scales[1])
            .scalar("beta_depth")
            .scalar(scales[2])
            .scalar(scales[3])
            .scalar("beta_lin")
            .vector("beta_spline", n_spline)
            .vector("theta2000", n_wells)
            .vector("theta2014", n_wells)
    }

    fn unpack(x: &[f64], n_spline: usize, n_wells: usize, exp_scales: bool) -> Self {
        let s = |v: f64| if exp_scales { v.exp() } else { v };
        let k = 7 + n_spline;
        Self {
            mu: x[0],
            alpha: s(x[1]),
            rho: s(x[2]),
            beta_depth: x[3],
            sigma_s: s(x[4]),
            sigma_l: s(x[5]),
            beta_lin: x[6],
            beta_spline: x[7..k].to_vec(),
            theta2000: x[k..k + n_wells].to_vec(),
            theta2014: x[k + n_wells..k + 2 * n_wells].to_vec(),
        }
    }

    pub fn from_unconstrained(x: &[f64], n_spline: usize, n_wells: usize) -> Self {
        Self::unpack(x, n_spline, n_wells, true)
    }

    fn pack(&self, scales: [f64; 4]) -> Vec<f64> {
        let mut out = vec![self.mu, scales[0], scales[1], self.beta_depth, scales[2], scales[3], self.beta_lin];
        out.extend_from_slice(&self.beta_spline);
        out.extend_from_slice(&self.theta2000);
        out.extend_from_slice(&self.theta2014);
        out
    }

    pub fn to_unconstrained(&self) -> Vec<f64> {
        self.pack([self.alpha.ln(), self.rho.ln(), self.sigma_s.ln(), self.sigma_l.ln()])
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.pack([self.alpha, self.rho, self.sigma_s, self.sigma_l])
    }

    pub fn gp(&self) -> GpKernelParams {
        GpKernelParams {
            amplitude: self.alpha,
            length_scale: self.rho,
            mean: self.mu,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResampledComponents {
    pub observation: f64,
    pub gp: f64,
    pub autoregression: f64,
    pub prior: f64,
}

impl ResampledComponents {
    pub fn total(&self) -> f64 {
        self.observation + self.gp + self.autoregression + self.prior
    }
}

#[derive(Debug, Clone)]
pub struct ResampledModel {
    pub data: ResampledData,
    pub priors: ResampledPriors,
    layout: ParamLayout,
    sq_dist: DMatrix<f64>,
}

impl ResampledModel {
    pub fn new(data: ResampledData, priors: ResampledPriors) -> Result<Self, ModelError> {
        data.validate()?;
        let n = data.n_wells();
        let sq_dist = DMatrix::from_fn(n, n, |i, j| {
            let (a, b) = (data.locations[i], data.locations[j]);
            (a.east - b.east).powi(2) + (a.north - b.north).powi(2)
        });
        let layout = ResampledParams::layout(data.n_spline(), n);
        Ok(Self {
            data,
            priors,
            layout,
            sq_dist,
        })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn output_layout(&self) -> ParamLayout {
        ResampledParams::output_layout(self.data.n_spline(), self.data.n_wells())
    }

    pub fn constrain(&self, x: &[f64]) -> Vec<f64> {
        ResampledParams::from_unconstrained(x, self.data.n_spline(), self.data.n_wells()).to_vec()
    }

    /// Autoregression mean change `β_lin θ + Σ β_l B_l(θ)` and its
    /// derivative in θ. Outside the knot span the spline part is held at
    /// its boundary value.
    pub fn spline_change(knots: &[f64], beta_lin: f64, beta_spline: &[f64], theta: f64) -> (f64, f64) {
        let (lo, hi) = (knots[0], knots[knots.len() - 1]);
        let inside = theta > lo && theta < hi;
        let x = theta.clamp(lo, hi);
        let b = bspline_1d_local(knots, x, 0).expect("clamped into span");
        let mut f = beta_lin * theta;
        let mut df = beta_lin;
        for (k, v) in b.values.iter().enumerate() {
            f += beta_spline[b.first + k] * v;
        }
        if inside {
            let d = bspline_1d_local(knots, x, 1).expect("clamped into span");
            for (k, v) in d.values.iter().enumerate() {
                df += beta_spline[d.first + k] * v;
            }
        }
        (f, df)
    }

    fn check(&self, p: &ResampledParams) -> Result<(), ModelError> {
        let (k, n) = (self.data.n_spline(), self.data.n_wells());
        for (expected, found) in [(k, p.beta_spline.len()), (n, p.theta2000.len()), (n, p.theta2014.len())] {
            if expected != found {
                return Err(ModelError::ParameterLength { expected, found });
            }
        }
        Ok(())
    }

    pub fn components(&self, params: &ResampledParams) -> Result<ResampledComponents, ModelError> {
        self.check(params)?;
        Ok(self.evaluate(params, None))
    }

    pub fn log_density(&self, params: &ResampledParams) -> Result<f64, ModelError> {
        Ok(self.components(params)?.total())
    }

    pub fn log_density_grad(&self, params: &ResampledParams) -> Result<(f64, ResampledParams), ModelError> {
        self.check(params)?;
        let mut g = ResampledParams::zeros(self.data.n_spline(), self.data.n_wells());
        let c = self.evaluate(params, Some(&mut g));
        Ok((c.total(), g))
    }

    fn out_of_support() -> ResampledComponents {
        ResampledComponents {
            observation: f64::NEG_INFINITY,
            gp: 0.0,
            autoregression: 0.0,
            prior: 0.0,
        }
    }

    fn evaluate(&self, p: &ResampledParams, mut grad: Option<&mut ResampledParams>) -> ResampledComponents {
        if !(p.sigma_s > 0.0 && p.sigma_l > 0.0 && p.alpha > 0.0 && p.rho > 0.0) {
            return Self::out_of_support();
        }
        let d = &self.data;
        let pr = &self.priors;
        let n = d.n_wells();

        // observations
        let (ss, ln_ss) = (p.sigma_s, p.sigma_s.ln());
        let mut observation = 0.0;
        for i in 0..n {
            let shift = p.beta_depth * d.depth[i];
            for (y, theta, is_2000) in [
                (d.log_y2000[i], p.theta2000[i], true),
                (d.log_y2014[i], p.theta2014[i], false),
                (d.log_y2015[i], p.theta2014[i], false),
            ] {
                let z = (y - theta - shift) / ss;
                observation += -0.5 * z * z - ln_ss - HALF_LN_2PI;
                if let Some(g) = grad.as_deref_mut() {
                    let r = z / ss;
                    if is_2000 {
                        g.theta2000[i] += r;
                    } else {
                        g.theta2014[i] += r;
                    }
                    g.beta_depth += r * d.depth[i];
                    g.sigma_s += (z * z - 1.0) / ss;
                }
            }
        }

        // GP prior on θ₂₀₀₀
        let jitter = 1.0 + GP_JITTER;
        let rho2 = p.rho * p.rho;
        let k = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                p.alpha * jitter
            } else {
                p.alpha * (-self.sq_dist[(i, j)] / rho2).exp()
            }
        });
        let Some(chol) = Cholesky::new(k.clone()) else {
            return Self::out_of_support();
        };
        let r = DVector::from_iterator(n, p.theta2000.iter().map(|t| t - p.mu));
        let v = chol.solve(&r);
        let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>();
        let gp = -0.5 * r.dot(&v) - 0.5 * log_det - n as f64 * HALF_LN_2PI;
        if let Some(g) = grad.as_deref_mut() {
            for i in 0..n {
                g.theta2000[i] -= v[i];
                g.mu += v[i];
            }
            // K is proportional to α, jitter included
            g.alpha += (r.dot(&v) - n as f64) / (2.0 * p.alpha);
            let kinv = chol.inverse();
            let mut g_rho = 0.0;
            for i in 0..n {
                for j in 0..i {
                    let dk = k[(i, j)] * 2.0 * self.sq_dist[(i, j)] / (rho2 * p.rho);
                    g_rho += (v[i] * v[j] - kinv[(i, j)]) * dk;
                }
            }
            g.rho += g_rho;
        }

        // autoregression
        let (sl, ln_sl) = (p.sigma_l, p.sigma_l.ln());
        let mut autoregression = 0.0;
        for i in 0..n {
            let t0 = p.theta2000[i];
            let (f, df) = Self::spline_change(&d.knots, p.beta_lin, &p.beta_spline, t0);
            let z = (p.theta2014[i] - t0 - f) / sl;
            autoregression += -0.5 * z * z - ln_sl - HALF_LN_2PI;
            if let Some(g) = grad.as_deref_mut() {
                let e = z / sl;
                g.theta2014[i] -= e;
                g.theta2000[i] += e * (1.0 + df);
                g.beta_lin += e * t0;
                let x = t0.clamp(d.knots[0], d.knots[d.knots.len() - 1]);
                let b = bspline_1d_local(&d.knots, x, 0).expect("clamped into span");
                for (k, bv) in b.values.iter().enumerate() {
                    g.beta_spline[b.first + k] += e * bv;
                }
                g.sigma_l += (z * z - 1.0) / sl;
            }
        }

        // priors
        let mut prior = normal_lpdf(p.beta_lin, 0.0, pr.spline_start_sd)
            + normal_lpdf(p.beta_spline[0], 0.0, pr.spline_start_sd)
            + inv_gamma_lpdf(p.sigma_s, pr.sigma_shape, pr.sigma_scale)
            + inv_gamma_lpdf(p.sigma_l, pr.sigma_shape, pr.sigma_scale)
            + normal_lpdf(p.mu, pr.mu_mean, pr.mu_sd)
            + inv_gamma_lpdf(p.alpha, pr.gp_shape, pr.gp_scale)
            + inv_gamma_lpdf(p.rho / pr.rho_unit, pr.gp_shape, pr.gp_scale)
            - pr.rho_unit.ln();
        for w in p.beta_spline.windows(2) {
            prior += normal_lpdf(w[1], w[0], pr.spline_step_sd);
        }
        if let Some(g) = grad {
            let ig = |x: f64, a: f64, b: f64| -(a + 1.0) / x + b / (x * x);
            g.beta_lin -= p.beta_lin / pr.spline_start_sd.powi(2);
            g.beta_spline[0] -= p.beta_spline[0] / pr.spline_start_sd.powi(2);
            let s2 = pr.spline_step_sd.powi(2);
            for l in 1..p.beta_spline.len() {
                let e = (p.beta_spline[l] - p.beta_spline[l - 1]) / s2;
                g.beta_spline[l] -= e;
                g.beta_spline[l - 1] += e;
            }
            g.sigma_s += ig(p.sigma_s, pr.sigma_shape, pr.sigma_scale);
            g.sigma_l += ig(p.sigma_l, pr.sigma_shape, pr.sigma_scale);
            g.mu -= (p.mu - pr.mu_mean) / pr.mu_sd.powi(2);
            g.alpha += ig(p.alpha, pr.gp_shape, pr.gp_scale);
            g.rho += ig(p.rho / pr.rho_unit, pr.gp_shape, pr.gp_scale) / pr.rho_unit;
        }

        ResampledComponents {
            observation,
            gp,
            autoregression,
            prior,
        }
    }
}

impl LogDensity for ResampledModel {
    fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn logp_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let (k, n) = (self.data.n_spline(), self.data.n_wells());
        let p = ResampledParams::from_unconstrained(x, k, n);
        let mut g = ResampledParams::zeros(k, n);
        let total = self.evaluate(&p, Some(&mut g)).total();
        let packed = g.pack([
            g.alpha * p.alpha + 1.0,
            g.rho * p.rho + 1.0,
            g.sigma_s * p.sigma_s + 1.0,
            g.sigma_l * p.sigma_l + 1.0,
        ]);
        grad.copy_from_slice(&packed);
        let value = total + x[1] + x[2] + x[4] + x[5];
        if value.is_nan() || grad.iter().any(|v| !v.is_finite()) {
            f64::NEG_INFINITY
        } else {
            value
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn instance(seed: u64, n: usize) -> (ResampledModel, ResampledParams) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ys: Vec<[f64; 3]> = (0..n)
            .map(|_| {
                let b = rng.random_range(1.5..6.0);
                [b, b + rng.random_range(-0.5..0.5), b + rng.random_range(-0.5..0.5)]
            })
            .collect();
        let all: Vec<f64> = ys.iter().flatten().copied().collect();
        let data = ResampledData {
            log_y2000: ys.iter().map(|y| y[0]).collect(),
            log_y2014: ys.iter().map(|y| y[1]).collect(),
            log_y2015: ys.iter().map(|y| y[2]).collect(),
            depth: (0..n).map(|_| rng.random_range(-8.0..8.0)).collect(),
            locations: (0..n)
                .map(|_| Location::new(rng.random_range(0.0..1.0), rng.random_range(0.0..0.5)))
                .collect(),
            knots: autoregression_knots(&all, 9, 1.0).unwrap(),
        };
        let k = data.n_spline();
        let params = ResampledParams {
            mu: 3.5,
            alpha: 0.8,
            rho: 0.12,
            beta_depth: -0.03,
            sigma_s: 0.4,
            sigma_l: 0.3,
            beta_lin: -0.1,
            beta_spline: (0..k).map(|_| rng.random_range(-0.3..0.3)).collect(),
            theta2000: data.log_y2000.iter().map(|y| y + rng.random_range(-0.2..0.2)).collect(),
            theta2014: data.log_y2014.iter().map(|y| y + rng.random_range(-0.2..0.2)).collect(),
        };
        (ResampledModel::new(data, ResampledPriors::default()).unwrap(), params)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (model, params) = instance(11, 20);
        let x = params.to_unconstrained();
        let mut g = vec![0.0; x.len()];
        assert!(model.logp_grad(&x, &mut g).is_finite());
        let mut scratch = g.clone();
        let h = 1e-5;
        for i in 0..x.len() {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[i] += h;
            xm[i] -= h;
            let fd = (model.logp_grad(&xp, &mut scratch) - model.logp_grad(&xm, &mut scratch)) / (2.0 * h);
            let rel = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-2);
            assert!(rel < 1e-4, "{}: analytic {} fd {fd}", model.layout().column_names()[i], g[i]);
        }
    }

    #[test]
    fn wide_noise_limit_matches_closed_form() {
        let (model, mut p) = instance(12, 15);
        p.sigma_s = 1e4;
        p.beta_depth = 0.0;
        p.theta2000 = vec![p.mu; 15];
        p.theta2014 = vec![p.mu; 15];
        let obs = model.components(&p).unwrap().observation;
        let d = &model.data;
        let want: f64 = (0..15)
            .map(|i| {
                normal_lpdf(d.log_y2000[i], p.mu, 1e4)
                    + normal_lpdf(d.log_y2014[i], p.mu, 1e4)
                    + normal_lpdf(d.log_y2015[i], p.mu, 1e4)
            })
            .sum();
        assert!((obs - want).abs() < 1e-9 * want.abs());
        assert!((obs - 45.0 * -(1e4f64.ln() + HALF_LN_2PI)).abs() < 1e-3);
    }

    #[test]
    fn gp_term_matches_dense_formula() {
        let (model, p) = instance(13, 6);
        let k = crate::geo_basis::gp_covariance_jittered(&p.gp(), &model.data.locations).unwrap();
        let r = DVector::from_iterator(6, p.theta2000.iter().map(|t| t - p.mu));
        let kinv = k.clone().try_inverse().unwrap();
        let want = -0.5 * (r.transpose() * &kinv * &r)[(0, 0)] - 0.5 * k.determinant().ln() - 6.0 * HALF_LN_2PI;
        let got = model.components(&p).unwrap().gp;
        assert!((got - want).abs() < 1e-8);
    }

    #[test]
    fn deterministic_and_out_of_support() {
        let (model, mut p) = instance(14, 10);
        assert_eq!(
            model.log_density(&p).unwrap().to_bits(),
            model.log_density(&p).unwrap().to_bits()
        );
        p.sigma_l = 0.0;
        assert_eq!(model.log_density(&p).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn no_separate_2015_state() {
        let (model, _) = instance(15, 7);
        let names = model.layout().column_names();
        assert!(names.iter().all(|n| !n.contains("2015")));
        assert_eq!(model.dim(), 7 + model.data.n_spline() + 14);
    }

    #[test]
    fn knots_from_quantiles() {
        let v: Vec<f64> = (0..=100).map(|i| i as f64 / 10.0).collect();
        let k = autoregression_knots(&v, 9, 1.0).unwrap();
        assert_eq!(k.len(), 11);
        assert_eq!(k[0], -1.0);
        assert_eq!(k[10], 11.0);
        assert!((k[5] - 5.0).abs() < 1e-12);
        assert!(autoregression_knots(&[1.0], 9, 1.0).is_err());
    }

    #[test]
    fn zero_spline_is_linear() {
        let knots = [0.0, 1.0, 2.0, 3.0];
        let (f, df) = ResampledModel::spline_change(&knots, 0.0, &[0.0; 6], 1.3);
        assert_eq!((f, df), (0.0, 0.0));
        let (f, df) = ResampledModel::spline_change(&knots, -0.5, &[0.0; 6], 9.0);
        assert_eq!((f, df), (-4.5, -0.5));
    }
}
