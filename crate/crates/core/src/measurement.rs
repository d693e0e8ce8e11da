//! Ordered-logistic calibration of the 9-level field kit.
//!
//! `Pr(w ≤ k | y) = logit⁻¹(c_k + β log y)` for `k = 1..8`, with
//! `Pr(w ≤ 9) = 1`. Categories are indices; the printed kit labels only fix
//! their order.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::{inv_logit, log1p_exp};

pub const N_CATEGORIES: usize = 9;
pub const N_CUTPOINTS: usize = N_CATEGORIES - 1;

/// Printed kit readings in µg/L, in category order 1..9.
pub const KIT_LABELS: [&str; N_CATEGORIES] = ["0", "10", "25", "50", "100", "200", "300", "500", "1000"];

/// Laboratory detection limit (µg/L).
pub const DETECTION_LIMIT: f64 = 5.0;
/// Value substituted for readings below the detection limit.
pub const DETECTION_FLOOR: f64 = 2.5;

#[derive(Debug, Error, PartialEq)]
pub enum CalibrationError {
    #[error("kit category {0} outside 1..9")]
    CategoryOutOfRange(i64),
    #[error("unknown kit label {label:?}; valid labels are {valid}")]
    UnknownLabel { label: String, valid: String },
    #[error("lab value {0} is not finite and non-negative")]
    InvalidLabValue(f64),
    #[error("cutpoints must be 8 finite, strictly increasing values")]
    InvalidCutpoints,
    #[error("need at least 10 calibration pairs, got {0}")]
    TooFewPairs(usize),
    #[error("all pairs fall in a single kit category; the model is unidentifiable")]
    Degenerate,
    #[error("calibration fit did not converge after {iterations} iterations (gradient norm {grad_norm:e})")]
    NotConverged { iterations: usize, grad_norm: f64 },
    #[error("non-finite log concentration")]
    NonFinite,
}

/// Index (1..9) of a printed kit label.
pub fn category_of_label(label: &str) -> Result<u8, CalibrationError> {
    KIT_LABELS
        .iter()
        .position(|l| *l == label.trim())
        .map(|p| p as u8 + 1)
        .ok_or_else(|| CalibrationError::UnknownLabel {
            label: label.to_string(),
            valid: KIT_LABELS.join(", "),
        })
}

fn check_category(w: i64) -> Result<usize, CalibrationError> {
    if (1..=N_CATEGORIES as i64).contains(&w) {
        Ok(w as usize)
    } else {
        Err(CalibrationError::CategoryOutOfRange(w))
    }
}

/// One quality-control sample measured both ways.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationPair {
    pub lab_value: f64,
    pub kit_category: u8,
}

impl CalibrationPair {
    /// Lab values below the detection limit are floored to `DETECTION_FLOOR`.
    pub fn new(lab_value: f64, kit_category: i64) -> Result<Self, CalibrationError> {
        if !(lab_value.is_finite() && lab_value >= 0.0) {
            return Err(CalibrationError::InvalidLabValue(lab_value));
        }
        let w = check_category(kit_category)?;
        let lab_value = if lab_value < DETECTION_LIMIT {
            DETECTION_FLOOR
        } else {
            lab_value
        };
        Ok(Self {
            lab_value,
            kit_category: w as u8,
        })
    }

    pub fn log_lab(&self) -> f64 {
        self.lab_value.ln()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModel")]
pub struct CalibrationModel {
    cutpoints: [f64; N_CUTPOINTS],
    slope: f64,
}

#[derive(Deserialize)]
struct RawModel {
    cutpoints: Vec<f64>,
    slope: f64,
}

impl TryFrom<RawModel> for CalibrationModel {
    type Error = CalibrationError;
    fn try_from(raw: RawModel) -> Result<Self, Self::Error> {
        CalibrationModel::new(&raw.cutpoints, raw.slope)
    }
}

/// Log probability of category `w` and its derivatives with respect to the
/// linear predictors of the two cumulative logits that bound it.
struct CategoryTerm {
    log_p: f64,
    /// `∂ log p / ∂η_w` (zero when w = 9)
    d_upper: f64,
    /// `∂ log p / ∂η_{w-1}` (zero when w = 1)
    d_lower: f64,
    /// second derivatives: (upper, upper), (lower, lower), (upper, lower)
    h_uu: f64,
    h_ll: f64,
    h_ul: f64,
}

fn category_term(cut: &[f64; N_CUTPOINTS], slope: f64, w: usize, x: f64) -> CategoryTerm {
    let upper = (w < N_CATEGORIES).then(|| cut[w - 1] + slope * x);
    let lower = (w > 1).then(|| cut[w - 2] + slope * x);
    let dens = |eta: f64| {
        let f = inv_logit(eta);
        let g = f * (1.0 - f);
        (g, g * (1.0 - 2.0 * f))
    };
    let log_p = match (upper, lower) {
        (Some(u), None) => -log1p_exp(-u),
        (None, Some(l)) => -log1p_exp(l),
        (Some(u), Some(l)) => {
            // subtract on whichever tail keeps the difference well conditioned
            let p = if l > 0.0 {
                inv_logit(-l) - inv_logit(-u)
            } else {
                inv_logit(u) - inv_logit(l)
            };
            p.ln()
        }
        (None, None) => unreachable!("at least one cutpoint bounds every category"),
    };
    let p = log_p.exp();
    let (a, da) = upper.map(dens).unwrap_or((0.0, 0.0));
    let (b, db) = lower.map(dens).unwrap_or((0.0, 0.0));
    CategoryTerm {
        log_p,
        d_upper: a / p,
        d_lower: -b / p,
        h_uu: da / p - (a / p).powi(2),
        h_ll: -db / p - (b / p).powi(2),
        h_ul: a * b / (p * p),
    }
}

impl CalibrationModel {
    pub fn new(cutpoints: &[f64], slope: f64) -> Result<Self, CalibrationError> {
        let ok = cutpoints.len() == N_CUTPOINTS
            && cutpoints.iter().all(|c| c.is_finite())
            && cutpoints.windows(2).all(|w| w[1] > w[0])
            && slope.is_finite();
        if !ok {
            return Err(CalibrationError::InvalidCutpoints);
        }
        let mut c = [0.0; N_CUTPOINTS];
        c.copy_from_slice(cutpoints);
        Ok(Self { cutpoints: c, slope })
    }

    pub fn cutpoints(&self) -> &[f64; N_CUTPOINTS] {
        &self.cutpoints
    }

    pub fn slope(&self) -> f64 {
        self.slope
    }

    /// `Pr(w ≤ k)` for `k = 1..8`.
    pub fn cumulative(&self, log_y: f64) -> [f64; N_CUTPOINTS] {
        self.cutpoints.map(|c| inv_logit(c + self.slope * log_y))
    }

    /// Category probabilities `p_1..p_9`.
    pub fn kit_category_probabilities(&self, log_y: f64) -> Result<[f64; N_CATEGORIES], CalibrationError> {
        if !log_y.is_finite() {
            return Err(CalibrationError::NonFinite);
        }
        let mut p = [0.0; N_CATEGORIES];
        for (k, pk) in p.iter_mut().enumerate() {
            *pk = category_term(&self.cutpoints, self.slope, k + 1, log_y).log_p.exp();
        }
        Ok(p)
    }

    /// `log Pr(w | log_y)`.
    pub fn kit_log_likelihood(&self, w: i64, log_y: f64) -> Result<f64, CalibrationError> {
        Ok(self.kit_log_likelihood_grad(w, log_y)?.0)
    }

    /// `log Pr(w | log_y)` and its derivative in `log_y`.
    pub fn kit_log_likelihood_grad(&self, w: i64, log_y: f64) -> Result<(f64, f64), CalibrationError> {
        let w = check_category(w)?;
        if !log_y.is_finite() {
            return Err(CalibrationError::NonFinite);
        }
        Ok(self.term_unchecked(w, log_y))
    }

    /// Hot-path variant for the samplers: `w` must already be in 1..9.
    pub(crate) fn term_unchecked(&self, w: usize, log_y: f64) -> (f64, f64) {
        let t = category_term(&self.cutpoints, self.slope, w, log_y);
        (t.log_p, self.slope * (t.d_upper + t.d_lower))
    }

    /// Draws a kit category for a latent log concentration.
    pub fn sample_category<R: Rng + ?Sized>(&self, log_y: f64, rng: &mut R) -> u8 {
        let u: f64 = rng.random();
        let cum = self.cumulative(log_y);
        cum.iter().position(|&f| u <= f).map_or(N_CATEGORIES as u8, |k| k as u8 + 1)
    }

    /// Total log-likelihood of a calibration set.
    pub fn log_likelihood(&self, pairs: &[CalibrationPair]) -> f64 {
        pairs
            .iter()
            .map(|p| category_term(&self.cutpoints, self.slope, p.kit_category as usize, p.log_lab()).log_p)
            .sum()
    }
}

/// Result of fitting the calibration model.
#[derive(Debug, Clone, Serialize)]
pub struct CalibrationFit {
    pub model: CalibrationModel,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    /// Asymptotic standard errors of `(c_1..c_8, β)` from the observed
    /// information.
    pub standard_errors: Vec<f64>,
    /// Row-major 9×9 covariance matching `standard_errors`.
    pub covariance: Vec<f64>,
}

const MAX_ITER: usize = 200;
const GRAD_TOL: f64 = 1e-8;
const DIM: usize = N_CUTPOINTS + 1;

/// Gradient and Hessian of the log-likelihood in natural `(c, β)` coordinates.
fn natural_derivatives(
    cut: &[f64; N_CUTPOINTS],
    slope: f64,
    pairs: &[CalibrationPair],
) -> (f64, DVector<f64>, DMatrix<f64>) {
    let mut ll = 0.0;
    let mut g = DVector::zeros(DIM);
    let mut h = DMatrix::zeros(DIM, DIM);
    let b = N_CUTPOINTS;
    for pair in pairs {
        let w = pair.kit_category as usize;
        let x = pair.log_lab();
        let t = category_term(cut, slope, w, x);
        ll += t.log_p;
        // parameter indices touched and d(eta)/d(theta)
        let up = (w < N_CATEGORIES).then_some(w - 1);
        let lo = (w > 1).then(|| w - 2);
        let dl = [(up, t.d_upper), (lo, t.d_lower)];
        for (idx, d) in dl {
            if let Some(i) = idx {
                g[i] += d;
                g[b] += d * x;
            }
        }
        let mut add = |i: usize, j: usize, v: f64| {
            h[(i, j)] += v;
            if i != j {
                h[(j, i)] += v;
            }
        };
        if let Some(u) = up {
            add(u, u, t.h_uu);
            add(u, b, t.h_uu * x);
            add(b, b, t.h_uu * x * x);
        }
        if let Some(l) = lo {
            add(l, l, t.h_ll);
            add(l, b, t.h_ll * x);
            add(b, b, t.h_ll * x * x);
        }
        if let (Some(u), Some(l)) = (up, lo) {
            add(u, l, t.h_ul);
            add(u, b, t.h_ul * x);
            add(l, b, t.h_ul * x);
            add(b, b, 2.0 * t.h_ul * x * x);
        }
    }
    (ll, g, h)
}

/// Unconstrained coordinates: `c_1`, `log(c_k - c_{k-1})`, `β`.
fn to_natural(u: &DVector<f64>) -> ([f64; N_CUTPOINTS], f64) {
    let mut c = [0.0; N_CUTPOINTS];
    c[0] = u[0];
    for k in 1..N_CUTPOINTS {
        c[k] = c[k - 1] + u[k].exp();
    }
    (c, u[N_CUTPOINTS])
}

fn to_unconstrained(c: &[f64; N_CUTPOINTS], slope: f64) -> DVector<f64> {
    let mut u = DVector::zeros(DIM);
    u[0] = c[0];
    for k in 1..N_CUTPOINTS {
        u[k] = (c[k] - c[k - 1]).ln();
    }
    u[N_CUTPOINTS] = slope;
    u
}

/// Gradient and Hessian of the log-likelihood in unconstrained coordinates.
fn unconstrained_derivatives(u: &DVector<f64>, pairs: &[CalibrationPair]) -> (f64, DVector<f64>, DMatrix<f64>) {
    let (c, slope) = to_natural(u);
    let (ll, g, h) = natural_derivatives(&c, slope, pairs);
    // Jacobian dc/du
    let mut jac = DMatrix::zeros(DIM, DIM);
    for k in 0..N_CUTPOINTS {
        jac[(k, 0)] = 1.0;
        for j in 1..=k {
            jac[(k, j)] = u[j].exp();
        }
    }
    jac[(N_CUTPOINTS, N_CUTPOINTS)] = 1.0;
    let gu = jac.transpose() * &g;
    let mut hu = jac.transpose() * h * &jac;
    // curvature of the exp map: d²c_k/du_j² = exp(u_j) for 1 <= j <= k
    for j in 1..N_CUTPOINTS {
        let tail: f64 = (j..N_CUTPOINTS).map(|k| g[k]).sum();
        hu[(j, j)] += tail * u[j].exp();
    }
    (ll, gu, hu)
}

fn initial_guess(pairs: &[CalibrationPair]) -> ([f64; N_CUTPOINTS], f64) {
    // empirical cumulative logits with a zero slope, lightly smoothed so
    // empty categories still give strictly increasing cutpoints
    let n = pairs.len() as f64;
    let mut counts = [0.0f64; N_CATEGORIES];
    for p in pairs {
        counts[p.kit_category as usize - 1] += 1.0;
    }
    let mut cum = 0.0;
    let mut c = [0.0; N_CUTPOINTS];
    for k in 0..N_CUTPOINTS {
        cum += counts[k] + 0.5;
        let f = cum / (n + 0.5 * N_CATEGORIES as f64);
        c[k] = (f / (1.0 - f)).ln();
    }
    (c, 0.0)
}

/// Maximum-likelihood (flat-prior MAP) fit by damped Newton.
pub fn fit_calibration(pairs: &[CalibrationPair]) -> Result<CalibrationFit, CalibrationError> {
    if pairs.len() < 10 {
        return Err(CalibrationError::TooFewPairs(pairs.len()));
    }
    let first = pairs[0].kit_category;
    if pairs.iter().all(|p| p.kit_category == first) {
        return Err(CalibrationError::Degenerate);
    }
    let (c0, b0) = initial_guess(pairs);
    let mut u = to_unconstrained(&c0, b0);
    let (mut ll, mut g, mut h) = unconstrained_derivatives(&u, pairs);
    let mut lambda = 1e-6;
    let mut iterations = 0;
    while g.norm() > GRAD_TOL {
        if iterations == MAX_ITER {
            return Err(CalibrationError::NotConverged {
                iterations,
                grad_norm: g.norm(),
            });
        }
        iterations += 1;
        // Levenberg-damped Newton on the negative log-likelihood
        let neg_h = -&h;
        let mut accepted = false;
        for _ in 0..60 {
            let mut damped = neg_h.clone();
            let scale = neg_h.diagonal().abs().max().max(1.0);
            for i in 0..DIM {
                damped[(i, i)] += lambda * scale;
            }
            let Some(chol) = damped.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let step = chol.solve(&g);
            let cand = &u + &step;
            let (c, s) = to_natural(&cand);
            let cand_ll = CalibrationModel { cutpoints: c, slope: s }.log_likelihood(pairs);
            if cand_ll.is_finite() && cand_ll >= ll - 1e-12 * ll.abs() {
                u = cand;
                lambda = (lambda * 0.1).max(1e-12);
                accepted = true;
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            return Err(CalibrationError::NotConverged {
                iterations,
                grad_norm: g.norm(),
            });
        }
        (ll, g, h) = unconstrained_derivatives(&u, pairs);
    }

    let (cut, slope) = to_natural(&u);
    let (_, _, hn) = natural_derivatives(&cut, slope, pairs);
    let cov = (-hn).try_inverse().unwrap_or_else(|| DMatrix::from_element(DIM, DIM, f64::NAN));
    let standard_errors = (0..DIM).map(|i| cov[(i, i)].sqrt()).collect();
    let covariance = (0..DIM).flat_map(|i| (0..DIM).map(move |j| (i, j))).map(|(i, j)| cov[(i, j)]).collect();
    Ok(CalibrationFit {
        model: CalibrationModel::new(&cut, slope)?,
        log_likelihood: ll,
        iterations,
        grad_norm: g.norm(),
        standard_errors,
        covariance,
    })
}

/// Draws calibration pairs for the given lab values.
pub fn simulate_pairs<R: Rng + ?Sized>(model: &CalibrationModel, lab_values: &[f64], rng: &mut R) -> Vec<CalibrationPair> {
    lab_values
        .iter()
        .map(|&y| CalibrationPair {
            lab_value: y,
            kit_category: model.sample_category(y.ln(), rng),
        })
        .collect()
}

/// Per-category confusion counts: rows are observed kit categories, columns
/// the model's most probable category at each pair's lab value.
pub fn confusion_table(model: &CalibrationModel, pairs: &[CalibrationPair]) -> [[usize; N_CATEGORIES]; N_CATEGORIES] {
    let mut table = [[0usize; N_CATEGORIES]; N_CATEGORIES];
    for p in pairs {
        let probs = model
            .kit_category_probabilities(p.log_lab())
            .expect("pairs hold finite lab values");
        let mode = probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, _)| k)
            .unwrap();
        table[p.kit_category as usize - 1][mode] += 1;
    }
    table
}
