//! Posterior summaries: well-level predictions and exceedance
//! probabilities, mixing-coefficient curves, predictive change, overall
//! trend statistics, predictive checks and the autoregression spline.
//!
//! Quantiles are type-7 (linear interpolation). Central intervals are
//! (2.5%, 97.5%) and (25%, 75%).

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data_io::PanelWell;
use crate::models::{MixingVariant, ResampledModel};
use crate::sampler::{DrawsError, PosteriorDraws};
use crate::stats::{mean, quantile_sorted, sd};

/// Safety thresholds in µg/L.
pub const DEFAULT_THRESHOLDS: [f64; 3] = [10.0, 50.0, 100.0];

#[derive(Debug, Error)]
pub enum SummaryError {
    #[error(transparent)]
    Draws(#[from] DrawsError),
    #[error("{0}")]
    Invalid(String),
    #[error("writing report: {0}")]
    Io(String),
}

type Result<T> = std::result::Result<T, SummaryError>;

fn io(e: impl std::fmt::Display) -> SummaryError {
    SummaryError::Io(e.to_string())
}

/// Noise stream for draw `r`, independent of the sampler's streams.
pub fn draw_rng(seed: u64, r: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5851_f42d_4c95_7f2d);
    rng.set_stream(r as u64);
    rng
}

fn std_normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Posterior mean with a central interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    /// Mean and central `level` interval.
    pub fn of(values: &[f64], level: f64) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let a = (1.0 - level) / 2.0;
        Self {
            mean: mean(values),
            lower: quantile_sorted(&v, a),
            upper: quantile_sorted(&v, 1.0 - a),
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lower && x <= self.upper
    }
}

/// Mean plus 50% and 95% central bands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub x: f64,
    pub mean: f64,
    pub q025: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub q975: f64,
}

impl Band {
    pub fn of(x: f64, mut values: Vec<f64>) -> Self {
        let m = mean(&values);
        values.sort_by(f64::total_cmp);
        let q = |p| quantile_sorted(&values, p);
        Self {
            x,
            mean: m,
            q025: q(0.025),
            q25: q(0.25),
            q50: q(0.5),
            q75: q(0.75),
            q975: q(0.975),
        }
    }
}

pub fn write_bands<W: Write>(out: W, x_name: &str, bands: &[Band]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([x_name, "mean", "q025", "q25", "q50", "q75", "q975"]).map_err(io)?;
    for b in bands {
        w.write_record([b.x, b.mean, b.q025, b.q25, b.q50, b.q75, b.q975].map(|v| v.to_string()))
            .map_err(io)?;
    }
    w.flush().map_err(io)
}

fn block(draws: &PosteriorDraws, name: &str) -> Result<std::ops::Range<usize>> {
    Ok(draws.block_range(name)?)
}

fn scalar_index(draws: &PosteriorDraws, name: &str) -> Result<usize> {
    Ok(draws.block_range(name)?.start)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WellPrediction {
    /// Posterior mean of exp(η₂) in µg/L.
    pub mean: f64,
    pub q10: f64,
    pub q90: f64,
    /// Pr(exp(η₂) > T), one per threshold.
    pub exceedance: Vec<f64>,
    /// sqrt(p(1−p)/n_draws), one per threshold.
    pub mc_se: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExceedanceReport {
    pub thresholds: Vec<f64>,
    pub wells: Vec<WellPrediction>,
}

impl ExceedanceReport {
    /// One row per well; `well_ids` must match the well count when given.
    pub fn write_csv<W: Write>(&self, out: W, well_ids: Option<&[String]>) -> Result<()> {
        if let Some(ids) = well_ids {
            if ids.len() != self.wells.len() {
                return Err(SummaryError::Invalid(format!(
                    "{} well ids for {} wells",
                    ids.len(),
                    self.wells.len()
                )));
            }
        }
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["well".to_string(), "mean_ugL".into(), "q10_ugL".into(), "q90_ugL".into()];
        for t in &self.thresholds {
            header.push(format!("p_exceed_{t}"));
        }
        for t in &self.thresholds {
            header.push(format!("mc_se_{t}"));
        }
        w.write_record(&header).map_err(io)?;
        for (i, p) in self.wells.iter().enumerate() {
            let id = well_ids.map_or_else(|| (i + 1).to_string(), |ids| ids[i].clone());
            let mut row = vec![id, p.mean.to_string(), p.q10.to_string(), p.q90.to_string()];
            row.extend(p.exceedance.iter().map(|v| v.to_string()));
            row.extend(p.mc_se.iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// Per-well statistics of exp(η₂) over draws.
pub fn individual_predictions(draws: &PosteriorDraws, thresholds: &[f64]) -> Result<ExceedanceReport> {
    let eta = block(draws, "eta2")?;
    if thresholds.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
        return Err(SummaryError::Invalid("thresholds must be positive".into()));
    }
    let n = draws.n_rows() as f64;
    let wells = eta
        .map(|j| {
            let mut y: Vec<f64> = draws.column(j).iter().map(|v| v.exp()).collect();
            let m = mean(&y);
            y.sort_by(f64::total_cmp);
            let exceedance: Vec<f64> = thresholds
                .iter()
                .map(|&t| y.iter().filter(|&&v| v > t).count() as f64 / n)
                .collect();
            WellPrediction {
                mean: m,
                q10: quantile_sorted(&y, 0.1),
                q90: quantile_sorted(&y, 0.9),
                mc_se: exceedance.iter().map(|p| (p * (1.0 - p) / n).sqrt()).collect(),
                exceedance,
            }
        })
        .collect();
    Ok(ExceedanceReport {
        thresholds: thresholds.to_vec(),
        wells,
    })
}

/// β_δ + γ(θ) over a θ grid.
pub fn mixing_coefficient_curve(draws: &PosteriorDraws, variant: MixingVariant, theta_grid: &[f64]) -> Result<Vec<Band>> {
    let (bd, ay, at) = (
        scalar_index(draws, "beta_delta")?,
        scalar_index(draws, "alpha_y")?,
        scalar_index(draws, "alpha_theta")?,
    );
    Ok(theta_grid
        .iter()
        .map(|&theta| {
            let v = draws
                .rows()
                .map(|r| r[bd] + variant.gamma(r[ay], r[at], theta).0)
                .collect();
            Band::of(theta, v)
        })
        .collect())
}

/// exp(α_δ + (β_δ + γ(θ₁))δ) over a δ grid at fixed θ₁; with noise, one
/// N(0, σ_obs) and one N(0, τ) term per draw are added in the exponent.
pub fn predictive_change(
    draws: &PosteriorDraws,
    variant: MixingVariant,
    theta1: f64,
    delta_grid: &[f64],
    include_noise: bool,
    seed: u64,
) -> Result<Vec<Band>> {
    let idx: Vec<usize> = ["alpha_delta", "beta_delta", "alpha_y", "alpha_theta", "sigma_obs", "tau"]
        .iter()
        .map(|n| scalar_index(draws, n))
        .collect::<Result<_>>()?;
    let per_draw: Vec<(f64, f64, f64)> = draws
        .rows()
        .enumerate()
        .map(|(i, r)| {
            let coef = r[idx[1]] + variant.gamma(r[idx[2]], r[idx[3]], theta1).0;
            let noise = if include_noise {
                let mut rng = draw_rng(seed, i);
                r[idx[4]] * std_normal(&mut rng) + r[idx[5]] * std_normal(&mut rng)
            } else {
                0.0
            };
            (r[idx[0]], coef, noise)
        })
        .collect();
    Ok(delta_grid
        .iter()
        .map(|&d| Band::of(d, per_draw.iter().map(|(a, c, e)| (a + c * d + e).exp()).collect()))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendReport {
    /// exp(mean(θ₂ − θ₁))
    pub mean_multiplicative_change: Interval,
    /// exp(median(θ₂ − θ₁))
    pub median_multiplicative_change: Interval,
    /// mean of exp(θ₁ + depth term + noise), µg/L
    pub mean_level_first: Interval,
    /// mean of exp(η₂), µg/L
    pub mean_level_second: Interval,
    /// paired difference of the two levels, µg/L
    pub mean_linear_change: Interval,
    /// Fraction of wells whose posterior-mean log change is positive.
    pub fraction_increasing: f64,
    /// mean of exp(η₂)(1 − exp(α_δ)), µg/L
    pub intercept_change: Interval,
    /// Multiplicative change in concentration per 10 m of depth.
    pub depth_effect_per_10m: Interval,
}

/// Overall-trend statistics at the survey-2 wells. `depths` are in metres.
pub fn trend_report(draws: &PosteriorDraws, depths: &[f64], d0: f64, seed: u64) -> Result<TrendReport> {
    let n2 = depths.len();
    let t1 = draws.require_block("theta1", n2)?;
    let t2 = draws.require_block("theta2", n2)?;
    let eta = draws.require_block("eta2", n2)?;
    let (bd, so, ad) = (
        scalar_index(draws, "beta_depth")?,
        scalar_index(draws, "sigma_obs")?,
        scalar_index(draws, "alpha_delta")?,
    );
    if n2 == 0 {
        return Err(SummaryError::Invalid("no survey-2 wells".into()));
    }
    let nf = n2 as f64;
    let mut mult = Vec::new();
    let mut med = Vec::new();
    let mut first = Vec::new();
    let mut second = Vec::new();
    let mut change = Vec::new();
    let mut intercept = Vec::new();
    let mut depth = Vec::new();
    let mut sum_change = vec![0.0; n2];
    for (i, r) in draws.rows().enumerate() {
        let mut rng = draw_rng(seed, i);
        let mut d: Vec<f64> = (0..n2).map(|k| r[t2.start + k] - r[t1.start + k]).collect();
        for (s, v) in sum_change.iter_mut().zip(&d) {
            *s += v;
        }
        mult.push(mean(&d).exp());
        d.sort_by(f64::total_cmp);
        med.push(quantile_sorted(&d, 0.5).exp());
        let mut l1 = 0.0;
        let mut l2 = 0.0;
        let mut ic = 0.0;
        for k in 0..n2 {
            let y1 = (r[t1.start + k] + r[bd] * (depths[k] - d0) + r[so] * std_normal(&mut rng)).exp();
            let y2 = r[eta.start + k].exp();
            l1 += y1;
            l2 += y2;
            ic += y2 * (1.0 - r[ad].exp());
        }
        first.push(l1 / nf);
        second.push(l2 / nf);
        change.push((l2 - l1) / nf);
        intercept.push(ic / nf);
        depth.push((10.0 * r[bd]).exp());
    }
    let up = sum_change.iter().filter(|&&s| s > 0.0).count() as f64 / nf;
    Ok(TrendReport {
        mean_multiplicative_change: Interval::of(&mult, 0.95),
        median_multiplicative_change: Interval::of(&med, 0.95),
        mean_level_first: Interval::of(&first, 0.95),
        mean_level_second: Interval::of(&second, 0.95),
        mean_linear_change: Interval::of(&change, 0.95),
        fraction_increasing: up,
        intercept_change: Interval::of(&intercept, 0.95),
        depth_effect_per_10m: Interval::of(&depth, 0.95),
    })
}

/// Panel statistics compared by the predictive check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PanelStatistics {
    pub mean_log_change: f64,
    pub sd_log_change: f64,
    /// µg/L
    pub mean_linear_change: f64,
}

impl PanelStatistics {
    pub fn from_levels(first: &[f64], second: &[f64]) -> Self {
        let log_change: Vec<f64> = first.iter().zip(second).map(|(a, b)| b.ln() - a.ln()).collect();
        let lin: Vec<f64> = first.iter().zip(second).map(|(a, b)| b - a).collect();
        Self {
            mean_log_change: mean(&log_change),
            sd_log_change: sd(&log_change),
            mean_linear_change: mean(&lin),
        }
    }

    /// Observed statistics of a panel: 2000 versus 2014 lab values.
    pub fn observed(panel: &[PanelWell]) -> Self {
        let a: Vec<f64> = panel.iter().map(|w| w.lab[0]).collect();
        let b: Vec<f64> = panel.iter().map(|w| w.lab[1]).collect();
        Self::from_levels(&a, &b)
    }

    fn as_array(&self) -> [f64; 3] {
        [self.mean_log_change, self.sd_log_change, self.mean_linear_change]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpcStatistic {
    pub name: String,
    pub observed: f64,
    pub predictive: Vec<f64>,
    /// Pr(predictive > observed) + ½ Pr(predictive = observed)
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpcReport {
    pub subsample_size: usize,
    pub statistics: Vec<PpcStatistic>,
}

impl PpcReport {
    pub fn p_values(&self) -> Vec<f64> {
        self.statistics.iter().map(|s| s.p_value).collect()
    }

    /// Per-draw predictive statistics, one row per draw.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["draw".to_string()];
        header.extend(self.statistics.iter().map(|s| s.name.clone()));
        w.write_record(&header).map_err(io)?;
        let n = self.statistics.first().map_or(0, |s| s.predictive.len());
        for i in 0..n {
            let mut row = vec![i.to_string()];
            row.extend(self.statistics.iter().map(|s| s.predictive[i].to_string()));
            w.write_record(&row).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

pub const PPC_STATISTICS: [&str; 3] = ["mean_log_change", "sd_log_change", "mean_linear_change"];

/// Tail probability of `observed` under the predictive sample.
pub fn tail_p_value(predictive: &[f64], observed: f64) -> f64 {
    let above = predictive.iter().filter(|&&v| v > observed).count() as f64;
    let tied = predictive.iter().filter(|&&v| v == observed).count() as f64;
    (above + 0.5 * tied) / predictive.len() as f64
}

/// Per draw: lab-noise replicates at all survey-2 wells (noise indexed by
/// well), then a fresh uniform subsample of `subsample_size` wells; the
/// statistics of the subsample form the predictive distribution.
pub fn ppc_subsample(
    draws: &PosteriorDraws,
    subsample_size: usize,
    depths: &[f64],
    d0: f64,
    observed: &PanelStatistics,
    seed: u64,
) -> Result<PpcReport> {
    let n2 = depths.len();
    if subsample_size == 0 || subsample_size > n2 {
        return Err(SummaryError::Invalid(format!(
            "subsample size {subsample_size} must lie in 1..={n2}"
        )));
    }
    let t1 = draws.require_block("theta1", n2)?;
    let t2 = draws.require_block("theta2", n2)?;
    let (bd, so) = (scalar_index(draws, "beta_depth")?, scalar_index(draws, "sigma_obs")?);
    let mut pred: [Vec<f64>; 3] = Default::default();
    for (i, r) in draws.rows().enumerate() {
        let mut rng = draw_rng(seed, i);
        let mut first = Vec::with_capacity(n2);
        let mut second = Vec::with_capacity(n2);
        for k in 0..n2 {
            let shift = r[bd] * (depths[k] - d0);
            first.push((r[t1.start + k] + shift + r[so] * std_normal(&mut rng)).exp());
            second.push((r[t2.start + k] + shift + r[so] * std_normal(&mut rng)).exp());
        }
        let pick = if subsample_size == n2 {
            (0..n2).collect()
        } else {
            rand::seq::index::sample(&mut rng, n2, subsample_size).into_vec()
        };
        let a: Vec<f64> = pick.iter().map(|&k| first[k]).collect();
        let b: Vec<f64> = pick.iter().map(|&k| second[k]).collect();
        for (p, v) in pred.iter_mut().zip(PanelStatistics::from_levels(&a, &b).as_array()) {
            p.push(v);
        }
    }
    let statistics = PPC_STATISTICS
        .iter()
        .zip(observed.as_array())
        .zip(pred)
        .map(|((name, obs), predictive)| PpcStatistic {
            name: name.to_string(),
            observed: obs,
            p_value: tail_p_value(&predictive, obs),
            predictive,
        })
        .collect();
    Ok(PpcReport {
        subsample_size,
        statistics,
    })
}

/// Multiplicative factor `exp(factor · (h/extent)²)` relating a Laplacian
/// unit to a concentration ratio across a distance `h`.
pub fn laplacian_scale(h: f64, east_extent: f64, factor: f64) -> f64 {
    (factor * (h / east_extent).powi(2)).exp()
}

/// Autoregression change bands and forward-simulated exceedance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineCurve {
    pub change: Vec<Band>,
    pub thresholds: Vec<f64>,
    /// `exceedance[g][t]`: Pr(2014 measurement > T | 2000 level at grid g).
    pub exceedance: Vec<Vec<f64>>,
}

impl SplineCurve {
    pub fn write_exceedance_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["theta".to_string(), "initial_ugL".into()];
        header.extend(self.thresholds.iter().map(|t| format!("p_exceed_{t}")));
        w.write_record(&header).map_err(io)?;
        for (b, p) in self.change.iter().zip(&self.exceedance) {
            let mut row = vec![b.x.to_string(), b.x.exp().to_string()];
            row.extend(p.iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// Evaluates `β_lin θ + Σ β_l B_l(θ)` per draw over a grid of log initial
/// levels. Exceedance uses `sims_per_draw` forward simulations of
/// θ + change + N(0, σ_L) + N(0, σ_S) per draw and grid point.
pub fn spline_change_curve(
    draws: &PosteriorDraws,
    knots: &[f64],
    theta_grid: &[f64],
    thresholds: &[f64],
    sims_per_draw: usize,
    seed: u64,
) -> Result<SplineCurve> {
    let spline = draws.require_block("beta_spline", knots.len() + 2)?;
    let (bl, sl, ss) = (
        scalar_index(draws, "beta_lin")?,
        scalar_index(draws, "sigma_l")?,
        scalar_index(draws, "sigma_s")?,
    );
    if knots.len() < 2 {
        return Err(SummaryError::Invalid("need at least two knots".into()));
    }
    let n_rows = draws.n_rows();
    let mut values = vec![vec![0.0; n_rows]; theta_grid.len()];
    let mut counts = vec![vec![0usize; thresholds.len()]; theta_grid.len()];
    let log_t: Vec<f64> = thresholds.iter().map(|t| t.ln()).collect();
    for (i, r) in draws.rows().enumerate() {
        let mut rng = draw_rng(seed, i);
        let beta = &r[spline.clone()];
        for (g, &theta) in theta_grid.iter().enumerate() {
            let f = ResampledModel::spline_change(knots, r[bl], beta, theta).0;
            values[g][i] = f;
            for _ in 0..sims_per_draw {
                let y = theta + f + r[sl] * std_normal(&mut rng) + r[ss] * std_normal(&mut rng);
                for (c, lt) in counts[g].iter_mut().zip(&log_t) {
                    if y > *lt {
                        *c += 1;
                    }
                }
            }
        }
    }
    let total = (n_rows * sims_per_draw).max(1) as f64;
    Ok(SplineCurve {
        change: theta_grid
            .iter()
            .zip(values)
            .map(|(&x, v)| Band::of(x, v))
            .collect(),
        thresholds: thresholds.to_vec(),
        exceedance: counts
            .into_iter()
            .map(|c| c.into_iter().map(|k| k as f64 / total).collect())
            .collect(),
    })
}

/// Evenly spaced grid from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{BlanketParams, ParamLayout, ResampledParams};
    use crate::stats::normal_cdf;
    use proptest::prelude::*;

    fn blanket_draws(rows: &[BlanketParams], theta1: &[Vec<f64>], delta: &[Vec<f64>]) -> PosteriorDraws {
        let l = rows[0].beta.len();
        let n2 = rows[0].theta2.len();
        let layout = BlanketParams::output_layout(l, n2);
        let data: Vec<Vec<f64>> = rows
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut v = p.to_vec();
                v.extend(&theta1[i]);
                v.extend(&delta[i]);
                v
            })
            .collect();
        PosteriorDraws::from_rows(layout, &data).unwrap()
    }

    fn point(n2: usize) -> BlanketParams {
        let mut p = BlanketParams::zeros(2, n2);
        p.sigma_obs = 0.5;
        p.tau = 0.3;
        p
    }

    fn eta_draws(values: &[f64]) -> PosteriorDraws {
        let layout = ParamLayout::new().vector("eta2", 1);
        let rows: Vec<Vec<f64>> = values.iter().map(|v| vec![*v]).collect();
        PosteriorDraws::from_rows(layout, &rows).unwrap()
    }

    #[test]
    fn degenerate_prediction() {
        let d = eta_draws(&[60f64.ln(); 20]);
        let r = individual_predictions(&d, &DEFAULT_THRESHOLDS).unwrap();
        let w = &r.wells[0];
        assert_eq!(w.exceedance, vec![1.0, 1.0, 0.0]);
        assert!((w.mean - 60.0).abs() < 1e-9);
        assert_eq!(w.q10, w.q90);
        assert_eq!(w.mc_se, vec![0.0; 3]);
    }

    #[test]
    fn symmetric_draws_at_threshold() {
        let t = 50f64.ln();
        let v: Vec<f64> = (0..1000).map(|i| t + if i % 2 == 0 { 0.3 } else { -0.3 }).collect();
        let r = individual_predictions(&eta_draws(&v), &[50.0]).unwrap();
        assert_eq!(r.wells[0].exceedance[0], 0.5);
    }

    #[test]
    fn lognormal_tail() {
        let (m, s) = (3.5, 0.8);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v: Vec<f64> = (0..1000).map(|_| m + s * std_normal(&mut rng)).collect();
        let r = individual_predictions(&eta_draws(&v), &DEFAULT_THRESHOLDS).unwrap();
        for (k, &t) in DEFAULT_THRESHOLDS.iter().enumerate() {
            let p = 1.0 - normal_cdf((t.ln() - m) / s);
            let se = (p * (1.0 - p) / 1000.0).sqrt();
            assert!((r.wells[0].exceedance[k] - p).abs() < 2.0 * se, "T={t}");
        }
    }

    #[test]
    fn missing_eta_block() {
        let d = PosteriorDraws::from_rows(ParamLayout::new().scalar("x"), &[vec![1.0]]).unwrap();
        assert!(matches!(
            individual_predictions(&d, &DEFAULT_THRESHOLDS),
            Err(SummaryError::Draws(DrawsError::MissingBlock(_)))
        ));
    }

    #[test]
    fn exceedance_csv_columns() {
        let r = individual_predictions(&eta_draws(&[1.0, 2.0]), &DEFAULT_THRESHOLDS).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf, None).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("well,mean_ugL,q10_ugL,q90_ugL,p_exceed_10,p_exceed_50,p_exceed_100,"));
    }

    #[test]
    fn mixing_curves() {
        let mut rows = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let mut p = point(1);
            p.beta_delta = std_normal(&mut rng);
            p.alpha_y = std_normal(&mut rng);
            p.alpha_theta = std_normal(&mut rng);
            rows.push(p);
        }
        let z = vec![vec![0.0]; 200];
        let d = blanket_draws(&rows, &z, &z);
        let grid = linspace(0.0, 6.0, 7);
        let flat = mixing_coefficient_curve(&d, MixingVariant::Constant, &grid).unwrap();
        let bd = Band::of(0.0, rows.iter().map(|p| p.beta_delta).collect());
        for b in &flat {
            assert_eq!((b.mean, b.q025, b.q975), (bd.mean, bd.q025, bd.q975));
        }
        // brute-force quantiles over the draw × grid array
        let bands = mixing_coefficient_curve(&d, MixingVariant::ExpPlusLinear, &grid).unwrap();
        for (g, &theta) in grid.iter().enumerate() {
            let mut v: Vec<f64> = rows
                .iter()
                .map(|p| p.beta_delta + p.alpha_y * (theta / 2.0).exp() + p.alpha_theta * theta)
                .collect();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for (p, got) in [(0.025, bands[g].q025), (0.25, bands[g].q25), (0.75, bands[g].q75), (0.975, bands[g].q975)] {
                let h = 199.0 * p;
                let lo = h as usize;
                let want = v[lo] + (h - lo as f64) * (v[(lo + 1).min(199)] - v[lo]);
                assert!((got - want).abs() < 1e-12);
            }
        }

        let mut p = point(1);
        p.alpha_y = 1.0;
        let d = blanket_draws(&[p], &z[..1], &z[..1]);
        for b in mixing_coefficient_curve(&d, MixingVariant::ExpPlusLinear, &grid).unwrap() {
            assert_eq!(b.mean, (b.x / 2.0).exp());
        }
    }

    #[test]
    fn predictive_change_null_and_noise() {
        let z = vec![vec![0.0]; 1];
        let d = blanket_draws(&[point(1)], &z, &z);
        for b in predictive_change(&d, MixingVariant::ExpPlusLinear, 100f64.ln(), &[0.0, 0.5], false, 1).unwrap() {
            assert_eq!((b.mean, b.q025, b.q975), (1.0, 1.0, 1.0));
        }

        let n = 20000;
        let rows = vec![point(1); n];
        let zz = vec![vec![0.0]; n];
        let d = blanket_draws(&rows, &zz, &zz);
        let b = &predictive_change(&d, MixingVariant::ExpPlusLinear, 4.0, &[0.0], true, 7).unwrap()[0];
        let s = (0.5f64.powi(2) + 0.3f64.powi(2)).sqrt();
        for (got, z) in [(b.q025, -1.959964), (b.q25, -0.674490), (b.q75, 0.674490), (b.q975, 1.959964)] {
            assert!((got.ln() / s - z).abs() < 0.05, "{got} vs {z}");
        }

        // monotone in δ for a fixed-sign coefficient
        let mut p = point(1);
        p.beta_delta = 0.4;
        let d = blanket_draws(&[p], &z, &z);
        let bands = predictive_change(&d, MixingVariant::ExpPlusLinear, 250f64.ln(), &linspace(-1.0, 1.0, 9), false, 1).unwrap();
        assert!(bands.windows(2).all(|w| w[1].mean > w[0].mean));
    }

    #[test]
    fn trend_null_change() {
        let n2 = 50;
        let n = 4000;
        let theta1: Vec<f64> = (0..n2).map(|i| 3.0 + 0.02 * i as f64).collect();
        let mut p = point(n2);
        p.theta2 = theta1.clone();
        p.eta2 = theta1.clone();
        let rows = vec![p; n];
        let d = blanket_draws(&rows, &vec![theta1.clone(); n], &vec![vec![0.0; n2]; n]);
        let depths = vec![12.0; n2];
        let r = trend_report(&d, &depths, 12.0, 3).unwrap();
        assert_eq!(r.mean_multiplicative_change.mean, 1.0);
        assert_eq!(r.median_multiplicative_change.lower, 1.0);
        let base = theta1.iter().map(|t| t.exp()).sum::<f64>() / n2 as f64;
        // survey-1 level carries the lognormal mean shift exp(σ²/2)
        let want = base * (0.125f64).exp();
        assert!((r.mean_level_first.mean / want - 1.0).abs() < 0.01);
        assert!((r.mean_linear_change.mean - (base - want)).abs() < 0.01 * base);
        assert_eq!(r.intercept_change.mean, 0.0);
        assert!(r.mean_multiplicative_change.contains(r.mean_multiplicative_change.mean));
    }

    #[test]
    fn trend_requires_blocks() {
        let d = eta_draws(&[1.0]);
        assert!(trend_report(&d, &[10.0], 10.0, 1).is_err());
    }

    fn ppc_fixture(n2: usize, n: usize, seed: u64) -> (PosteriorDraws, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut t1 = Vec::new();
        for _ in 0..n {
            let mut p = point(n2);
            p.theta2 = (0..n2).map(|_| 4.0 + std_normal(&mut rng)).collect();
            t1.push((0..n2).map(|_| 4.0 + std_normal(&mut rng)).collect::<Vec<f64>>());
            rows.push(p);
        }
        let d = blanket_draws(&rows, &t1, &vec![vec![0.0; n2]; n]);
        (d, (0..n2).map(|i| 10.0 + i as f64 % 7.0).collect())
    }

    #[test]
    fn ppc_exhaustive_subsample() {
        let (d, depths) = ppc_fixture(30, 10, 2);
        let obs = PanelStatistics {
            mean_log_change: 0.0,
            sd_log_change: 1.0,
            mean_linear_change: 0.0,
        };
        let r = ppc_subsample(&d, 30, &depths, 12.0, &obs, 9).unwrap();
        for (i, row) in d.rows().enumerate() {
            let mut rng = draw_rng(9, i);
            let t1 = d.block_range("theta1").unwrap();
            let t2 = d.block_range("theta2").unwrap();
            let bd = d.block_range("beta_depth").unwrap().start;
            let (mut a, mut b) = (Vec::new(), Vec::new());
            for k in 0..30 {
                let shift = row[bd] * (depths[k] - 12.0);
                a.push((row[t1.start + k] + shift + 0.5 * std_normal(&mut rng)).exp());
                b.push((row[t2.start + k] + shift + 0.5 * std_normal(&mut rng)).exp());
            }
            let s = PanelStatistics::from_levels(&a, &b);
            assert_eq!(r.statistics[0].predictive[i], s.mean_log_change);
            assert_eq!(r.statistics[2].predictive[i], s.mean_linear_change);
        }
        assert!(ppc_subsample(&d, 31, &depths, 12.0, &obs, 9).is_err());
    }

    #[test]
    fn ppc_point_mass_is_degenerate() {
        let n2 = 10;
        let mut p = point(n2);
        p.sigma_obs = 1e-300;
        p.theta2 = vec![4.5; n2];
        let d = blanket_draws(&vec![p; 5], &vec![vec![4.0; n2]; 5], &vec![vec![0.0; n2]; 5]);
        let obs = PanelStatistics {
            mean_log_change: 0.5,
            sd_log_change: 0.0,
            mean_linear_change: 0.0,
        };
        let r = ppc_subsample(&d, 4, &vec![10.0; n2], 10.0, &obs, 1).unwrap();
        for s in &r.statistics {
            assert!(s.predictive.iter().all(|v| (v - s.predictive[0]).abs() < 1e-9));
        }
        assert!((r.statistics[0].predictive[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn ppc_p_values_invariant_to_panel_order() {
        let (d, depths) = ppc_fixture(40, 50, 4);
        let wells: Vec<PanelWell> = (0..20)
            .map(|i| PanelWell {
                well_id: i.to_string(),
                east: 0.0,
                north: 0.0,
                depth: 10.0,
                lab: [50.0 + i as f64, 45.0 + 2.0 * i as f64, 40.0],
            })
            .collect();
        let mut rev = wells.clone();
        rev.reverse();
        let a = ppc_subsample(&d, 20, &depths, 12.0, &PanelStatistics::observed(&wells), 5).unwrap();
        let b = ppc_subsample(&d, 20, &depths, 12.0, &PanelStatistics::observed(&rev), 5).unwrap();
        for (x, y) in a.p_values().iter().zip(b.p_values()) {
            assert!((x - y).abs() < 1e-12);
            assert!((0.0..=1.0).contains(x));
        }
    }

    #[test]
    fn laplacian_scale_values() {
        let v = laplacian_scale(28.0, 9100.0, 1000.0);
        assert!((v - 1.0095).abs() < 5e-5, "{v}");
        assert_eq!((v * 100.0).round() / 100.0, 1.01);
        assert_eq!(laplacian_scale(0.0, 9100.0, 1000.0), 1.0);
        assert_eq!(laplacian_scale(28.0, 9100.0, 0.0), 1.0);
    }

    fn resampled_draws(p: &ResampledParams, n: usize) -> PosteriorDraws {
        let layout = ResampledParams::output_layout(p.beta_spline.len(), p.theta2000.len());
        PosteriorDraws::from_rows(layout, &vec![p.to_vec(); n]).unwrap()
    }

    #[test]
    fn null_spline() {
        let mut p = ResampledParams::zeros(5, 2);
        p.sigma_l = 0.3;
        p.sigma_s = 0.4;
        let knots = [1.0, 3.0, 5.0];
        let c = spline_change_curve(&resampled_draws(&p, 3), &knots, &linspace(0.0, 6.0, 13), &[10.0], 1, 1).unwrap();
        assert!(c.change.iter().all(|b| b.mean == 0.0 && b.q975 == 0.0));
    }

    #[test]
    fn spline_exceedance_matches_brute_force() {
        let mut p = ResampledParams::zeros(5, 2);
        p.sigma_l = 0.45;
        p.sigma_s = 0.35;
        p.beta_lin = -0.2;
        p.beta_spline = vec![0.1, 0.3, 0.6, 0.4, 0.2];
        let knots = [1.0, 3.0, 5.0];
        let theta = 10f64.ln();
        let f = ResampledModel::spline_change(&knots, p.beta_lin, &p.beta_spline, theta).0;
        let s = (p.sigma_l.powi(2) + p.sigma_s.powi(2)).sqrt();

        // 10⁶ forward simulations: 1000 draws × 1000 sims
        let c = spline_change_curve(&resampled_draws(&p, 1000), &knots, &[theta], &[10.0, 50.0], 1000, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 1_000_000;
        let mut hits = [0usize; 2];
        for _ in 0..n {
            let y = theta + f + p.sigma_l * std_normal(&mut rng) + p.sigma_s * std_normal(&mut rng);
            hits[0] += (y > 10f64.ln()) as usize;
            hits[1] += (y > 50f64.ln()) as usize;
        }
        for k in 0..2 {
            let t = [10.0f64, 50.0][k];
            let brute = hits[k] as f64 / n as f64;
            let exact = 1.0 - normal_cdf((t.ln() - theta - f) / s);
            let se = (exact * (1.0 - exact) / n as f64).sqrt();
            assert!((c.exceedance[0][k] - brute).abs() < 3.0 * se * 2f64.sqrt(), "T={t}");
            assert!((c.exceedance[0][k] - exact).abs() < 3.0 * se, "T={t}");
        }
    }

    proptest! {
        #[test]
        fn exceedance_non_increasing(v in prop::collection::vec(-2.0f64..7.0, 1..60)) {
            let r = individual_predictions(&eta_draws(&v), &[1.0, 10.0, 50.0, 100.0, 500.0]).unwrap();
            let p = &r.wells[0];
            prop_assert!(p.exceedance.windows(2).all(|w| w[1] <= w[0]));
            prop_assert!(p.exceedance.iter().all(|x| (0.0..=1.0).contains(x)));
            prop_assert!(p.q10 <= p.q90);
        }

        #[test]
        fn band_quantiles_match_sort_oracle(v in prop::collection::vec(-1e3f64..1e3, 1..80), p in 0.0f64..1.0) {
            let mut s = v.clone();
            s.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let h = (s.len() - 1) as f64 * p;
            let lo = h.floor() as usize;
            let hi = h.ceil() as usize;
            let want = s[lo] + (h - lo as f64) * (s[hi] - s[lo]);
            prop_assert_eq!(crate::stats::quantile(&v, p), want);
        }

        #[test]
        fn trend_is_exp_of_mean_log_change(pairs in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 2..20)) {
            let n2 = pairs.len();
            let (t1, t2): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let mut p = point(n2);
            p.theta2 = t2.clone();
            p.eta2 = t2.clone();
            let d = blanket_draws(&[p], &[t1.clone()], &[vec![0.0; n2]]);
            let r = trend_report(&d, &vec![10.0; n2], 10.0, 1).unwrap();
            let diff: Vec<f64> = t1.iter().zip(&t2).map(|(a, b)| b - a).collect();
            let want = mean(&diff).exp();
            prop_assert!((r.mean_multiplicative_change.mean - want).abs() <= 1e-12 * want);
            // Jensen: mean of exp ≥ exp of mean
            let lin = diff.iter().map(|x| x.exp()).sum::<f64>() / n2 as f64;
            prop_assert!(lin >= want * (1.0 - 1e-12));
        }
    }
}
