use std::sync::Arc;

use rustfft::{num_complex::Complex, FftPlanner};
use serde::Serialize;

use crate::stats::{mean, normal_quantile, variance};

/// R-hat above which a parameter is flagged.
pub const RHAT_FLAG: f64 = 1.01;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParameterDiagnostics {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    /// `None` when undefined (one chain, too few draws, zero variance).
    pub rhat: Option<f64>,
    /// `None` when degenerate.
    pub ess_bulk: Option<f64>,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsReport {
    pub n_chains: usize,
    pub n_draws: usize,
    pub divergences: Vec<usize>,
    pub parameters: Vec<ParameterDiagnostics>,
}

impl DiagnosticsReport {
    pub fn n_flagged(&self) -> usize {
        self.parameters.iter().filter(|p| p.flagged).count()
    }

    /// Fraction of parameters whose R-hat exceeds `threshold`. Undefined
    /// R-hats do not count.
    pub fn fraction_above(&self, threshold: f64) -> f64 {
        if self.parameters.is_empty() {
            return 0.0;
        }
        let n = self
            .parameters
            .iter()
            .filter(|p| p.rhat.is_some_and(|r| r > threshold))
            .count();
        n as f64 / self.parameters.len() as f64
    }
}

fn split(chains: &[&[f64]]) -> Vec<Vec<f64>> {
    let half = chains[0].len() / 2;
    let n = chains[0].len();
    chains
        .iter()
        .flat_map(|c| [c[..half].to_vec(), c[n - half..].to_vec()])
        .collect()
}

fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let all: Vec<(f64, usize, usize)> = chains
        .iter()
        .enumerate()
        .flat_map(|(c, v)| v.iter().enumerate().map(move |(i, &x)| (x, c, i)))
        .collect();
    let mut order: Vec<usize> = (0..all.len()).collect();
    order.sort_by(|&a, &b| all[a].0.total_cmp(&all[b].0));
    let s = all.len() as f64;
    let mut out: Vec<Vec<f64>> = chains.iter().map(|c| vec![0.0; c.len()]).collect();
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && all[order[j + 1]].0 == all[order[i]].0 {
            j += 1;
        }
        // average rank (1-based) over ties
        let rank = (i + j) as f64 / 2.0 + 1.0;
        let z = normal_quantile((rank - 0.375) / (s + 0.25));
        for &k in &order[i..=j] {
            out[all[k].1][all[k].2] = z;
        }
        i = j + 1;
    }
    out
}

fn classic_rhat(chains: &[Vec<f64>]) -> Option<f64> {
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let w = chains.iter().map(|c| variance(c)).sum::<f64>() / chains.len() as f64;
    let b = n * variance(&means);
    if !(w > 0.0) || !w.is_finite() {
        return None;
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    Some((var_plus / w).sqrt())
}

/// Rank-normalized split-R-hat: the larger of the bulk and folded
/// (tail) versions. Chains must have equal length.
pub fn split_rhat(chains: &[&[f64]]) -> Option<f64> {
    if chains.len() < 2 || chains[0].len() < 4 || chains.iter().any(|c| c.len() != chains[0].len()) {
        return None;
    }
    let halves = split(chains);
    let bulk = classic_rhat(&rank_normalize(&halves))?;
    let pooled: Vec<f64> = halves.iter().flatten().copied().collect();
    let med = crate::stats::median(&pooled);
    let folded: Vec<Vec<f64>> = halves
        .iter()
        .map(|c| c.iter().map(|x| (x - med).abs()).collect())
        .collect();
    let tail = classic_rhat(&rank_normalize(&folded)).unwrap_or(bulk);
    Some(bulk.max(tail))
}

fn autocovariance(x: &[f64], fft: &Arc<dyn rustfft::Fft<f64>>, ifft: &Arc<dyn rustfft::Fft<f64>>) -> Vec<f64> {
    let n = x.len();
    let m = fft.len();
    let mu = mean(x);
    let mut buf: Vec<Complex<f64>> = x.iter().map(|v| Complex::new(v - mu, 0.0)).collect();
    buf.resize(m, Complex::new(0.0, 0.0));
    fft.process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    ifft.process(&mut buf);
    // unnormalized inverse transform: divide by m, then by n for the biased estimate
    buf[..n].iter().map(|c| c.re / (m as f64 * n as f64)).collect()
}

/// Bulk effective sample size of rank-normalized split chains, using
/// Geyer's initial monotone sequence.
pub fn bulk_ess(chains: &[&[f64]]) -> Option<f64> {
    if chains.is_empty() || chains[0].len() < 4 || chains.iter().any(|c| c.len() != chains[0].len()) {
        return None;
    }
    let halves = rank_normalize(&split(chains));
    ess_raw(&halves)
}

fn ess_raw(chains: &[Vec<f64>]) -> Option<f64> {
    let m = chains.len();
    let n = chains[0].len();
    if chains.iter().flatten().all(|v| *v == chains[0][0]) {
        return None;
    }
    let mut planner = FftPlanner::new();
    let len = (2 * n).next_power_of_two();
    let fft = planner.plan_fft_forward(len);
    let ifft = planner.plan_fft_inverse(len);
    let acov: Vec<Vec<f64>> = chains.iter().map(|c| autocovariance(c, &fft, &ifft)).collect();
    let nf = n as f64;
    let chain_means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let mean_var = acov.iter().map(|a| a[0] * nf / (nf - 1.0)).sum::<f64>() / m as f64;
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if m > 1 {
        var_plus += variance(&chain_means);
    }
    if !(var_plus > 0.0) {
        return None;
    }
    let mean_acov = |t: usize| acov.iter().map(|a| a[t]).sum::<f64>() / m as f64;
    let mut rho = vec![0.0; n];
    rho[0] = 1.0;
    let mut even = 1.0;
    let mut odd = 1.0 - (mean_var - mean_acov(1)) / var_plus;
    rho[1] = odd;
    let mut t = 1;
    while t + 4 < n && even + odd > 0.0 {
        even = 1.0 - (mean_var - mean_acov(t + 1)) / var_plus;
        odd = 1.0 - (mean_var - mean_acov(t + 2)) / var_plus;
        if even + odd >= 0.0 {
            rho[t + 1] = even;
            rho[t + 2] = odd;
        }
        t += 2;
    }
    let max_t = t;
    if even > 0.0 && max_t + 1 < n {
        rho[max_t + 1] = even;
    }
    // monotone sequence
    let mut t = 1;
    while t + 3 <= max_t {
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t] {
            rho[t + 1] = (rho[t - 1] + rho[t]) / 2.0;
            rho[t + 2] = rho[t + 1];
        }
        t += 2;
    }
    let total = (m * n) as f64;
    let extra = if max_t + 1 < n { rho[max_t + 1] } else { 0.0 };
    let mut tau = -1.0 + 2.0 * rho[..=max_t.min(n - 1)].iter().sum::<f64>() + extra;
    tau = tau.max(1.0 / total.log10());
    Some(total / tau)
}
