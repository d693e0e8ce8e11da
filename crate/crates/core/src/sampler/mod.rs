//! Hamiltonian Monte Carlo for any differentiable log density.
//!
//! The default transition is the multinomial no-U-turn sampler with a
//! generalized turning criterion. A static-length HMC transition is
//! available through [`SamplerConfig::fixed_steps`]. Warmup adapts the step
//! size by dual averaging and a diagonal inverse metric over doubling
//! windows. Chains run on the rayon pool; each iteration draws its
//! randomness from a generator keyed on `(seed, chain, iteration)`.

mod adapt;
mod diagnostics;
mod draws;
mod hmc;

pub use diagnostics::{bulk_ess, split_rhat, DiagnosticsReport, ParameterDiagnostics, RHAT_FLAG};
pub use draws::{ChainInfo, DrawsError, PosteriorDraws};
pub use hmc::{leapfrog, PhasePoint};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::ParamLayout;
use adapt::{DualAveraging, WindowSchedule, Welford};
use hmc::{Metric, Transition};

/// A target density on an unconstrained space.
///
/// Implementations write the gradient into `grad` and return the log
/// density, or `f64::NEG_INFINITY` outside the support.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;
    fn logp_grad(&self, x: &[f64], grad: &mut [f64]) -> f64;
}

/// Energy error beyond which a trajectory is declared divergent.
pub const MAX_ENERGY_ERROR: f64 = 1000.0;
/// Attempts at finding a finite random initial point.
pub const MAX_INIT_ATTEMPTS: usize = 100;
/// Leapfrog steps of the static fallback when no count is configured.
pub const DEFAULT_FIXED_STEPS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub n_chains: usize,
    pub n_warmup: usize,
    pub n_draws: usize,
    pub target_accept: f64,
    pub max_tree_depth: usize,
    /// `Some(n)` switches to static HMC with `n` leapfrog steps.
    pub fixed_steps: Option<usize>,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_chains: 4,
            n_warmup: 1000,
            n_draws: 500,
            target_accept: 0.8,
            max_tree_depth: 10,
            fixed_steps: None,
            seed: 20_000_101,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        let counts = [
            ("n_chains", self.n_chains),
            ("n_warmup", self.n_warmup),
            ("n_draws", self.n_draws),
            ("max_tree_depth", self.max_tree_depth),
            ("fixed_steps", self.fixed_steps.unwrap_or(1)),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(SamplerError::InvalidConfig(format!("{name} must be positive")));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(SamplerError::InvalidConfig("target_accept must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("invalid sampler configuration: {0}")]
    InvalidConfig(String),
    #[error("chain {chain}: no finite initial point after {attempts} attempts")]
    InitFailed { chain: usize, attempts: usize },
    #[error("chain {chain}: the supplied initial point has non-finite density or gradient")]
    BadInit { chain: usize },
    #[error("initial point has length {found}, target dimension is {expected}")]
    InitLength { expected: usize, found: usize },
    #[error("chain {0}: every warmup transition diverged")]
    AllDivergent(usize),
    #[error(transparent)]
    Draws(#[from] DrawsError),
}

/// Randomness for one iteration of one chain. Independent of thread
/// scheduling and of how many iterations other chains have run.
pub fn iteration_rng(seed: u64, chain: usize, iteration: usize) -> ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng.set_word_pos((iteration as u128) << 40);
    rng
}

/// Starting points: one shared vector, one per chain, or uniform(-2, 2)
/// draws on the unconstrained scale.
#[derive(Debug, Clone, Default)]
pub enum Init {
    #[default]
    Random,
    Point(Vec<f64>),
    PerChain(Vec<Vec<f64>>),
}

/// Runs all chains and returns the draws on the sampler's scale, with a
/// generic `x[i]` layout. Use [`PosteriorDraws::map`] to constrain.
pub fn sample<T: LogDensity>(target: &T, config: &SamplerConfig, init: &Init) -> Result<PosteriorDraws, SamplerError> {
    config.validate()?;
    let dim = target.dim();
    match init {
        Init::Point(x) if x.len() != dim => {
            return Err(SamplerError::InitLength {
                expected: dim,
                found: x.len(),
            })
        }
        Init::PerChain(v) => {
            if v.len() != config.n_chains {
                return Err(SamplerError::InvalidConfig(format!(
                    "{} initial points for {} chains",
                    v.len(),
                    config.n_chains
                )));
            }
            if let Some(x) = v.iter().find(|x| x.len() != dim) {
                return Err(SamplerError::InitLength {
                    expected: dim,
                    found: x.len(),
                });
            }
        }
        _ => {}
    }
    let results: Vec<Result<(Vec<f64>, ChainInfo), SamplerError>> = (0..config.n_chains)
        .into_par_iter()
        .map(|chain| run_chain(target, config, init, chain))
        .collect();
    let mut values = Vec::with_capacity(config.n_chains * config.n_draws * dim);
    let mut infos = Vec::with_capacity(config.n_chains);
    for r in results {
        let (v, info) = r?;
        values.extend(v);
        infos.push(info);
    }
    let layout = ParamLayout::new().vector("x", dim);
    Ok(PosteriorDraws::new(layout, config.n_chains, config.n_draws, values, infos)?)
}

fn initial_point<T: LogDensity>(
    target: &T,
    config: &SamplerConfig,
    init: &Init,
    chain: usize,
) -> Result<PhasePoint, SamplerError> {
    let dim = target.dim();
    let fixed = match init {
        Init::Random => None,
        Init::Point(x) => Some(x.clone()),
        Init::PerChain(v) => Some(v[chain].clone()),
    };
    if let Some(x) = fixed {
        let p = PhasePoint::new(target, x);
        return if p.is_finite() {
            Ok(p)
        } else {
            Err(SamplerError::BadInit { chain })
        };
    }
    // stream offset keeps init draws apart from iteration draws
    let mut rng = iteration_rng(config.seed ^ 0x9e37_79b9_7f4a_7c15, chain, 0);
    for _ in 0..MAX_INIT_ATTEMPTS {
        let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let p = PhasePoint::new(target, x);
        if p.is_finite() {
            return Ok(p);
        }
    }
    Err(SamplerError::InitFailed {
        chain,
        attempts: MAX_INIT_ATTEMPTS,
    })
}

fn run_chain<T: LogDensity>(
    target: &T,
    config: &SamplerConfig,
    init: &Init,
    chain: usize,
) -> Result<(Vec<f64>, ChainInfo), SamplerError> {
    let dim = target.dim();
    let mut state = initial_point(target, config, init, chain)?;
    let mut metric = Metric::unit(dim);
    let transition = match config.fixed_steps {
        Some(n) => Transition::Static { n_steps: n },
        None => Transition::Nuts {
            max_depth: config.max_tree_depth,
        },
    };

    let mut rng = iteration_rng(config.seed, chain, usize::MAX >> 1);
    let mut step = hmc::initial_step_size(target, &state, &metric, 1.0, &mut rng);
    let mut dual = DualAveraging::new(step, config.target_accept);
    let schedule = WindowSchedule::new(config.n_warmup);
    let mut welford = Welford::new(dim);

    let mut info = ChainInfo::default();
    for it in 0..config.n_warmup {
        let mut rng = iteration_rng(config.seed, chain, it);
        let out = transition.run(target, &state, &metric, step, &mut rng);
        state = out.state;
        info.warmup_divergences += out.divergent as usize;
        dual.update(out.accept_stat);
        step = dual.current();
        if schedule.in_window(it) {
            welford.add(&state.q);
        }
        if schedule.is_window_end(it) {
            metric = Metric::from_variance(welford.regularized_variance());
            welford = Welford::new(dim);
            step = hmc::initial_step_size(target, &state, &metric, step, &mut rng);
            dual = DualAveraging::new(step, config.target_accept);
        }
    }
    if config.n_warmup > 0 && info.warmup_divergences == config.n_warmup {
        return Err(SamplerError::AllDivergent(chain));
    }
    if config.n_warmup > 0 {
        step = dual.final_step();
    }
    info.step_size = step;
    info.inverse_metric_mean = metric.inverse.iter().sum::<f64>() / dim.max(1) as f64;

    let mut values = Vec::with_capacity(config.n_draws * dim);
    let mut accept_sum = 0.0;
    for d in 0..config.n_draws {
        let mut rng = iteration_rng(config.seed, chain, config.n_warmup + d);
        let out = transition.run(target, &state, &metric, step, &mut rng);
        state = out.state;
        info.divergences += out.divergent as usize;
        info.max_depth_hits += out.hit_max_depth as usize;
        info.n_leapfrog += out.n_leapfrog;
        accept_sum += out.accept_stat;
        values.extend_from_slice(&state.q);
    }
    info.mean_accept = accept_sum / config.n_draws as f64;
    Ok((values, info))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{ks_critical, ks_statistic, mean, normal_cdf, variance};

    pub(crate) struct Gaussian {
        pub dim: usize,
    }

    impl LogDensity for Gaussian {
        fn dim(&self) -> usize {
            self.dim
        }
        fn logp_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
            for (g, v) in grad.iter_mut().zip(x) {
                *g = -v;
            }
            -0.5 * x.iter().map(|v| v * v).sum::<f64>()
        }
    }

    struct Correlated {
        prec: [[f64; 2]; 2],
    }

    impl Correlated {
        fn new(r: f64) -> Self {
            let det = 1.0 - r * r;
            Self {
                prec: [[1.0 / det, -r / det], [-r / det, 1.0 / det]],
            }
        }
    }

    impl LogDensity for Correlated {
        fn dim(&self) -> usize {
            2
        }
        fn logp_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
            let p = &self.prec;
            grad[0] = -(p[0][0] * x[0] + p[0][1] * x[1]);
            grad[1] = -(p[1][0] * x[0] + p[1][1] * x[1]);
            0.5 * (x[0] * grad[0] + x[1] * grad[1])
        }
    }

    fn config(seed: u64, warmup: usize, draws: usize) -> SamplerConfig {
        SamplerConfig {
            n_chains: 4,
            n_warmup: warmup,
            n_draws: draws,
            seed,
            ..SamplerConfig::default()
        }
    }

    #[test]
    fn standard_gaussian_moments() {
        let draws = sample(&Gaussian { dim: 10 }, &config(1, 1000, 1000), &Init::Random).unwrap();
        let report = draws.diagnostics();
        for j in 0..10 {
            let c = draws.column(j);
            assert!(mean(&c).abs() < 0.05, "mean {}", mean(&c));
            assert!((variance(&c) - 1.0).abs() < 0.1, "var {}", variance(&c));
            assert!(report.parameters[j].rhat.unwrap() < 1.01);
        }
    }

    #[test]
    fn correlated_gaussian() {
        let draws = sample(&Correlated::new(0.9), &config(2, 1000, 1000), &Init::Random).unwrap();
        let (a, b) = (draws.column(0), draws.column(1));
        let (ma, mb) = (mean(&a), mean(&b));
        let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (a.len() - 1) as f64;
        let r = cov / (variance(&a) * variance(&b)).sqrt();
        assert!((r - 0.9).abs() < 0.05, "correlation {r}");
    }

    #[test]
    fn static_hmc_fallback() {
        let mut c = config(3, 500, 500);
        c.fixed_steps = Some(DEFAULT_FIXED_STEPS);
        let draws = sample(&Gaussian { dim: 3 }, &c, &Init::Random).unwrap();
        for j in 0..3 {
            let col = draws.column(j);
            assert!(mean(&col).abs() < 0.1);
            assert!((variance(&col) - 1.0).abs() < 0.15);
        }
    }

    #[test]
    fn ks_smoke_test_over_seeds() {
        let crit = ks_critical(4000, 0.01);
        let passes = (0..20u64)
            .filter(|&s| {
                // thin by 4 so the 4000 pooled draws are close to independent
                let d = sample(&Gaussian { dim: 1 }, &config(100 + s, 300, 4000), &Init::Random).unwrap();
                let thinned: Vec<f64> = d.column(0).into_iter().step_by(4).collect();
                assert_eq!(thinned.len(), 4000);
                ks_statistic(&thinned, normal_cdf) < crit
            })
            .count();
        assert!(passes >= 19, "{passes}/20 seeds passed");
    }

    #[test]
    fn reproducible() {
        let c = config(7, 100, 50);
        let a = sample(&Gaussian { dim: 4 }, &c, &Init::Random).unwrap();
        let b = sample(&Gaussian { dim: 4 }, &c, &Init::Random).unwrap();
        assert_eq!(a.values(), b.values());
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let d = single.install(|| sample(&Gaussian { dim: 4 }, &c, &Init::Random).unwrap());
        assert_eq!(a.values(), d.values());
    }

    #[test]
    fn rejects_bad_config() {
        let mut c = config(1, 10, 0);
        assert!(matches!(sample(&Gaussian { dim: 1 }, &c, &Init::Random), Err(SamplerError::InvalidConfig(_))));
        c.n_draws = 10;
        c.target_accept = 1.0;
        assert!(c.validate().is_err());
    }

    struct Nowhere;
    impl LogDensity for Nowhere {
        fn dim(&self) -> usize {
            2
        }
        fn logp_grad(&self, _: &[f64], _: &mut [f64]) -> f64 {
            f64::NEG_INFINITY
        }
    }

    #[test]
    fn init_failure() {
        let err = sample(&Nowhere, &config(1, 10, 10), &Init::Random).unwrap_err();
        assert!(matches!(err, SamplerError::InitFailed { attempts: 100, .. }));
        let err = sample(&Nowhere, &config(1, 10, 10), &Init::Point(vec![0.0, 0.0])).unwrap_err();
        assert!(matches!(err, SamplerError::BadInit { .. }));
    }
}
