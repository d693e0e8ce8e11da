use rand::Rng;
use rand_distr::StandardNormal;

use super::{LogDensity, MAX_ENERGY_ERROR};

/// Position with cached log density and gradient.
#[derive(Debug, Clone)]
pub struct PhasePoint {
    pub q: Vec<f64>,
    pub logp: f64,
    pub grad: Vec<f64>,
}

impl PhasePoint {
    pub fn new<T: LogDensity + ?Sized>(target: &T, q: Vec<f64>) -> Self {
        let mut grad = vec![0.0; q.len()];
        let logp = target.logp_grad(&q, &mut grad);
        Self { q, logp, grad }
    }

    pub fn is_finite(&self) -> bool {
        self.logp.is_finite() && self.grad.iter().all(|g| g.is_finite())
    }
}

/// Diagonal metric; `inverse` holds the variance estimate.
#[derive(Debug, Clone)]
pub(crate) struct Metric {
    pub inverse: Vec<f64>,
    sqrt_mass: Vec<f64>,
}

impl Metric {
    pub fn unit(dim: usize) -> Self {
        Self::from_variance(vec![1.0; dim])
    }

    pub fn from_variance(inverse: Vec<f64>) -> Self {
        let sqrt_mass = inverse.iter().map(|v| 1.0 / v.sqrt()).collect();
        Self { inverse, sqrt_mass }
    }

    fn kinetic(&self, p: &[f64]) -> f64 {
        0.5 * p.iter().zip(&self.inverse).map(|(p, m)| p * p * m).sum::<f64>()
    }

    fn sharp(&self, p: &[f64]) -> Vec<f64> {
        p.iter().zip(&self.inverse).map(|(p, m)| p * m).collect()
    }

    fn momentum<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.sqrt_mass
            .iter()
            .map(|s| s * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }
}

/// One leapfrog step of size `eps` with inverse metric `inv_metric`.
/// Updates `point` and `p` in place.
pub fn leapfrog<T: LogDensity + ?Sized>(target: &T, point: &mut PhasePoint, p: &mut [f64], inv_metric: &[f64], eps: f64) {
    for (pi, g) in p.iter_mut().zip(&point.grad) {
        *pi += 0.5 * eps * g;
    }
    for ((q, pi), m) in point.q.iter_mut().zip(p.iter()).zip(inv_metric) {
        *q += eps * m * pi;
    }
    point.logp = target.logp_grad(&point.q, &mut point.grad);
    for (pi, g) in p.iter_mut().zip(&point.grad) {
        *pi += 0.5 * eps * g;
    }
}

fn hamiltonian(point: &PhasePoint, p: &[f64], metric: &Metric) -> f64 {
    let h = -point.logp + metric.kinetic(p);
    if h.is_nan() {
        f64::INFINITY
    } else {
        h
    }
}

pub(crate) struct TransitionOutput {
    pub state: PhasePoint,
    pub accept_stat: f64,
    pub divergent: bool,
    pub hit_max_depth: bool,
    pub n_leapfrog: usize,
}

pub(crate) enum Transition {
    Nuts { max_depth: usize },
    Static { n_steps: usize },
}

impl Transition {
    pub fn run<T: LogDensity + ?Sized, R: Rng + ?Sized>(
        &self,
        target: &T,
        start: &PhasePoint,
        metric: &Metric,
        eps: f64,
        rng: &mut R,
    ) -> TransitionOutput {
        match *self {
            Transition::Nuts { max_depth } => nuts(target, start, metric, eps, max_depth, rng),
            Transition::Static { n_steps } => static_hmc(target, start, metric, eps, n_steps, rng),
        }
    }
}

fn static_hmc<T: LogDensity + ?Sized, R: Rng + ?Sized>(
    target: &T,
    start: &PhasePoint,
    metric: &Metric,
    eps: f64,
    n_steps: usize,
    rng: &mut R,
) -> TransitionOutput {
    let mut p = metric.momentum(rng);
    let h0 = hamiltonian(start, &p, metric);
    let mut z = start.clone();
    // jitter breaks resonance between a fixed trajectory length and the target's periods
    let eps = eps * rng.random_range(0.8..1.2);
    let mut divergent = false;
    for _ in 0..n_steps {
        leapfrog(target, &mut z, &mut p, &metric.inverse, eps);
        if hamiltonian(&z, &p, metric) - h0 > MAX_ENERGY_ERROR {
            divergent = true;
            break;
        }
    }
    let accept_stat = if divergent {
        0.0
    } else {
        (h0 - hamiltonian(&z, &p, metric)).exp().min(1.0)
    };
    let u: f64 = rng.random();
    let state = if !divergent && u < accept_stat { z } else { start.clone() };
    TransitionOutput {
        state,
        accept_stat,
        divergent,
        hit_max_depth: false,
        n_leapfrog: n_steps,
    }
}

/// Subtree of a NUTS trajectory, stored in positional (time) order.
struct Tree {
    left: PhasePoint,
    left_p: Vec<f64>,
    right: PhasePoint,
    right_p: Vec<f64>,
    proposal: PhasePoint,
    log_weight: f64,
    rho: Vec<f64>,
}

#[derive(Default)]
struct Stats {
    n_leapfrog: usize,
    sum_accept: f64,
    divergent: bool,
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn no_u_turn(metric: &Metric, p_left: &[f64], p_right: &[f64], rho: &[f64]) -> bool {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    dot(&metric.sharp(p_left), rho) > 0.0 && dot(&metric.sharp(p_right), rho) > 0.0
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// Joins two adjacent subtrees and checks the turning criterion across the
/// merged tree and across both seams. Returns `None` if the merge turns.
fn merge(left: Tree, right: Tree, proposal: PhasePoint, log_weight: f64, metric: &Metric) -> Option<Tree> {
    let rho = add(&left.rho, &right.rho);
    let ok = no_u_turn(metric, &left.left_p, &right.right_p, &rho)
        && no_u_turn(metric, &left.left_p, &right.left_p, &add(&left.rho, &right.left_p))
        && no_u_turn(metric, &left.right_p, &right.right_p, &add(&right.rho, &left.right_p));
    ok.then(|| Tree {
        left: left.left,
        left_p: left.left_p,
        right: right.right,
        right_p: right.right_p,
        proposal,
        log_weight,
        rho,
    })
}

#[allow(clippy::too_many_arguments)]
fn build_tree<T: LogDensity + ?Sized, R: Rng + ?Sized>(
    target: &T,
    edge: &PhasePoint,
    edge_p: &[f64],
    forward: bool,
    depth: usize,
    eps: f64,
    h0: f64,
    metric: &Metric,
    stats: &mut Stats,
    rng: &mut R,
) -> Option<Tree> {
    if depth == 0 {
        let mut z = edge.clone();
        let mut p = edge_p.to_vec();
        leapfrog(target, &mut z, &mut p, &metric.inverse, if forward { eps } else { -eps });
        stats.n_leapfrog += 1;
        let h = hamiltonian(&z, &p, metric);
        if h - h0 > MAX_ENERGY_ERROR {
            stats.divergent = true;
            return None;
        }
        stats.sum_accept += if h0 - h > 0.0 { 1.0 } else { (h0 - h).exp() };
        return Some(Tree {
            left: z.clone(),
            left_p: p.clone(),
            right: z.clone(),
            right_p: p.clone(),
            proposal: z,
            log_weight: h0 - h,
            rho: p,
        });
    }
    let inner = build_tree(target, edge, edge_p, forward, depth - 1, eps, h0, metric, stats, rng)?;
    let (outer_edge, outer_p) = if forward {
        (&inner.right, &inner.right_p)
    } else {
        (&inner.left, &inner.left_p)
    };
    let outer = build_tree(target, outer_edge, outer_p, forward, depth - 1, eps, h0, metric, stats, rng)?;
    let log_weight = log_add(inner.log_weight, outer.log_weight);
    // uniform progressive sampling within the subtree
    let u: f64 = rng.random();
    let take_outer = u.ln() < outer.log_weight - log_weight;
    let (mut inner, mut outer) = (inner, outer);
    let proposal = if take_outer {
        std::mem::replace(&mut outer.proposal, edge.clone())
    } else {
        std::mem::replace(&mut inner.proposal, edge.clone())
    };
    if forward {
        merge(inner, outer, proposal, log_weight, metric)
    } else {
        merge(outer, inner, proposal, log_weight, metric)
    }
}

fn nuts<T: LogDensity + ?Sized, R: Rng + ?Sized>(
    target: &T,
    start: &PhasePoint,
    metric: &Metric,
    eps: f64,
    max_depth: usize,
    rng: &mut R,
) -> TransitionOutput {
    let p0 = metric.momentum(rng);
    let h0 = hamiltonian(start, &p0, metric);
    let mut tree = Tree {
        left: start.clone(),
        left_p: p0.clone(),
        right: start.clone(),
        right_p: p0.clone(),
        proposal: start.clone(),
        log_weight: 0.0,
        rho: p0,
    };
    let mut stats = Stats::default();
    let mut depth = 0;
    while depth < max_depth {
        let forward = rng.random::<f64>() > 0.5;
        let (edge, edge_p) = if forward {
            (&tree.right, &tree.right_p)
        } else {
            (&tree.left, &tree.left_p)
        };
        let Some(mut sub) = build_tree(target, edge, edge_p, forward, depth, eps, h0, metric, &mut stats, rng) else {
            break;
        };
        depth += 1;
        // biased progressive sampling favors the new subtree
        let accept = (sub.log_weight - tree.log_weight).exp().min(1.0);
        let u: f64 = rng.random();
        let proposal = if u < accept {
            std::mem::replace(&mut sub.proposal, start.clone())
        } else {
            std::mem::replace(&mut tree.proposal, start.clone())
        };
        let log_weight = log_add(tree.log_weight, sub.log_weight);
        let merged = if forward {
            merge(tree, sub, proposal.clone(), log_weight, metric)
        } else {
            merge(sub, tree, proposal.clone(), log_weight, metric)
        };
        match merged {
            Some(t) => tree = t,
            None => {
                return finish(proposal, &stats, false);
            }
        }
    }
    let hit = depth >= max_depth;
    finish(tree.proposal, &stats, hit)
}

fn finish(state: PhasePoint, stats: &Stats, hit_max_depth: bool) -> TransitionOutput {
    TransitionOutput {
        state,
        accept_stat: if stats.n_leapfrog > 0 {
            stats.sum_accept / stats.n_leapfrog as f64
        } else {
            0.0
        },
        divergent: stats.divergent,
        hit_max_depth,
        n_leapfrog: stats.n_leapfrog,
    }
}

/// Doubles or halves the step size until one leapfrog step crosses an
/// acceptance of 0.8.
pub(crate) fn initial_step_size<T: LogDensity + ?Sized, R: Rng + ?Sized>(
    target: &T,
    start: &PhasePoint,
    metric: &Metric,
    eps0: f64,
    rng: &mut R,
) -> f64 {
    let p0 = metric.momentum(rng);
    let h0 = hamiltonian(start, &p0, metric);
    let trial = |eps: f64| {
        let mut z = start.clone();
        let mut p = p0.clone();
        leapfrog(target, &mut z, &mut p, &metric.inverse, eps);
        h0 - hamiltonian(&z, &p, metric)
    };
    let threshold = 0.8f64.ln();
    let mut eps = eps0;
    let up = trial(eps) > threshold;
    for _ in 0..60 {
        eps = if up { 2.0 * eps } else { 0.5 * eps };
        let dh = trial(eps);
        if up && !(dh > threshold) {
            break;
        }
        if !up && !(dh < threshold) {
            break;
        }
    }
    eps
}
