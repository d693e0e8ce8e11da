/// Nesterov dual averaging of log step size toward a target acceptance.
pub(crate) struct DualAveraging {
    mu: f64,
    target: f64,
    s_bar: f64,
    x: f64,
    x_bar: f64,
    counter: f64,
}

const GAMMA: f64 = 0.05;
const T0: f64 = 10.0;
const KAPPA: f64 = 0.75;

impl DualAveraging {
    pub fn new(step: f64, target: f64) -> Self {
        Self {
            mu: (10.0 * step).ln(),
            target,
            s_bar: 0.0,
            x: step.ln(),
            x_bar: 0.0,
            counter: 0.0,
        }
    }

    pub fn update(&mut self, accept_stat: f64) {
        let stat = if accept_stat.is_finite() { accept_stat.min(1.0) } else { 0.0 };
        self.counter += 1.0;
        let eta = 1.0 / (self.counter + T0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.target - stat);
        self.x = self.mu - self.s_bar * self.counter.sqrt() / GAMMA;
        let w = self.counter.powf(-KAPPA);
        self.x_bar = (1.0 - w) * self.x_bar + w * self.x;
    }

    pub fn current(&self) -> f64 {
        self.x.exp()
    }

    pub fn final_step(&self) -> f64 {
        if self.counter > 0.0 {
            self.x_bar.exp()
        } else {
            self.x.exp()
        }
    }
}

/// Warmup split into a fast initial buffer, doubling slow windows for the
/// metric, and a fast terminal buffer.
pub(crate) struct WindowSchedule {
    start: usize,
    ends: Vec<usize>,
}

const INIT_BUFFER: usize = 75;
const TERM_BUFFER: usize = 50;
const BASE_WINDOW: usize = 25;

impl WindowSchedule {
    pub fn new(n_warmup: usize) -> Self {
        if n_warmup < 20 {
            return Self { start: 0, ends: Vec::new() };
        }
        let (init, term, base) = if INIT_BUFFER + TERM_BUFFER + BASE_WINDOW > n_warmup {
            let init = (0.15 * n_warmup as f64) as usize;
            let term = (0.1 * n_warmup as f64) as usize;
            (init, term, n_warmup - init - term)
        } else {
            (INIT_BUFFER, TERM_BUFFER, BASE_WINDOW)
        };
        let last = n_warmup - term;
        let mut ends = Vec::new();
        let (mut s, mut size) = (init, base);
        while s < last {
            let mut e = s + size;
            if e + 2 * size > last {
                e = last;
            }
            ends.push(e);
            s = e;
            size *= 2;
        }
        Self { start: init, ends }
    }

    pub fn in_window(&self, it: usize) -> bool {
        self.ends.last().is_some_and(|&e| it >= self.start && it < e)
    }

    /// True after the last iteration of a slow window.
    pub fn is_window_end(&self, it: usize) -> bool {
        self.ends.iter().any(|&e| e == it + 1)
    }

    #[cfg(test)]
    pub fn ends(&self) -> &[usize] {
        &self.ends
    }
}

pub(crate) struct Welford {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    pub fn new(dim: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn add(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let d = v - *m;
            *m += d / n;
            *s += d * (v - *m);
        }
    }

    /// Sample variance shrunk toward 1e-3.
    pub fn regularized_variance(&self) -> Vec<f64> {
        let n = self.n as f64;
        if self.n < 2 {
            return vec![1.0; self.mean.len()];
        }
        self.m2
            .iter()
            .map(|s| (n / (n + 5.0)) * s / (n - 1.0) + 1e-3 * (5.0 / (n + 5.0)))
            .collect()
    }
}
