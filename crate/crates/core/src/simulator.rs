//! Slot-level Monte-Carlo of the source, the channel and the estimate.
//!
//! The simulator tracks `x` and `x_hat` directly and derives `(d, delta)`
//! from them, so it shares no transition logic with the analytic code.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::constrained::MixedPolicy;
use crate::error::{Error, Result};
use crate::rvi::ThresholdPolicy;
use crate::source::{is_reachable, step_source, SourceModel, SourceState, SysState, SystemParams};

pub const RNG_NAME: &str = "ChaCha8";
pub const DEFAULT_WARMUP: u64 = 10_000;
pub const DEFAULT_BATCHES: usize = 100;
pub const DEFAULT_DELTA_CAP: usize = 2_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimConfig {
    pub horizon: u64,
    pub seed: u64,
    /// Initial slots excluded from every statistic.
    pub warmup: u64,
    /// Histogram cells cover `delta <= delta_cap`; larger ages are counted
    /// in a per-`d` overflow bin.
    pub delta_cap: usize,
    pub batches: usize,
    pub model: SourceModel,
}

impl SimConfig {
    pub fn new(horizon: u64, seed: u64) -> Self {
        Self {
            horizon,
            seed,
            warmup: DEFAULT_WARMUP,
            delta_cap: DEFAULT_DELTA_CAP,
            batches: DEFAULT_BATCHES,
            model: SourceModel::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon <= self.warmup {
            return Err(Error::InvalidParams(format!(
                "horizon {} must exceed warmup {}",
                self.horizon, self.warmup
            )));
        }
        if self.batches < 2 || self.horizon - self.warmup < self.batches as u64 {
            return Err(Error::InvalidParams(format!(
                "need at least 2 batches and one slot per batch (batches={})",
                self.batches
            )));
        }
        Ok(())
    }

    fn batch_len(&self) -> u64 {
        (self.horizon - self.warmup) / self.batches as u64
    }
}

/// Sample mean with a batch-means standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    fn from_batches(means: &[f64]) -> Self {
        let k = means.len() as f64;
        let mean = means.iter().sum::<f64>() / k;
        let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (k - 1.0);
        Self {
            mean,
            se: (var / k).sqrt(),
        }
    }

    /// `|mean - target| <= k * se`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.se
    }

    /// `(mean - target) / se`, infinite when `se` is zero and they differ.
    pub fn z_score(&self, target: f64) -> f64 {
        let diff = self.mean - target;
        if diff == 0.0 {
            0.0
        } else {
            diff / self.se
        }
    }
}

/// Visit counts per `(d, delta)`, one histogram per batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    n: usize,
    cap: usize,
    batch_len: u64,
    /// `counts[b][d * (cap + 2) + delta]`, with `delta = cap + 1` the
    /// overflow bin.
    counts: Vec<Vec<u32>>,
}

impl Histogram {
    fn new(n: usize, cap: usize, batches: usize, batch_len: u64) -> Self {
        Self {
            n,
            cap,
            batch_len,
            counts: vec![vec![0; n * (cap + 2)]; batches],
        }
    }

    fn record(&mut self, batch: usize, s: SysState) {
        let delta = s.delta.min(self.cap + 1);
        self.counts[batch][s.d * (self.cap + 2) + delta] += 1;
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    /// Batch-means estimate of `sum_{(d,delta)} w(d, delta) * freq`, where
    /// `delta = cap + 1` stands for the overflow bin.
    pub fn estimate(&self, w: impl Fn(usize, usize) -> f64) -> Estimate {
        let width = self.cap + 2;
        let means: Vec<f64> = self
            .counts
            .iter()
            .map(|c| {
                c.iter()
                    .enumerate()
                    .filter(|(_, &k)| k > 0)
                    .map(|(i, &k)| w(i / width, i % width) * k as f64)
                    .sum::<f64>()
                    / self.batch_len as f64
            })
            .collect();
        Estimate::from_batches(&means)
    }

    /// Frequency of `(d, delta)` for `delta <= cap`.
    pub fn mass(&self, d: usize, delta: usize) -> Estimate {
        self.estimate(|a, b| if a == d && b == delta { 1.0 } else { 0.0 })
    }

    /// Frequency of row `d` with `delta >= from` (overflow included).
    pub fn tail(&self, d: usize, from: usize) -> Estimate {
        self.estimate(|a, b| if a == d && b >= from { 1.0 } else { 0.0 })
    }

    /// Total frequency inside the cap.
    pub fn covered(&self) -> f64 {
        self.estimate(|_, b| if b <= self.cap { 1.0 } else { 0.0 }).mean
    }

    /// Cells with at least one visit, as `(d, delta)`; overflow excluded.
    pub fn visited(&self) -> Vec<SysState> {
        let width = self.cap + 2;
        let mut seen = vec![false; self.n * width];
        for c in &self.counts {
            for (i, &k) in c.iter().enumerate() {
                seen[i] |= k > 0;
            }
        }
        seen.iter()
            .enumerate()
            .filter(|(i, &s)| s && i % width <= self.cap)
            .map(|(i, _)| SysState::new(i / width, i % width))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SimReport {
    pub rate: Estimate,
    pub aoii: Estimate,
    pub aoi: Estimate,
    pub hist: Histogram,
    pub rng: &'static str,
    pub seed: u64,
    /// Slots that entered the statistics.
    pub measured: u64,
    /// Visits to states violating `delta >= l_d` (zero for a correct model).
    pub unreachable_visits: u64,
    /// Policy draws at `(0,0)` that picked `n_minus`, and all draws.
    pub minus_draws: u64,
    pub draws: u64,
}

/// Either a single threshold policy or a per-cycle randomisation of two.
#[derive(Debug, Clone, Copy)]
pub enum SimPolicy<'a> {
    Pure(&'a ThresholdPolicy),
    Mixed(&'a MixedPolicy),
}

impl<'a> From<&'a ThresholdPolicy> for SimPolicy<'a> {
    fn from(p: &'a ThresholdPolicy) -> Self {
        SimPolicy::Pure(p)
    }
}

impl<'a> From<&'a MixedPolicy> for SimPolicy<'a> {
    fn from(p: &'a MixedPolicy) -> Self {
        SimPolicy::Mixed(p)
    }
}

/// Runs one trajectory from the synced state `x = x_hat = ceil(N/2)`.
pub fn simulate<'a>(
    policy: impl Into<SimPolicy<'a>>,
    params: &SystemParams,
    cfg: &SimConfig,
) -> Result<SimReport> {
    cfg.validate()?;
    let policy = policy.into();
    let (minus, plus, mu) = match policy {
        SimPolicy::Pure(p) => (p, p, 0.0),
        SimPolicy::Mixed(m) => (&m.n_minus, &m.n_plus, m.mu),
    };
    for p in [minus, plus] {
        if p.len() + 1 != params.n() {
            return Err(Error::InvalidParams(format!("policy {p} does not fit N={}", params.n())));
        }
    }
    let mixing = matches!(policy, SimPolicy::Mixed(_)) && minus != plus;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let batch_len = cfg.batch_len();
    let measured = batch_len * cfg.batches as u64;
    let mut hist = Histogram::new(params.n(), cfg.delta_cap, cfg.batches, batch_len);
    let mut sums = vec![[0.0f64; 3]; cfg.batches];

    let mut src = SourceState::synced(params.n().div_ceil(2));
    let mut delta = 0usize;
    let mut aoi = 0u64;
    let mut active = plus;
    let (mut minus_draws, mut draws, mut unreachable) = (0u64, 0u64, 0u64);

    for t in 0..cfg.warmup + measured {
        let d = src.mismatch();
        if d == 0 && delta == 0 && mixing {
            draws += 1;
            if rng.random::<f64>() < mu {
                active = minus;
                minus_draws += 1;
            } else {
                active = plus;
            }
        }
        let s = SysState::new(d, delta);
        let a = active.action(s);
        let success = a.is_transmit() && rng.random::<f64>() < params.p_s();

        if t >= cfg.warmup {
            let b = ((t - cfg.warmup) / batch_len) as usize;
            let acc = &mut sums[b];
            acc[0] += a.cost();
            acc[1] += delta as f64;
            acc[2] += aoi as f64;
            hist.record(b, s);
            if !is_reachable(s) {
                unreachable += 1;
            }
        }

        src = step_source(src, a, success, params, cfg.model, &mut rng);
        let base = if success { 0 } else { delta };
        let nd = src.mismatch();
        delta = if nd == 0 { 0 } else { base + nd };
        aoi = if success { 0 } else { aoi + 1 };
    }

    let col = |k: usize| -> Vec<f64> { sums.iter().map(|s| s[k] / batch_len as f64).collect() };
    Ok(SimReport {
        rate: Estimate::from_batches(&col(0)),
        aoii: Estimate::from_batches(&col(1)),
        aoi: Estimate::from_batches(&col(2)),
        hist,
        rng: RNG_NAME,
        seed: cfg.seed,
        measured,
        unreachable_visits: unreachable,
        minus_draws,
        draws,
    })
}

/// Empirical visit frequencies of a pure policy.
pub fn empirical_stationary(policy: &ThresholdPolicy, params: &SystemParams, cfg: &SimConfig) -> Result<Histogram> {
    simulate(policy, params, cfg).map(|r| r.hist)
}
