#![allow(dead_code)]

use aoii_core::{SysState, SystemParams, ThresholdPolicy};
use rand::Rng;

/// Mismatch kernel written out by hand from the random-walk description.
pub fn mismatch_kernel(n: usize, p: f64) -> Vec<Vec<f64>> {
    let mut k = vec![vec![0.0; n]; n];
    for d in 0..n {
        k[d][d] = 1.0 - 2.0 * p;
        match d {
            0 => k[0][1] += 2.0 * p,
            _ if d == n - 1 => k[d][d - 1] += 2.0 * p,
            _ => {
                k[d][d - 1] += p;
                k[d][d + 1] += p;
            }
        }
    }
    k
}

/// Stationary law of the policy-induced chain on `(d, delta <= cap)`,
/// ages above `cap` folded onto `cap`, by power iteration from `(0,0)`.
pub struct PowerOracle {
    pub cap: usize,
    pub pi: Vec<Vec<f64>>,
    pub iterations: usize,
    pub last_change: f64,
}

impl PowerOracle {
    pub fn mass(&self, d: usize, delta: usize) -> f64 {
        self.pi[d][delta]
    }

    pub fn tail(&self, d: usize, from: usize) -> f64 {
        self.pi[d][from.min(self.cap + 1)..].iter().sum()
    }

    pub fn rate(&self, policy: &ThresholdPolicy) -> f64 {
        self.weighted(|s| if policy.action(s).is_transmit() { 1.0 } else { 0.0 })
    }

    pub fn aoii(&self) -> f64 {
        self.weighted(|s| s.delta as f64)
    }

    fn weighted(&self, f: impl Fn(SysState) -> f64) -> f64 {
        let mut acc = 0.0;
        for (d, row) in self.pi.iter().enumerate() {
            for (delta, &w) in row.iter().enumerate() {
                if w > 0.0 {
                    acc += w * f(SysState::new(d, delta));
                }
            }
        }
        acc
    }
}

pub fn power_oracle(policy: &ThresholdPolicy, params: &SystemParams, cap: usize, tol: f64) -> PowerOracle {
    let n = params.n();
    let (p, ps) = (params.p(), params.p_s());
    let k = mismatch_kernel(n, p);
    let mut pi = vec![vec![0.0; cap + 1]; n];
    pi[0][0] = 1.0;
    let mut next = pi.clone();
    let mut change = f64::INFINITY;
    let mut it = 0;
    while change > tol && it < 2_000_000 {
        for row in next.iter_mut() {
            row.iter_mut().for_each(|w| *w = 0.0);
        }
        for d in 0..n {
            for delta in 0..=cap {
                let w = pi[d][delta];
                if w == 0.0 {
                    continue;
                }
                let tx = policy.action(SysState::new(d, delta)).is_transmit();
                let keep = if tx { 1.0 - ps } else { 1.0 };
                if tx {
                    next[0][0] += w * ps * (1.0 - 2.0 * p);
                    next[1][1] += w * ps * 2.0 * p;
                }
                for (nd, &q) in k[d].iter().enumerate() {
                    if q > 0.0 {
                        let nage = if nd == 0 { 0 } else { (delta + nd).min(cap) };
                        next[nd][nage] += w * keep * q;
                    }
                }
            }
        }
        change = pi
            .iter()
            .flatten()
            .zip(next.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .sum();
        std::mem::swap(&mut pi, &mut next);
        it += 1;
    }
    PowerOracle { cap, pi, iterations: it, last_change: change }
}

/// Non-increasing thresholds with `n_1` in `1..=max` and `n_{N-1} >= 1`.
pub fn random_policy(rng: &mut impl Rng, n: usize, max: usize) -> ThresholdPolicy {
    let mut t = Vec::with_capacity(n - 1);
    let mut hi = max;
    for _ in 1..n {
        let v = rng.random_range(1..=hi);
        t.push(v);
        hi = v;
    }
    ThresholdPolicy::new(t).unwrap()
}
