//! Relative value iteration on the truncated MDP, with the threshold-structure
//! shortcut: once some state `y` is active, every state `x` with
//! `x.d >= y.d` and `x.delta >= y.delta` is active too, so its minimum
//! operator is skipped.
//!
//! Sweeps run d-major with increasing `delta`, so the shortcut reduces to
//! "`delta` is at least the smallest threshold found so far in this sweep".
//! Only reachable cells (`delta >= l_d`) take part; virtual cells never
//! feed back into reachable values and always take the full minimum.

use crate::error::{Error, Result};
use crate::mdp::{Grid, SolverConfig, TruncatedMdp};
use crate::source::{is_reachable, lower_bound, Action, SysState};

/// Relative values over the dense grid, normalised to zero at the reference
/// state. `q_ref` is the last interim value at the reference state, which
/// converges to the optimal average cost.
#[derive(Debug, Clone)]
pub struct ValueFunction {
    grid: Grid,
    v: Vec<f64>,
    pub q_ref: f64,
}

impl ValueFunction {
    /// `V_0(x) = x_delta`.
    pub fn initial(grid: Grid) -> Self {
        let v = (0..grid.len()).map(|i| grid.state(i).delta as f64).collect();
        Self { grid, v, q_ref: 0.0 }
    }

    pub fn from_values(grid: Grid, v: Vec<f64>) -> Result<Self> {
        if v.len() != grid.len() {
            return Err(Error::InvalidParams(format!(
                "value vector has {} entries, grid has {}",
                v.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, v, q_ref: 0.0 })
    }

    pub fn get(&self, s: SysState) -> f64 {
        self.v[self.grid.index(s)]
    }

    pub fn values(&self) -> &[f64] {
        &self.v
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }
}

/// Per-`d` activation thresholds for `d = 1..N-1`; `None` means the policy
/// never transmits at that mismatch.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ThresholdPolicy {
    n: Vec<Option<usize>>,
}

impl ThresholdPolicy {
    /// Finite thresholds, index `i` holding `n_{i+1}`.
    pub fn new(thresholds: Vec<usize>) -> Result<Self> {
        Self::from_options(thresholds.into_iter().map(Some).collect())
    }

    pub fn from_options(n: Vec<Option<usize>>) -> Result<Self> {
        if n.is_empty() {
            return Err(Error::Structure("policy needs at least one threshold".into()));
        }
        if n.contains(&Some(0)) {
            return Err(Error::Structure("thresholds start at 1; (0,0) is never active".into()));
        }
        Ok(Self { n })
    }

    /// Same threshold `k` at every `d` of an `n_states` source.
    pub fn uniform(n_states: usize, k: usize) -> Result<Self> {
        Self::new(vec![k; n_states.saturating_sub(1)])
    }

    /// Number of mismatch levels covered (`N - 1`).
    pub fn len(&self) -> usize {
        self.n.len()
    }

    pub fn is_empty(&self) -> bool {
        self.n.is_empty()
    }

    /// Threshold at mismatch `d >= 1`.
    pub fn threshold(&self, d: usize) -> Option<usize> {
        self.n[d - 1]
    }

    pub fn thresholds(&self) -> &[Option<usize>] {
        &self.n
    }

    /// All thresholds, or `None` if any is the never-transmit sentinel.
    pub fn finite(&self) -> Option<Vec<usize>> {
        self.n.iter().copied().collect()
    }

    pub fn is_finite(&self) -> bool {
        self.n.iter().all(Option::is_some)
    }

    pub fn action(&self, s: SysState) -> Action {
        if s.d == 0 {
            return Action::Idle;
        }
        match self.n[s.d - 1] {
            Some(t) if s.delta >= t => Action::Transmit,
            _ => Action::Idle,
        }
    }

    /// Largest finite threshold (`tau`).
    pub fn max_threshold(&self) -> Option<usize> {
        self.n.iter().flatten().copied().max()
    }

    /// Smallest finite threshold.
    pub fn min_threshold(&self) -> Option<usize> {
        self.n.iter().flatten().copied().min()
    }

    pub fn is_non_increasing(&self) -> bool {
        let key = |t: &Option<usize>| t.unwrap_or(usize::MAX);
        self.n.windows(2).all(|w| key(&w[0]) >= key(&w[1]))
    }

    /// Componentwise `self <= other`, with the sentinel above every integer.
    pub fn le(&self, other: &Self) -> bool {
        let key = |t: &Option<usize>| t.unwrap_or(usize::MAX);
        self.n.len() == other.n.len() && self.n.iter().zip(&other.n).all(|(a, b)| key(a) <= key(b))
    }
}

impl std::fmt::Display for ThresholdPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[")?;
        for (i, t) in self.n.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            match t {
                Some(t) => write!(f, "{t}")?,
                None => write!(f, "inf")?,
            }
        }
        write!(f, "]")
    }
}

/// Chosen action on every grid cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionMap {
    grid: Grid,
    active: Vec<bool>,
}

impl ActionMap {
    pub fn idle(grid: Grid) -> Self {
        Self {
            grid,
            active: vec![false; grid.len()],
        }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(SysState) -> bool) -> Self {
        let active = (0..grid.len()).map(|i| f(grid.state(i))).collect();
        Self { grid, active }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn is_active(&self, s: SysState) -> bool {
        self.active[self.grid.index(s)]
    }

    pub fn set(&mut self, s: SysState, on: bool) {
        let i = self.grid.index(s);
        self.active[i] = on;
    }
}

/// Reads thresholds off an action map over reachable cells
/// (`delta >= l_d`).
///
/// A row that is active on its whole reachable range gets threshold 1: any
/// value up to `l_d` induces the same behaviour, and 1 is the canonical
/// "always transmit at this mismatch".
pub fn extract_thresholds(active: &ActionMap) -> Result<ThresholdPolicy> {
    let grid = active.grid();
    if active.is_active(SysState::SYNCED) {
        return Err(Error::Structure("(0,0) is active".into()));
    }
    let mut n = Vec::with_capacity(grid.n - 1);
    for d in 1..grid.n {
        let lo = lower_bound(d);
        let first = (lo..=grid.m).find(|&delta| active.is_active(SysState::new(d, delta)));
        if let Some(t) = first {
            if let Some(gap) = (t..=grid.m).find(|&delta| !active.is_active(SysState::new(d, delta))) {
                return Err(Error::Structure(format!(
                    "row d={d} switches on at {t} but is idle again at {gap}"
                )));
            }
        }
        n.push(first.map(|t| if t == lo { 1 } else { t }));
    }
    let policy = ThresholdPolicy::from_options(n)?;
    if !policy.is_non_increasing() {
        return Err(Error::Structure(format!("thresholds {policy} increase with d")));
    }
    Ok(policy)
}

/// Expected next-slot value after a successful delivery.
fn reset_value(mdp: &TruncatedMdp, v: &[f64]) -> f64 {
    let grid = mdp.grid();
    let p = mdp.params().p();
    (1.0 - 2.0 * p) * v[grid.index(SysState::SYNCED)] + 2.0 * p * v[grid.index(SysState::new(1, 1))]
}

fn idle_value(mdp: &TruncatedMdp, v: &[f64], idx: usize) -> f64 {
    let (next, prob) = mdp.row(idx, Action::Idle);
    next.iter().zip(prob).map(|(&j, &w)| w * v[j as usize]).sum()
}

/// `V^1(s) - V^0(s)` against `vf`.
///
/// Written as `lambda + p_s (E_reset - E_idle(s))`, which is algebraically
/// the difference of the two action branches and gives exactly `lambda` at
/// `(0,0)` where both expectations coincide.
pub fn delta_v(mdp: &TruncatedMdp, vf: &ValueFunction, s: SysState) -> f64 {
    let idx = mdp.grid().index(s);
    let v = vf.values();
    mdp.lambda() + mdp.params().p_s() * (reset_value(mdp, v) - idle_value(mdp, v, idx))
}

#[derive(Debug, Clone, Default)]
pub struct RviOptions {
    /// Skip minimum operators using the threshold structure.
    pub prune: bool,
    /// Starting values; `V_0(x) = x_delta` when absent.
    pub initial: Option<ValueFunction>,
}

#[derive(Debug, Clone)]
pub struct RviSolution {
    pub policy: ThresholdPolicy,
    pub value: ValueFunction,
    pub active: ActionMap,
    pub iterations: usize,
    /// Sup-norm change of the final sweep.
    pub span: f64,
    /// Minimum operators avoided over the whole run.
    pub skipped: u64,
    /// Mismatch levels whose threshold hit the cap (reported as `None`).
    pub truncated: Vec<usize>,
}

impl RviSolution {
    /// Optimal average cost estimate.
    pub fn theta(&self) -> f64 {
        self.value.q_ref
    }
}

/// Improved relative value iteration with `V_0(x) = x_delta`.
pub fn rvi_solve(mdp: &TruncatedMdp, cfg: &SolverConfig) -> Result<RviSolution> {
    rvi_solve_with(mdp, cfg, RviOptions { prune: true, initial: None }, |_, _| {})
}

/// Value iteration with explicit options. `observer` sees the iteration
/// number and the normalised values after every sweep.
pub fn rvi_solve_with(
    mdp: &TruncatedMdp,
    cfg: &SolverConfig,
    opts: RviOptions,
    mut observer: impl FnMut(usize, &[f64]),
) -> Result<RviSolution> {
    cfg.validate(mdp.params())?;
    let grid = mdp.grid();
    if grid.m != cfg.m {
        return Err(Error::InvalidParams(format!(
            "MDP built with m={} but config has m={}",
            grid.m, cfg.m
        )));
    }
    let lambda = mdp.lambda();
    let p_s = mdp.params().p_s();
    let ref_idx = grid.index(cfg.ref_state);

    let mut v = match opts.initial {
        Some(vf) if vf.grid == grid => vf.v,
        Some(_) => return Err(Error::InvalidParams("warm start grid mismatch".into())),
        None => ValueFunction::initial(grid).v,
    };
    let mut q = vec![0.0; grid.len()];
    let mut active = vec![false; grid.len()];
    let mut skipped = 0u64;
    let row_len = grid.m + 1;
    let lower: Vec<usize> = (0..grid.n).map(lower_bound).collect();

    for iteration in 1..=cfg.max_iter {
        let e_reset = reset_value(mdp, &v);
        // Smallest threshold seen so far this sweep over rows d' <= d.
        let mut best = usize::MAX;
        for d in 0..grid.n {
            for delta in 0..row_len {
                let idx = d * row_len + delta;
                let e_idle = idle_value(mdp, &v, idx);
                let q0 = delta as f64 + e_idle;
                let diff = lambda + p_s * (e_reset - e_idle);
                let transmit = if d == 0 && delta == 0 {
                    false
                } else if d == 0 || delta < lower[d] {
                    diff <= 0.0
                } else if opts.prune && delta >= best {
                    skipped += 1;
                    true
                } else {
                    let on = diff <= 0.0;
                    if on && delta < best {
                        best = delta;
                    }
                    on
                };
                active[idx] = transmit;
                q[idx] = if transmit { q0 + diff } else { q0 };
            }
        }
        let q_ref = q[ref_idx];
        let mut span = 0.0f64;
        for (vi, &qi) in v.iter_mut().zip(&q) {
            let next = qi - q_ref;
            span = span.max((next - *vi).abs());
            *vi = next;
        }
        if !span.is_finite() {
            return Err(Error::NotConverged { iterations: iteration, span });
        }
        observer(iteration, &v);
        if span < cfg.eps {
            let map = ActionMap { grid, active };
            let raw = extract_thresholds(&map)?;
            let mut truncated = Vec::new();
            let n = raw
                .thresholds()
                .iter()
                .enumerate()
                .map(|(i, t)| match t {
                    Some(t) if *t < grid.m => Some(*t),
                    _ => {
                        truncated.push(i + 1);
                        None
                    }
                })
                .collect();
            return Ok(RviSolution {
                policy: ThresholdPolicy::from_options(n)?,
                value: ValueFunction { grid, v, q_ref },
                active: map,
                iterations: iteration,
                span,
                skipped,
                truncated,
            });
        }
    }
    Err(Error::NotConverged {
        iterations: cfg.max_iter,
        span: f64::NAN,
    })
}

/// First violation of monotonicity of `v` in `delta` (fixed `d`) and in `d`
/// (fixed `delta`), over reachable states only.
///
/// Increase must be strict wherever no idle successor can reach the cap.
/// Within `N - 1` of the cap successors fold onto `delta = m` and values tie,
/// so there only non-decrease (up to rounding) is required.
pub fn monotonicity_violation(grid: Grid, v: &[f64]) -> Option<String> {
    let at = |d: usize, delta: usize| v[grid.index(SysState::new(d, delta))];
    let band = grid.m.saturating_sub(grid.n - 1);
    let below = |hi: f64, lo: f64, delta: usize| {
        if delta < band {
            hi <= lo
        } else {
            hi < lo - 1e-12 * (1.0 + lo.abs())
        }
    };
    for d in 1..grid.n {
        let lo = crate::source::lower_bound(d);
        for delta in lo..grid.m {
            if below(at(d, delta + 1), at(d, delta), delta) {
                return Some(format!("V({d},{}) <= V({d},{delta})", delta + 1));
            }
        }
    }
    for delta in 1..=grid.m {
        if at(1, delta) <= at(0, 0) {
            return Some(format!("V(1,{delta}) <= V(0,0)"));
        }
        for d in 1..grid.n - 1 {
            let (lo, hi) = (SysState::new(d, delta), SysState::new(d + 1, delta));
            if is_reachable(lo) && is_reachable(hi) && below(at(d + 1, delta), at(d, delta), delta) {
                return Some(format!("V({},{delta}) <= V({d},{delta})", d + 1));
            }
        }
    }
    None
}
