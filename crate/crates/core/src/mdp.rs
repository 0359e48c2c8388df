//! Truncated Lagrangian MDP: AoII is capped at `m` and any mass that would
//! leave the grid is folded onto `(d', m)`.

use crate::error::{Error, Result};
use crate::source::{d_kernel, is_reachable, lower_bound, next_delta, Action, SysState, SystemParams};

pub const DEFAULT_M: usize = 800;
pub const DEFAULT_EPS: f64 = 0.01;
pub const DEFAULT_XI: f64 = 0.01;
pub const DEFAULT_MAX_ITER: usize = 100_000;

/// Solver knobs shared by value iteration and the multiplier search.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Truncation cap on the AoII.
    pub m: usize,
    /// Value-iteration stopping tolerance (sup-norm between sweeps).
    pub eps: f64,
    /// Width at which the multiplier bracket stops shrinking.
    pub xi: f64,
    pub ref_state: SysState,
    pub max_iter: usize,
    /// Seed each multiplier probe with the previous probe's values.
    pub warm_start: bool,
    pub rate_mode: RateMode,
}

/// How the multiplier search evaluates a probe's transmission rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RateMode {
    #[default]
    Exact,
    /// Lumped-head approximation, falling back to the exact rate when the
    /// smallest threshold is 1.
    Approx,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            m: DEFAULT_M,
            eps: DEFAULT_EPS,
            xi: DEFAULT_XI,
            ref_state: SysState::SYNCED,
            max_iter: DEFAULT_MAX_ITER,
            warm_start: true,
            rate_mode: RateMode::Exact,
        }
    }
}

impl SolverConfig {
    /// Smallest admissible cap: every lower bound plus one full sweep of `d`.
    pub fn min_cap(n: usize) -> usize {
        lower_bound(n - 1) + n
    }

    pub fn validate(&self, params: &SystemParams) -> Result<()> {
        let min = Self::min_cap(params.n());
        if self.m < min {
            return Err(Error::Truncation {
                m: self.m,
                detail: format!("cap must be at least {min} for N={}", params.n()),
            });
        }
        if !(self.eps > 0.0) || !(self.xi > 0.0) {
            return Err(Error::InvalidParams(format!(
                "eps and xi must be positive (eps={}, xi={})",
                self.eps, self.xi
            )));
        }
        if self.ref_state.d >= params.n() || self.ref_state.delta > self.m {
            return Err(Error::InvalidParams(format!(
                "reference state {:?} outside the truncated grid",
                self.ref_state
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParams("max_iter must be positive".into()));
        }
        Ok(())
    }
}

/// `C(x, a) = delta + lambda * a`.
pub fn instant_cost(s: SysState, a: Action, lambda: f64) -> f64 {
    s.delta as f64 + lambda * a.cost()
}

/// Dense `(d, delta)` grid with `delta` in `0..=m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid {
    pub n: usize,
    pub m: usize,
}

impl Grid {
    pub fn len(&self) -> usize {
        self.n * (self.m + 1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, s: SysState) -> usize {
        debug_assert!(s.d < self.n && s.delta <= self.m);
        s.d * (self.m + 1) + s.delta
    }

    pub fn state(&self, idx: usize) -> SysState {
        SysState::new(idx / (self.m + 1), idx % (self.m + 1))
    }

    /// States of the grid that carry mass: reachable ones, plus the folded
    /// boundary `delta = m` of every `d >= 1`.
    pub fn is_enumerated(&self, s: SysState) -> bool {
        s.d < self.n && s.delta <= self.m && (is_reachable(s) || (s.d >= 1 && s.delta == self.m))
    }
}

/// Successor lists of one action, stored CSR-style.
#[derive(Debug, Clone)]
struct Rows {
    offsets: Vec<u32>,
    next: Vec<u32>,
    prob: Vec<f64>,
}

impl Rows {
    fn row(&self, idx: usize) -> (&[u32], &[f64]) {
        let (a, b) = (self.offsets[idx] as usize, self.offsets[idx + 1] as usize);
        (&self.next[a..b], &self.prob[a..b])
    }
}

#[derive(Debug, Clone)]
pub struct TruncatedMdp {
    params: SystemParams,
    lambda: f64,
    grid: Grid,
    idle: Rows,
    transmit: Rows,
}

/// Builds the truncated MDP for multiplier `lambda` and cap `m`.
///
/// Rows exist for every grid cell so that value iteration can index densely;
/// cells off the reachable set never receive mass from reachable ones.
pub fn build_truncated_mdp(params: &SystemParams, lambda: f64, m: usize) -> Result<TruncatedMdp> {
    let min = SolverConfig::min_cap(params.n());
    if m < min {
        return Err(Error::Truncation {
            m,
            detail: format!("cap must be at least {min} for N={}", params.n()),
        });
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidParams(format!("lambda must be finite and non-negative, got {lambda}")));
    }
    let grid = Grid { n: params.n(), m };
    let kernel = d_kernel(params, false);
    let p = params.p();
    let p_s = params.p_s();
    let p_f = params.p_f();
    let reset = [
        (SysState::SYNCED, p_s * (1.0 - 2.0 * p)),
        (SysState::new(1, 1), 2.0 * p_s * p),
    ];

    let build = |transmit: bool| {
        let mut rows = Rows {
            offsets: Vec::with_capacity(grid.len() + 1),
            next: Vec::with_capacity(grid.len() * 5),
            prob: Vec::with_capacity(grid.len() * 5),
        };
        rows.offsets.push(0);
        let mut buf: Vec<(usize, f64)> = Vec::with_capacity(6);
        for idx in 0..grid.len() {
            let s = grid.state(idx);
            buf.clear();
            let mut push = |state: SysState, w: f64| {
                if w <= 0.0 {
                    return;
                }
                let folded = SysState::new(state.d, state.delta.min(m));
                let j = grid.index(folded);
                match buf.iter_mut().find(|(k, _)| *k == j) {
                    Some(e) => e.1 += w,
                    None => buf.push((j, w)),
                }
            };
            if transmit {
                for (st, w) in reset {
                    push(st, w);
                }
            }
            let scale = if transmit { p_f } else { 1.0 };
            for (nd, w) in kernel.successors(s.d) {
                push(SysState::new(nd, next_delta(s.delta, nd)), scale * w);
            }
            buf.sort_by_key(|e| e.0);
            for &(j, w) in &buf {
                rows.next.push(j as u32);
                rows.prob.push(w);
            }
            rows.offsets.push(rows.next.len() as u32);
        }
        rows
    };
    let idle = build(false);
    let transmit = build(true);
    Ok(TruncatedMdp {
        params: *params,
        lambda,
        grid,
        idle,
        transmit,
    })
}

impl TruncatedMdp {
    pub fn params(&self) -> &SystemParams {
        &self.params
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn m(&self) -> usize {
        self.grid.m
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    /// Successor indices and masses of `(state index, action)`.
    pub fn row(&self, idx: usize, a: Action) -> (&[u32], &[f64]) {
        match a {
            Action::Idle => self.idle.row(idx),
            Action::Transmit => self.transmit.row(idx),
        }
    }

    /// Successors of `s` under `a` as `(state, mass)` pairs.
    pub fn successors(&self, s: SysState, a: Action) -> Vec<(SysState, f64)> {
        let (next, prob) = self.row(self.grid.index(s), a);
        next.iter()
            .zip(prob)
            .map(|(&j, &w)| (self.grid.state(j as usize), w))
            .collect()
    }

    /// Reachable states plus the folded `delta = m` boundary, d-major.
    pub fn states(&self) -> impl Iterator<Item = SysState> + '_ {
        (0..self.grid.len())
            .map(|i| self.grid.state(i))
            .filter(|s| self.grid.is_enumerated(*s))
    }
}
