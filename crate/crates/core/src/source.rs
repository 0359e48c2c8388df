//! The N-state source, the mismatch/AoII penalty process, and the one-step
//! law of the system state `(d, delta)`.
//!
//! The source moves between adjacent values only; `d = |x - x_hat|` is the
//! mismatch seen by the receiver and `delta` is the AoII, which accumulates
//! `d` every slot the estimate is wrong and resets once it is correct.

use rand::Rng;

use crate::error::{Error, Result};

/// Source, channel and budget parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemParams {
    n: usize,
    p: f64,
    p_s: f64,
    alpha: f64,
}

impl SystemParams {
    /// `n` source states, adjacent-move probability `p`, channel success
    /// probability `p_s` and power budget `alpha`.
    pub fn new(n: usize, p: f64, p_s: f64, alpha: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidParams(format!("N must be at least 2, got {n}")));
        }
        if !(0.0..=1.0 / 3.0).contains(&p) {
            return Err(Error::InvalidParams(format!("p must lie in [0, 1/3], got {p}")));
        }
        if !(p_s > 0.0 && p_s <= 1.0) {
            return Err(Error::InvalidParams(format!("p_s must lie in (0, 1], got {p_s}")));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidParams(format!(
                "alpha must lie in (0, 1), got {alpha}"
            )));
        }
        Ok(Self { n, p, p_s, alpha })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn p_s(&self) -> f64 {
        self.p_s
    }

    pub fn p_f(&self) -> f64 {
        1.0 - self.p_s
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn with_p(&self, p: f64) -> Result<Self> {
        Self::new(self.n, p, self.p_s, self.alpha)
    }

    pub fn with_p_s(&self, p_s: f64) -> Result<Self> {
        Self::new(self.n, self.p, p_s, self.alpha)
    }

    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        Self::new(self.n, self.p, self.p_s, alpha)
    }

    /// Largest mismatch value, `N - 1`.
    pub fn d_max(&self) -> usize {
        self.n - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Idle,
    Transmit,
}

impl Action {
    pub fn is_transmit(self) -> bool {
        matches!(self, Action::Transmit)
    }

    /// Power cost of the action (one unit per attempt).
    pub fn cost(self) -> f64 {
        match self {
            Action::Idle => 0.0,
            Action::Transmit => 1.0,
        }
    }
}

/// The pair `(d, delta)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SysState {
    pub d: usize,
    pub delta: usize,
}

impl SysState {
    pub const SYNCED: SysState = SysState { d: 0, delta: 0 };

    pub const fn new(d: usize, delta: usize) -> Self {
        Self { d, delta }
    }

    /// Checks `d = 0 <=> delta = 0` and `d < N`.
    pub fn validate(&self, params: &SystemParams) -> Result<()> {
        if self.d >= params.n() {
            return Err(Error::InvalidState {
                d: self.d,
                delta: self.delta,
                reason: "mismatch exceeds N - 1",
            });
        }
        if (self.d == 0) != (self.delta == 0) {
            return Err(Error::InvalidState {
                d: self.d,
                delta: self.delta,
                reason: "d = 0 must coincide with delta = 0",
            });
        }
        Ok(())
    }
}

/// Smallest AoII reachable at mismatch `d` after leaving `(0, 0)`: `(d^2 + d) / 2`.
pub const fn lower_bound(d: usize) -> usize {
    d * (d + 1) / 2
}

/// True iff the state is `(0, 0)` or `d >= 1` with `delta >= lower_bound(d)`.
pub fn is_reachable(s: SysState) -> bool {
    if s.d == 0 {
        s.delta == 0
    } else {
        s.delta >= lower_bound(s.d)
    }
}

/// Birth-death kernel of the mismatch `d` when no update is received.
///
/// Self-loop `1 - 2p`, neighbour moves `p`, and `2p` out of the two
/// boundary levels. Inside a failed attempt every mass is scaled by `p_f`.
#[derive(Debug, Clone, PartialEq)]
pub struct DKernel {
    n: usize,
    probs: Vec<f64>,
}

impl DKernel {
    pub fn prob(&self, from: usize, to: usize) -> f64 {
        self.probs[from * self.n + to]
    }

    pub fn row(&self, from: usize) -> &[f64] {
        &self.probs[from * self.n..(from + 1) * self.n]
    }

    pub fn size(&self) -> usize {
        self.n
    }

    /// Non-zero entries of row `from`, in increasing `to` order.
    pub fn successors(&self, from: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.row(from)
            .iter()
            .copied()
            .enumerate()
            .filter(|&(_, w)| w > 0.0)
    }
}

/// Returns `P_{d,d'}` for the no-reception branch. With `failed_attempt`
/// the kernel is the `p_f`-scaled one that applies inside a failed attempt.
pub fn d_kernel(params: &SystemParams, failed_attempt: bool) -> DKernel {
    let n = params.n();
    let p = params.p();
    let scale = if failed_attempt { params.p_f() } else { 1.0 };
    let mut probs = vec![0.0; n * n];
    for d in 0..n {
        let row = &mut probs[d * n..(d + 1) * n];
        row[d] = 1.0 - 2.0 * p;
        if d == 0 {
            row[1] = 2.0 * p;
        } else if d == n - 1 {
            row[n - 2] = 2.0 * p;
        } else {
            row[d - 1] = p;
            row[d + 1] = p;
        }
        for w in row.iter_mut() {
            *w *= scale;
        }
    }
    DKernel { n, probs }
}

/// One successor of a `(state, action)` pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionEntry {
    pub next: SysState,
    pub prob: f64,
}

/// AoII after a slot that ends with mismatch `next_d`.
pub fn next_delta(delta: usize, next_d: usize) -> usize {
    if next_d == 0 {
        0
    } else {
        delta + next_d
    }
}

/// Full one-step law of `(d, delta)` under action `a`.
///
/// Successors are merged, zero masses dropped, and the list is sorted by
/// state so the output is deterministic.
pub fn next_state_distribution(
    s: SysState,
    a: Action,
    params: &SystemParams,
) -> Result<Vec<TransitionEntry>> {
    s.validate(params)?;
    let p = params.p();
    let kernel = d_kernel(params, a.is_transmit());
    let mut out: Vec<TransitionEntry> = Vec::with_capacity(5);
    let mut push = |next: SysState, prob: f64| {
        if prob <= 0.0 {
            return;
        }
        match out.iter_mut().find(|e| e.next == next) {
            Some(e) => e.prob += prob,
            None => out.push(TransitionEntry { next, prob }),
        }
    };
    if a.is_transmit() {
        // Delivered instantly: the estimate equals the pre-step source value.
        push(SysState::SYNCED, params.p_s() * (1.0 - 2.0 * p));
        push(SysState::new(1, 1), 2.0 * params.p_s() * p);
    }
    for (nd, w) in kernel.successors(s.d) {
        push(SysState::new(nd, next_delta(s.delta, nd)), w);
    }
    out.sort_by_key(|e| e.next);
    Ok(out)
}

/// How the source behaves at the edges of `1..=N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SourceModel {
    /// Every move is ±1 with probability `p` each relative to the estimate,
    /// which is what the `(d, delta)` kernel assumes. When a move would push
    /// the source out of range while `1 <= d <= N-2`, the pair `(x, x_hat)`
    /// is shifted one step inwards instead, which leaves `d` exactly as the
    /// unconstrained move would.
    #[default]
    TranslationInvariant,
    /// Boundary values only move inwards (probability `2p`). The induced
    /// mismatch process differs from the kernel whenever the source sits on
    /// a boundary with `1 <= d <= N-2`.
    Bounded,
}

/// Native source/receiver state: true value, estimate, last-correct slot
/// index `u`, and the current slot `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SourceState {
    pub x: usize,
    pub x_hat: usize,
    pub u: u64,
    pub t: u64,
}

impl SourceState {
    pub fn synced(x: usize) -> Self {
        Self {
            x,
            x_hat: x,
            u: 0,
            t: 0,
        }
    }

    pub fn mismatch(&self) -> usize {
        self.x.abs_diff(self.x_hat)
    }
}

/// Advances one slot: optional instant delivery of the pre-step sample, then
/// one source move. `u` becomes `t + 1` when the new estimate is correct, and
/// `t` when a delivery happened but the source moved away afterwards.
pub fn step_source<R: Rng + ?Sized>(
    src: SourceState,
    a: Action,
    channel_success: bool,
    params: &SystemParams,
    model: SourceModel,
    rng: &mut R,
) -> SourceState {
    let n = params.n();
    let p = params.p();
    let mut x = src.x;
    let mut x_hat = src.x_hat;
    let mut u = src.u;
    if a.is_transmit() && channel_success {
        x_hat = x;
        u = src.t;
    }
    let draw: f64 = rng.random();
    if draw < 2.0 * p {
        let step: isize = if draw < p { -1 } else { 1 };
        let target = x as isize + step;
        if (1..=n as isize).contains(&target) {
            x = target as usize;
        } else {
            let d = x.abs_diff(x_hat);
            if model == SourceModel::TranslationInvariant && d >= 1 && d + 1 < n {
                // Shift the estimate instead so that x - x_hat moves by `step`.
                x_hat = (x_hat as isize - step) as usize;
            } else {
                x = (x as isize - step) as usize;
            }
        }
    }
    let t = src.t + 1;
    if x == x_hat {
        u = t;
    }
    SourceState { x, x_hat, u, t }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(n: usize, p: f64, p_s: f64) -> SystemParams {
        SystemParams::new(n, p, p_s, 0.06).unwrap()
    }

    #[test]
    fn rejects_bad_params() {
        assert!(SystemParams::new(1, 0.1, 0.8, 0.1).is_err());
        assert!(SystemParams::new(3, 0.5, 0.8, 0.1).is_err());
        assert!(SystemParams::new(3, -0.1, 0.8, 0.1).is_err());
        assert!(SystemParams::new(3, 0.1, 0.0, 0.1).is_err());
        assert!(SystemParams::new(3, 0.1, 0.8, 1.0).is_err());
        assert!(SystemParams::new(3, 1.0 / 3.0, 1.0, 0.5).is_ok());
    }

    #[test]
    fn kernel_n3() {
        let k = d_kernel(&params(3, 0.2, 0.8), false);
        let expect = [[0.6, 0.4, 0.0], [0.2, 0.6, 0.2], [0.0, 0.4, 0.6]];
        for (d, row) in expect.iter().enumerate() {
            for (dn, &w) in row.iter().enumerate() {
                assert!((k.prob(d, dn) - w).abs() < 1e-15, "({d},{dn})");
            }
        }
    }

    #[test]
    fn frozen_source_kernel_is_identity() {
        for n in 2..8 {
            let k = d_kernel(&params(n, 0.0, 0.5), false);
            for d in 0..n {
                for dn in 0..n {
                    assert_eq!(k.prob(d, dn), if d == dn { 1.0 } else { 0.0 });
                }
            }
        }
    }

    #[test]
    fn kernel_rows_sum_to_one() {
        let pr = params(7, 0.2, 0.8);
        let k = d_kernel(&pr, false);
        let kf = d_kernel(&pr, true);
        for d in 0..7 {
            assert!((k.row(d).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!((kf.row(d).iter().sum::<f64>() - pr.p_f()).abs() < 1e-12);
        }
    }

    #[test]
    fn idle_from_synced() {
        let out = next_state_distribution(SysState::SYNCED, Action::Idle, &params(5, 0.2, 0.8)).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].next, SysState::SYNCED);
        assert!((out[0].prob - 0.6).abs() < 1e-15);
        assert_eq!(out[1].next, SysState::new(1, 1));
        assert!((out[1].prob - 0.4).abs() < 1e-15);
    }

    #[test]
    fn transmit_from_two_five() {
        let out = next_state_distribution(SysState::new(2, 5), Action::Transmit, &params(4, 0.2, 0.8)).unwrap();
        let expect = [
            (SysState::new(0, 0), 0.48),
            (SysState::new(1, 1), 0.32),
            (SysState::new(1, 6), 0.04),
            (SysState::new(2, 7), 0.12),
            (SysState::new(3, 8), 0.04),
        ];
        assert_eq!(out.len(), expect.len());
        for (e, (s, w)) in out.iter().zip(expect) {
            assert_eq!(e.next, s);
            assert!((e.prob - w).abs() < 1e-12, "{s:?}: {} vs {w}", e.prob);
        }
    }

    #[test]
    fn boundary_row_moves_inward() {
        let pr = params(6, 0.25, 0.8);
        let out = next_state_distribution(SysState::new(5, 40), Action::Idle, &pr).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].next, SysState::new(4, 44));
        assert!((out[0].prob - 0.5).abs() < 1e-15);
        assert_eq!(out[1].next, SysState::new(5, 45));
        assert!((out[1].prob - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rejects_inconsistent_states() {
        let pr = params(4, 0.2, 0.8);
        assert!(next_state_distribution(SysState::new(0, 3), Action::Idle, &pr).is_err());
        assert!(next_state_distribution(SysState::new(2, 0), Action::Idle, &pr).is_err());
        assert!(next_state_distribution(SysState::new(4, 10), Action::Idle, &pr).is_err());
    }

    #[test]
    fn reachability() {
        assert!(!is_reachable(SysState::new(3, 5)));
        assert!(is_reachable(SysState::new(3, 6)));
        assert!(is_reachable(SysState::SYNCED));
        assert!(!is_reachable(SysState::new(0, 1)));
        assert!(!is_reachable(SysState::new(1, 0)));
        assert_eq!(lower_bound(6), 21);
    }

    #[test]
    fn instant_reception_with_frozen_source() {
        let pr = params(5, 0.0, 0.8);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let src = SourceState { x: 4, x_hat: 1, u: 0, t: 7 };
        let next = step_source(src, Action::Transmit, true, &pr, SourceModel::default(), &mut rng);
        assert_eq!((next.x, next.x_hat, next.mismatch()), (4, 4, 0));
        assert_eq!(next.u, 8);
        assert_eq!(next.t, 8);
    }

    #[test]
    fn boundary_source_step_frequencies() {
        let pr = params(5, 0.3, 0.8);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let trials = 200_000;
        let moved = (0..trials)
            .filter(|_| {
                let s = step_source(SourceState::synced(1), Action::Idle, false, &pr, SourceModel::Bounded, &mut rng);
                assert!(s.x == 1 || s.x == 2);
                s.x == 2
            })
            .count();
        let frac = moved as f64 / trials as f64;
        let se = (0.6f64 * 0.4 / trials as f64).sqrt();
        assert!((frac - 0.6).abs() < 3.0 * se, "{frac}");
    }

    #[test]
    fn translation_keeps_values_in_range() {
        let pr = params(4, 1.0 / 3.0, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = SourceState::synced(2);
        for _ in 0..100_000 {
            let a = if rng.random::<bool>() { Action::Transmit } else { Action::Idle };
            let ok = rng.random::<bool>();
            s = step_source(s, a, ok, &pr, SourceModel::TranslationInvariant, &mut rng);
            assert!((1..=4).contains(&s.x) && (1..=4).contains(&s.x_hat));
        }
    }
}
