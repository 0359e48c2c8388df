//! Stationary analysis of a threshold policy on the infinite chain.
//!
//! Every state with `delta >= T` transmits, so the tail `delta >= T` of
//! each row `d` collapses into a single aggregate `Pi_d(T)` and the balance
//! equations close on a finite set of unknowns. `T = max(tau, 2)` where
//! `tau` is the largest threshold; the floor keeps `(1,1)` out of the tail
//! so that its dedicated balance row stays separate.

use crate::error::{Error, Result};
use crate::rvi::ThresholdPolicy;
use crate::source::{d_kernel, lower_bound, DKernel, SystemParams};
use crate::sparse::{solve_bordered, solve_sparse, SparseSystem};

/// Trailing unknowns `(r, pi_0(0))` and rows (rate definition,
/// normalisation) handled as a dense border.
const BORDER: usize = 2;

/// Slack below zero tolerated (and clamped) on solved masses.
pub const NEGATIVE_SLACK: f64 = 1e-10;

/// Unknown layout of an assembled system.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexMap {
    pub n: usize,
    /// Tail boundary: grid unknowns cover `delta < t`.
    pub t: usize,
    /// First `delta` kept on the grid for each `d` (index 0 unused).
    pub lo: Vec<usize>,
    start: Vec<usize>,
    /// Approximation only: `Pi_d(eta)` for `d = 1..N-1` start here.
    pub head: Option<usize>,
    /// Approximation only: separate unknown for `pi_1(1)`.
    pub pi11: Option<usize>,
    /// `Pi_d(T)` for `d = 1..N-1` start here.
    pub tail: usize,
    /// Total transmitting mass. Carried as its own unknown so that the only
    /// dense rows (its definition and normalisation) sit on a two-row border
    /// that the solver eliminates separately.
    pub rate: usize,
    pub pi00: usize,
    pub dim: usize,
}

impl IndexMap {
    fn new(n: usize, t: usize, lo: Vec<usize>, approx: bool) -> Self {
        let mut next = 0;
        let head = approx.then(|| {
            let h = next;
            next += n - 1;
            h
        });
        let pi11 = approx.then(|| {
            let h = next;
            next += 1;
            h
        });
        let mut start = vec![0; n];
        for d in 1..n {
            start[d] = next;
            next += t.saturating_sub(lo[d]);
        }
        let tail = next;
        next += n - 1;
        let rate = next;
        next += 1;
        let pi00 = next;
        Self {
            n,
            t,
            lo,
            start,
            head,
            pi11,
            tail,
            rate,
            pi00,
            dim: next + 1,
        }
    }

    /// Grid unknown for `pi_d(delta)`, if stored.
    pub fn grid(&self, d: usize, delta: usize) -> Option<usize> {
        (d >= 1 && d < self.n && delta >= self.lo[d] && delta < self.t)
            .then(|| self.start[d] + delta - self.lo[d])
    }

    pub fn tail(&self, d: usize) -> usize {
        self.tail + d - 1
    }

    pub fn head(&self, d: usize) -> Option<usize> {
        self.head.map(|h| h + d - 1)
    }

    /// Grid unknowns in layout order.
    pub fn grid_cells(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        (1..self.n).flat_map(move |d| {
            (self.lo[d]..self.t).map(move |delta| (d, delta, self.start[d] + delta - self.lo[d]))
        })
    }
}

/// Which balance system to assemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SystemKind {
    /// Exact finite reduction of the infinite chain.
    Exact,
    /// Heads `delta <= eta` lumped and bridged through an auxiliary
    /// uniform-threshold chain.
    Approx,
}

/// Stationary masses of a threshold policy.
#[derive(Debug, Clone)]
pub struct StationarySolveResult {
    pub n: usize,
    pub tau: usize,
    /// Tail boundary actually used (`max(tau, 2)`).
    pub t: usize,
    /// `pi[d][delta]` for `delta < t`; zero on virtual and unreachable cells.
    pub pi: Vec<Vec<f64>>,
    /// `Pi_d(t)`, index `d` (entry 0 unused).
    pub pi_tail: Vec<f64>,
    pub pi00: f64,
    pub rate: f64,
    /// Balance residual of the `(0,0)` row left out of the solve.
    pub origin_residual: f64,
    /// `|sum of masses - 1|`.
    pub mass_error: f64,
}

impl StationarySolveResult {
    /// `pi_d(delta)` for `delta < t`, `None` inside the tail.
    pub fn mass(&self, d: usize, delta: usize) -> Option<f64> {
        if d == 0 {
            return Some(if delta == 0 { self.pi00 } else { 0.0 });
        }
        (delta < self.t).then(|| self.pi[d][delta])
    }

    pub fn total_mass(&self) -> f64 {
        self.pi00 + (1..self.n).map(|d| self.pi[d].iter().sum::<f64>() + self.pi_tail[d]).sum::<f64>()
    }
}

#[derive(Debug, Clone)]
pub struct AoiiSolveResult {
    /// `omega[d][delta] = delta * pi_d(delta)` for `delta < t`.
    pub omega: Vec<Vec<f64>>,
    /// `Omega_d(t) = sum_{delta >= t} delta * pi_d(delta)`, index `d`.
    pub omega_tail: Vec<f64>,
    pub aoii: f64,
}

#[derive(Debug, Clone)]
pub struct ApproxContext {
    pub eta: usize,
    /// `Pi_d(eta)` (mass with `1 <= delta <= eta`), index `d`.
    pub head_mass: Vec<f64>,
    pub rho: f64,
    /// Exact solution for the uniform policy `[eta+1, ..., eta+1]`.
    pub sigma: StationarySolveResult,
    /// Approximate masses in the same shape as an exact result; cells with
    /// `delta <= eta` other than `(1,1)` are zero (they live in `head_mass`).
    pub solution: StationarySolveResult,
}

fn check_policy(policy: &ThresholdPolicy, params: &SystemParams) -> Result<Vec<usize>> {
    if policy.len() + 1 != params.n() {
        return Err(Error::InvalidParams(format!(
            "policy has {} thresholds, N={} needs {}",
            policy.len(),
            params.n(),
            params.n() - 1
        )));
    }
    let n = policy.finite().ok_or_else(|| {
        Error::Structure(format!("policy {policy} has a never-transmit row; cap thresholds first"))
    })?;
    if !policy.is_non_increasing() {
        return Err(Error::Structure(format!("thresholds {policy} increase with d")));
    }
    Ok(n)
}

/// Coefficient of one term on the right-hand side of a balance row.
enum Source {
    Var(usize),
    /// Stands in for `rho * sigma`: a multiple of the `pi00` unknown.
    Origin(f64),
    /// A multiple of the `pi_1(1)` unknown.
    Reset(f64),
}

/// Unknown the bridged head masses are proportional to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Anchor {
    /// `rho = pi_0(0) / sigma_0(0)`, relying on `pi_1(1) ~ 2p pi_0(0)`.
    Origin,
    /// `pi_1(1) / sigma_1(1)`.
    Reset,
}

struct Assembly<'a> {
    params: &'a SystemParams,
    kernel: DKernel,
    n: Vec<usize>,
    map: IndexMap,
    /// Approximation bridge: `(eta, sigma)`.
    bridge: Option<(usize, &'a StationarySolveResult)>,
    anchor: Anchor,
}

impl Assembly<'_> {
    fn transmits(&self, d: usize, delta: usize) -> bool {
        d >= 1 && delta >= self.n[d - 1]
    }

    /// Survival factor `1 - p_s a_{d,delta}`.
    fn keep(&self, d: usize, delta: usize) -> f64 {
        if self.transmits(d, delta) {
            self.params.p_f()
        } else {
            1.0
        }
    }

    /// Where the mass `pi_d(delta)` (with `1 <= delta < t`) is found.
    fn source(&self, d: usize, delta: usize) -> Option<Source> {
        if let Some((eta, sigma)) = self.bridge {
            if (d, delta) == (1, 1) {
                return self.map.pi11.map(Source::Var);
            }
            if delta <= eta {
                let s = sigma.mass(d, delta).unwrap_or(0.0);
                return (s != 0.0).then(|| match self.anchor {
                    Anchor::Origin => Source::Origin(s / sigma.pi00),
                    Anchor::Reset => Source::Reset(s / sigma.pi[1][1]),
                });
            }
        }
        self.map.grid(d, delta).map(Source::Var)
    }

    fn add_source(&self, sys: &mut SparseSystem, row: usize, d: usize, delta: usize, coef: f64) {
        match self.source(d, delta) {
            Some(Source::Var(j)) => sys.add(row, j, coef),
            Some(Source::Origin(r)) => sys.add(row, self.map.pi00, coef * r),
            Some(Source::Reset(r)) => sys.add(row, self.map.pi11.unwrap(), coef * r),
            None => {}
        }
    }

    /// `r - sum of transmitting masses = 0`.
    fn rate_row(&self, sys: &mut SparseSystem) {
        let row = self.map.rate;
        sys.add(row, row, 1.0);
        for d in 1..self.map.n {
            for delta in self.n[d - 1]..self.map.t {
                self.add_source(sys, row, d, delta, -1.0);
            }
            sys.add(row, self.map.tail(d), -1.0);
        }
    }

    /// `x - sum_{d'} P_{d',d} keep(d', delta-d) pi_{d'}(delta-d) = 0`.
    fn general_row(&self, sys: &mut SparseSystem, row: usize, own: usize, d: usize, delta: usize) {
        sys.add(row, own, 1.0);
        if delta <= d {
            return;
        }
        let prev = delta - d;
        for dp in self.kernel.predecessors(d) {
            let w = self.kernel.prob(dp, d) * self.keep(dp, prev);
            self.add_source(sys, row, dp, prev, -w);
        }
    }

    fn tail_row(&self, sys: &mut SparseSystem, d: usize) {
        let t = self.map.t;
        let row = self.map.tail(d);
        sys.add(row, row, 1.0);
        for dp in self.kernel.predecessors(d) {
            let w = self.kernel.prob(dp, d);
            for delta in t.saturating_sub(d).max(1)..t {
                self.add_source(sys, row, dp, delta, -w * self.keep(dp, delta));
            }
            sys.add(row, self.map.tail(dp), -w * self.params.p_f());
        }
    }

    /// Balance row of `pi_1(1)`.
    fn reset_row(&self, sys: &mut SparseSystem, row: usize, own: usize) {
        let (p, p_s) = (self.params.p(), self.params.p_s());
        sys.add(row, own, 1.0);
        sys.add(row, self.map.pi00, -2.0 * p);
        sys.add(row, self.map.rate, -2.0 * p_s * p);
    }
}

impl DKernel {
    /// Mismatch levels `d' >= 1` that reach `d` in one step.
    fn predecessors(&self, d: usize) -> impl Iterator<Item = usize> + '_ {
        let lo = d.saturating_sub(1).max(1);
        let hi = (d + 1).min(self.size() - 1);
        (lo..=hi).filter(move |&dp| self.prob(dp, d) > 0.0)
    }
}

/// Assembles the balance system of `policy`.
///
/// Exact layout: grid unknowns `pi_d(delta)`, `l_d <= delta < T`, d-major;
/// then `Pi_d(T)`; then `r`; then `pi_0(0)`. Row `i` is the balance equation of
/// unknown `i`, except the last row, which is normalisation in place of the
/// redundant `(0,0)` balance. Between the tails and `pi_0(0)` sits the
/// auxiliary transmitting-mass unknown `r`, defined by its own row.
pub fn assemble_sparse(
    policy: &ThresholdPolicy,
    params: &SystemParams,
    kind: SystemKind,
) -> Result<(SparseSystem, IndexMap)> {
    match kind {
        SystemKind::Exact => {
            let n = check_policy(policy, params)?;
            let asm = exact_assembly(params, n);
            Ok((build_exact(&asm), asm.map))
        }
        SystemKind::Approx => {
            let n = check_policy(policy, params)?;
            let (eta, sigma) = auxiliary(policy, params)?;
            let asm = approx_assembly(params, n, eta, &sigma, Anchor::Origin);
            Ok((build_approx(&asm, eta), asm.map))
        }
    }
}

fn exact_assembly(params: &SystemParams, n: Vec<usize>) -> Assembly<'_> {
    let big_n = params.n();
    let tau = *n.iter().max().unwrap();
    let t = tau.max(2);
    let lo = (0..big_n).map(|d| lower_bound(d).max(1)).collect();
    Assembly {
        params,
        kernel: d_kernel(params, false),
        n,
        map: IndexMap::new(big_n, t, lo, false),
        bridge: None,
        anchor: Anchor::Origin,
    }
}

fn build_exact(asm: &Assembly<'_>) -> SparseSystem {
    let map = &asm.map;
    let mut sys = SparseSystem::new(map.dim);
    for (d, delta, i) in map.grid_cells() {
        if (d, delta) == (1, 1) {
            asm.reset_row(&mut sys, i, i);
        } else {
            asm.general_row(&mut sys, i, i, d, delta);
        }
    }
    for d in 1..map.n {
        asm.tail_row(&mut sys, d);
    }
    asm.rate_row(&mut sys);
    normalisation(&mut sys, map);
    sys
}

fn normalisation(sys: &mut SparseSystem, map: &IndexMap) {
    let row = map.pi00;
    for j in (0..sys.dim()).filter(|&j| j != map.rate) {
        sys.add(row, j, 1.0);
    }
    sys.rhs[row] = 1.0;
}

fn clamp(value: f64, location: impl FnOnce() -> String) -> Result<f64> {
    if value >= 0.0 {
        Ok(value)
    } else if value >= -NEGATIVE_SLACK {
        Ok(0.0)
    } else {
        Err(Error::NegativeMass {
            value,
            location: location(),
        })
    }
}

/// Residual of the `(0,0)` balance row.
fn origin_residual(asm: &Assembly<'_>, x: &[f64]) -> f64 {
    let (p, p_s, p_f) = (asm.params.p(), asm.params.p_s(), asm.params.p_f());
    let map = &asm.map;
    let value = |d: usize, delta: usize| match asm.source(d, delta) {
        Some(Source::Var(j)) => x[j],
        Some(Source::Origin(r)) => r * x[map.pi00],
        Some(Source::Reset(r)) => r * x[map.pi11.unwrap()],
        None => 0.0,
    };
    let pi00 = x[map.pi00];
    // P_{1,0}: p, or 2p when d = 1 is also the top level (N = 2).
    let back = crate::source::d_kernel(asm.params, false).prob(1, 0);
    let first = asm.bridge.map_or(1, |(eta, _)| eta + 1);
    let mut inflow = (1.0 - 2.0 * p) * pi00 + back * p_f * x[map.tail(1)];
    for delta in first..map.t {
        inflow += back * asm.keep(1, delta) * value(1, delta);
    }
    if let Some(h) = map.head(1) {
        inflow += back * x[h];
    }
    let mut rate = 0.0;
    for d in 1..map.n {
        rate += (asm.n[d - 1]..map.t).map(|delta| value(d, delta)).sum::<f64>() + x[map.tail(d)];
    }
    inflow += p_s * (1.0 - 2.0 * p) * rate;
    (pi00 - inflow).abs()
}

fn unpack(asm: &Assembly<'_>, x: &[f64], tau: usize) -> Result<StationarySolveResult> {
    let map = &asm.map;
    let big_n = map.n;
    let mut pi = vec![vec![0.0; map.t]; big_n];
    for (d, delta, i) in map.grid_cells() {
        pi[d][delta] = clamp(x[i], || format!("pi_{d}({delta})"))?;
    }
    if let Some(j) = map.pi11 {
        pi[1][1] = clamp(x[j], || "pi_1(1)".into())?;
    }
    let mut pi_tail = vec![0.0; big_n];
    for (d, slot) in pi_tail.iter_mut().enumerate().skip(1) {
        *slot = clamp(x[map.tail(d)], || format!("Pi_{d}(tail)"))?;
    }
    let pi00 = clamp(x[map.pi00], || "pi_0(0)".into())?;
    let rate = (1..big_n)
        .map(|d| pi[d][asm.n[d - 1].min(map.t)..].iter().sum::<f64>() + pi_tail[d])
        .sum();
    let mut out = StationarySolveResult {
        n: big_n,
        tau,
        t: map.t,
        pi,
        pi_tail,
        pi00,
        rate,
        origin_residual: origin_residual(asm, x),
        mass_error: 0.0,
    };
    let heads: f64 = map
        .head
        .map_or(0.0, |h| (0..big_n - 1).map(|k| x[h + k]).sum::<f64>() - x[map.pi11.unwrap()]);
    out.mass_error = (out.total_mass() + heads - 1.0).abs();
    Ok(out)
}

/// Expected transmission rate of `policy` on the infinite chain.
pub fn exact_rate(policy: &ThresholdPolicy, params: &SystemParams) -> Result<StationarySolveResult> {
    let n = check_policy(policy, params)?;
    let tau = *n.iter().max().unwrap();
    let asm = exact_assembly(params, n);
    let sys = build_exact(&asm);
    let x = solve_bordered(&sys, BORDER, "stationary rate")?;
    unpack(&asm, &x, tau)
}

/// `eta` and the exact solution of the uniform policy `[eta+1, ...]`.
fn auxiliary(policy: &ThresholdPolicy, params: &SystemParams) -> Result<(usize, StationarySolveResult)> {
    let min = policy.min_threshold().unwrap_or(0);
    if min < 2 {
        return Err(Error::InvalidParams(format!(
            "approximation needs every threshold >= 2, policy is {policy}"
        )));
    }
    let eta = min - 1;
    let sigma = exact_rate(&ThresholdPolicy::uniform(params.n(), eta + 1)?, params)?;
    if !(sigma.pi00 > 0.0) {
        return Err(Error::Singular {
            kind: "approximation bridge",
            dim: 0,
            detail: "auxiliary chain has no mass at (0,0)".into(),
        });
    }
    Ok((eta, sigma))
}

fn approx_assembly<'a>(
    params: &'a SystemParams,
    n: Vec<usize>,
    eta: usize,
    sigma: &'a StationarySolveResult,
    anchor: Anchor,
) -> Assembly<'a> {
    let big_n = params.n();
    let tau = *n.iter().max().unwrap();
    let lo = (0..big_n).map(|d| lower_bound(d).max(eta + 1)).collect();
    Assembly {
        params,
        kernel: d_kernel(params, false),
        n,
        map: IndexMap::new(big_n, tau, lo, true),
        bridge: Some((eta, sigma)),
        anchor,
    }
}

fn build_approx(asm: &Assembly<'_>, eta: usize) -> SparseSystem {
    let map = &asm.map;
    let t = map.t;
    let mut sys = SparseSystem::new(map.dim);
    let pi11 = map.pi11.unwrap();
    let (_, sigma) = asm.bridge.unwrap();

    // Head rows: mass of row d over 1..=min(eta+d, t-1) (from 2 for d = 1)
    // equals the head mass flowing in from rows d', minus the part that
    // lands in the tail when t - d <= eta.
    for d in 1..map.n {
        let row = map.head(d).unwrap();
        sys.add(row, row, 1.0);
        if d == 1 {
            sys.add(row, pi11, -1.0);
        }
        for delta in eta + 1..=(eta + d).min(t - 1) {
            if let Some(j) = map.grid(d, delta) {
                sys.add(row, j, 1.0);
            }
        }
        for dp in asm.kernel.predecessors(d) {
            let w = asm.kernel.prob(dp, d);
            sys.add(row, map.head(dp).unwrap(), -w);
            if t.saturating_sub(d) <= eta {
                let leak: f64 = (t.saturating_sub(d)..=eta).map(|k| sigma.mass(dp, k).unwrap_or(0.0)).sum();
                match asm.anchor {
                    Anchor::Origin => sys.add(row, map.pi00, w * leak / sigma.pi00),
                    Anchor::Reset => sys.add(row, pi11, w * leak / sigma.pi[1][1]),
                }
            }
        }
    }
    asm.reset_row(&mut sys, pi11, pi11);
    for (d, delta, i) in map.grid_cells() {
        asm.general_row(&mut sys, i, i, d, delta);
    }
    for d in 1..map.n {
        asm.tail_row(&mut sys, d);
    }
    asm.rate_row(&mut sys);
    // Heads already include pi_1(1).
    for j in 0..map.dim {
        if j != pi11 && j != map.rate {
            sys.add(map.pi00, j, 1.0);
        }
    }
    sys.rhs[map.pi00] = 1.0;
    sys
}

/// Approximate expected transmission rate for policies with large
/// thresholds: rows with `delta <= eta = min(n) - 1` are lumped per `d`, and
/// the few cells just above `eta` are fed from an auxiliary uniform policy
/// scaled by `rho = pi_0(0) / sigma_0(0)`.
pub fn approx_rate(policy: &ThresholdPolicy, params: &SystemParams) -> Result<(f64, ApproxContext)> {
    approx_rate_with(policy, params, Anchor::Origin)
}

pub fn approx_rate_with(
    policy: &ThresholdPolicy,
    params: &SystemParams,
    anchor: Anchor,
) -> Result<(f64, ApproxContext)> {
    let n = check_policy(policy, params)?;
    let tau = *n.iter().max().unwrap();
    let (eta, sigma) = auxiliary(policy, params)?;
    if params.p() == 0.0 {
        // Frozen source: every head row is a closed class, so the lumped
        // system is singular; all mass stays at (0,0).
        let solution = exact_rate(policy, params)?;
        return Ok((
            solution.rate,
            ApproxContext {
                eta,
                head_mass: vec![0.0; params.n()],
                rho: solution.pi00 / sigma.pi00,
                sigma,
                solution,
            },
        ));
    }
    let asm = approx_assembly(params, n, eta, &sigma, anchor);
    let sys = build_approx(&asm, eta);
    let x = solve_bordered(&sys, BORDER, "approximate rate")?;
    let solution = unpack(&asm, &x, tau)?;
    let map = &asm.map;
    let mut head_mass = vec![0.0; map.n];
    for (d, slot) in head_mass.iter_mut().enumerate().skip(1) {
        *slot = clamp(x[map.head(d).unwrap()], || format!("Pi_{d}(head)"))?;
    }
    let rho = solution.pi00 / sigma.pi00;
    let rate = solution.rate;
    Ok((
        rate,
        ApproxContext {
            eta,
            head_mass,
            rho,
            sigma,
            solution,
        },
    ))
}

/// Expected AoII of `policy` from its stationary masses.
pub fn expected_aoii(
    policy: &ThresholdPolicy,
    params: &SystemParams,
    stat: &StationarySolveResult,
) -> Result<AoiiSolveResult> {
    let n = check_policy(policy, params)?;
    let big_n = params.n();
    if stat.n != big_n || stat.tau != *n.iter().max().unwrap() {
        return Err(Error::InvalidParams("stationary result belongs to another policy".into()));
    }
    let t = stat.t;
    let kernel = d_kernel(params, false);
    let p_f = params.p_f();
    let keep = |d: usize, delta: usize| if delta >= n[d - 1] { p_f } else { 1.0 };

    let omega: Vec<Vec<f64>> = stat
        .pi
        .iter()
        .map(|row| row.iter().enumerate().map(|(delta, w)| delta as f64 * w).collect())
        .collect();

    let mut sys = SparseSystem::new(big_n - 1);
    for d in 1..big_n {
        let row = d - 1;
        sys.add(row, row, 1.0);
        let mut rhs = d as f64 * stat.pi_tail[d];
        for dp in kernel.predecessors(d) {
            let w = kernel.prob(dp, d);
            for delta in t.saturating_sub(d).max(1)..t {
                rhs += w * keep(dp, delta) * omega[dp][delta];
            }
            sys.add(row, dp - 1, -w * p_f);
        }
        sys.rhs[row] = rhs;
    }
    let x = solve_sparse(&sys, "expected AoII tail")?;
    let mut omega_tail = vec![0.0; big_n];
    for d in 1..big_n {
        omega_tail[d] = clamp(x[d - 1], || format!("Omega_{d}(tail)"))?;
    }
    let aoii = (1..big_n)
        .map(|d| omega[d].iter().sum::<f64>() + omega_tail[d])
        .sum();
    Ok(AoiiSolveResult {
        omega,
        omega_tail,
        aoii,
    })
}

/// Rate and expected AoII of `policy` in one call.
pub fn evaluate(policy: &ThresholdPolicy, params: &SystemParams) -> Result<(StationarySolveResult, f64)> {
    let stat = exact_rate(policy, params)?;
    let aoii = expected_aoii(policy, params, &stat)?.aoii;
    Ok((stat, aoii))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(n: usize, p: f64, p_s: f64) -> SystemParams {
        SystemParams::new(n, p, p_s, 0.1).unwrap()
    }

    #[test]
    fn frozen_source_stays_synced() {
        let prm = params(5, 0.0, 0.8);
        let pol = ThresholdPolicy::new(vec![6, 4, 3, 2]).unwrap();
        let stat = exact_rate(&pol, &prm).unwrap();
        assert!((stat.pi00 - 1.0).abs() < 1e-12);
        assert!(stat.rate.abs() < 1e-12);
        assert!(expected_aoii(&pol, &prm, &stat).unwrap().aoii.abs() < 1e-12);
        let (rate, _) = approx_rate(&pol, &prm).unwrap();
        assert!(rate.abs() < 1e-12);
    }

    #[test]
    fn two_state_always_transmit_closed_form() {
        // N = 2, n = [1]: a two-state chain on {synced, mismatched} with
        // both kernel rows at the boundary.
        let (p, p_s) = (0.25, 0.6);
        let prm = params(2, p, p_s);
        let pol = ThresholdPolicy::new(vec![1]).unwrap();
        let stat = exact_rate(&pol, &prm).unwrap();
        let up = 2.0 * p;
        let down = p_s * (1.0 - 2.0 * p) + (1.0 - p_s) * 2.0 * p;
        let pi0 = down / (up + down);
        assert!((stat.pi00 - pi0).abs() < 1e-12, "{} vs {pi0}", stat.pi00);
        assert!((stat.rate - (1.0 - pi0)).abs() < 1e-12);
    }

    #[test]
    fn masses_are_normalised_and_balanced() {
        let prm = params(7, 0.2, 0.8);
        for pol in [vec![37, 16, 9, 1, 1, 1], vec![1; 6], vec![5, 5, 3, 3, 2, 2], vec![2; 6]] {
            let pol = ThresholdPolicy::new(pol).unwrap();
            let stat = exact_rate(&pol, &prm).unwrap();
            assert!(stat.mass_error < 1e-8);
            assert!(stat.origin_residual < 1e-8, "{pol}: {}", stat.origin_residual);
            for d in 1..7 {
                for delta in 0..lower_bound(d).min(stat.t) {
                    assert_eq!(stat.pi[d][delta], 0.0);
                }
            }
        }
    }

    #[test]
    fn layout_is_d_major_with_tails_last() {
        let prm = params(7, 0.2, 0.8);
        let pol = ThresholdPolicy::new(vec![37, 16, 9, 1, 1, 1]).unwrap();
        let (sys, map) = assemble_sparse(&pol, &prm, SystemKind::Exact).unwrap();
        assert!(map.dim <= 6 * 37 + 6 + 1);
        assert_eq!(map.pi00, map.dim - 1);
        assert_eq!(map.rate, map.dim - 2);
        assert_eq!(map.tail, map.dim - 8);
        let cells: Vec<_> = map.grid_cells().map(|c| c.2).collect();
        assert_eq!(cells, (0..map.tail).collect::<Vec<_>>());
        let (_, cols) = sys.nnz_profile();
        assert!(cols.iter().all(|&c| c <= 7 + 2));
        let (again, _) = assemble_sparse(&pol, &prm, SystemKind::Exact).unwrap();
        assert_eq!(sys.triplets(), again.triplets());
    }

    #[test]
    fn sentinel_thresholds_rejected() {
        let prm = params(4, 0.2, 0.8);
        let pol = ThresholdPolicy::from_options(vec![None, Some(3), Some(2)]).unwrap();
        assert!(matches!(exact_rate(&pol, &prm), Err(Error::Structure(_))));
        let wrong_len = ThresholdPolicy::new(vec![3, 2]).unwrap();
        assert!(exact_rate(&wrong_len, &prm).is_err());
    }

    #[test]
    fn approximation_exact_on_uniform_policies() {
        let prm = params(7, 0.2, 0.8);
        for k in [2, 5, 17, 40] {
            let pol = ThresholdPolicy::uniform(7, k).unwrap();
            let exact = exact_rate(&pol, &prm).unwrap().rate;
            let (approx, ctx) = approx_rate(&pol, &prm).unwrap();
            assert_eq!(ctx.eta, k - 1);
            assert!((approx - exact).abs() <= 1e-6 * exact, "k={k}: {approx} vs {exact}");
            assert!(ctx.solution.origin_residual < 1e-8);
        }
        let one = ThresholdPolicy::uniform(7, 1).unwrap();
        assert!(approx_rate(&one, &prm).is_err());
    }

    #[test]
    fn reset_anchor_is_exact() {
        let prm = params(7, 0.2, 0.8);
        for pol in [vec![100, 60, 40, 20, 10, 5], vec![556, 228, 140, 96, 70, 60], vec![9, 9, 4, 3, 3, 2]] {
            let pol = ThresholdPolicy::new(pol).unwrap();
            let exact = exact_rate(&pol, &prm).unwrap().rate;
            let (approx, _) = approx_rate_with(&pol, &prm, Anchor::Reset).unwrap();
            assert!((approx - exact).abs() <= 1e-9 * exact, "{pol}: {approx} vs {exact}");
        }
    }

    #[test]
    fn origin_anchor_error_shrinks_with_thresholds() {
        let prm = params(7, 0.2, 0.2);
        let base = [556, 228, 140, 96, 70, 60];
        let mut last = f64::INFINITY;
        for k in [1, 2, 4, 8] {
            let pol = ThresholdPolicy::new(base.iter().map(|x| x * k).collect()).unwrap();
            let exact = exact_rate(&pol, &prm).unwrap().rate;
            let (approx, ctx) = approx_rate(&pol, &prm).unwrap();
            let rel = (approx - exact).abs() / exact;
            assert!(rel < last, "k={k}: {rel}");
            assert!(ctx.solution.origin_residual < 1e-8);
            assert!(ctx.solution.mass_error < 1e-8);
            last = rel;
        }
        assert!(last < 0.01, "{last}");
    }

    #[test]
    fn large_uniform_threshold_is_cheap_and_small() {
        let prm = params(7, 0.2, 0.8);
        let stat = exact_rate(&ThresholdPolicy::uniform(7, 5000).unwrap(), &prm).unwrap();
        assert!(stat.rate < 1e-6);
        assert!(stat.mass_error < 1e-8);
        assert!(stat.origin_residual < 1e-8);
    }

    #[test]
    fn aoii_tail_dominates_truncated_sum() {
        let prm = params(5, 0.3, 0.4);
        let pol = ThresholdPolicy::new(vec![12, 7, 4, 4]).unwrap();
        let stat = exact_rate(&pol, &prm).unwrap();
        let res = expected_aoii(&pol, &prm, &stat).unwrap();
        for d in 1..5 {
            assert!(res.omega_tail[d] >= stat.t as f64 * stat.pi_tail[d] - 1e-12);
            for delta in 0..stat.t {
                assert_eq!(res.omega[d][delta], delta as f64 * stat.pi[d][delta]);
            }
        }
        assert!(res.aoii > 0.0);
    }

    #[test]
    fn rate_decreases_with_thresholds() {
        let prm = params(5, 0.2, 0.8);
        let mut last = f64::INFINITY;
        for k in [1, 2, 4, 8, 16, 32, 64] {
            let r = exact_rate(&ThresholdPolicy::uniform(5, k).unwrap(), &prm).unwrap().rate;
            assert!(r < last);
            last = r;
        }
    }
}
