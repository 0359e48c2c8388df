//! Rate-constrained AoII minimisation: bisection on the Lagrange multiplier
//! and randomisation between the two bracketing threshold policies.

use crate::error::{Error, Result};
use crate::mdp::{build_truncated_mdp, RateMode, SolverConfig};
use crate::rvi::{rvi_solve_with, RviOptions, ThresholdPolicy, ValueFunction};
use crate::source::SystemParams;
use crate::stationary::{approx_rate, exact_rate, expected_aoii, StationarySolveResult};

/// Two deterministic policies, re-drawn at every visit to `(0,0)`:
/// `n_minus` with probability `mu`, `n_plus` otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedPolicy {
    pub n_minus: ThresholdPolicy,
    pub n_plus: ThresholdPolicy,
    pub mu: f64,
    pub lambda_minus: f64,
    pub lambda_plus: f64,
}

impl MixedPolicy {
    /// A single deterministic policy.
    pub fn pure(policy: ThresholdPolicy, lambda: f64) -> Self {
        Self {
            n_minus: policy.clone(),
            n_plus: policy,
            mu: 0.0,
            lambda_minus: lambda,
            lambda_plus: lambda,
        }
    }

    pub fn is_pure(&self) -> bool {
        self.n_minus == self.n_plus || self.mu == 0.0 || self.mu == 1.0
    }
}

/// Mixing probability and whether the bracket was degenerate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mix {
    pub mu: f64,
    /// The endpoint rates coincide; `mu` is 0 and no mixing is needed.
    pub coincide: bool,
}

/// `mu = (alpha - r_plus) / (r_minus - r_plus)`, clamped to `[0, 1]`.
pub fn mix_coefficient(r_minus: f64, r_plus: f64, alpha: f64) -> Mix {
    if r_minus <= r_plus {
        return Mix { mu: 0.0, coincide: true };
    }
    let mu = ((alpha - r_plus) / (r_minus - r_plus)).clamp(0.0, 1.0);
    Mix { mu, coincide: false }
}

/// One multiplier evaluation.
#[derive(Debug, Clone)]
pub struct Probe {
    pub lambda: f64,
    pub policy: ThresholdPolicy,
    /// `None` when some threshold hit the truncation cap.
    pub rate: Option<f64>,
    pub rvi_iterations: usize,
    pub skipped: u64,
}

#[derive(Debug, Clone, Default)]
pub struct Diagnostics {
    /// Every probe in evaluation order (the `lambda = 0` probe first).
    pub probes: Vec<Probe>,
    /// `(lambda_minus, lambda_plus)` after every doubling or halving step.
    pub brackets: Vec<(f64, f64)>,
    pub doublings: usize,
    pub bisections: usize,
}

impl Diagnostics {
    pub fn rvi_iterations(&self) -> usize {
        self.probes.iter().map(|p| p.rvi_iterations).sum()
    }
}

/// Result of the multiplier search.
#[derive(Debug, Clone)]
pub struct Bracket {
    pub lambda_minus: f64,
    pub lambda_plus: f64,
    pub n_minus: ThresholdPolicy,
    pub n_plus: ThresholdPolicy,
    pub r_minus: f64,
    pub r_plus: f64,
    /// The `lambda = 0` policy already meets the budget.
    pub unconstrained: bool,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone)]
pub struct ConstrainedSolution {
    pub policy: MixedPolicy,
    /// `mu r_minus + (1 - mu) r_plus`.
    pub rate: f64,
    /// `mu aoii_minus + (1 - mu) aoii_plus`.
    pub aoii: f64,
    pub r_minus: f64,
    pub r_plus: f64,
    pub aoii_minus: f64,
    pub aoii_plus: f64,
    /// Long-run rate and AoII of per-visit mixing at `(0,0)`, weighting each
    /// endpoint by its mean cycle length `1 / pi_0(0)`.
    pub renewal_rate: f64,
    pub renewal_aoii: f64,
    pub unconstrained: bool,
    pub diagnostics: Diagnostics,
}

fn probe_rate(policy: &ThresholdPolicy, params: &SystemParams, mode: RateMode) -> Result<f64> {
    match mode {
        RateMode::Approx if policy.min_threshold().is_some_and(|t| t >= 2) => {
            approx_rate(policy, params).map(|r| r.0)
        }
        _ => exact_rate(policy, params).map(|s| s.rate),
    }
}

struct Prober<'a> {
    params: &'a SystemParams,
    cfg: &'a SolverConfig,
    warm: Option<ValueFunction>,
    diag: Diagnostics,
}

impl Prober<'_> {
    fn probe(&mut self, lambda: f64) -> Result<Probe> {
        let mdp = build_truncated_mdp(self.params, lambda, self.cfg.m)?;
        let initial = if self.cfg.warm_start { self.warm.take() } else { None };
        let sol = rvi_solve_with(&mdp, self.cfg, RviOptions { prune: true, initial }, |_, _| {})?;
        let rate = if sol.truncated.is_empty() {
            Some(probe_rate(&sol.policy, self.params, self.cfg.rate_mode)?)
        } else {
            None
        };
        let probe = Probe {
            lambda,
            policy: sol.policy,
            rate,
            rvi_iterations: sol.iterations,
            skipped: sol.skipped,
        };
        self.warm = Some(sol.value);
        self.diag.probes.push(probe.clone());
        Ok(probe)
    }
}

/// Doubling then bisection on `lambda` until the bracket is narrower than
/// `cfg.xi`.
///
/// A probe whose thresholds hit the cap is treated as under budget (its
/// thresholds exceed every representable one); if such a probe survives as
/// the upper endpoint the cap is too small and a truncation error results.
pub fn bisection(params: &SystemParams, cfg: &SolverConfig) -> Result<Bracket> {
    cfg.validate(params)?;
    let alpha = params.alpha();
    let mut prober = Prober {
        params,
        cfg,
        warm: None,
        diag: Diagnostics::default(),
    };

    let zero = prober.probe(0.0)?;
    let r0 = zero.rate.ok_or_else(|| Error::Truncation {
        m: cfg.m,
        detail: "the lambda = 0 policy never transmits at some mismatch".into(),
    })?;
    if r0 <= alpha {
        return Ok(Bracket {
            lambda_minus: 0.0,
            lambda_plus: 0.0,
            n_minus: zero.policy.clone(),
            n_plus: zero.policy,
            r_minus: r0,
            r_plus: r0,
            unconstrained: true,
            diagnostics: prober.diag,
        });
    }

    let mut lo = zero;
    let mut hi = prober.probe(1.0)?;
    prober.diag.brackets.push((lo.lambda, hi.lambda));
    while hi.rate.is_some_and(|r| r >= alpha) {
        let next = prober.probe(2.0 * hi.lambda)?;
        lo = std::mem::replace(&mut hi, next);
        prober.diag.doublings += 1;
        prober.diag.brackets.push((lo.lambda, hi.lambda));
    }
    while hi.lambda - lo.lambda >= cfg.xi {
        let mid = prober.probe(0.5 * (lo.lambda + hi.lambda))?;
        if mid.rate.is_some_and(|r| r >= alpha) {
            lo = mid;
        } else {
            hi = mid;
        }
        prober.diag.bisections += 1;
        prober.diag.brackets.push((lo.lambda, hi.lambda));
    }
    let r_plus = hi.rate.ok_or_else(|| Error::Truncation {
        m: cfg.m,
        detail: format!(
            "thresholds of the upper endpoint (lambda = {}) reach the cap: {}",
            hi.lambda, hi.policy
        ),
    })?;
    Ok(Bracket {
        lambda_minus: lo.lambda,
        lambda_plus: hi.lambda,
        n_minus: lo.policy,
        n_plus: hi.policy,
        r_minus: lo.rate.expect("lower endpoint always has a rate"),
        r_plus,
        unconstrained: false,
        diagnostics: prober.diag,
    })
}

fn endpoint(policy: &ThresholdPolicy, params: &SystemParams) -> Result<(StationarySolveResult, f64)> {
    let stat = exact_rate(policy, params)?;
    let aoii = expected_aoii(policy, params, &stat)?.aoii;
    Ok((stat, aoii))
}

/// Optimal randomised policy under the rate budget `params.alpha()`.
pub fn solve_constrained(params: &SystemParams, cfg: &SolverConfig) -> Result<ConstrainedSolution> {
    let b = bisection(params, cfg)?;
    let (s_minus, aoii_minus) = endpoint(&b.n_minus, params)?;
    let (s_plus, aoii_plus) = if b.n_plus == b.n_minus {
        (s_minus.clone(), aoii_minus)
    } else {
        endpoint(&b.n_plus, params)?
    };
    // Endpoint rates come from the exact solve even when probes used the
    // approximation, so that the mixed rate meets the budget exactly.
    let (r_minus, r_plus) = (s_minus.rate, s_plus.rate);
    let mu = if b.unconstrained {
        0.0
    } else {
        mix_coefficient(r_minus, r_plus, params.alpha()).mu
    };
    let policy = MixedPolicy {
        n_minus: b.n_minus,
        n_plus: b.n_plus,
        mu,
        lambda_minus: b.lambda_minus,
        lambda_plus: b.lambda_plus,
    };

    let (w_minus, w_plus) = (mu / s_minus.pi00, (1.0 - mu) / s_plus.pi00);
    let cycles = w_minus + w_plus;
    Ok(ConstrainedSolution {
        policy,
        rate: mu * r_minus + (1.0 - mu) * r_plus,
        aoii: mu * aoii_minus + (1.0 - mu) * aoii_plus,
        r_minus,
        r_plus,
        aoii_minus,
        aoii_plus,
        renewal_rate: (w_minus * r_minus + w_plus * r_plus) / cycles,
        renewal_aoii: (w_minus * aoii_minus + w_plus * aoii_plus) / cycles,
        unconstrained: b.unconstrained,
        diagnostics: b.diagnostics,
    })
}
