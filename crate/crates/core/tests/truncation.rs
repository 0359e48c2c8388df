//! Results must not depend on the cap once it is large enough, and a cap
//! that is too small must be reported rather than silently used.

use aoii_core::{solve_constrained, Error, SolverConfig, SystemParams};

#[test]
fn caps_400_600_800_agree() {
    let params = SystemParams::new(7, 0.2, 0.8, 0.06).unwrap();
    let sols: Vec<_> = [400, 600, 800]
        .into_iter()
        .map(|m| solve_constrained(&params, &SolverConfig { m, ..SolverConfig::default() }).unwrap())
        .collect();
    for s in &sols[1..] {
        assert_eq!(s.policy.n_minus, sols[0].policy.n_minus);
        assert_eq!(s.policy.n_plus, sols[0].policy.n_plus);
        assert!((s.policy.mu - sols[0].policy.mu).abs() < 1e-9);
    }
}

#[test]
fn small_caps_raise_truncation() {
    let params = SystemParams::new(7, 0.2, 0.8, 0.06).unwrap();
    for m in [21, 25, 30, 36] {
        let err = solve_constrained(&params, &SolverConfig { m, ..SolverConfig::default() }).unwrap_err();
        assert!(matches!(err, Error::Truncation { .. }), "m={m}: {err}");
    }
    // Low transmission success pushes thresholds far out.
    let params = SystemParams::new(7, 0.2, 0.2, 0.06).unwrap();
    let err = solve_constrained(&params, &SolverConfig { m: 300, ..SolverConfig::default() }).unwrap_err();
    assert!(matches!(err, Error::Truncation { .. }), "{err}");
}
