use nalgebra::DVector;
use proptest::prelude::*;
use saferl::harness::{init_theta, mpc_dims, ExperimentConfig};
use saferl::mpc::CondensedMpc;
use saferl::nlp::{find_interior_point, solve, NlpBase, NlpProblem, SolverConfig};
use saferl::toy::DiscProblem;

/// Relaxed solution of the disc problem by bisection on the multiplier:
/// `y = c / (1 + 2μ)` and `μ (r − ‖y‖²) = τ`.
fn disc_oracle(c: [f64; 2], r: f64, tau: f64) -> ([f64; 2], f64) {
    let cn2 = c[0] * c[0] + c[1] * c[1];
    let gap = |mu: f64| mu * (r - cn2 / (1.0 + 2.0 * mu).powi(2)) - tau;
    // gap is increasing on the branch where ‖y‖² < r.
    let mut lo = ((cn2.sqrt() / r.sqrt() - 1.0) / 2.0).max(0.0);
    let mut hi = lo + 1.0;
    while gap(hi) < 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if gap(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mu = 0.5 * (lo + hi);
    ([c[0] / (1.0 + 2.0 * mu), c[1] / (1.0 + 2.0 * mu)], mu)
}

fn check_disc(c: [f64; 2], r: f64, tau: f64) {
    let p = DiscProblem::new([c[0], c[1], r]);
    let cfg = SolverConfig::default().with_tau(tau);
    let rep = solve(&p, &cfg, None).unwrap();
    let z = &rep.point;
    assert!(p.residual(z).amax() <= 1e-10);
    assert!(p.ineq_values(&z.y)[0] < 0.0);
    assert!(z.mu[0] > 0.0);
    let (y, mu) = disc_oracle(c, r, tau);
    assert!((z.y[0] - y[0]).abs() < 1e-8, "{:?} vs {y:?}", z.y);
    assert!((z.y[1] - y[1]).abs() < 1e-8);
    assert!((z.mu[0] - mu).abs() <= 1e-8 * mu.max(1.0));
}

#[test]
fn disc_active_and_inactive() {
    check_disc([2.0, 0.0], 1.0, 1e-2);
    check_disc([0.3, 0.2], 1.0, 1e-6);
    check_disc([-1.5, 1.5], 0.5, 1e-8);
}

#[test]
fn residual_history_ends_below_tolerance() {
    let p = DiscProblem::new([1.2, -0.4, 1.0]);
    let rep = solve(&p, &SolverConfig::default().with_tau(1e-4), None).unwrap();
    assert_eq!(rep.residual_history.len(), rep.iterations + 1);
    assert!(*rep.residual_history.last().unwrap() <= 1e-10);
    assert_eq!(rep.residual_norm, *rep.residual_history.last().unwrap());
}

#[test]
fn invalid_configuration_is_rejected() {
    let p = DiscProblem::new([1.0, 0.0, 1.0]);
    assert!(solve(&p, &SolverConfig::default().with_tau(0.0), None).is_err());
    let cfg = SolverConfig {
        fraction_to_boundary: 1.0,
        ..SolverConfig::default()
    };
    assert!(solve(&p, &cfg, None).is_err());
    assert!(solve(
        &DiscProblem::new([0.0, 0.0, -1.0]),
        &SolverConfig::default(),
        None
    )
    .is_err());
}

#[test]
fn interior_point_of_mpc() {
    let cfg = ExperimentConfig::case_defaults(1).unwrap();
    let theta = init_theta(&cfg).unwrap();
    for s in [[0.7, 0.7], [0.0, 0.95], [-0.6, 0.3]] {
        let mpc =
            CondensedMpc::new(&theta, &DVector::from_vec(s.to_vec()), mpc_dims(&cfg)).unwrap();
        let anchor = DVector::zeros(mpc.dims().n_y);
        let y = find_interior_point(&mpc, &anchor, &SolverConfig::default()).unwrap();
        assert!(mpc.ineq_values(&y).max() < 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn disc_matches_oracle(
        c0 in -3.0f64..3.0,
        c1 in -3.0f64..3.0,
        r in 0.2f64..2.0,
        tau_exp in 2i32..9,
    ) {
        check_disc([c0, c1], r, 10f64.powi(-tau_exp));
    }
}
