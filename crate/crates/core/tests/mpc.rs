use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use saferl::harness::{init_theta, mpc_dims, ExperimentConfig};
use saferl::mpc::{
    build_mpc_nlp, hull_containment_check, polytope_membership, CondensedMpc, Membership,
    PolytopeW, ThetaParams,
};
use saferl::nlp::{solve, NlpBase, NlpProblem, ParametricNlp, QuadraticNlp, SolverConfig};
use saferl::policy::deterministic_action;
use saferl::sensitivity::first_order;

fn setup() -> (ExperimentConfig, ThetaParams<f64>, SolverConfig<f64>) {
    let cfg = ExperimentConfig::case_defaults(1).unwrap();
    let theta = init_theta(&cfg).unwrap();
    let solver = SolverConfig::default().with_tau(cfg.tau);
    (cfg, theta, solver)
}

fn states() -> Vec<DVector<f64>> {
    [[0.7, 0.7], [0.3, -0.5], [-0.8, 0.2], [0.0, 0.0]]
        .iter()
        .map(|s| DVector::from_vec(s.to_vec()))
        .collect()
}

#[test]
fn sparse_and_condensed_agree() {
    let (cfg, theta, solver) = setup();
    let dims = mpc_dims(&cfg);
    for s in states() {
        let sparse = build_mpc_nlp(&theta, &s, dims, &DVector::zeros(2)).unwrap();
        let cond = CondensedMpc::new(&theta, &s, dims).unwrap();
        let zs = solve(&sparse, &solver, None).unwrap().point;
        let zc = solve(&cond, &solver, None).unwrap().point;
        let us = zs.y.rows(0, 2 * cfg.horizon).into_owned();
        assert!((&us - &zc.y).amax() < 1e-8, "{us} vs {}", zc.y);
        let xs = sparse.states(&zs.y);
        let xc = cond.states(&zc.y);
        for (a, b) in xs.iter().flatten().zip(xc.iter().flatten()) {
            assert!((a - b).amax() < 1e-8);
        }
        let bs = first_order(&sparse, &zs).unwrap();
        let bc = first_order(&cond, &zc).unwrap();
        assert!((&bs.dg_dd - &bc.dg_dd).amax() < 1e-7);
        assert!((&bs.dg_dtheta - &bc.dg_dtheta).amax() < 1e-7);
    }
}

#[test]
fn policy_jacobian_matches_finite_differences() {
    let (cfg, theta, solver) = setup();
    let dims = mpc_dims(&cfg);
    let s = DVector::from_vec(vec![0.7, 0.7]);
    let flat = theta.flatten();
    let action = |v: &DVector<f64>| {
        let t = ThetaParams::unflatten(v, theta.layout()).unwrap();
        let p = CondensedMpc::new(&t, &s, dims).unwrap();
        deterministic_action(&p, &solver, None).unwrap().0
    };
    let p = CondensedMpc::new(&theta, &s, dims).unwrap();
    let z = solve(&p, &solver, None).unwrap().point;
    let jac = first_order(&p, &z).unwrap().dg_dtheta;
    let h = 1e-6;
    let mut fd = DMatrix::zeros(2, flat.len());
    for i in 0..flat.len() {
        let (mut up, mut dn) = (flat.clone(), flat.clone());
        up[i] += h;
        dn[i] -= h;
        fd.set_column(i, &((action(&up) - action(&dn)) / (2.0 * h)));
    }
    let err = (&jac - &fd).norm() / fd.norm();
    assert!(err < 1e-6, "relative error {err}");
}

#[test]
fn disturbance_enters_cost_gradient() {
    let (cfg, theta, _) = setup();
    let s = DVector::from_vec(vec![0.3, -0.5]);
    let d = DVector::from_vec(vec![0.2, -0.1]);
    let p0 = build_mpc_nlp(&theta, &s, mpc_dims(&cfg), &DVector::zeros(2)).unwrap();
    let pd = p0.with_disturbance(&d);
    let y = DVector::from_fn(p0.dims().n_y, |i, _| (i as f64).sin());
    let diff = pd.cost_gradient(&y) - p0.cost_gradient(&y);
    let g = p0.cost_disturbance_jacobian();
    assert!((diff - g * d).amax() < 1e-14);
}

#[test]
fn oversized_polytope_is_infeasible() {
    let (cfg, mut theta, solver) = setup();
    theta.w = PolytopeW::square(1.5);
    let s = DVector::from_vec(vec![0.1, 0.0]);
    let p = CondensedMpc::new(&theta, &s, mpc_dims(&cfg)).unwrap();
    assert!(solve(&p, &solver, None).is_err());
}

#[test]
fn unflatten_rejects_wrong_length() {
    let (_, theta, _) = setup();
    let short = DVector::<f64>::zeros(theta.layout().len() - 1);
    assert!(ThetaParams::unflatten(&short, theta.layout()).is_err());
}

#[test]
fn hull_contains_constant_disturbances() {
    let (cfg, theta, solver) = setup();
    let s = DVector::from_vec(vec![0.7, 0.7]);
    let p = build_mpc_nlp(&theta, &s, mpc_dims(&cfg), &DVector::zeros(2)).unwrap();
    let z = solve(&p, &solver, None).unwrap().point;
    let states = p.states(&z.y);
    let inputs = p.inputs(&z.y)[0].clone();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let noise: Vec<Vec<DVector<f64>>> = (0..200)
        .map(|_| {
            let e: Vec<f64> = (0..theta.w.len()).map(|_| Exp1.sample(&mut rng)).collect();
            let total: f64 = e.iter().sum();
            let w = theta
                .w
                .vertices
                .iter()
                .zip(&e)
                .fold(DVector::zeros(2), |acc, (v, x)| acc + v * (x / total));
            vec![w; cfg.horizon]
        })
        .collect();
    let rep = hull_containment_check(&theta, &states, &inputs, &noise);
    assert_eq!(rep.checks, 200 * cfg.horizon);
    assert_eq!(rep.violations, 0, "max violation {}", rep.max_violation);
}

fn arb_theta() -> impl Strategy<Value = ThetaParams<f64>> {
    prop::collection::vec(-2.0f64..2.0, 26).prop_map(|v| {
        let (_, theta, _) = setup();
        ThetaParams::unflatten(&DVector::from_vec(v), theta.layout()).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn flatten_round_trip(theta in arb_theta()) {
        let flat = theta.flatten();
        let back = ThetaParams::unflatten(&flat, theta.layout()).unwrap();
        prop_assert_eq!(&back, &theta);
        prop_assert_eq!(back.flatten(), flat);
    }

    #[test]
    fn convex_combinations_are_members(
        raw in prop::collection::vec(0.0f64..1.0, 4),
        half in 0.01f64..1.0,
    ) {
        let total: f64 = raw.iter().sum::<f64>() + 1e-9;
        let verts = PolytopeW::square(half).vertices;
        let p = verts
            .iter()
            .zip(&raw)
            .fold(DVector::zeros(2), |acc, (v, x)| acc + v * (x / total));
        match polytope_membership(&verts, &p) {
            Membership::Feasible { weights, violation } => {
                prop_assert!(violation <= 1e-8);
                prop_assert!(weights.iter().all(|&w| w >= 0.0));
                prop_assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-8);
                let rebuilt = verts
                    .iter()
                    .zip(&weights)
                    .fold(DVector::zeros(2), |acc, (v, w)| acc + v * *w);
                prop_assert!((rebuilt - &p).amax() < 1e-8);
            }
            other => prop_assert!(false, "{:?}", other),
        }
    }

    #[test]
    fn points_outside_the_square_are_rejected(
        x in 1.01f64..3.0,
        y in -1.0f64..1.0,
        half in 0.01f64..1.0,
    ) {
        let verts = PolytopeW::square(half).vertices;
        let m = polytope_membership(&verts, &DVector::from_vec(vec![x * half, y * half]));
        prop_assert!(!m.is_feasible());
        prop_assert!((m.violation() - (x - 1.0) * half).abs() < 1e-8);
    }

    #[test]
    fn solutions_stay_interior(r in 0.0f64..0.95, phi in 0.0f64..std::f64::consts::TAU) {
        let (cfg, theta, solver) = setup();
        let s = DVector::from_vec(vec![r * phi.cos(), r * phi.sin()]);
        let p = CondensedMpc::new(&theta, &s, mpc_dims(&cfg)).unwrap();
        let z = solve(&p, &solver, None).unwrap().point;
        prop_assert!(p.ineq_values(&z.y).max() < 0.0);
        prop_assert!(z.mu.min() > 0.0);
        prop_assert!(p.residual(&z).amax() <= 1e-10);
    }
}
