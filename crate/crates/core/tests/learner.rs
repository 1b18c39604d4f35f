use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use saferl::harness::{init_theta, ExperimentConfig};
use saferl::learner::{
    retain_window, safe_update, DataPoint, LearnerError, UpdateConfig, UpdateMode,
};
use saferl::mpc::{membership_residual, ThetaParams};

fn theta0() -> ThetaParams<f64> {
    init_theta(&ExperimentConfig::case_defaults(1).unwrap()).unwrap()
}

fn point(s: [f64; 2], a: [f64; 2], s_plus: [f64; 2]) -> DataPoint<f64> {
    DataPoint {
        s: DVector::from_vec(s.to_vec()),
        a: DVector::from_vec(a.to_vec()),
        s_plus: DVector::from_vec(s_plus.to_vec()),
    }
}

/// Data strictly inside `W` at `theta`.
fn inside_data(theta: &ThetaParams<f64>, n: usize, seed: u64) -> Vec<DataPoint<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let s = DVector::from_fn(2, |_, _| rng.gen_range(-0.7..0.7));
            let a = DVector::from_fn(2, |_, _| rng.gen_range(-0.5..0.5));
            let raw: Vec<f64> = (0..theta.w.len())
                .map(|_| rng.gen_range(0.0..1.0))
                .collect();
            let total: f64 = raw.iter().sum();
            let w = theta
                .w
                .vertices
                .iter()
                .zip(&raw)
                .fold(DVector::zeros(2), |acc, (v, x)| acc + v * (0.8 * x / total));
            DataPoint {
                s_plus: theta.nominal_step(&s, &a) + w,
                s,
                a,
            }
        })
        .collect()
}

/// `min_ϑ ½‖r − Σϑᵢ Wⁱ‖² / (1 + ‖ϑ‖²)` over a simplex grid: the cheapest
/// joint shift of `b0` and the vertices that places `r` in the hull when the
/// transition has `s = a = 0`.
fn grid_oracle(theta: &ThetaParams<f64>, r: &DVector<f64>, n: usize) -> f64 {
    let v = &theta.w.vertices;
    let mut best = f64::INFINITY;
    for i in 0..=n {
        for j in 0..=n - i {
            for k in 0..=n - i - j {
                let w = [i, j, k, n - i - j - k].map(|x| x as f64 / n as f64);
                let hull = (0..4).fold(DVector::zeros(2), |acc, q| acc + &v[q] * w[q]);
                let sq: f64 = w.iter().map(|x| x * x).sum();
                best = best.min(0.5 * (r - hull).norm_squared() / (1.0 + sq));
            }
        }
    }
    best
}

#[test]
fn planted_outlier_matches_grid_oracle() {
    let theta = theta0();
    let r = DVector::from_vec(vec![0.15, 0.0]);
    let data = vec![point([0.0, 0.0], [0.0, 0.0], [0.15, 0.0])];
    assert!(!membership_residual(&theta, &data[0].s, &data[0].a, &data[0].s_plus).is_feasible());
    let g = DVector::zeros(theta.layout().len());
    let cfg = UpdateConfig::default();
    let out = safe_update(&theta, &g, &data, &cfg).unwrap();
    let oracle = grid_oracle(&theta, &r, 120);
    // Barrier duality gap: one τ per inequality ϑ ≥ 0.
    let gap = theta.w.len() as f64 * cfg.tau;
    assert!(
        out.objective >= oracle - 1e-12 && out.objective <= oracle + gap,
        "{} vs {oracle}",
        out.objective
    );
    assert!(membership_residual(&out.theta, &data[0].s, &data[0].a, &data[0].s_plus).is_feasible());
    assert_eq!(out.theta.a0, theta.a0);
    assert_eq!(out.theta.k, theta.k);
}

#[test]
fn feasible_start_never_increases_the_objective() {
    let theta = theta0();
    let data = inside_data(&theta, 30, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let g = DVector::from_fn(theta.layout().len(), |_, _| rng.gen_range(-1.0..1.0)).normalize();
    let cfg = UpdateConfig::default();
    let out = safe_update(&theta, &g, &data, &cfg).unwrap();
    // θ₋ is feasible with objective 0; the free minimum is −½α²‖g‖².
    assert!(out.objective <= 1e-9, "{}", out.objective);
    assert!(out.objective >= -0.5 * cfg.alpha * cfg.alpha - 1e-12);
    for p in &data {
        assert!(membership_residual(&out.theta, &p.s, &p.a, &p.s_plus).is_feasible());
    }
}

#[test]
fn unconstrained_entries_take_the_plain_step() {
    let theta = theta0();
    let data = inside_data(&theta, 20, 9);
    let l = theta.layout();
    let free: Vec<usize> = (0..2)
        .flat_map(|r| (0..2).map(move |c| l.k(r, c)))
        .collect();
    let g = DVector::from_fn(l.len(), |i, _| (i as f64 * 0.37).cos());
    let cfg = UpdateConfig {
        free: Some(free.clone()),
        ..UpdateConfig::default()
    };
    let out = safe_update(&theta, &g, &data, &cfg).unwrap();
    let before = theta.flatten();
    let after = out.theta.flatten();
    for i in 0..l.len() {
        let expect = if free.contains(&i) {
            before[i] - cfg.alpha * g[i]
        } else {
            before[i]
        };
        assert!((after[i] - expect).abs() < 1e-8, "entry {i}");
    }
}

#[test]
fn gradient_mode_ignores_data() {
    let theta = theta0();
    let data = vec![point([0.0, 0.0], [0.0, 0.0], [0.5, 0.5])];
    let g = DVector::from_element(theta.layout().len(), 1.0);
    let cfg = UpdateConfig {
        mode: UpdateMode::UnconstrainedGradient,
        ..UpdateConfig::default()
    };
    let out = safe_update(&theta, &g, &data, &cfg).unwrap();
    let diff = theta.flatten() - out.theta.flatten();
    assert!((diff.add_scalar(-cfg.alpha)).amax() < 1e-15);
    assert!(out.max_violation > 0.0);
}

#[test]
fn frozen_model_with_outside_data_is_rejected() {
    let theta = theta0();
    let l = theta.layout();
    let data = vec![point([0.0, 0.0], [0.0, 0.0], [0.15, 0.0])];
    let cfg = UpdateConfig {
        free: Some(vec![l.k(0, 0), l.x_bar(0)]),
        ..UpdateConfig::default()
    };
    let g = DVector::zeros(l.len());
    match safe_update(&theta, &g, &data, &cfg) {
        Err(LearnerError::InfeasibleFrozen { violations }) => assert_eq!(violations.len(), 1),
        other => panic!("{other:?}"),
    }
}

#[test]
fn invalid_inputs() {
    let theta = theta0();
    let short = DVector::zeros(3);
    assert!(matches!(
        safe_update(&theta, &short, &[], &UpdateConfig::default()),
        Err(LearnerError::InvalidConfig(_))
    ));
    let g = DVector::zeros(theta.layout().len());
    let cfg = UpdateConfig {
        free: Some(vec![999]),
        ..UpdateConfig::default()
    };
    assert!(matches!(
        safe_update(&theta, &g, &[], &cfg),
        Err(LearnerError::InvalidConfig(_))
    ));
}

#[test]
fn window_keeps_latest_points() {
    let mut data: Vec<DataPoint<f64>> = (0..10)
        .map(|i| point([i as f64, 0.0], [0.0, 0.0], [0.0, 0.0]))
        .collect();
    retain_window(&mut data, 4);
    let kept: Vec<f64> = data.iter().map(|p| p.s[0]).collect();
    assert_eq!(kept, vec![6.0, 7.0, 8.0, 9.0]);
}
