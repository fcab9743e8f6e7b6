use adasa::coordwise::{cdiv, cmul, csq, csqrt, norm, norm_sq, root_sum, sum_plus_eps};
use adasa::diagnostics::{
    classify_equilibrium, flow, grad_l1sq, lyapunov_value, FieldParams, LyapunovParams, Point,
};
use adasa::noise::batch_size;
use adasa::objectives::{isotropic_quadratic, quadratic_objective, saddle_objective, Objective};
use adasa::optimizer::{step, step_composed, ParamState};
use proptest::prelude::*;

fn vec_of(d: usize, lo: f64, hi: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(lo..hi, d)
}

/// `(θ, w, g)` of a shared random dimension.
fn state_and_grad() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
    (1usize..8).prop_flat_map(|d| (vec_of(d, -10.0, 10.0), vec_of(d, 0.0, 5.0), vec_of(d, -50.0, 50.0)))
}

proptest! {
    #[test]
    fn coordwise_identities(u in vec_of(6, 0.1, 10.0), v in vec_of(6, 0.1, 10.0)) {
        let q = cdiv(&cmul(&u, &v).unwrap(), &v).unwrap();
        for (a, b) in q.iter().zip(&u) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs());
        }
        let r = csqrt(&csq(&u)).unwrap();
        for (a, b) in r.iter().zip(&u) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs());
        }
        prop_assert!((norm(&u).powi(2) - norm_sq(&u)).abs() <= 1e-9 * norm_sq(&u));
    }

    #[test]
    fn root_sum_matches_definition(w in vec_of(5, 0.0, 3.0), eps in 1e-6f64..1.0) {
        let direct: f64 = w.iter().map(|x| x + eps).sum();
        prop_assert!((sum_plus_eps(&w, eps).unwrap() - direct).abs() <= 1e-12 * direct);
        let roots: f64 = w.iter().map(|x| (x + eps).sqrt()).sum();
        prop_assert!((root_sum(&w, eps).unwrap() - roots).abs() <= 1e-12 * roots);
        // Σ√(w+ε) ≥ √Σ(w+ε)
        prop_assert!(roots >= direct.sqrt() * (1.0 - 1e-12));
    }

    #[test]
    fn step_keeps_w_nonnegative(
        (theta, w, g) in state_and_grad(),
        gamma in 0.0f64..0.99,
        p in 0.0f64..2.0,
        eps in 1e-8f64..1.0,
    ) {
        // γq < 1 with q = 1
        let st = ParamState::new(theta, w, 1);
        let next = step(&st, &g, gamma, p, 1.0, eps).unwrap();
        prop_assert!(next.w.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn displacement_is_bounded(
        (theta, w, g) in state_and_grad(),
        gamma in 0.0f64..1.0,
        eps in 1e-8f64..1.0,
    ) {
        let st = ParamState::new(theta.clone(), w, 1);
        let next = step(&st, &g, gamma, 1.0, 0.5, eps).unwrap();
        let moved: Vec<f64> = next.theta.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let bound = gamma * norm(&g) / eps.sqrt();
        prop_assert!(norm(&moved) <= bound * (1.0 + 1e-12) + 1e-300);
    }

    #[test]
    fn fused_step_matches_composition(
        (theta, w, g) in state_and_grad(),
        gamma in 0.0f64..1.0,
        p in 0.0f64..2.0,
        q in 0.0f64..0.99,
        eps in 1e-8f64..1.0,
    ) {
        let st = ParamState::new(theta, w, 4);
        let fused = step(&st, &g, gamma, p, q, eps).unwrap();
        let composed = step_composed(&st, &g, gamma, p, q, eps).unwrap();
        for (a, b) in fused.theta.iter().zip(&composed.theta).chain(fused.w.iter().zip(&composed.w)) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
        prop_assert_eq!(fused.n, composed.n);
    }

    #[test]
    fn lyapunov_at_least_d_eps(w in vec_of(4, 0.0, 10.0), f in 1.0f64..100.0, eps in 1e-6f64..1.0, sup_p in 0.0f64..3.0) {
        let lp = LyapunovParams::tuned(sup_p, eps);
        prop_assert!(lyapunov_value(&w, f, &lp) >= 4.0 * eps);
    }

    #[test]
    fn l1_square_dominates_l2_square(g in prop::collection::vec(-1e3f64..1e3, 1..20)) {
        let sq: f64 = g.iter().map(|x| x * x).sum();
        prop_assert!(grad_l1sq(&g) >= sq);
    }

    #[test]
    fn classification_ignores_eps_and_q(eps in 1e-6f64..10.0, q_inf in 1e-3f64..10.0) {
        let saddle = saddle_objective();
        let base = classify_equilibrium(&saddle, &saddle.saddle_point(), 1.0, 1e-2).unwrap();
        let other = classify_equilibrium(&saddle, &saddle.saddle_point(), q_inf, eps).unwrap();
        prop_assert_eq!(base.stability, other.stability);

        let quad = quadratic_objective(vec![0.5, -1.0], vec![1.0, 3.0]).unwrap();
        let a = classify_equilibrium(&quad, &[0.5, -1.0], 1.0, 1e-2).unwrap();
        let b = classify_equilibrium(&quad, &[0.5, -1.0], q_inf, eps).unwrap();
        prop_assert_eq!(a.stability, b.stability);
    }

    #[test]
    fn flow_fixes_equilibria(t_end in 0.01f64..5.0, p_inf in 0.0f64..2.0, q_inf in 0.1f64..2.0) {
        let fp = FieldParams { p_inf, q_inf, eps: 1e-2 };
        let quad = isotropic_quadratic(3).unwrap();
        let saddle = saddle_objective();
        let cases: [(&dyn Objective, Vec<f64>); 2] = [(&quad, vec![0.0; 3]), (&saddle, saddle.saddle_point().to_vec())];
        for (obj, theta) in cases {
            let z0 = Point::new(theta.clone(), vec![0.0; theta.len()]);
            let z = flow(obj, &fp, &z0, t_end, 1e-2).unwrap();
            prop_assert!(z.distance(&z0) <= 1e-10);
        }
    }

    #[test]
    fn batch_size_schedule(n in 1u64..100_000, s in 0.0f64..1.0) {
        let m = batch_size(n, s);
        prop_assert!(m >= 1);
        prop_assert!(batch_size(n + 1, s) >= m);
        let exact = (n as f64).powf(2.0 * s);
        prop_assert!(m as f64 >= exact * (1.0 - 1e-9) && (m as f64) < exact + 1.0);
    }
}

#[test]
fn batch_size_without_shrinking_noise_is_one() {
    for n in [1, 10, 1_000_000] {
        assert_eq!(batch_size(n, 0.0), 1);
    }
}
