//! Property tests for identities that must hold on every instance.

use multiadmm::conv::{conv2, conv2_adjoint_kernel, conv2_adjoint_signal, fft2_padded};
use multiadmm::linalg::{blocks_norm_sq, frob_dot};
use multiadmm::linop::DenseOp;
use multiadmm::solver::*;
use multiadmm::zoo::*;
use multiadmm::BlockId;
use ndarray::Array2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn randn(shape: (usize, usize), rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn(shape, |_| StandardNormal.sample(rng))
}

fn one_step(rho: f64) -> SolveOptions {
    SolveOptions { rho: RhoPolicy::Fixed(rho), max_iter: 1, ..Default::default() }
}

/// Small instance of one of the closed-form zoo formulations.
fn instance(kind: u8, seed: u64) -> ZooInstance {
    match kind % 4 {
        0 => nmf3(&planted_nmf(6, 5, 2, seed).b, 2, 1.0).unwrap(),
        1 => dl3(&planted_dictionary(6, 7, 3, 2, seed).b, 3, 1.0, 1.0, 1.0).unwrap(),
        2 => rp2(&random_spd(4, seed), 0.0, 1.0, 1.0).unwrap(),
        _ => mc1(5, &random_graph(5, 0.6, seed), 1.0, 1.0).unwrap(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn dual_update_changes_lagrangian_by_step_over_rho(kind in 0u8..4, seed in 0u64..1000, scale in 1.0..4.0f64) {
        let inst = instance(kind, seed);
        let p = &inst.problem;
        let rho = scale * p.rho_lower_bound().unwrap();
        let mut state = p.initial_state(seed, rho);
        for _ in 0..5 {
            let (next, _) = step(p, &state, &one_step(rho)).unwrap();
            let after = p.lagrangian_at(&next.values, &next.w, rho).unwrap();
            let before = p.lagrangian_at(&next.values, &state.w, rho).unwrap();
            let dw: Vec<Array2<f64>> = next.w.iter().zip(&state.w).map(|(a, b)| a - b).collect();
            prop_assert!(((after - before) - blocks_norm_sq(&dw) / rho).abs() <= 1e-9 * (1.0 + after.abs()));
            state = next;
        }
    }

    #[test]
    fn lagrangian_never_increases_above_the_bound(kind in 0u8..4, seed in 0u64..1000, scale in 1.0..3.0f64) {
        let inst = instance(kind, seed);
        let p = &inst.problem;
        let rho = scale * p.rho_lower_bound().unwrap();
        let res = solve(p, &SolveOptions { rho: RhoPolicy::Fixed(rho), max_iter: 40, tol_primal: 0.0, tol_step: 0.0, ..Default::default() }).unwrap();
        for pair in res.traces.windows(2) {
            prop_assert!(pair[1].lagrangian <= pair[0].lagrangian + 1e-9 * (1.0 + pair[0].lagrangian.abs()));
        }
    }

    #[test]
    fn systems_are_affine_in_each_block(kind in 0u8..4, seed in 0u64..1000, t in -3.0..3.0f64) {
        let inst = instance(kind, seed);
        let sys = &inst.problem.system;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shapes = sys.block_shapes();
        let point: Vec<Array2<f64>> = shapes.iter().map(|s| randn(*s, &mut rng)).collect();
        for b in 0..shapes.len() {
            let d = randn(shapes[b], &mut rng);
            let form = sys.freeze(&[BlockId(b)], &point).unwrap();
            let mut moved = point.clone();
            moved[b].scaled_add(t, &d);
            let base = sys.evaluate(&point).unwrap();
            let lin = form.apply(std::slice::from_ref(&d));
            for ((m, b0), l) in sys.evaluate(&moved).unwrap().iter().zip(&base).zip(&lin) {
                let expect = b0 + &(l * t);
                let err = (m - &expect).iter().fold(0.0_f64, |a, v| a.max(v.abs()));
                prop_assert!(err <= 1e-9 * (1.0 + expect.iter().fold(0.0_f64, |a, v| a.max(v.abs()))));
            }
            let w: Vec<Array2<f64>> = form.eq_shapes.iter().map(|s| randn(*s, &mut rng)).collect();
            let lhs = frob_dot(form.adjoint(&w)[0].view(), d.view());
            let rhs: f64 = w.iter().zip(&lin).map(|(a, c)| frob_dot(a.view(), c.view())).sum();
            prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
        }
    }

    #[test]
    fn proximal_copy_tracks_its_block(seed in 0u64..1000, weights in proptest::collection::vec(0.1..2.0f64, 12)) {
        let inst = nmf3(&planted_nmf(6, 5, 2, seed).b, 2, 1.0).unwrap();
        let x = inst.block("X");
        let rho = 2.0 * inst.problem.rho_lower_bound().unwrap();
        let s = DenseOp::new(Array2::from_diag(&ndarray::Array1::from(weights)), (6, 2), (6, 2));
        let p = add_prox_constraint(&inst.problem, x, s, rho).unwrap();
        let z3 = *p.z_group.last().unwrap();
        let eq = p.system.equations().len() - 1;
        let mut state = p.initial_state(seed, rho);
        for _ in 0..10 {
            state = step(&p, &state, &one_step(rho)).unwrap().0;
            prop_assert!((&state.values[z3.0] - &state.values[x.0]).iter().all(|v| v.abs() <= 1e-12));
            prop_assert!(state.w[eq].iter().all(|v| v.abs() <= 1e-12));
        }
    }

    #[test]
    fn convolution_adjoints(n in 3usize..9, k in 1usize..4, seed in 0u64..1000) {
        let k = k.min(n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = randn((k, k), &mut rng);
        let x = randn((n, n), &mut rng);
        let w = randn((n, n), &mut rng);
        let y = conv2(a.view(), x.view());
        let lhs = frob_dot(y.view(), w.view());
        let a_hat = fft2_padded(a.view(), (n, n));
        let via_signal = frob_dot(x.view(), conv2_adjoint_signal(&a_hat, w.view()).view());
        let x_hat = fft2_padded(x.view(), (n, n));
        let via_kernel = frob_dot(a.view(), conv2_adjoint_kernel(&x_hat, w.view(), (k, k)).view());
        prop_assert!((lhs - via_signal).abs() <= 1e-10 * (1.0 + lhs.abs()));
        prop_assert!((lhs - via_kernel).abs() <= 1e-10 * (1.0 + lhs.abs()));
    }
}
