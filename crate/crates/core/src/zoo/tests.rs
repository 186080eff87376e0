use ndarray::{array, Array2};

use super::*;
use crate::diagnostics::{check_assumptions, CheckStatus, CHECK_IMAGE, CHECK_SPLIT};
use crate::solver::{solve, RhoPolicy, SolveOptions};

fn short(rho: f64, iters: usize) -> SolveOptions {
    SolveOptions { rho: RhoPolicy::Fixed(rho), max_iter: iters, ..Default::default() }
}

#[test]
fn nmf3_planted_truth_is_feasible() {
    let pl = planted_nmf(6, 5, 2, 1);
    let inst = nmf3(&pl.b, 2, 1.0).unwrap();
    inst.with_ground_truth(&[("X", pl.x.clone()), ("Xp", pl.x), ("Y", pl.y.clone()), ("Yp", pl.y), ("Z", pl.b)]).unwrap();
}

#[test]
fn ground_truth_rejects_infeasible_assignment() {
    let pl = planted_nmf(4, 4, 2, 2);
    let inst = nmf3(&pl.b, 2, 1.0).unwrap();
    assert!(inst.with_ground_truth(&[("X", pl.x)]).is_err());
}

#[test]
fn nmf3_rejects_bad_arguments() {
    let b = Array2::ones((3, 4));
    assert!(nmf3(&b, 0, 1.0).is_err());
    assert!(nmf3(&b, 5, 1.0).is_err());
    assert!(nmf3(&b, 2, 0.0).is_err());
}

#[test]
fn nmf3_rho_bound_is_about_nine() {
    let pl = planted_nmf(5, 5, 2, 3);
    let inst = nmf3(&pl.b, 2, 1.0).unwrap();
    let bound = inst.problem.rho_lower_bound().unwrap();
    assert!(bound > 9.0 && bound < 9.0 * 1.05, "bound {bound}");
}

#[test]
fn every_closed_form_instance_avoids_cg() {
    let pl = planted_nmf(5, 4, 2, 4);
    let dict = planted_dictionary(6, 8, 3, 2, 5);
    let sigma = random_spd(4, 6);
    let tri = [(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)];
    let cases = vec![
        nmf3(&pl.b, 2, 1.0).unwrap(),
        dl3(&dict.b, 3, 1.0, 1.0, 1.0).unwrap(),
        rp2(&sigma, 0.0, 1.0, 1.0).unwrap(),
        mc1(3, &tri, 1.0, 1.0).unwrap(),
        rpca2_slack(&pl.b, 2, 0.1, 10.0).unwrap(),
    ];
    for inst in cases {
        let res = solve(&inst.problem, &short(20.0, 5)).unwrap();
        let cg: usize = res.traces.iter().map(|t| t.cg_solves).sum();
        assert_eq!(cg, 0, "{} used conjugate gradients", inst.problem.name);
        assert!(inst.iterative_blocks.is_empty());
    }
}

#[test]
fn zoo_assumptions_pass_except_raw_rpca() {
    let pl = planted_nmf(5, 4, 2, 7);
    let sigma = random_spd(3, 8);
    let tri = [(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)];
    let data = gen_sbd_data(8, (3, 3), 0.2, 0.0, 0.5, 9).unwrap();
    let good = vec![
        nmf3(&pl.b, 2, 1.0).unwrap(),
        dl3(&pl.b, 2, 1.0, 1.0, 1.0).unwrap(),
        rp2(&sigma, 0.0, 1.0, 1.0).unwrap(),
        mc1(3, &tri, 1.0, 1.0).unwrap(),
        sbd1(&data.y, (3, 3), 1.0).unwrap(),
    ];
    for inst in good {
        let rep = check_assumptions(&inst.problem, 3, 0).unwrap();
        assert!(rep.overall, "{}: {:?}", inst.problem.name, rep.checks);
        assert!(!inst.assumptions_violated);
    }
    let both = rpca2(&pl.b, 2, 0.1).unwrap();
    assert!(both.raw.assumptions_violated);
    let raw = check_assumptions(&both.raw.problem, 3, 0).unwrap();
    assert_eq!(raw.status_of(CHECK_SPLIT), Some(CheckStatus::Fail));
    let slack = check_assumptions(&both.slack.problem, 3, 0).unwrap();
    assert!(slack.overall, "{:?}", slack.checks);
    let sbd = sbd0(&data.y, (3, 3)).unwrap();
    assert_eq!(check_assumptions(&sbd.problem, 3, 0).unwrap().status_of(CHECK_IMAGE), Some(CheckStatus::Fail));
}

#[test]
fn rp2_validation() {
    let s = random_spd(3, 1);
    assert!(rp2(&s, 0.5, 0.9, 1.0).is_err());
    assert!(rp2(&s, 0.0, 0.2, 1.0).is_err());
    assert!(rp2(&array![[1.0, 2.0], [0.0, 1.0]], 0.0, 1.0, 1.0).is_err());
    assert!(rp2(&array![[1.0, 0.0], [0.0, -1.0]], 0.0, 1.0, 1.0).is_err());
}

#[test]
fn rp2_equal_weights_on_identity_are_feasible() {
    let s = Array2::<f64>::eye(4);
    let x = Array2::from_elem((4, 1), 0.25);
    let inst = rp2(&s, 0.0, 1.0, 1.0).unwrap();
    inst.with_ground_truth(&[("x", x.clone()), ("xp", x.clone()), ("y", x.clone())]).unwrap();
    assert!(parity_spread(&s, &x).abs() < 1e-15);
}

#[test]
fn mc1_objective_counts_cut_edges() {
    let tri = [(0, 1, 1.0), (1, 2, 2.0), (0, 2, 3.0)];
    let inst = mc1(3, &tri, 1.0, 1.0).unwrap();
    let x = array![[1.0], [-1.0], [1.0]];
    let z = x.dot(&x.t());
    let mut asg: Vec<Array2<f64>> = inst.problem.system.block_shapes().into_iter().map(Array2::zeros).collect();
    asg[inst.block("x").0] = x.clone();
    asg[inst.block("y").0] = x.clone();
    asg[inst.block("Z").0] = z;
    // Cut edges are (0,1) and (1,2) with weight 3; the objective is its negation.
    assert!((inst.problem.objective_value(&asg) + 3.0).abs() < 1e-12);
    assert_eq!(rounded_cut(&tri, &x), 3.0);
    assert_eq!(brute_force_max_cut(3, &tri), 5.0);
}

#[test]
fn mc1_rejects_bad_edges() {
    assert!(mc1(3, &[], 1.0, 1.0).is_err());
    assert!(mc1(3, &[(0, 3, 1.0)], 1.0, 1.0).is_err());
    assert!(mc1(3, &[(1, 1, 1.0)], 1.0, 1.0).is_err());
}

#[test]
fn sbd_data_reproduces_observation() {
    let d = gen_sbd_data(10, (3, 3), 0.1, 0.0, 0.3, 11).unwrap();
    let inst = sbd1(&d.y, (3, 3), 1.0).unwrap();
    let inst = inst.with_ground_truth(&[("A", d.a.clone()), ("X", d.x.clone()), ("b", array![[0.3]])]).unwrap();
    assert_eq!(inst.iterative_blocks.len(), 1);
    let truth = inst.ground_truth.unwrap();
    let expected = 0.1 * d.x.iter().map(|v| v.abs()).sum::<f64>();
    assert!((inst.problem.reported_objective(&truth) - expected).abs() < 1e-10);
    assert!(gen_sbd_data(10, (3, 3), 1.0, 0.0, 0.0, 0).is_err());
    assert!(sbd1(&d.y, (11, 3), 1.0).is_err());
}

#[test]
fn planted_generators_are_deterministic() {
    assert_eq!(planted_nmf(4, 3, 2, 5).b, planted_nmf(4, 3, 2, 5).b);
    let dict = planted_dictionary(5, 6, 4, 2, 1);
    for c in dict.x.columns() {
        assert!((c.dot(&c) - 1.0).abs() < 1e-12);
    }
    for c in dict.y.columns() {
        assert!(c.iter().filter(|v| **v != 0.0).count() <= 2);
    }
    let r = planted_rpca(6, 5, 2, 0.1, 5.0, 3);
    assert_eq!(r.b, &r.low_rank + &r.sparse);
}

#[test]
fn counterexample_bound_fails_the_split_check() {
    let p = counterexample();
    let rep = check_assumptions(&p, 3, 0).unwrap();
    assert_eq!(rep.status_of(CHECK_SPLIT), Some(CheckStatus::Fail));
}

#[test]
fn every_default_builds() {
    for name in defaults::NAMES {
        let inst = default_instance(name, 0).unwrap();
        assert_eq!(inst.assumptions_violated, name == "rpca2-raw", "{name}");
    }
    assert!(default_instance("nope", 0).is_err());
    assert!(!random_graph(8, 0.5, 0).is_empty());
}
