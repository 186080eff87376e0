//! Runtime checks of the convergence theory: assumption inventory,
//! per-iteration identities and inequalities, and a first-order
//! stationarity estimate.

mod counterexample;

use ndarray::{Array2, Zip};
use serde::Serialize;

use crate::linalg::{blocks_norm, blocks_norm_sq, frob_norm, symmetric_eigenvalues, unflatten};
use crate::linop::dense_gram;
use crate::multiaffine::{BlockId, Role};
use crate::prox::{NormalEquations, ObjectiveKind, QuadOptions};
use crate::solver::{rho::INJECTIVE_TOL, Constants, IterTrace, Problem, QSpectrum, SolverState};
use crate::Result;

pub use counterexample::{run_counterexample, run_counterexample_from, CounterexampleRow};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckStatus {
    Pass,
    Fail,
    Unverifiable,
}

#[derive(Clone, Debug, Serialize)]
pub struct AssumptionCheck {
    pub name: String,
    pub status: CheckStatus,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct AssumptionReport {
    pub checks: Vec<AssumptionCheck>,
    /// Every check that could be decided passed.
    pub overall: bool,
}

impl AssumptionReport {
    fn new(checks: Vec<AssumptionCheck>) -> Self {
        let overall = checks.iter().all(|c| c.status != CheckStatus::Fail);
        AssumptionReport { checks, overall }
    }

    pub fn failed(&self) -> impl Iterator<Item = &AssumptionCheck> {
        self.checks.iter().filter(|c| c.status == CheckStatus::Fail)
    }

    pub fn status_of(&self, name: &str) -> Option<CheckStatus> {
        self.checks.iter().find(|c| c.name == name).map(|c| c.status)
    }
}

pub const CHECK_IMAGE: &str = "image-containment";
pub const CHECK_Q2: &str = "q2-injective";
pub const CHECK_SPLIT: &str = "final-block-split";
pub const CHECK_INJECTIVE: &str = "declared-injective";
pub const CHECK_COERCIVE: &str = "coercivity";

fn check(name: &str, status: CheckStatus, detail: String) -> AssumptionCheck {
    AssumptionCheck { name: name.to_string(), status, detail }
}

/// Inventory of the structural assumptions behind the convergence theory.
pub fn check_assumptions(problem: &Problem, samples: usize, seed: u64) -> Result<AssumptionReport> {
    let mut checks = vec![image_check(problem, samples, seed)?];

    let z2 = problem.z_blocks_with_role(Role::Z2);
    checks.push(if z2.is_empty() {
        check(CHECK_Q2, CheckStatus::Pass, "no Z2 blocks".into())
    } else {
        let (lmin, _) = crate::solver::q_spectrum(&problem.system, &z2)?;
        let status = if lmin > INJECTIVE_TOL { CheckStatus::Pass } else { CheckStatus::Fail };
        check(CHECK_Q2, status, format!("lambda_min(Q2^T Q2) = {lmin:.3e}"))
    });

    checks.push(split_check(problem));

    for d in &problem.injective {
        let lmin = symmetric_eigenvalues(dense_gram(d.map.as_ref()).view())[0];
        let status = if lmin > INJECTIVE_TOL { CheckStatus::Pass } else { CheckStatus::Fail };
        checks.push(check(
            CHECK_INJECTIVE,
            status,
            format!("block `{}`: lambda_min(R^T R) = {lmin:.3e}", problem.block_name(d.block)),
        ));
    }
    checks.push(check(CHECK_COERCIVE, CheckStatus::Unverifiable, "coercivity on the feasible set is not machine-checked".into()));
    Ok(AssumptionReport::new(checks))
}

/// Sampled columns of `Im(A)` must be reachable through `Q` in least squares.
fn image_check(problem: &Problem, samples: usize, seed: u64) -> Result<AssumptionCheck> {
    let sys = &problem.system;
    let shapes = sys.equation_shapes();
    let zq: Vec<BlockId> = problem.z_group.iter().copied().filter(|b| sys.block(*b).role.is_linear_only()).collect();
    let start = problem.initial_state(seed, 1.0);
    let basis = sys.jacobian_image_basis(&start.values, samples, seed)?;
    let form = if zq.is_empty() { None } else { Some(sys.freeze(&zq, &start.values)?) };
    let zeros: Vec<Array2<f64>> = shapes.iter().map(|s| Array2::zeros(*s)).collect();
    let opts = QuadOptions { cg_tol: 1e-13, ..Default::default() };
    let mut worst = 0.0_f64;
    for col in basis.columns() {
        let target = unflatten(&col.to_vec(), &shapes);
        let norm = blocks_norm(&target);
        if norm == 0.0 {
            continue;
        }
        let res = match &form {
            None => norm,
            Some(f) => {
                let f = f.with_offset(target);
                let sol = NormalEquations::new(&f, &zeros, 1.0, &[])?.solve(None, &opts)?;
                blocks_norm(&f.residual(&sol.y))
            }
        };
        worst = worst.max(res / norm);
    }
    let status = if worst <= 1e-8 { CheckStatus::Pass } else { CheckStatus::Fail };
    let detail = if zq.is_empty() {
        format!("no Z1/Z2 blocks; worst relative residual {worst:.3e}")
    } else {
        format!("worst relative least-squares residual {worst:.3e} over {} sampled columns", basis.ncols())
    };
    Ok(check(CHECK_IMAGE, status, detail))
}

/// `ψ = h(Z0) + g1(Z1) + g2(Z2)` with `h` convex, `g1` strongly convex, `g2`
/// Lipschitz differentiable, and `Q` block diagonal across the two groups.
fn split_check(problem: &Problem) -> AssumptionCheck {
    let sys = &problem.system;
    let z1 = problem.z_blocks_with_role(Role::Z1);
    let z2 = problem.z_blocks_with_role(Role::Z2);
    let mut fails = Vec::new();
    let mut unknown = Vec::new();
    if z1.is_empty() && z2.is_empty() {
        fails.push("final group has no Z1 or Z2 block".to_string());
    }
    for t in &problem.objective {
        let role = sys.block(t.block).role;
        let name = problem.block_name(t.block);
        match (role, &t.kind) {
            (Role::Z0, ObjectiveKind::SmoothCustom { .. }) if !problem.attested.contains(&t.block) => {
                unknown.push(format!("convexity of custom term on `{name}`"))
            }
            (Role::Z1 | Role::Z2, k) if k.is_nonsmooth() => fails.push(format!("`{name}` has a nonsmooth term")),
            _ => {}
        }
    }
    let have_constants = problem.constants.is_some();
    if !have_constants && !z1.is_empty() {
        match problem.effective_constants() {
            Some(c) if c.m1 > 0.0 => {}
            _ => fails.push("Z1 objective is not strongly convex".into()),
        }
    }
    for eq in sys.equations() {
        let has = |bs: &[BlockId]| eq.terms.iter().any(|t| t.blocks().iter().any(|b| bs.contains(b)));
        if has(&z1) && has(&z2) {
            fails.push(format!("equation {} mixes Z1 and Z2 blocks", eq.id));
        }
    }
    let (status, detail) = if !fails.is_empty() {
        (CheckStatus::Fail, fails.join("; "))
    } else if !unknown.is_empty() {
        (CheckStatus::Unverifiable, unknown.join("; "))
    } else {
        (CheckStatus::Pass, format!("{} Z1 and {} Z2 blocks", z1.len(), z2.len()))
    };
    check(CHECK_SPLIT, status, detail)
}

/// One failed runtime check.
#[derive(Clone, Debug, Serialize)]
pub struct Violation {
    pub check: String,
    pub k: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub detail: String,
    /// The theory promises this check under the problem's verified
    /// assumptions, so a failure is a real defect rather than an expected
    /// consequence of a small penalty.
    pub guaranteed: bool,
}

pub const V_DUAL: &str = "dual-identity";
pub const V_BLOCK: &str = "block-decrease";
pub const V_MULTIPLIER: &str = "multiplier-bound";
pub const V_FINAL: &str = "final-block-decrease";
pub const V_MONOTONE: &str = "monotone";

/// Quantities computed once per solve for [`assert_iteration`].
#[derive(Clone, Debug)]
pub struct IterationContext {
    pub constants: Option<Constants>,
    pub spectrum: Option<QSpectrum>,
    pub bound: Option<f64>,
    pub rho: f64,
    pub assumptions_hold: bool,
    z1: Vec<BlockId>,
    z2: Vec<BlockId>,
}

impl IterationContext {
    pub fn new(problem: &Problem, rho: f64) -> Self {
        IterationContext {
            constants: problem.effective_constants(),
            spectrum: problem.q_spectrum().ok(),
            bound: problem.rho_lower_bound().ok(),
            rho,
            assumptions_hold: check_assumptions(problem, 5, 0).map(|r| r.overall).unwrap_or(false),
            z1: problem.z_blocks_with_role(Role::Z1),
            z2: problem.z_blocks_with_role(Role::Z2),
        }
    }

    /// `(β1, β2)` when constants and spectra are known.
    pub fn betas(&self) -> Option<(f64, f64)> {
        let c = self.constants?;
        let q = self.spectrum?;
        let b1 = q.lpp1.map_or(0.0, |l| c.big_m1 * c.big_m1 / l);
        let b2 = q.sigma.map_or(0.0, |s| c.m2 * c.m2 / s);
        Some((b1, b2))
    }

    pub fn rho_above_bound(&self) -> bool {
        self.bound.is_some_and(|b| self.rho >= b)
    }
}

fn diff_sq(blocks: &[BlockId], a: &SolverState, b: &SolverState) -> f64 {
    blocks.iter().map(|id| frob_norm((&b.values[id.0] - &a.values[id.0]).view()).powi(2)).sum()
}

/// Checks the identities and inequalities the theory provides for the
/// step `state → next` summarized by `trace`.
pub fn assert_iteration(problem: &Problem, state: &SolverState, next: &SolverState, trace: &IterTrace, ctx: &IterationContext) -> Vec<Violation> {
    let mut out = Vec::new();
    let k = trace.k;
    let mut push = |check: &str, lhs: f64, rhs: f64, detail: String, guaranteed: bool| {
        out.push(Violation { check: check.to_string(), k, lhs, rhs, detail, guaranteed });
    };
    let rho = state.rho;
    let l_before = trace.lagrangian_path[0];
    let l_pre_dual = trace.lagrangian_before_dual();
    let scale = 1.0 + trace.lagrangian.abs().max(l_before.abs());
    let dw: Vec<Array2<f64>> = next.w.iter().zip(&state.w).map(|(a, b)| a - b).collect();
    let dw_sq = blocks_norm_sq(&dw);

    let lhs = trace.lagrangian - l_pre_dual;
    let rhs = dw_sq / rho;
    if (lhs - rhs).abs() > 1e-9 * scale {
        push(V_DUAL, lhs, rhs, "L(U+,W+) - L(U+,W) differs from |dW|^2/rho".into(), true);
    }

    for (i, pair) in trace.lagrangian_path.windows(2).enumerate() {
        if pair[1] > pair[0] + 1e-9 * scale {
            let which = if i < problem.update_order.len() {
                problem.block_name(problem.update_order[i]).to_string()
            } else {
                "final group".to_string()
            };
            push(V_BLOCK, pair[1], pair[0], format!("update of {which} increased L"), true);
        }
    }

    let theory = ctx.assumptions_hold;
    if let (Some(c), Some(q), Some((b1, b2))) = (ctx.constants, ctx.spectrum, ctx.betas()) {
        let dzs = diff_sq(&ctx.z1, state, next);
        let dz2 = diff_sq(&ctx.z2, state, next);
        if state.k >= 1 {
            let rhs = b1 * dzs + b2 * dz2;
            let slack = 1e-8 * (dw_sq + rhs) + 1e-20 * (1.0 + blocks_norm_sq(&next.w));
            if dw_sq > rhs + slack {
                push(V_MULTIPLIER, dw_sq, rhs, format!("beta1={b1:.3e} beta2={b2:.3e}"), theory);
            }
        }
        if !problem.z_group.is_empty() {
            let n = trace.lagrangian_path.len();
            let decrease = trace.lagrangian_path[n - 2] - trace.lagrangian_path[n - 1];
            let sigma = q.sigma.unwrap_or(0.0);
            let lower = 0.5 * c.m1 * dzs + 0.5 * (rho * sigma - c.m2) * dz2;
            if decrease < lower - (1e-8 * lower.abs() + 1e-12 * scale) {
                push(V_FINAL, decrease, lower, "final-group decrease below its lower bound".into(), theory);
            }
        }
    }

    if state.k >= 1 && trace.lagrangian > l_before + 1e-9 * (1.0 + l_before.abs()) {
        let above = ctx.rho_above_bound();
        let detail = if above { "L increased".to_string() } else { "L increased (rho below bound)".to_string() };
        push(V_MONOTONE, trace.lagrangian, l_before, detail, theory && above);
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct StationarityEstimate {
    pub per_block: Vec<(String, f64)>,
    /// Maximum over blocks.
    pub aggregate: f64,
}

const ACTIVE_TOL: f64 = 1e-10;

/// First-order residual of `0 ∈ ∂φ + ∇C(U)ᵀW` at the state, block by block.
pub fn stationarity(problem: &Problem, state: &SolverState) -> Result<StationarityEstimate> {
    let mut per_block = Vec::new();
    for (i, spec) in problem.system.blocks().iter().enumerate() {
        let b = BlockId(i);
        let y = &state.values[i];
        let form = problem.system.freeze(&[b], &state.values)?;
        let mut v = form.adjoint(&state.w).remove(0);
        let mut nonsmooth = None;
        for t in problem.objective.iter().filter(|t| t.block == b) {
            match t.kind.gradient(y.view()) {
                Some(g) => v += &g,
                None => nonsmooth = Some(&t.kind),
            }
        }
        if let Some(c) = problem.coupling.as_ref() {
            if let Some(pos) = c.blocks.iter().position(|cb| *cb == b) {
                let args: Vec<Array2<f64>> = c.blocks.iter().map(|cb| state.values[cb.0].clone()).collect();
                v += &(c.grads[pos])(&args);
            }
        }
        let r = match nonsmooth {
            None => frob_norm(v.view()),
            Some(k) => nonsmooth_residual(k, y, &v),
        };
        per_block.push((spec.name.clone(), r));
    }
    let aggregate = per_block.iter().map(|(_, r)| *r).fold(0.0, f64::max);
    Ok(StationarityEstimate { per_block, aggregate })
}

/// Distance from `−v` to the subdifferential (or normal cone) of `kind` at `y`.
fn nonsmooth_residual(kind: &ObjectiveKind, y: &Array2<f64>, v: &Array2<f64>) -> f64 {
    let entry = |f: &dyn Fn(f64, f64) -> f64| -> f64 {
        let r = Zip::from(y).and(v).map_collect(|&y, &v| f(y, v));
        frob_norm(r.view())
    };
    match kind {
        ObjectiveKind::L1 { lambda } => entry(&|y, v| {
            if y.abs() > ACTIVE_TOL {
                (v + lambda * y.signum()).abs()
            } else {
                (v.abs() - lambda).max(0.0)
            }
        }),
        ObjectiveKind::Nonneg => entry(&|y, v| if y > ACTIVE_TOL { v.abs() } else { (-v).max(0.0) }),
        ObjectiveKind::Box { lower, upper } => entry(&|y, v| {
            let at_lo = y <= lower + ACTIVE_TOL * (1.0 + lower.abs());
            let at_hi = y >= upper - ACTIVE_TOL * (1.0 + upper.abs());
            match (at_lo, at_hi) {
                (true, true) => 0.0,
                (true, false) => (-v).max(0.0),
                (false, true) => v.max(0.0),
                _ => v.abs(),
            }
        }),
        ObjectiveKind::UnitColumns => {
            let mut acc = 0.0;
            for (yc, vc) in y.columns().into_iter().zip(v.columns()) {
                let d = yc.dot(&vc);
                acc += vc.iter().zip(yc.iter()).map(|(v, y)| (v - d * y).powi(2)).sum::<f64>();
            }
            acc.sqrt()
        }
        _ => frob_norm(v.view()),
    }
}
