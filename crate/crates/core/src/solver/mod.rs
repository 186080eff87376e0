//! The ADMM loop: sequential primal block updates, a joint update of the
//! final group, then the multiplier step.

mod prox_constraint;
pub mod rho;

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::diagnostics::{self, IterationContext, Violation};
use crate::error::{Error, Result};
use crate::linalg::{blocks_dot, blocks_norm, blocks_norm_sq, frob_norm};
use crate::linop::{dense_gram, Gram, LinearOp};
use crate::multiaffine::{Assignment, BlockId, Factor, MultiaffineSystem, Role, TermKind};
use crate::prox::inner::{mfista, mfista_quadratic, InnerOptions};
use crate::prox::{CouplingTerm, NormalEquations, ObjectiveKind, ObjectiveTerm, QuadOptions, SolveMethod};

pub use prox_constraint::{add_prox_constraint, weighted_gap};
pub use rho::{q_spectrum, rho_lower_bound, Constants, QSpectrum};

pub type ReportFn = Arc<dyn Fn(&[Array2<f64>]) -> f64 + Send + Sync>;

/// A block whose constraint map `R_ℓ` is declared injective, with the
/// weak-convexity modulus `μ_ℓ` of its objective.
#[derive(Clone, Debug)]
pub struct InjectiveDecl {
    pub block: BlockId,
    pub map: LinearOp,
    pub mu: f64,
}

#[derive(Clone)]
pub struct Problem {
    pub name: String,
    pub system: MultiaffineSystem,
    pub objective: Vec<ObjectiveTerm>,
    pub coupling: Option<CouplingTerm>,
    /// Primal blocks updated one at a time, in this order.
    pub update_order: Vec<BlockId>,
    /// Final group, minimized jointly after the primal blocks.
    pub z_group: Vec<BlockId>,
    /// Overrides the constants derived from the objective.
    pub constants: Option<Constants>,
    pub injective: Vec<InjectiveDecl>,
    /// Blocks solved by an inner proximal gradient method.
    pub inner_blocks: Vec<BlockId>,
    /// Blocks whose objective the user attests to be strengthened convex.
    pub attested: Vec<BlockId>,
    /// Objective reported in traces; defaults to the model objective.
    pub report: Option<ReportFn>,
}

impl fmt::Debug for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Problem")
            .field("name", &self.name)
            .field("blocks", &self.system.blocks().len())
            .field("equations", &self.system.equations().len())
            .field("update_order", &self.update_order)
            .field("z_group", &self.z_group)
            .finish()
    }
}

/// Objective pieces attached to one block, split by how they are handled.
struct BlockTerms<'a> {
    quadratic: Vec<ObjectiveKind>,
    nonsmooth: Option<&'a ObjectiveKind>,
    custom: Vec<&'a ObjectiveKind>,
}

impl Problem {
    pub fn new(
        name: &str,
        system: MultiaffineSystem,
        objective: Vec<ObjectiveTerm>,
        update_order: Vec<BlockId>,
        z_group: Vec<BlockId>,
    ) -> Result<Self> {
        Self::with_inner_blocks(name, system, objective, update_order, z_group, Vec::new())
    }

    /// Like [`Problem::new`], with blocks that need the inner solver declared
    /// before validation.
    pub fn with_inner_blocks(
        name: &str,
        system: MultiaffineSystem,
        objective: Vec<ObjectiveTerm>,
        update_order: Vec<BlockId>,
        z_group: Vec<BlockId>,
        inner_blocks: Vec<BlockId>,
    ) -> Result<Self> {
        let p = Problem {
            name: name.to_string(),
            system,
            objective,
            coupling: None,
            update_order,
            z_group,
            constants: None,
            injective: Vec::new(),
            inner_blocks,
            attested: Vec::new(),
            report: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_coupling(mut self, c: CouplingTerm) -> Result<Self> {
        self.coupling = Some(c);
        self.validate()?;
        Ok(self)
    }

    pub fn with_constants(mut self, c: Constants) -> Self {
        self.constants = Some(c);
        self
    }

    pub fn with_injective(mut self, block: BlockId, map: LinearOp, mu: f64) -> Self {
        self.injective.push(InjectiveDecl { block, map, mu });
        self
    }

    /// Solve `block` with the inner proximal gradient method instead of a closed form.
    pub fn with_inner(mut self, block: BlockId) -> Result<Self> {
        self.inner_blocks.push(block);
        self.validate()?;
        Ok(self)
    }

    pub fn with_attested(mut self, block: BlockId) -> Self {
        self.attested.push(block);
        self
    }

    pub fn with_report(mut self, f: ReportFn) -> Self {
        self.report = Some(f);
        self
    }

    pub fn block_name(&self, b: BlockId) -> &str {
        &self.system.block(b).name
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.system.blocks().len();
        let mut seen = vec![0usize; n];
        for b in self.update_order.iter().chain(&self.z_group) {
            if b.0 >= n {
                return Err(Error::UnknownBlock(format!("#{}", b.0)));
            }
            seen[b.0] += 1;
        }
        for (i, c) in seen.iter().enumerate() {
            if *c != 1 {
                return Err(Error::InvalidProblem(format!(
                    "block `{}` has {c} update slots, expected exactly one",
                    self.system.blocks()[i].name
                )));
            }
        }
        for b in &self.update_order {
            if self.system.block(*b).role.is_z() {
                return Err(Error::InvalidProblem(format!("block `{}` is a final-group block", self.block_name(*b))));
            }
        }
        for b in &self.z_group {
            if !self.system.block(*b).role.is_z() {
                return Err(Error::InvalidProblem(format!("block `{}` has an X role but sits in the final group", self.block_name(*b))));
            }
        }
        let mut nonsmooth = BTreeSet::new();
        for t in &self.objective {
            if t.block.0 >= n {
                return Err(Error::UnknownBlock(format!("#{}", t.block.0)));
            }
            t.kind.validate(self.system.block(t.block).shape)?;
            if t.kind.is_nonsmooth() && !nonsmooth.insert(t.block) {
                return Err(Error::InvalidProblem(format!("block `{}` has two nonsmooth terms", self.block_name(t.block))));
            }
        }
        if let Some(c) = &self.coupling {
            if c.grads.len() != c.blocks.len() {
                return Err(Error::InvalidProblem("coupling term needs one gradient per block".into()));
            }
            for b in &c.blocks {
                if b.0 >= n || self.system.block(*b).role.is_z() {
                    return Err(Error::InvalidProblem("coupling term may only involve X blocks".into()));
                }
            }
        }
        for b in &self.inner_blocks {
            if b.0 >= n {
                return Err(Error::UnknownBlock(format!("#{}", b.0)));
            }
        }
        for b in nonsmooth {
            if !self.inner_blocks.contains(&b) {
                self.check_closed_form_prox(b)?;
            }
        }
        Ok(())
    }

    /// A nonsmooth block must see an entrywise constraint map so that its
    /// subproblem reduces to a separable prox.
    fn check_closed_form_prox(&self, b: BlockId) -> Result<()> {
        let name = self.block_name(b).to_string();
        let reject = |why: &str| {
            Err(Error::InvalidProblem(format!(
                "block `{name}` has a nonsmooth term but {why}; split it with a copy variable or mark it for the inner solver"
            )))
        };
        let t = self.block_terms(b);
        let unit = matches!(t.nonsmooth, Some(ObjectiveKind::UnitColumns));
        if !t.custom.is_empty() {
            return reject("also carries a smooth custom term");
        }
        if t.quadratic.iter().any(|k| matches!(k, ObjectiveKind::Quadratic { map: Some(_), .. })) {
            return reject("its quadratic term has a non-identity map");
        }
        if self.coupling.as_ref().is_some_and(|c| c.blocks.contains(&b)) {
            return reject("it enters the coupling term");
        }
        for eq in self.system.equations() {
            let hits: Vec<_> = eq.terms.iter().filter(|t| t.blocks().contains(&b)).collect();
            if hits.len() > 1 {
                return reject("it appears twice in one equation");
            }
            for term in hits {
                let ok = match &term.kind {
                    TermKind::Linear { op, .. } => op.as_scaled_identity().is_some() && op.input_shape() == op.output_shape(),
                    TermKind::MatChain(f) => f.len() == 1 && matches!(f[0], Factor::Var(_)),
                    TermKind::Hadamard { post: None, .. } => !unit,
                    _ => false,
                };
                if !ok {
                    return reject(&format!("equation {} maps it through a non-identity operator", eq.id));
                }
            }
        }
        Ok(())
    }

    fn block_terms(&self, b: BlockId) -> BlockTerms<'_> {
        let mut t = BlockTerms { quadratic: Vec::new(), nonsmooth: None, custom: Vec::new() };
        for o in self.objective.iter().filter(|o| o.block == b) {
            if o.kind.is_quadratic() {
                t.quadratic.push(o.kind.clone());
            } else if o.kind.is_nonsmooth() {
                t.nonsmooth = Some(&o.kind);
            } else {
                t.custom.push(&o.kind);
            }
        }
        t
    }

    fn in_coupling(&self, b: BlockId) -> bool {
        self.coupling.as_ref().is_some_and(|c| c.blocks.contains(&b))
    }

    /// A positive identity quadratic makes the block subproblem nonsingular,
    /// so the solve needs no warm start to pick a minimizer; skipping it
    /// keeps exact zeros exact.
    fn strongly_convex_block(&self, b: BlockId) -> bool {
        self.objective.iter().any(|t| t.block == b && matches!(t.kind, ObjectiveKind::Quadratic { mu, map: None, .. } if mu > 0.0))
    }

    fn is_quadratic_block(&self, b: BlockId) -> bool {
        let t = self.block_terms(b);
        t.nonsmooth.is_none() && t.custom.is_empty() && !self.in_coupling(b) && !self.inner_blocks.contains(&b)
    }

    /// `φ(X, Z)`, `+∞` when an indicator is violated.
    pub fn objective_value(&self, values: &[Array2<f64>]) -> f64 {
        let mut v: f64 = self.objective.iter().map(|t| t.kind.value(values[t.block.0].view())).sum();
        if let Some(c) = &self.coupling {
            let args: Vec<Array2<f64>> = c.blocks.iter().map(|b| values[b.0].clone()).collect();
            v += (c.value)(&args);
        }
        v
    }

    /// Objective shown in traces.
    pub fn reported_objective(&self, values: &[Array2<f64>]) -> f64 {
        match &self.report {
            Some(f) => f(values),
            None => self.objective_value(values),
        }
    }

    /// `φ + ⟨W, C⟩ + ρ/2 ‖C‖²`.
    pub fn augmented_lagrangian(&self, state: &SolverState) -> Result<f64> {
        self.lagrangian_at(&state.values, &state.w, state.rho)
    }

    pub fn lagrangian_at(&self, values: &[Array2<f64>], w: &[Array2<f64>], rho: f64) -> Result<f64> {
        let c = self.system.evaluate(values)?;
        let phi = self.objective_value(values);
        Ok(phi + blocks_dot(w, &c) + 0.5 * rho * blocks_norm_sq(&c))
    }

    /// Gaussian blocks of unit Frobenius norm, projected onto any
    /// indicator constraint; zero multipliers.
    pub fn initial_state(&self, seed: u64, rho: f64) -> SolverState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values: Assignment = Vec::with_capacity(self.system.blocks().len());
        for spec in self.system.blocks() {
            let mut v: Array2<f64> = Array2::from_shape_fn(spec.shape, |_| StandardNormal.sample(&mut rng));
            let n = frob_norm(v.view());
            if n > 0.0 {
                v /= n;
            }
            values.push(v);
        }
        for t in &self.objective {
            if t.kind.is_indicator() {
                let cur = values[t.block.0].clone();
                let d = Array2::ones(cur.dim());
                values[t.block.0] = t.kind.prox_weighted(cur.view(), d.view(), cur.view());
            }
        }
        let w = self.system.equation_shapes().into_iter().map(Array2::zeros).collect();
        SolverState { values, w, k: 0, rho }
    }

    /// Constants supplied by the user, or derived from the objective terms
    /// of the final group when every term there is quadratic or linear.
    pub fn effective_constants(&self) -> Option<Constants> {
        if let Some(c) = self.constants {
            return Some(c);
        }
        let role = |b: &BlockId| self.system.block(*b).role;
        let mut m1 = f64::INFINITY;
        let mut big_m1 = 0.0_f64;
        let mut any_z1 = false;
        for b in self.z_group.iter().filter(|b| role(b) == Role::Z1) {
            any_z1 = true;
            let (m, mm) = self.curvature(*b)?;
            if !(m > 0.0) {
                return None;
            }
            m1 = m1.min(m);
            big_m1 = big_m1.max(mm);
        }
        if !any_z1 {
            m1 = 0.0;
        }
        let mut m2 = 0.0_f64;
        for b in self.z_group.iter().filter(|b| role(b) == Role::Z2) {
            m2 = m2.max(self.curvature(*b)?.1);
        }
        let mf = self.coupling.as_ref().map_or(0.0, |c| c.lipschitz);
        Some(Constants { m1, big_m1, m2, mf })
    }

    /// Strong convexity and smoothness moduli of the objective on one block.
    fn curvature(&self, b: BlockId) -> Option<(f64, f64)> {
        let mut lo = 0.0;
        let mut hi = 0.0;
        for t in self.objective.iter().filter(|t| t.block == b) {
            match &t.kind {
                ObjectiveKind::Quadratic { mu, map: None, .. } => {
                    lo += mu;
                    hi += mu;
                }
                ObjectiveKind::Quadratic { mu, map: Some(op), .. } => {
                    let (r, c) = op.input_shape();
                    let (a, b) = match op.gram() {
                        Gram::Scalar(s) => (s, s),
                        Gram::Mask(m) => m.iter().fold((f64::INFINITY, 0.0_f64), |(lo, hi), v| (lo.min(*v), hi.max(*v))),
                        _ if r * c <= 2000 => {
                            let vals = crate::linalg::symmetric_eigenvalues(dense_gram(op.as_ref()).view());
                            (vals[0].max(0.0), vals[vals.len() - 1])
                        }
                        _ => return None,
                    };
                    lo += mu * a;
                    hi += mu * b;
                }
                ObjectiveKind::Linear { .. } => {}
                ObjectiveKind::SmoothCustom { lipschitz, .. } => hi += lipschitz,
                _ => return None,
            }
        }
        Some((lo, hi))
    }

    /// Penalty bound for this problem from its constants and operators.
    pub fn rho_lower_bound(&self) -> Result<f64> {
        let c = self
            .effective_constants()
            .ok_or_else(|| Error::InvalidProblem("objective constants are unknown; supply them explicitly".into()))?;
        let q = self.q_spectrum()?;
        let mut grams = Vec::new();
        for d in &self.injective {
            grams.push((dense_gram_cheap(&d.map), d.mu));
        }
        rho::rho_from_spectrum(&c, &q, rho::injective_term(&grams, c.mf)?)
    }

    /// `λ_++(Q1ᵀQ1)` and `λ_min(Q2ᵀQ2)` for the final group.
    pub fn q_spectrum(&self) -> Result<QSpectrum> {
        let pick = |r: Role| -> Vec<BlockId> { self.z_group.iter().copied().filter(|b| self.system.block(*b).role == r).collect() };
        let z1 = pick(Role::Z1);
        let z2 = pick(Role::Z2);
        let lpp1 = if z1.is_empty() {
            None
        } else {
            let (_, lpp) = q_spectrum(&self.system, &z1)?;
            if !(lpp > 0.0) {
                return Err(Error::NoPositiveEigenvalue);
            }
            Some(lpp)
        };
        let sigma = if z2.is_empty() {
            None
        } else {
            let (lmin, _) = q_spectrum(&self.system, &z2)?;
            if !(lmin > rho::INJECTIVE_TOL) {
                return Err(Error::Q2NotInjective(lmin));
            }
            Some(lmin)
        };
        Ok(QSpectrum { lpp1, sigma })
    }

    pub fn z_blocks_with_role(&self, role: Role) -> Vec<BlockId> {
        self.z_group.iter().copied().filter(|b| self.system.block(*b).role == role).collect()
    }
}

fn dense_gram_cheap(op: &LinearOp) -> Array2<f64> {
    match (op.as_scaled_identity(), op.input_shape() == op.output_shape()) {
        (Some(s), true) => Array2::from_elem((1, 1), s * s),
        _ => dense_gram(op.as_ref()),
    }
}

#[derive(Clone, Debug)]
pub struct SolverState {
    pub values: Assignment,
    /// One multiplier per equation.
    pub w: Vec<Array2<f64>>,
    pub k: usize,
    pub rho: f64,
}

impl SolverState {
    pub fn new(problem: &Problem, values: Assignment, w: Vec<Array2<f64>>, rho: f64) -> Result<Self> {
        problem.system.evaluate(&values)?;
        let shapes = problem.system.equation_shapes();
        if w.len() != shapes.len() || w.iter().zip(&shapes).any(|(a, s)| a.dim() != *s) {
            return Err(Error::InvalidArgument("multiplier shapes do not match the equations".into()));
        }
        if !(rho > 0.0) {
            return Err(Error::InvalidArgument(format!("penalty must be positive, got {rho}")));
        }
        Ok(SolverState { values, w, k: 0, rho })
    }

    pub fn value(&self, b: BlockId) -> &Array2<f64> {
        &self.values[b.0]
    }

    pub fn multiplier_norm(&self) -> f64 {
        blocks_norm(&self.w)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct IterTrace {
    /// Index of the iterate this record describes (the first step yields 1).
    pub k: usize,
    /// `L(U⁺, W⁺)`.
    pub lagrangian: f64,
    pub primal_res: f64,
    /// `‖W⁺ − W‖`.
    pub dual_step: f64,
    pub block_steps: Vec<(String, f64)>,
    pub stat_est: f64,
    pub wall_ms: f64,
    pub objective: f64,
    pub mult_norm: f64,
    /// `L` before the step, after each primal block and after the final group.
    pub lagrangian_path: Vec<f64>,
    /// Passes of cyclic minimization inside the final group; 1 when exact.
    pub z_inner_passes: usize,
    pub inner_iterations: usize,
    /// Subproblem solves that fell back to conjugate gradients.
    pub cg_solves: usize,
    pub violations: Vec<Violation>,
}

impl IterTrace {
    /// `L(U⁺, W)`, before the multiplier step.
    pub fn lagrangian_before_dual(&self) -> f64 {
        *self.lagrangian_path.last().expect("path is never empty")
    }

    pub fn max_block_step(&self) -> f64 {
        self.block_steps.iter().map(|(_, s)| *s).fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RhoPolicy {
    Fixed(f64),
    /// The problem's penalty bound when its constants are known, otherwise
    /// doubling from 1 until a short probe run is monotone.
    Auto,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Default, Serialize)]
pub enum AssertLevel {
    #[default]
    Off,
    /// Record violations in the trace.
    Check,
    /// Fail the solve on the first violation of a guaranteed inequality.
    Strict,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Status {
    Converged,
    MaxIter,
    Diverged,
}

#[derive(Clone, Debug)]
pub struct SolveOptions {
    pub rho: RhoPolicy,
    pub max_iter: usize,
    pub tol_primal: f64,
    pub tol_step: f64,
    pub seed: u64,
    pub assert_level: AssertLevel,
    pub divergence_threshold: f64,
    pub quad: QuadOptions,
    pub inner: InnerOptions,
    pub track_stationarity: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            rho: RhoPolicy::Auto,
            max_iter: 1000,
            tol_primal: 1e-6,
            tol_step: 1e-6,
            seed: 0,
            assert_level: AssertLevel::Off,
            divergence_threshold: 1e12,
            quad: QuadOptions::default(),
            inner: InnerOptions::default(),
            track_stationarity: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolveResult {
    pub state: SolverState,
    pub traces: Vec<IterTrace>,
    pub status: Status,
}

/// Iterative effort spent inside one update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub(crate) struct Work {
    inner: usize,
    cg: usize,
}

impl std::ops::AddAssign for Work {
    fn add_assign(&mut self, o: Work) {
        self.inner += o.inner;
        self.cg += o.cg;
    }
}

/// Consecutive qualifying iterations required before declaring convergence.
const CONVERGED_STREAK: usize = 3;
const Z_PASS_TOL: f64 = 1e-12;
const Z_MAX_PASSES: usize = 100;
const AUTO_PROBE_ITERS: usize = 10;
const AUTO_MAX_DOUBLINGS: usize = 40;

pub fn resolve_rho(problem: &Problem, opts: &SolveOptions) -> Result<f64> {
    match opts.rho {
        RhoPolicy::Fixed(r) if r > 0.0 && r.is_finite() => Ok(r),
        RhoPolicy::Fixed(r) => Err(Error::InvalidArgument(format!("penalty must be positive, got {r}"))),
        RhoPolicy::Auto => {
            if let Ok(r) = problem.rho_lower_bound() {
                return Ok(r);
            }
            let probe = SolveOptions {
                rho: RhoPolicy::Fixed(1.0),
                max_iter: AUTO_PROBE_ITERS,
                assert_level: AssertLevel::Off,
                track_stationarity: false,
                tol_primal: 0.0,
                tol_step: 0.0,
                ..opts.clone()
            };
            let mut rho = 1.0;
            for _ in 0..=AUTO_MAX_DOUBLINGS {
                let run = solve_from(problem, problem.initial_state(opts.seed, rho), &probe);
                if let Ok(res) = run {
                    let monotone = res.status != Status::Diverged
                        && res.traces.windows(2).skip(0).all(|w| w[1].lagrangian <= w[0].lagrangian + 1e-9 * (1.0 + w[0].lagrangian.abs()));
                    if monotone {
                        return Ok(rho);
                    }
                }
                rho *= 2.0;
            }
            Err(Error::InvalidProblem(format!("no penalty up to 2^{AUTO_MAX_DOUBLINGS} gave a monotone probe run")))
        }
    }
}

/// Run ADMM from the seeded initial point.
pub fn solve(problem: &Problem, opts: &SolveOptions) -> Result<SolveResult> {
    problem.validate()?;
    let rho = resolve_rho(problem, opts)?;
    solve_from(problem, problem.initial_state(opts.seed, rho), opts)
}

/// Run ADMM from a given state, using the state's penalty.
pub fn solve_from(problem: &Problem, mut state: SolverState, opts: &SolveOptions) -> Result<SolveResult> {
    let ctx = if opts.assert_level > AssertLevel::Off { Some(IterationContext::new(problem, state.rho)) } else { None };
    let scale = 1.0 + problem.system.constant_norm();
    let mut traces = Vec::new();
    let mut streak = 0;
    let mut status = Status::MaxIter;
    for _ in 0..opts.max_iter {
        let (next, mut trace) = step(problem, &state, opts)?;
        if let Some(ctx) = &ctx {
            trace.violations = diagnostics::assert_iteration(problem, &state, &next, &trace, ctx);
            if opts.assert_level == AssertLevel::Strict {
                if let Some(v) = trace.violations.iter().find(|v| v.guaranteed) {
                    return Err(Error::AssertionFailed(format!("{} at k={}: {}", v.check, v.k, v.detail)));
                }
            }
        }
        let diverged = !trace.lagrangian.is_finite()
            || trace.lagrangian.abs() > opts.divergence_threshold
            || !(trace.mult_norm <= opts.divergence_threshold)
            || next.values.iter().any(|v| v.iter().any(|x| !x.is_finite()));
        let ok = trace.primal_res <= opts.tol_primal * scale && trace.block_steps.iter().all(|(_, s)| *s <= opts.tol_step);
        traces.push(trace);
        state = next;
        if diverged {
            status = Status::Diverged;
            break;
        }
        streak = if ok { streak + 1 } else { 0 };
        if streak >= CONVERGED_STREAK {
            status = Status::Converged;
            break;
        }
    }
    Ok(SolveResult { state, traces, status })
}

/// One ADMM iteration.
pub fn step(problem: &Problem, state: &SolverState, opts: &SolveOptions) -> Result<(SolverState, IterTrace)> {
    let start = Instant::now();
    let rho = state.rho;
    let wrap = |b: BlockId, e: Error| Error::Subproblem { block: problem.block_name(b).to_string(), k: state.k, source: Box::new(e) };
    let mut values = state.values.clone();
    let mut path = vec![problem.lagrangian_at(&values, &state.w, rho)?];
    let mut block_steps = Vec::new();
    let mut work = Work::default();
    for &b in &problem.update_order {
        let (new, it) = update_block(problem, b, &values, &state.w, rho, opts).map_err(|e| wrap(b, e))?;
        work += it;
        block_steps.push((problem.block_name(b).to_string(), frob_norm((&new - &values[b.0]).view())));
        values[b.0] = new;
        path.push(problem.lagrangian_at(&values, &state.w, rho)?);
    }
    let mut z_inner_passes = 0;
    if !problem.z_group.is_empty() {
        let (news, passes, it) =
            update_group(problem, &problem.z_group, &values, &state.w, rho, opts).map_err(|e| wrap(problem.z_group[0], e))?;
        z_inner_passes = passes;
        work += it;
        for (b, new) in problem.z_group.iter().zip(news) {
            block_steps.push((problem.block_name(*b).to_string(), frob_norm((&new - &values[b.0]).view())));
            values[b.0] = new;
        }
        path.push(problem.lagrangian_at(&values, &state.w, rho)?);
    }
    let c = problem.system.evaluate(&values)?;
    let w: Vec<Array2<f64>> = state.w.iter().zip(&c).map(|(w, c)| w + &(c * rho)).collect();
    let primal_res = blocks_norm(&c);
    let next = SolverState { values, w, k: state.k + 1, rho };
    let lagrangian = problem.augmented_lagrangian(&next)?;
    let stat_est = if opts.track_stationarity { diagnostics::stationarity(problem, &next)?.aggregate } else { f64::NAN };
    let trace = IterTrace {
        k: next.k,
        lagrangian,
        primal_res,
        dual_step: rho * primal_res,
        block_steps,
        stat_est,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
        objective: problem.reported_objective(&next.values),
        mult_norm: next.multiplier_norm(),
        lagrangian_path: path,
        z_inner_passes,
        inner_iterations: work.inner,
        cg_solves: work.cg,
        violations: Vec::new(),
    };
    Ok((next, trace))
}

/// Exact minimizer of `L` over one block with everything else fixed.
/// Returns the new value and the number of inner iterations used.
pub(crate) fn update_block(
    problem: &Problem,
    b: BlockId,
    values: &[Array2<f64>],
    w: &[Array2<f64>],
    rho: f64,
    opts: &SolveOptions,
) -> Result<(Array2<f64>, Work)> {
    let form = problem.system.freeze(&[b], values)?;
    let terms = problem.block_terms(b);
    let extras: Vec<(usize, ObjectiveKind)> = terms.quadratic.iter().map(|k| (0, k.clone())).collect();
    let ne = NormalEquations::new(&form, w, rho, &extras)?;
    let current = &values[b.0];
    if problem.inner_blocks.contains(&b) || !terms.custom.is_empty() || problem.in_coupling(b) {
        return Ok(inner_update(problem, b, &ne, &terms, values, opts));
    }
    if let Some(ns) = terms.nonsmooth {
        let d = ne
            .diagonal(0)
            .ok_or_else(|| Error::InvalidProblem(format!("block `{}` lacks a diagonal subproblem", problem.block_name(b))))?;
        if matches!(ns, ObjectiveKind::UnitColumns) {
            let (lo, hi) = d.iter().fold((f64::INFINITY, 0.0_f64), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
            if hi - lo > 1e-12 * hi {
                return Err(Error::InvalidProblem("unit-column block needs uniform curvature".into()));
            }
        }
        let r = ne.rhs().remove(0);
        let v = ndarray::Zip::from(&r).and(&d).and(current).map_collect(|&r, &d, &c| if d > 0.0 { r / d } else { c });
        return Ok((ns.prox_weighted(v.view(), d.view(), current.view()), Work::default()));
    }
    let warm = (!problem.strongly_convex_block(b)).then(|| std::slice::from_ref(current));
    let sol = ne.solve(warm, &opts.quad)?;
    let work = Work { inner: 0, cg: count_cg(&sol.methods) };
    Ok((sol.y.into_iter().next().expect("one slot"), work))
}

fn inner_update(
    problem: &Problem,
    b: BlockId,
    ne: &NormalEquations,
    terms: &BlockTerms<'_>,
    values: &[Array2<f64>],
    opts: &SolveOptions,
) -> (Array2<f64>, Work) {
    let coupling = problem.coupling.as_ref().filter(|c| c.blocks.contains(&b));
    let with = |y: &Array2<f64>| -> Vec<Array2<f64>> {
        let c = coupling.expect("only called with coupling");
        c.blocks.iter().map(|cb| if *cb == b { y.clone() } else { values[cb.0].clone() }).collect()
    };
    let f = |y: &Array2<f64>| {
        let mut v = ne.smooth_value(std::slice::from_ref(y));
        for k in &terms.custom {
            v += k.value(y.view());
        }
        if let Some(c) = coupling {
            v += (c.value)(&with(y));
        }
        v
    };
    let grad = |y: &Array2<f64>| {
        let mut g = ne.gradient(std::slice::from_ref(y)).remove(0);
        for k in &terms.custom {
            g += &k.gradient(y.view()).expect("smooth term");
        }
        if let Some(c) = coupling {
            let pos = c.blocks.iter().position(|cb| *cb == b).expect("block in coupling");
            g += &(c.grads[pos])(&with(y));
        }
        g
    };
    let current = &values[b.0];
    let g = |y: &Array2<f64>| terms.nonsmooth.map_or(0.0, |k| k.value(y.view()));
    let prox = |v: &Array2<f64>, tau: f64| match terms.nonsmooth {
        Some(k) => {
            let d = Array2::from_elem(v.dim(), 1.0 / tau);
            k.prox_weighted(v.view(), d.view(), current.view())
        }
        None => v.clone(),
    };
    let mut lip = ne.lipschitz_upper();
    for k in &terms.custom {
        if let ObjectiveKind::SmoothCustom { lipschitz, .. } = k {
            lip += lipschitz;
        }
    }
    if let Some(c) = coupling {
        lip += c.lipschitz;
    }
    let res = if terms.custom.is_empty() && coupling.is_none() {
        let r = ne.rhs().remove(0);
        let c = ne.smooth_value(&[Array2::zeros(current.dim())]);
        match ne.fourier_hessian() {
            Some(h) => mfista_quadratic(h, &r, c, g, prox, current, lip, &opts.inner),
            None => mfista_quadratic(|y| ne.apply(std::slice::from_ref(y)).remove(0), &r, c, g, prox, current, lip, &opts.inner),
        }
    } else {
        mfista(f, grad, g, prox, current, lip, &opts.inner)
    };
    (res.y, Work { inner: res.iterations, cg: 0 })
}

fn count_cg(methods: &[SolveMethod]) -> usize {
    methods.iter().filter(|m| matches!(m, SolveMethod::Cg { .. })).count()
}

/// Joint minimizer over a group of blocks. Returns the new values, the
/// number of cyclic passes and the inner iterations used.
pub(crate) fn update_group(
    problem: &Problem,
    focus: &[BlockId],
    values: &[Array2<f64>],
    w: &[Array2<f64>],
    rho: f64,
    opts: &SolveOptions,
) -> Result<(Vec<Array2<f64>>, usize, Work)> {
    if focus.len() == 1 {
        let (y, it) = update_block(problem, focus[0], values, w, rho, opts)?;
        return Ok((vec![y], 1, it));
    }
    let form = problem.system.freeze(focus, values)?;
    if focus.iter().all(|b| problem.is_quadratic_block(*b)) {
        let mut extras = Vec::new();
        for (slot, b) in focus.iter().enumerate() {
            for k in problem.block_terms(*b).quadratic {
                extras.push((slot, k));
            }
        }
        let warm: Vec<Array2<f64>> = focus.iter().map(|b| values[b.0].clone()).collect();
        let warm = (!focus.iter().all(|b| problem.strongly_convex_block(*b))).then_some(warm.as_slice());
        let sol = NormalEquations::new(&form, w, rho, &extras)?.solve(warm, &opts.quad)?;
        let work = Work { inner: 0, cg: count_cg(&sol.methods) };
        return Ok((sol.y, 1, work));
    }
    if form.is_decoupled() {
        let mut out = Vec::new();
        let mut its = Work::default();
        for b in focus {
            let (y, it) = update_block(problem, *b, values, w, rho, opts)?;
            out.push(y);
            its += it;
        }
        return Ok((out, 1, its));
    }
    // Cyclic exact minimization: Z0 blocks one at a time, then the rest.
    let (z0, rest): (Vec<BlockId>, Vec<BlockId>) = focus.iter().partition(|b| problem.system.block(**b).role == Role::Z0);
    let mut vals = values.to_vec();
    let mut its = Work::default();
    for pass in 1..=Z_MAX_PASSES {
        let before: Vec<Array2<f64>> = focus.iter().map(|b| vals[b.0].clone()).collect();
        for b in &z0 {
            let (y, it) = update_block(problem, *b, &vals, w, rho, opts)?;
            vals[b.0] = y;
            its += it;
        }
        if !rest.is_empty() {
            let (ys, _, it) = if rest.iter().all(|b| problem.is_quadratic_block(*b)) {
                update_group(problem, &rest, &vals, w, rho, opts)?
            } else {
                let mut ys = Vec::new();
                let mut it = Work::default();
                for b in &rest {
                    let (y, i) = update_block(problem, *b, &vals, w, rho, opts)?;
                    vals[b.0] = y.clone();
                    ys.push(y);
                    it += i;
                }
                (ys, 1, it)
            };
            for (b, y) in rest.iter().zip(ys) {
                vals[b.0] = y;
            }
            its += it;
        }
        let moved = focus.iter().zip(&before).map(|(b, v)| frob_norm((&vals[b.0] - v).view())).fold(0.0, f64::max);
        let size = blocks_norm(&before);
        if moved <= Z_PASS_TOL * (1.0 + size) {
            return Ok((focus.iter().map(|b| vals[b.0].clone()).collect(), pass, its));
        }
    }
    Ok((focus.iter().map(|b| vals[b.0].clone()).collect(), Z_MAX_PASSES, its))
}
