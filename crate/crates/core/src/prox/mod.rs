//! Objective terms and their proximal operators.

pub mod inner;
pub mod quad;

use std::fmt;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linop::{Gram, LinearOp};
use crate::multiaffine::BlockId;

pub use quad::{quad_block_solve, NormalEquations, QuadOptions, SolveMethod};

pub type ValueFn = Arc<dyn Fn(ArrayView2<f64>) -> f64 + Send + Sync>;
pub type GradFn = Arc<dyn Fn(ArrayView2<f64>) -> Array2<f64> + Send + Sync>;
pub type CouplingValueFn = Arc<dyn Fn(&[Array2<f64>]) -> f64 + Send + Sync>;
pub type CouplingGradFn = Arc<dyn Fn(&[Array2<f64>]) -> Array2<f64> + Send + Sync>;

/// A separable objective piece attached to one block.
#[derive(Clone)]
pub enum ObjectiveKind {
    /// `μ/2 ‖map(Y) − center‖²`, `map` defaulting to the identity.
    Quadratic {
        mu: f64,
        center: Array2<f64>,
        map: Option<LinearOp>,
    },
    /// `⟨coeff, Y⟩ + constant`.
    Linear { coeff: Array2<f64>, constant: f64 },
    /// `λ ‖Y‖₁`, entrywise.
    L1 { lambda: f64 },
    /// Indicator of `Y ≥ 0`.
    Nonneg,
    /// Indicator of `lower ≤ Y ≤ upper`.
    Box { lower: f64, upper: f64 },
    /// Indicator of matrices whose columns have unit Euclidean norm.
    UnitColumns,
    /// User-supplied smooth function with `lipschitz`-continuous gradient.
    SmoothCustom {
        value: ValueFn,
        grad: GradFn,
        lipschitz: f64,
    },
}

impl fmt::Debug for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ObjectiveKind::Quadratic { mu, map, .. } => {
                write!(f, "Quadratic(mu={mu}, map={})", if map.is_some() { "op" } else { "identity" })
            }
            ObjectiveKind::Linear { constant, .. } => write!(f, "Linear(constant={constant})"),
            ObjectiveKind::L1 { lambda } => write!(f, "L1({lambda})"),
            ObjectiveKind::Nonneg => write!(f, "IndicatorNonneg"),
            ObjectiveKind::Box { lower, upper } => write!(f, "IndicatorBox({lower}, {upper})"),
            ObjectiveKind::UnitColumns => write!(f, "IndicatorUnitColumns"),
            ObjectiveKind::SmoothCustom { lipschitz, .. } => write!(f, "SmoothCustom(M={lipschitz})"),
        }
    }
}

/// Feasibility slack used when evaluating indicator functions.
const INDICATOR_TOL: f64 = 1e-9;

impl ObjectiveKind {
    pub fn is_nonsmooth(&self) -> bool {
        matches!(self, ObjectiveKind::L1 { .. } | ObjectiveKind::Nonneg | ObjectiveKind::Box { .. } | ObjectiveKind::UnitColumns)
    }

    pub fn is_indicator(&self) -> bool {
        matches!(self, ObjectiveKind::Nonneg | ObjectiveKind::Box { .. } | ObjectiveKind::UnitColumns)
    }

    /// Quadratic or linear: handled exactly by the normal equations.
    pub fn is_quadratic(&self) -> bool {
        matches!(self, ObjectiveKind::Quadratic { .. } | ObjectiveKind::Linear { .. })
    }

    pub fn validate(&self, shape: (usize, usize)) -> Result<()> {
        match self {
            ObjectiveKind::Quadratic { mu, center, map } => {
                if !(*mu > 0.0) {
                    return Err(Error::InvalidProblem(format!("quadratic weight must be positive, got {mu}")));
                }
                let out = match map {
                    Some(op) => {
                        if op.input_shape() != shape {
                            return Err(Error::InvalidProblem(format!(
                                "quadratic map expects {:?}, block is {:?}",
                                op.input_shape(),
                                shape
                            )));
                        }
                        op.output_shape()
                    }
                    None => shape,
                };
                if center.dim() != out {
                    return Err(Error::InvalidProblem(format!("quadratic center is {:?}, expected {:?}", center.dim(), out)));
                }
            }
            ObjectiveKind::Linear { coeff, .. } => {
                if coeff.dim() != shape {
                    return Err(Error::InvalidProblem(format!("linear coefficient is {:?}, expected {:?}", coeff.dim(), shape)));
                }
            }
            ObjectiveKind::L1 { lambda } => {
                if !(*lambda >= 0.0) {
                    return Err(Error::InvalidProblem(format!("L1 weight must be nonnegative, got {lambda}")));
                }
            }
            ObjectiveKind::Box { lower, upper } => {
                if !(lower <= upper) {
                    return Err(Error::InvalidProblem(format!("box bounds {lower} > {upper}")));
                }
            }
            ObjectiveKind::SmoothCustom { lipschitz, .. } => {
                if !(*lipschitz >= 0.0) {
                    return Err(Error::InvalidProblem("smooth term needs a nonnegative Lipschitz constant".into()));
                }
            }
            ObjectiveKind::Nonneg | ObjectiveKind::UnitColumns => {}
        }
        Ok(())
    }

    /// Value at `y`, `+∞` outside the domain of an indicator.
    pub fn value(&self, y: ArrayView2<f64>) -> f64 {
        match self {
            ObjectiveKind::Quadratic { mu, center, map } => {
                let r = match map {
                    Some(op) => op.apply(y) - center,
                    None => &y - center,
                };
                0.5 * mu * r.iter().map(|v| v * v).sum::<f64>()
            }
            ObjectiveKind::Linear { coeff, constant } => crate::linalg::frob_dot(coeff.view(), y) + constant,
            ObjectiveKind::L1 { lambda } => lambda * y.iter().map(|v| v.abs()).sum::<f64>(),
            ObjectiveKind::Nonneg => indicator(y.iter().all(|v| *v >= -INDICATOR_TOL)),
            ObjectiveKind::Box { lower, upper } => {
                indicator(y.iter().all(|v| *v >= lower - INDICATOR_TOL && *v <= upper + INDICATOR_TOL))
            }
            ObjectiveKind::UnitColumns => indicator(
                y.columns()
                    .into_iter()
                    .all(|c| (c.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs() <= INDICATOR_TOL),
            ),
            ObjectiveKind::SmoothCustom { value, .. } => value(y),
        }
    }

    /// Gradient of a smooth term; `None` for nonsmooth ones.
    pub fn gradient(&self, y: ArrayView2<f64>) -> Option<Array2<f64>> {
        match self {
            ObjectiveKind::Quadratic { mu, center, map } => Some(match map {
                Some(op) => op.adjoint((op.apply(y) - center).view()) * *mu,
                None => (&y - center) * *mu,
            }),
            ObjectiveKind::Linear { coeff, .. } => Some(coeff.clone()),
            ObjectiveKind::SmoothCustom { grad, .. } => Some(grad(y)),
            _ => None,
        }
    }

    /// Hessian structure of a quadratic term (`μ · mapᵀmap`).
    pub(crate) fn hessian(&self) -> Option<Gram> {
        match self {
            ObjectiveKind::Quadratic { mu, map: None, .. } => Some(Gram::Scalar(*mu)),
            ObjectiveKind::Quadratic { mu, map: Some(op), .. } => Some(op.gram().scaled(*mu)),
            _ => None,
        }
    }

    /// `argmin_Y g(Y) + ½ Σ d_ij (Y_ij − v_ij)²` for a nonsmooth `g` and
    /// nonnegative curvature `d`. Entries with `d = 0` fall back to `current`.
    pub fn prox_weighted(&self, v: ArrayView2<f64>, d: ArrayView2<f64>, current: ArrayView2<f64>) -> Array2<f64> {
        match self {
            ObjectiveKind::L1 { lambda } => Zip::from(v).and(d).map_collect(|&v, &d| {
                if d > 0.0 {
                    soft(v, lambda / d)
                } else {
                    0.0
                }
            }),
            ObjectiveKind::Nonneg => Zip::from(v).and(d).and(current).map_collect(|&v, &d, &c| {
                let t = if d > 0.0 { v } else { c };
                t.max(0.0)
            }),
            ObjectiveKind::Box { lower, upper } => Zip::from(v).and(d).and(current).map_collect(|&v, &d, &c| {
                let t = if d > 0.0 { v } else { c };
                t.clamp(*lower, *upper)
            }),
            ObjectiveKind::UnitColumns => project_unit_columns(v),
            _ => v.to_owned(),
        }
    }
}

fn indicator(ok: bool) -> f64 {
    if ok {
        0.0
    } else {
        f64::INFINITY
    }
}

#[derive(Clone, Debug)]
pub struct ObjectiveTerm {
    pub block: BlockId,
    pub kind: ObjectiveKind,
}

impl ObjectiveTerm {
    pub fn new(block: BlockId, kind: ObjectiveKind) -> Self {
        ObjectiveTerm { block, kind }
    }

    /// `μ/2 ‖Y − center‖²`.
    pub fn quadratic(block: BlockId, mu: f64, center: Array2<f64>) -> Self {
        Self::new(block, ObjectiveKind::Quadratic { mu, center, map: None })
    }

    pub fn quadratic_map(block: BlockId, mu: f64, center: Array2<f64>, map: LinearOp) -> Self {
        Self::new(block, ObjectiveKind::Quadratic { mu, center, map: Some(map) })
    }

    pub fn linear(block: BlockId, coeff: Array2<f64>, constant: f64) -> Self {
        Self::new(block, ObjectiveKind::Linear { coeff, constant })
    }

    pub fn l1(block: BlockId, lambda: f64) -> Self {
        Self::new(block, ObjectiveKind::L1 { lambda })
    }

    pub fn nonneg(block: BlockId) -> Self {
        Self::new(block, ObjectiveKind::Nonneg)
    }

    pub fn boxed(block: BlockId, lower: f64, upper: f64) -> Self {
        Self::new(block, ObjectiveKind::Box { lower, upper })
    }

    pub fn unit_columns(block: BlockId) -> Self {
        Self::new(block, ObjectiveKind::UnitColumns)
    }

    pub fn smooth(block: BlockId, value: ValueFn, grad: GradFn, lipschitz: f64) -> Self {
        Self::new(block, ObjectiveKind::SmoothCustom { value, grad, lipschitz })
    }
}

/// Smooth coupling `F(X_0, …, X_n)` over several blocks.
#[derive(Clone)]
pub struct CouplingTerm {
    pub blocks: Vec<BlockId>,
    /// Evaluated on the listed blocks' values, in order.
    pub value: CouplingValueFn,
    /// One gradient per listed block.
    pub grads: Vec<CouplingGradFn>,
    pub lipschitz: f64,
}

impl fmt::Debug for CouplingTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CouplingTerm").field("blocks", &self.blocks).field("lipschitz", &self.lipschitz).finish()
    }
}

fn soft(v: f64, tau: f64) -> f64 {
    v.signum() * (v.abs() - tau).max(0.0)
}

/// Entrywise `sign(v) · max(|v| − τ, 0)`.
pub fn soft_threshold(v: ArrayView2<f64>, tau: f64) -> Result<Array2<f64>> {
    if !(tau >= 0.0) {
        return Err(Error::InvalidArgument(format!("threshold must be nonnegative, got {tau}")));
    }
    if tau == 0.0 {
        return Ok(v.to_owned());
    }
    Ok(v.mapv(|x| soft(x, tau)))
}

pub fn project_nonneg(v: ArrayView2<f64>) -> Array2<f64> {
    v.mapv(|x| x.max(0.0))
}

pub fn project_box(v: ArrayView2<f64>, lower: f64, upper: f64) -> Result<Array2<f64>> {
    if !(lower <= upper) {
        return Err(Error::InvalidArgument(format!("box bounds {lower} > {upper}")));
    }
    Ok(v.mapv(|x| x.clamp(lower, upper)))
}

/// Scales each column to unit norm; zero columns map to the first basis vector.
pub fn project_unit_columns(v: ArrayView2<f64>) -> Array2<f64> {
    let mut out = v.to_owned();
    for mut col in out.columns_mut() {
        let n = col.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 {
            col.mapv_inplace(|x| x / n);
        } else {
            col.fill(0.0);
            col[0] = 1.0;
        }
    }
    out
}

/// Largest relative mismatch between `grad` and central differences of
/// `value` along random unit directions.
pub fn gradient_check(value: &ValueFn, grad: &GradFn, shape: (usize, usize), probes: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..probes {
        let y = Array2::from_shape_fn(shape, |_| StandardNormal.sample(&mut rng));
        let mut d: Array2<f64> = Array2::from_shape_fn(shape, |_| StandardNormal.sample(&mut rng));
        let dn = crate::linalg::frob_norm(d.view());
        d /= dn;
        let fd = (value((&y + &(&d * h)).view()) - value((&y - &(&d * h)).view())) / (2.0 * h);
        let an = crate::linalg::frob_dot(grad(y.view()).view(), d.view());
        worst = worst.max((fd - an).abs() / (1.0 + an.abs()));
    }
    worst
}
