//! Lower bound on the penalty parameter that guarantees a monotone
//! augmented Lagrangian and bounded iterates.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::linalg::{self, spectrum_min_pos};
use crate::linop::{dense_gram, LinearOperator};
use crate::multiaffine::{BlockId, MultiaffineSystem};
use crate::prox::NormalEquations;

/// Curvature constants of the objective.
///
/// `m1`/`big_m1` are the strong convexity and smoothness moduli of the
/// `Z1` objective, `m2` the gradient Lipschitz constant of the `Z2`
/// objective and `mf` that of the smooth coupling term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Constants {
    pub m1: f64,
    pub big_m1: f64,
    pub m2: f64,
    pub mf: f64,
}

/// Spectral data of the final-block operators.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QSpectrum {
    /// `λ_++(Q1ᵀQ1)`, absent without `Z1` blocks.
    pub lpp1: Option<f64>,
    /// `λ_min(Q2ᵀQ2)`, absent without `Z2` blocks.
    pub sigma: Option<f64>,
}

const GRID_START: f64 = 1e-8;
const GRID_FACTOR: f64 = 1.05;
const GRID_CAP: f64 = 1e12;
pub(crate) const INJECTIVE_TOL: f64 = 1e-10;

/// Both sufficient conditions at `rho`, plus `ρ > r_term`.
pub fn rho_satisfies(rho: f64, c: &Constants, q: &QSpectrum, r_term: f64) -> bool {
    let mut need = r_term;
    if let Some(s) = q.sigma {
        if !(s * rho / 2.0 - c.m2 * c.m2 / (s * rho) > c.m2 / 2.0) {
            return false;
        }
    }
    let mut inv = 0.0_f64;
    if let Some(l) = q.lpp1 {
        let kappa = c.big_m1 / c.m1;
        need = need.max(2.0 * c.big_m1 * kappa / l);
        inv = inv.max((1.0 + 2.0 * kappa).powi(2) / l);
    }
    if let Some(s) = q.sigma {
        inv = inv.max(1.0 / s);
    }
    let m1 = if q.lpp1.is_some() { c.big_m1 } else { 0.0 };
    need = need.max(0.5 * (m1 + c.m2) * inv);
    rho > need
}

/// Smallest point of the grid `1e-8 · 1.05^j` satisfying [`rho_satisfies`].
pub fn rho_from_spectrum(c: &Constants, q: &QSpectrum, r_term: f64) -> Result<f64> {
    if q.lpp1.is_none() && q.sigma.is_none() {
        return Err(Error::InvalidProblem("penalty bound needs a Z1 or Z2 block in the final group".into()));
    }
    if q.lpp1.is_some() && !(c.m1 > 0.0 && c.big_m1 >= c.m1) {
        return Err(Error::InvalidArgument(format!("need 0 < m1 <= M1, got m1={} M1={}", c.m1, c.big_m1)));
    }
    if !(c.m2 >= 0.0 && c.mf >= 0.0) {
        return Err(Error::InvalidArgument("M2 and M_F must be nonnegative".into()));
    }
    let mut rho = GRID_START;
    while rho <= GRID_CAP {
        if rho_satisfies(rho, c, q, r_term) {
            return Ok(rho);
        }
        rho *= GRID_FACTOR;
    }
    Err(Error::InvalidProblem(format!("no penalty below {GRID_CAP:e} satisfies the bound")))
}

/// `max_ℓ (μ_ℓ + M_F) / λ_min(R_ℓᵀR_ℓ)`.
pub fn injective_term(r_blocks: &[(Array2<f64>, f64)], mf: f64) -> Result<f64> {
    let mut t = 0.0_f64;
    for (gram, mu) in r_blocks {
        let vals = linalg::symmetric_eigenvalues(gram.view());
        let lmin = vals.first().copied().unwrap_or(0.0);
        if !(lmin > INJECTIVE_TOL) {
            return Err(Error::InvalidArgument(format!("declared map is not injective (lambda_min = {lmin:e})")));
        }
        t = t.max((mu + mf) / lmin);
    }
    Ok(t)
}

fn gram_min_pos(g: ArrayView2<f64>) -> Result<(f64, f64)> {
    linalg::lambda_min_pos(g, 1e-12)
}

/// Penalty lower bound from explicit operators. `q1`/`q2` may be absent
/// when the final group has no `Z1`/`Z2` blocks.
pub fn rho_lower_bound(
    m1: f64,
    big_m1: f64,
    m2: f64,
    mf: f64,
    q1: Option<&dyn LinearOperator>,
    q2: Option<&dyn LinearOperator>,
    r_blocks: &[(&dyn LinearOperator, f64)],
) -> Result<f64> {
    let lpp1 = match q1 {
        Some(op) => Some(scaled_identity_spectrum(op).map_or_else(|| gram_min_pos(dense_gram(op).view()), Ok)?.1),
        None => None,
    };
    let sigma = match q2 {
        Some(op) => {
            let (lmin, _) = match scaled_identity_spectrum(op) {
                Some(s) => s,
                None => {
                    let vals = linalg::symmetric_eigenvalues(dense_gram(op).view());
                    let lmin = vals.first().copied().unwrap_or(0.0);
                    (lmin, lmin)
                }
            };
            if !(lmin > INJECTIVE_TOL) {
                return Err(Error::Q2NotInjective(lmin));
            }
            Some(lmin)
        }
        None => None,
    };
    let grams: Vec<(Array2<f64>, f64)> = r_blocks.iter().map(|(op, mu)| (dense_gram(*op), *mu)).collect();
    let c = Constants { m1, big_m1, m2, mf };
    rho_from_spectrum(&c, &QSpectrum { lpp1, sigma }, injective_term(&grams, mf)?)
}

fn scaled_identity_spectrum(op: &dyn LinearOperator) -> Option<(f64, f64)> {
    let s = op.as_scaled_identity()?;
    (op.input_shape() == op.output_shape()).then_some((s * s, s * s))
}

/// `(λ_min, λ_++)` of `QᵀQ` where `Q` maps `blocks` into the equations.
pub fn q_spectrum(system: &MultiaffineSystem, blocks: &[BlockId]) -> Result<(f64, f64)> {
    let zeros: Vec<Array2<f64>> = system.block_shapes().into_iter().map(Array2::zeros).collect();
    let form = system.freeze(blocks, &zeros)?;
    let w: Vec<Array2<f64>> = form.eq_shapes.iter().map(|s| Array2::zeros(*s)).collect();
    let ne = NormalEquations::new(&form, &w, 1.0, &[])?;
    let diag: Option<Vec<f64>> = (0..blocks.len())
        .map(|s| ne.diagonal(s))
        .collect::<Option<Vec<_>>>()
        .map(|ds| ds.into_iter().flat_map(|d| d.into_iter()).collect());
    let vals = match diag {
        Some(v) => v,
        None => {
            if form.focus_dim() > 3000 {
                return Err(Error::InvalidProblem("final-block operator too large for a dense spectrum".into()));
            }
            linalg::symmetric_eigenvalues(ne.dense_matrix().view())
        }
    };
    let lmin = vals.iter().copied().fold(f64::INFINITY, f64::min);
    match spectrum_min_pos(&vals, 1e-12) {
        Ok((_, lpp)) => Ok((lmin.max(0.0), lpp)),
        Err(Error::NoPositiveEigenvalue) => Ok((0.0, 0.0)),
        Err(e) => Err(e),
    }
}
