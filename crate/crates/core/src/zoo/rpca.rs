//! Robust PCA through a low-rank factorization `UVᵀ + S = B`.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{positive, randn, ZooInstance};
use crate::error::{Error, Result};
use crate::multiaffine::{Factor, MultiaffineSystem, Role, Term};
use crate::prox::ObjectiveTerm;
use crate::solver::Problem;

/// Both formulations built from the same data.
#[derive(Clone, Debug)]
pub struct Rpca2 {
    pub raw: ZooInstance,
    pub slack: ZooInstance,
}

pub const DEFAULT_SLACK_MU: f64 = 10.0;

pub fn rpca2(b: &Array2<f64>, k: usize, lambda: f64) -> Result<Rpca2> {
    Ok(Rpca2 { raw: rpca2_raw(b, k, lambda)?, slack: rpca2_slack(b, k, lambda, DEFAULT_SLACK_MU)? })
}

fn check(k: usize, lambda: f64) -> Result<()> {
    if k < 1 {
        return Err(Error::InvalidArgument("factor rank must be at least 1".into()));
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("L1 weight must be nonnegative, got {lambda}")));
    }
    Ok(())
}

/// `min ½(‖U‖² + ‖V‖²) + λ‖S‖₁  s.t.  UVᵀ + S = B` with `S` as the whole
/// final group. Nothing in the final group enters linearly, so the image
/// assumption cannot hold.
pub fn rpca2_raw(b: &Array2<f64>, k: usize, lambda: f64) -> Result<ZooInstance> {
    check(k, lambda)?;
    let (m, n) = b.dim();
    let mut sb = MultiaffineSystem::builder();
    let u = sb.block("U", Role::X(0), (m, k));
    let v = sb.block("V", Role::X(1), (n, k));
    let s = sb.block("S", Role::Z0, (m, n));
    sb.equation(
        (m, n),
        vec![Term::chain(vec![Factor::Var(u), Factor::VarT(v)]), Term::var(s, (m, n)), Term::constant(b.clone()).neg()],
    );
    let obj = vec![
        ObjectiveTerm::quadratic(u, 1.0, Array2::zeros((m, k))),
        ObjectiveTerm::quadratic(v, 1.0, Array2::zeros((n, k))),
        ObjectiveTerm::l1(s, lambda),
    ];
    let p = Problem::new("rpca2-raw", sb.build()?, obj, vec![u, v], vec![s])?;
    let mut inst = ZooInstance::new(p).meta(&[("m", m as f64), ("n", n as f64), ("k", k as f64), ("lambda", lambda)]);
    inst.assumptions_violated = true;
    Ok(inst)
}

/// Adds a slack `Z` with `μ/2‖Z‖²`: `UVᵀ + S − Z = B`. `S` becomes an
/// ordinary primal block updated by soft thresholding before `Z`.
pub fn rpca2_slack(b: &Array2<f64>, k: usize, lambda: f64, mu: f64) -> Result<ZooInstance> {
    check(k, lambda)?;
    positive("mu", mu)?;
    let (m, n) = b.dim();
    let mut sb = MultiaffineSystem::builder();
    let u = sb.block("U", Role::X(0), (m, k));
    let v = sb.block("V", Role::X(1), (n, k));
    let s = sb.block("S", Role::X(2), (m, n));
    let z = sb.block("Z", Role::Z2, (m, n));
    sb.equation(
        (m, n),
        vec![
            Term::chain(vec![Factor::Var(u), Factor::VarT(v)]),
            Term::var(s, (m, n)),
            Term::var(z, (m, n)).neg(),
            Term::constant(b.clone()).neg(),
        ],
    );
    let obj = vec![
        ObjectiveTerm::quadratic(u, 1.0, Array2::zeros((m, k))),
        ObjectiveTerm::quadratic(v, 1.0, Array2::zeros((n, k))),
        ObjectiveTerm::l1(s, lambda),
        ObjectiveTerm::quadratic(z, mu, Array2::zeros((m, n))),
    ];
    let p = Problem::new("rpca2-slack", sb.build()?, obj, vec![u, v, s], vec![z])?;
    Ok(ZooInstance::new(p).meta(&[("m", m as f64), ("n", n as f64), ("k", k as f64), ("lambda", lambda), ("mu", mu)]))
}

/// Planted low-rank plus sparse data.
#[derive(Clone, Debug)]
pub struct RpcaData {
    pub b: Array2<f64>,
    pub u: Array2<f64>,
    pub v: Array2<f64>,
    pub low_rank: Array2<f64>,
    pub sparse: Array2<f64>,
}

/// `B = U*V*ᵀ + S*` with Gaussian factors and a fraction `density` of
/// entries corrupted by uniform noise on `[-magnitude, magnitude]`.
pub fn planted_rpca(m: usize, n: usize, k: usize, density: f64, magnitude: f64, seed: u64) -> RpcaData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = randn((m, k), &mut rng);
    let v = randn((n, k), &mut rng);
    let low_rank = u.dot(&v.t());
    let sparse = Array2::from_shape_fn((m, n), |_| {
        if rng.random::<f64>() < density {
            magnitude * (2.0 * rng.random::<f64>() - 1.0)
        } else {
            0.0
        }
    });
    RpcaData { b: &low_rank + &sparse, u, v, low_rank, sparse }
}
