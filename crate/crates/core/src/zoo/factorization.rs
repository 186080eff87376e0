//! Nonnegative matrix factorization and dictionary learning with split
//! copies and smooth slacks.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;

use super::{positive, randn, ZooInstance};
use crate::error::{Error, Result};
use crate::linalg::frob_norm;
use crate::linop::ScaledIdentity;
use crate::multiaffine::{BlockId, MultiaffineSystem, Role, Term};
use crate::prox::ObjectiveTerm;
use crate::solver::Problem;

/// A data matrix `B = X*·Y*` and its factors.
#[derive(Clone, Debug)]
pub struct Planted {
    pub b: Array2<f64>,
    pub x: Array2<f64>,
    pub y: Array2<f64>,
}

struct Split {
    sys: MultiaffineSystem,
    x: BlockId,
    xp: BlockId,
    xpp: BlockId,
    y: BlockId,
    yp: BlockId,
    ypp: BlockId,
    z: BlockId,
}

/// Blocks and constraints shared by the two factorization models:
/// `Z = XY`, `X = X' + X''`, `Y = Y' + Y''`.
fn split_system(m: usize, n: usize, r: usize) -> Result<Split> {
    let mut b = MultiaffineSystem::builder();
    let y = b.block("Y", Role::X(0), (r, n));
    let yp = b.block("Yp", Role::X(1), (r, n));
    let x = b.block("X", Role::X(2), (m, r));
    let xp = b.block("Xp", Role::X(3), (m, r));
    let z = b.block("Z", Role::Z1, (m, n));
    let xpp = b.block("Xpp", Role::Z2, (m, r));
    let ypp = b.block("Ypp", Role::Z2, (r, n));
    b.equation((m, n), vec![Term::product(x, y), Term::var(z, (m, n)).neg()]);
    b.equation((m, r), vec![Term::var(x, (m, r)), Term::var(xp, (m, r)).neg(), Term::var(xpp, (m, r)).neg()]);
    b.equation((r, n), vec![Term::var(y, (r, n)), Term::var(yp, (r, n)).neg(), Term::var(ypp, (r, n)).neg()]);
    Ok(Split { sys: b.build()?, x, xp, xpp, y, yp, ypp, z })
}

fn finish(name: &str, s: Split, objective: Vec<ObjectiveTerm>) -> Result<Problem> {
    let (xs, ys) = (s.sys.block(s.x).shape, s.sys.block(s.y).shape);
    Ok(Problem::new(name, s.sys, objective, vec![s.y, s.yp, s.x, s.xp], vec![s.z, s.xpp, s.ypp])?
        .with_injective(s.x, ScaledIdentity::new(xs, 1.0), 0.0)
        .with_injective(s.y, ScaledIdentity::new(ys, 1.0), 0.0))
}

/// `min ι(X') + ι(Y') + ½‖Z − B‖² + μ/2 (‖X''‖² + ‖Y''‖²)` with nonnegative
/// copies, updated in the order `Y, Y', X, X'` then `(Z, X'', Y'')`.
pub fn nmf3(b: &Array2<f64>, r: usize, mu: f64) -> Result<ZooInstance> {
    let (m, n) = b.dim();
    if r == 0 || (r > m && r > n) {
        return Err(Error::InvalidArgument(format!("rank {r} exceeds both dimensions of a {m}x{n} matrix")));
    }
    positive("mu", mu)?;
    let s = split_system(m, n, r)?;
    let obj = vec![
        ObjectiveTerm::nonneg(s.xp),
        ObjectiveTerm::nonneg(s.yp),
        ObjectiveTerm::quadratic(s.z, 1.0, b.clone()),
        ObjectiveTerm::quadratic(s.xpp, mu, Array2::zeros((m, r))),
        ObjectiveTerm::quadratic(s.ypp, mu, Array2::zeros((r, n))),
    ];
    let p = finish("nmf3", s, obj)?;
    Ok(ZooInstance::new(p).meta(&[("m", m as f64), ("n", n as f64), ("rank", r as f64), ("mu", mu)]))
}

/// Dictionary learning with unit-norm atoms and an `L1` code penalty of weight 1.
pub fn dl3(b: &Array2<f64>, dict_size: usize, mu_z: f64, mu_x: f64, mu_y: f64) -> Result<ZooInstance> {
    dl3_weighted(b, dict_size, mu_z, mu_x, mu_y, 1.0)
}

/// `min ι_S(X') + λ‖Y'‖₁ + μ_Z/2‖Z − B‖² + μ_X/2‖X''‖² + μ_Y/2‖Y''‖²`.
pub fn dl3_weighted(b: &Array2<f64>, dict_size: usize, mu_z: f64, mu_x: f64, mu_y: f64, lambda: f64) -> Result<ZooInstance> {
    if dict_size < 1 {
        return Err(Error::InvalidArgument("dictionary needs at least one atom".into()));
    }
    for (name, v) in [("mu_z", mu_z), ("mu_x", mu_x), ("mu_y", mu_y)] {
        positive(name, v)?;
    }
    let (m, n) = b.dim();
    let d = dict_size;
    let s = split_system(m, n, d)?;
    let obj = vec![
        ObjectiveTerm::unit_columns(s.xp),
        ObjectiveTerm::l1(s.yp, lambda),
        ObjectiveTerm::quadratic(s.z, mu_z, b.clone()),
        ObjectiveTerm::quadratic(s.xpp, mu_x, Array2::zeros((m, d))),
        ObjectiveTerm::quadratic(s.ypp, mu_y, Array2::zeros((d, n))),
    ];
    let p = finish("dl3", s, obj)?;
    Ok(ZooInstance::new(p).meta(&[
        ("m", m as f64),
        ("n", n as f64),
        ("dict_size", d as f64),
        ("mu_z", mu_z),
        ("mu_x", mu_x),
        ("mu_y", mu_y),
        ("lambda", lambda),
    ]))
}

/// Nonnegative factors with uniform entries, scaled equally so that
/// `‖B‖_F = 1` like the solver's unit-norm starting blocks.
pub fn planted_nmf(m: usize, n: usize, r: usize, seed: u64) -> Planted {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Array2::from_shape_fn((m, r), |_| rng.random::<f64>());
    let mut y = Array2::from_shape_fn((r, n), |_| rng.random::<f64>());
    let s = frob_norm(x.dot(&y).view()).sqrt();
    if s > 0.0 {
        x /= s;
        y /= s;
    }
    Planted { b: x.dot(&y), x, y }
}

/// Unit-norm Gaussian atoms and codes with `sparsity` Gaussian nonzeros per column.
pub fn planted_dictionary(m: usize, n: usize, d: usize, sparsity: usize, seed: u64) -> Planted {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = randn((m, d), &mut rng);
    for mut c in x.columns_mut() {
        let norm = c.dot(&c).sqrt();
        c /= norm;
    }
    let mut y = Array2::zeros((d, n));
    let k = sparsity.min(d);
    for j in 0..n {
        for i in sample(&mut rng, d, k) {
            y[[i, j]] = randn((1, 1), &mut rng)[[0, 0]];
        }
    }
    Planted { b: x.dot(&y), x, y }
}
