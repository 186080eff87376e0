//! Risk parity portfolio selection as a bilinear feasibility problem.

use ndarray::{array, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{positive, randn, ZooInstance};
use crate::error::{Error, Result};
use crate::linalg::symmetric_eigenvalues;
use crate::linop::LeftMul;
use crate::multiaffine::{MultiaffineSystem, Role, Term};
use crate::prox::ObjectiveTerm;
use crate::solver::Problem;

/// Weights `x` in the box `[a, b]` summing to one with equal risk
/// contributions `x_i (Σx)_i`:
///
/// `P(x∘y) = z,  y = Σx + z',  x = x' + z'',  eᵀx = 1 + z'''`
///
/// where `P` subtracts each product from the first one.
pub fn rp2(sigma: &Array2<f64>, a: f64, b: f64, mu: f64) -> Result<ZooInstance> {
    let n = sigma.nrows();
    if n == 0 || sigma.ncols() != n {
        return Err(Error::InvalidArgument(format!("covariance must be square, got {:?}", sigma.dim())));
    }
    let scale = sigma.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    if (sigma - &sigma.t()).iter().any(|v| v.abs() > 1e-12 * scale) {
        return Err(Error::InvalidArgument("covariance must be symmetric".into()));
    }
    let lmin = symmetric_eigenvalues(sigma.view())[0];
    if lmin < -1e-10 * scale {
        return Err(Error::NotPsd(lmin));
    }
    positive("mu", mu)?;
    let nf = n as f64;
    if !(a <= b) || a * nf > 1.0 || b * nf < 1.0 {
        return Err(Error::InvalidArgument(format!("box [{a}, {b}] contains no weights summing to one")));
    }
    let mut p = Array2::zeros((n, n));
    for i in 1..n {
        p[[i, 0]] = 1.0;
        p[[i, i]] = -1.0;
    }
    let col = (n, 1);
    let mut sb = MultiaffineSystem::builder();
    let x = sb.block("x", Role::X(0), col);
    let xp = sb.block("xp", Role::X(1), col);
    let y = sb.block("y", Role::X(2), col);
    let z = sb.block("z", Role::Z2, col);
    let z1 = sb.block("zp", Role::Z2, col);
    let z2 = sb.block("zpp", Role::Z2, col);
    let z3 = sb.block("zppp", Role::Z2, (1, 1));
    sb.equation(col, vec![Term::hadamard(x, y, Some(LeftMul::new(p, 1))), Term::var(z, col).neg()]);
    sb.equation(col, vec![Term::var(y, col), Term::linear(LeftMul::new(sigma.clone(), 1), x).neg(), Term::var(z1, col).neg()]);
    sb.equation(col, vec![Term::var(x, col), Term::var(xp, col).neg(), Term::var(z2, col).neg()]);
    sb.equation(
        (1, 1),
        vec![
            Term::linear(LeftMul::new(Array2::ones((1, n)), 1), x),
            Term::constant(array![[1.0]]).neg(),
            Term::var(z3, (1, 1)).neg(),
        ],
    );
    let sys = sb.build()?;
    let mut obj = vec![ObjectiveTerm::boxed(xp, a, b)];
    for (blk, shape) in [(z, col), (z1, col), (z2, col), (z3, (1, 1))] {
        obj.push(ObjectiveTerm::quadratic(blk, mu, Array2::zeros(shape)));
    }
    let problem = Problem::new("rp2", sys, obj, vec![x, xp, y], vec![z, z1, z2, z3])?;
    Ok(ZooInstance::new(problem).meta(&[("n", nf), ("a", a), ("b", b), ("mu", mu)]))
}

/// `max_i x_i(Σx)_i − min_i x_i(Σx)_i`.
pub fn parity_spread(sigma: &Array2<f64>, x: &Array2<f64>) -> f64 {
    let sx = sigma.dot(x);
    let contrib: Vec<f64> = x.iter().zip(sx.iter()).map(|(a, b)| a * b).collect();
    let hi = contrib.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = contrib.iter().copied().fold(f64::INFINITY, f64::min);
    hi - lo
}

/// `GᵀG/n + 0.1·I` for a Gaussian `G`.
pub fn random_spd(n: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = randn((n, n), &mut rng);
    g.t().dot(&g) / n as f64 + Array2::<f64>::eye(n) * 0.1
}
