//! Rank-one max-cut relaxation with a slack between the two factors.

use ndarray::Array2;

use super::{positive, ZooInstance};
use crate::error::{Error, Result};
use crate::linop::DiagExtract;
use crate::multiaffine::{Factor, MultiaffineSystem, Role, Term};
use crate::prox::ObjectiveTerm;
use crate::solver::Problem;

/// Undirected edge `(u, v, weight)`.
pub type Edge = (usize, usize, f64);

/// Maximizes `½Σ w_uv(1 − Z_uv) − μ1/2 Σ(Z_uu − 1)² − μ2/2 ‖s‖²` subject to
/// `Z = xyᵀ` and `x − y = s`, encoded as minimization of the negation.
pub fn mc1(n: usize, edges: &[Edge], mu1: f64, mu2: f64) -> Result<ZooInstance> {
    if n == 0 || edges.is_empty() {
        return Err(Error::InvalidArgument("graph has no edges".into()));
    }
    positive("mu1", mu1)?;
    positive("mu2", mu2)?;
    let mut coeff = Array2::zeros((n, n));
    let mut total = 0.0;
    for &(u, v, w) in edges {
        if u >= n || v >= n || u == v {
            return Err(Error::InvalidArgument(format!("bad edge ({u}, {v}) for {n} vertices")));
        }
        coeff[[u.min(v), u.max(v)]] += 0.5 * w;
        total += w;
    }
    let mut b = MultiaffineSystem::builder();
    let x = b.block("x", Role::X(0), (n, 1));
    let y = b.block("y", Role::X(1), (n, 1));
    let z = b.block("Z", Role::Z2, (n, n));
    let s = b.block("s", Role::Z2, (n, 1));
    b.equation((n, n), vec![Term::chain(vec![Factor::Var(x), Factor::VarT(y)]), Term::var(z, (n, n)).neg()]);
    b.equation((n, 1), vec![Term::var(x, (n, 1)), Term::var(y, (n, 1)).neg(), Term::var(s, (n, 1)).neg()]);
    let sys = b.build()?;
    let obj = vec![
        ObjectiveTerm::linear(z, coeff, -0.5 * total),
        ObjectiveTerm::quadratic_map(z, mu1, Array2::ones((n, 1)), DiagExtract::new(n)),
        ObjectiveTerm::quadratic(s, mu2, Array2::zeros((n, 1))),
    ];
    let p = Problem::new("mc1", sys, obj, vec![x, y], vec![z, s])?;
    Ok(ZooInstance::new(p).meta(&[("n", n as f64), ("edges", edges.len() as f64), ("mu1", mu1), ("mu2", mu2)]))
}

/// Total weight of edges whose endpoints get different signs.
pub fn cut_value(edges: &[Edge], signs: &[f64]) -> f64 {
    edges.iter().filter(|(u, v, _)| (signs[*u] >= 0.0) != (signs[*v] >= 0.0)).map(|e| e.2).sum()
}

/// Cut obtained by rounding each entry of `x` to its sign.
pub fn rounded_cut(edges: &[Edge], x: &Array2<f64>) -> f64 {
    let signs: Vec<f64> = x.iter().copied().collect();
    cut_value(edges, &signs)
}

/// Exhaustive maximum over all `2^n` sign patterns.
pub fn brute_force_max_cut(n: usize, edges: &[Edge]) -> f64 {
    assert!(n <= 24, "exhaustive search is limited to 24 vertices");
    (0u32..1 << n)
        .map(|mask| {
            let signs: Vec<f64> = (0..n).map(|i| if mask >> i & 1 == 1 { 1.0 } else { -1.0 }).collect();
            cut_value(edges, &signs)
        })
        .fold(f64::NEG_INFINITY, f64::max)
}
