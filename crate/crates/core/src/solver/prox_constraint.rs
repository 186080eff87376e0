//! Proximal regularization of a primal block expressed as an extra
//! multiaffine constraint, so the penalty term `‖X − X_prev‖²_S` arises from
//! the augmented Lagrangian itself.

use ndarray::Array2;

use super::Problem;
use crate::error::{Error, Result};
use crate::linalg::symmetric_eigenvalues;
use crate::linop::{densify, psd_sqrt_op, LinearOp};
use crate::multiaffine::{BlockId, BlockSpec, Role, Term};

/// Adds a copy `Z = X` of `block` weighted by `√(2/ρ) S^{1/2}` and places the
/// copy in the final group. `S` must be symmetric PSD on the block's space.
pub fn add_prox_constraint(problem: &Problem, block: BlockId, s: LinearOp, rho: f64) -> Result<Problem> {
    if !(rho > 0.0) {
        return Err(Error::InvalidArgument(format!("penalty must be positive, got {rho}")));
    }
    let spec = problem.system.block(block).clone();
    if spec.role.is_z() {
        return Err(Error::InvalidArgument(format!("block `{}` is not a primal block", spec.name)));
    }
    if s.input_shape() != spec.shape || s.output_shape() != spec.shape {
        return Err(Error::ShapeMismatch { block: spec.name, equation: problem.system.equations().len(), expected: spec.shape, got: s.input_shape() });
    }
    check_psd(&s)?;
    let root = psd_sqrt_op(s.as_ref(), (2.0 / rho).sqrt());
    let copy = BlockSpec { name: format!("{}#prox", spec.name), role: Role::Z2, shape: spec.shape };
    let (system, z) = problem.system.extended(copy, |z| {
        (spec.shape.0, spec.shape.1, vec![Term::linear(root.clone(), block), Term::linear(root.clone(), z).neg()])
    })?;
    let mut out = problem.clone();
    out.system = system;
    out.z_group.push(z);
    out.validate()?;
    Ok(out)
}

fn check_psd(s: &LinearOp) -> Result<()> {
    if let Some(c) = s.as_scaled_identity() {
        return if c >= 0.0 { Ok(()) } else { Err(Error::NotPsd(c)) };
    }
    let m = densify(s.as_ref());
    let asym: f64 = (&m - &m.t()).iter().fold(0.0, |a, v| a.max(v.abs()));
    let scale = m.iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(1.0);
    if asym > 1e-10 * scale {
        return Err(Error::InvalidArgument("proximal weight must be symmetric".into()));
    }
    let lmin = symmetric_eigenvalues(m.view())[0];
    if lmin < -1e-10 * scale {
        return Err(Error::NotPsd(lmin));
    }
    Ok(())
}

/// `‖X − X_prev‖²_S` for a dense weight, used by tests and diagnostics.
pub fn weighted_gap(s: &LinearOp, x: &Array2<f64>, prev: &Array2<f64>) -> f64 {
    let d = x - prev;
    crate::linalg::frob_dot(d.view(), s.apply(d.view()).view())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linop::{DenseOp, ScaledIdentity};
    use crate::prox::ObjectiveTerm;
    use crate::solver::{step, SolveOptions, SolverState};
    use crate::MultiaffineSystem;
    use ndarray::array;

    /// `min ½(x − 3)² + ½z²  s.t.  x − z = 0` on a 2×1 block.
    fn base() -> (Problem, BlockId) {
        let mut b = MultiaffineSystem::builder();
        let x = b.block("x", Role::X(0), (2, 1));
        let z = b.block("z", Role::Z2, (2, 1));
        b.equation((2, 1), vec![Term::var(x, (2, 1)), Term::var(z, (2, 1)).neg()]);
        let sys = b.build().unwrap();
        let obj = vec![ObjectiveTerm::quadratic(x, 1.0, array![[3.0], [3.0]]), ObjectiveTerm::quadratic(z, 1.0, array![[0.0], [0.0]])];
        (Problem::new("p", sys, obj, vec![x], vec![z]).unwrap(), x)
    }

    #[test]
    fn x_update_gains_the_proximal_term() {
        let (p, x) = base();
        let rho = 2.0;
        let s = DenseOp::new(array![[2.0, 1.0], [1.0, 2.0]], (2, 1), (2, 1));
        let q = add_prox_constraint(&p, x, s.clone(), rho).unwrap();
        assert_eq!(q.z_group.len(), 2);
        let prev = array![[0.5], [-1.0]];
        let zs = array![[0.2], [0.1]];
        let w0 = array![[0.3], [-0.2]];
        let state = SolverState::new(&q, vec![prev.clone(), zs.clone(), prev.clone()], vec![w0.clone(), array![[0.0], [0.0]]], rho).unwrap();
        let (next, _) = step(&q, &state, &SolveOptions::default()).unwrap();
        // (x − 3) + w + ρ(x − z) + 2S(x − prev) = 0
        let sm = array![[4.0, 2.0], [2.0, 4.0]];
        let h = &sm + &(Array2::<f64>::eye(2) * (1.0 + rho));
        let rhs = array![[3.0], [3.0]] - &w0 + &(&zs * rho) + sm.dot(&prev);
        let want = crate::linalg::solve_psd(h.view(), rhs.view());
        for (a, b) in next.values[0].iter().zip(want.iter()) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn identity_weight_keeps_q2_injective() {
        let (p, x) = base();
        let q = add_prox_constraint(&p, x, ScaledIdentity::new((2, 1), 1.0), 1.0).unwrap();
        assert!(q.q_spectrum().unwrap().sigma.unwrap() > 0.9);
        assert!(weighted_gap(&ScaledIdentity::new((2, 1), 1.0), &array![[1.0], [1.0]], &array![[0.0], [0.0]]) == 2.0);
    }

    #[test]
    fn rejects_indefinite_weight() {
        let (p, x) = base();
        let s = DenseOp::new(array![[1.0, 0.0], [0.0, -1.0]], (2, 1), (2, 1));
        assert!(matches!(add_prox_constraint(&p, x, s, 1.0), Err(Error::NotPsd(_))));
    }
}
