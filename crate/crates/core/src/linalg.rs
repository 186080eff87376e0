//! Dense linear-algebra helpers shared by the solver and the diagnostics.
//!
//! Blocks live in `ndarray` arrays; factorizations go through `nalgebra`.
//! Vectorization is always row-major.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

pub fn to_dmatrix(a: ArrayView2<f64>) -> DMatrix<f64> {
    let (r, c) = a.dim();
    DMatrix::from_fn(r, c, |i, j| a[[i, j]])
}

pub fn from_dmatrix(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

pub fn frob_dot(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    debug_assert_eq!(a.dim(), b.dim());
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

pub fn frob_norm(a: ArrayView2<f64>) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn blocks_dot(a: &[Array2<f64>], b: &[Array2<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| frob_dot(x.view(), y.view())).sum()
}

pub fn blocks_norm_sq(a: &[Array2<f64>]) -> f64 {
    a.iter().map(|x| x.iter().map(|v| v * v).sum::<f64>()).sum()
}

pub fn blocks_norm(a: &[Array2<f64>]) -> f64 {
    blocks_norm_sq(a).sqrt()
}

/// `a += alpha * b`, blockwise.
pub fn blocks_axpy(a: &mut [Array2<f64>], alpha: f64, b: &[Array2<f64>]) {
    for (x, y) in a.iter_mut().zip(b) {
        x.scaled_add(alpha, y);
    }
}

pub fn blocks_sub(a: &[Array2<f64>], b: &[Array2<f64>]) -> Vec<Array2<f64>> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn blocks_zeros_like(a: &[Array2<f64>]) -> Vec<Array2<f64>> {
    a.iter().map(|x| Array2::zeros(x.dim())).collect()
}

/// Row-major concatenation of a list of blocks.
pub fn flatten(blocks: &[Array2<f64>]) -> Vec<f64> {
    let mut out = Vec::with_capacity(blocks.iter().map(|b| b.len()).sum());
    for b in blocks {
        out.extend(b.iter().copied());
    }
    out
}

/// Inverse of [`flatten`].
pub fn unflatten(data: &[f64], shapes: &[(usize, usize)]) -> Vec<Array2<f64>> {
    let mut offset = 0;
    shapes
        .iter()
        .map(|&(r, c)| {
            let n = r * c;
            let block = Array2::from_shape_vec((r, c), data[offset..offset + n].to_vec())
                .expect("shape matches slice length");
            offset += n;
            block
        })
        .collect()
}

/// Ascending eigenvalues of a symmetric matrix.
pub fn symmetric_eigenvalues(m: ArrayView2<f64>) -> Vec<f64> {
    let sym = symmetrize(m);
    let mut vals: Vec<f64> = SymmetricEigen::new(to_dmatrix(sym.view()))
        .eigenvalues
        .iter()
        .copied()
        .collect();
    vals.sort_by(|a, b| a.total_cmp(b));
    vals
}

/// Eigendecomposition `m = V diag(λ) Vᵀ` of a symmetric matrix, in no particular order.
pub fn symmetric_eigen(m: ArrayView2<f64>) -> (Vec<f64>, Array2<f64>) {
    let eig = SymmetricEigen::new(to_dmatrix(symmetrize(m).view()));
    (eig.eigenvalues.iter().copied().collect(), from_dmatrix(&eig.eigenvectors))
}

fn symmetrize(m: ArrayView2<f64>) -> Array2<f64> {
    (&m + &m.t()) * 0.5
}

/// Smallest eigenvalue and smallest positive eigenvalue of a symmetric PSD matrix.
///
/// Eigenvalues with magnitude below `tol * lambda_max` count as zero.
pub fn lambda_min_pos(m: ArrayView2<f64>, tol: f64) -> Result<(f64, f64)> {
    let (r, c) = m.dim();
    if r != c {
        return Err(Error::InvalidArgument(format!("matrix is {r}x{c}, not square")));
    }
    if r == 0 {
        return Err(Error::NoPositiveEigenvalue);
    }
    let vals = symmetric_eigenvalues(m);
    spectrum_min_pos(&vals, tol)
}

pub(crate) fn spectrum_min_pos(vals: &[f64], tol: f64) -> Result<(f64, f64)> {
    let lmax = vals.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    if lmax == 0.0 {
        return Err(Error::NoPositiveEigenvalue);
    }
    let threshold = tol * lmax;
    let lmin = vals.iter().copied().fold(f64::INFINITY, f64::min);
    if lmin < -threshold {
        return Err(Error::NotPsd(lmin));
    }
    let lmin = if lmin.abs() <= threshold { 0.0 } else { lmin };
    let lpos = vals
        .iter()
        .copied()
        .filter(|v| *v > threshold)
        .fold(f64::INFINITY, f64::min);
    if !lpos.is_finite() {
        return Err(Error::NoPositiveEigenvalue);
    }
    Ok((lmin, lpos))
}

/// Solve `g x = rhs` for symmetric PSD `g`.
///
/// Uses Cholesky when `g` is positive definite and falls back to the
/// minimum-norm pseudoinverse solution otherwise.
pub fn solve_psd(g: ArrayView2<f64>, rhs: ArrayView2<f64>) -> Array2<f64> {
    let gm = to_dmatrix(symmetrize(g).view());
    let bm = to_dmatrix(rhs);
    if let Some(ch) = gm.clone().cholesky() {
        let x = ch.solve(&bm);
        if x.iter().all(|v| v.is_finite()) {
            return from_dmatrix(&x);
        }
    }
    pinv_solve_dm(&gm, &bm)
}

/// Minimum-norm least-squares solution of `a x = b` via SVD.
pub fn pinv_solve(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    pinv_solve_dm(&to_dmatrix(a), &to_dmatrix(b))
}

fn pinv_solve_dm(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Array2<f64> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().fold(0.0_f64, |m, v| m.max(*v));
    let eps = smax * 1e-13 * (a.nrows().max(a.ncols()) as f64);
    match svd.solve(b, eps) {
        Ok(x) => from_dmatrix(&x),
        Err(_) => Array2::zeros((a.ncols(), b.ncols())),
    }
}

/// Symmetric square root of a PSD matrix. Small negative eigenvalues are clipped.
pub fn psd_sqrt(s: ArrayView2<f64>) -> Array2<f64> {
    let eig = SymmetricEigen::new(to_dmatrix(symmetrize(s).view()));
    let d = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|v| v.max(0.0).sqrt()),
    );
    let v = &eig.eigenvectors;
    from_dmatrix(&(v * DMatrix::from_diagonal(&d) * v.transpose()))
}

/// Orthonormal basis (as columns) of the null space of `a`, singular values
/// below `tol · σ_max` counting as zero.
pub fn null_space(a: ArrayView2<f64>, tol: f64) -> Array2<f64> {
    let (m, n) = a.dim();
    // Pad to at least n rows so the thin SVD exposes every right singular vector.
    let mut padded = Array2::zeros((m.max(n), n));
    padded.slice_mut(ndarray::s![..m, ..]).assign(&a);
    let svd = to_dmatrix(padded.view()).svd(false, true);
    let vt = svd.v_t.expect("requested V^T");
    let smax = svd.singular_values.iter().fold(0.0_f64, |acc, v| acc.max(*v));
    let cols: Vec<usize> = (0..svd.singular_values.len()).filter(|&i| svd.singular_values[i] <= tol * smax.max(f64::MIN_POSITIVE)).collect();
    Array2::from_shape_fn((n, cols.len()), |(i, j)| vt[(cols[j], i)])
}

/// Singular values in descending order.
pub fn singular_values(a: ArrayView2<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = to_dmatrix(a).singular_values().iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// Numerical rank with relative tolerance `tol`.
pub fn rank(a: ArrayView2<f64>, tol: f64) -> usize {
    let s = singular_values(a);
    let smax = s.first().copied().unwrap_or(0.0);
    s.iter().filter(|v| **v > tol * smax).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn null_space_of_rank_one() {
        let a = array![[1.0, 1.0, 0.0]];
        let n = null_space(a.view(), 1e-12);
        assert_eq!(n.ncols(), 2);
        assert!(a.dot(&n).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn lambda_min_pos_identity() {
        let (lmin, lpos) = lambda_min_pos(Array2::<f64>::eye(3).view(), 1e-12).unwrap();
        assert_eq!((lmin, lpos), (1.0, 1.0));
    }

    #[test]
    fn lambda_min_pos_diag() {
        let m = Array2::from_diag(&array![0.0, 2.0, 5.0]);
        let (lmin, lpos) = lambda_min_pos(m.view(), 1e-12).unwrap();
        assert_eq!(lmin, 0.0);
        assert!((lpos - 2.0).abs() < 1e-14);
    }

    #[test]
    fn lambda_min_pos_zero_matrix() {
        let m = Array2::<f64>::zeros((3, 3));
        assert!(matches!(lambda_min_pos(m.view(), 1e-12), Err(Error::NoPositiveEigenvalue)));
    }

    #[test]
    fn lambda_min_pos_rejects_indefinite() {
        let m = Array2::from_diag(&array![-1.0, 2.0]);
        assert!(matches!(lambda_min_pos(m.view(), 1e-12), Err(Error::NotPsd(_))));
    }

    #[test]
    fn psd_sqrt_squares_back() {
        let s = array![[2.0, 1.0], [1.0, 2.0]];
        let r = psd_sqrt(s.view());
        let back = r.dot(&r);
        for (a, b) in back.iter().zip(s.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn solve_psd_singular_gives_min_norm() {
        let g = array![[1.0, 0.0], [0.0, 0.0]];
        let rhs = array![[3.0], [0.0]];
        let x = solve_psd(g.view(), rhs.view());
        assert!((x[[0, 0]] - 3.0).abs() < 1e-12);
        assert!(x[[1, 0]].abs() < 1e-12);
    }

    #[test]
    fn flatten_round_trip() {
        let blocks = vec![array![[1.0, 2.0], [3.0, 4.0]], array![[5.0, 6.0, 7.0]]];
        let flat = flatten(&blocks);
        assert_eq!(flat, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        assert_eq!(unflatten(&flat, &[(2, 2), (1, 3)]), blocks);
    }
}
