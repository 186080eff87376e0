//! Matrix-free linear operators between matrix spaces.
//!
//! Every operator maps `input_shape` arrays to `output_shape` arrays and
//! provides its adjoint under the trace inner product. Operators may also
//! describe the structure of their Gram map `TᵀT`, which lets the block
//! solvers pick a closed form instead of an iterative method.

use std::fmt::Debug;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2};

use crate::linalg;

/// Structure of a Gram operator `Y ↦ TᵀT(Y)` on a block of shape `(r, c)`.
#[derive(Clone, Debug)]
pub enum Gram {
    /// `c · Y`
    Scalar(f64),
    /// `M ∘ Y` for a nonnegative mask `M`.
    Mask(Array2<f64>),
    /// `P · Y · Q`, with `None` standing for the identity.
    Kron {
        left: Option<Array2<f64>>,
        right: Option<Array2<f64>>,
    },
    /// Explicit matrix acting on the row-major vectorization of `Y`.
    Dense(Array2<f64>),
    /// Real multiplier applied to the 2D DFT of `Y`.
    Fourier(Array2<f64>),
    /// No exploitable structure.
    Unknown,
}

impl Gram {
    pub fn scaled(self, s: f64) -> Gram {
        match self {
            Gram::Scalar(c) => Gram::Scalar(c * s),
            Gram::Mask(m) => Gram::Mask(m * s),
            Gram::Kron { left, right } => match (left, right) {
                (Some(p), q) => Gram::Kron { left: Some(p * s), right: q },
                (None, Some(q)) => Gram::Kron { left: None, right: Some(q * s) },
                (None, None) => Gram::Scalar(s),
            },
            Gram::Dense(m) => Gram::Dense(m * s),
            Gram::Fourier(m) => Gram::Fourier(m * s),
            Gram::Unknown => Gram::Unknown,
        }
    }
}

pub trait LinearOperator: Send + Sync + Debug {
    fn input_shape(&self) -> (usize, usize);
    fn output_shape(&self) -> (usize, usize);
    fn apply(&self, x: ArrayView2<f64>) -> Array2<f64>;
    fn adjoint(&self, y: ArrayView2<f64>) -> Array2<f64>;

    fn gram(&self) -> Gram {
        Gram::Unknown
    }

    /// Explicit matrix on row-major vectorizations, when cheap to form.
    fn to_matrix(&self) -> Option<Array2<f64>> {
        None
    }

    /// `Some(s)` when the operator is `s · I`.
    fn as_scaled_identity(&self) -> Option<f64> {
        None
    }
}

pub type LinearOp = Arc<dyn LinearOperator>;

/// Densify any operator by probing it with unit inputs.
pub fn densify(op: &dyn LinearOperator) -> Array2<f64> {
    if let Some(m) = op.to_matrix() {
        return m;
    }
    let (ir, ic) = op.input_shape();
    let (or, oc) = op.output_shape();
    let n = ir * ic;
    let mut out = Array2::zeros((or * oc, n));
    let mut e = Array2::zeros((ir, ic));
    for j in 0..n {
        e[[j / ic, j % ic]] = 1.0;
        let col = op.apply(e.view());
        for (i, v) in col.iter().enumerate() {
            out[[i, j]] = *v;
        }
        e[[j / ic, j % ic]] = 0.0;
    }
    out
}

/// Gram operator `TᵀT` of `op` as a dense matrix on the input vectorization.
pub fn dense_gram(op: &dyn LinearOperator) -> Array2<f64> {
    match op.gram() {
        Gram::Dense(m) => m,
        Gram::Scalar(c) => {
            let (r, col) = op.input_shape();
            Array2::eye(r * col) * c
        }
        _ => {
            let m = densify(op);
            m.t().dot(&m)
        }
    }
}

#[derive(Clone, Debug)]
pub struct ScaledIdentity {
    pub shape: (usize, usize),
    pub scale: f64,
}

impl ScaledIdentity {
    pub fn new(shape: (usize, usize), scale: f64) -> LinearOp {
        Arc::new(Self { shape, scale })
    }
}

impl LinearOperator for ScaledIdentity {
    fn input_shape(&self) -> (usize, usize) {
        self.shape
    }
    fn output_shape(&self) -> (usize, usize) {
        self.shape
    }
    fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        &x * self.scale
    }
    fn adjoint(&self, y: ArrayView2<f64>) -> Array2<f64> {
        &y * self.scale
    }
    fn gram(&self) -> Gram {
        Gram::Scalar(self.scale * self.scale)
    }
    fn as_scaled_identity(&self) -> Option<f64> {
        Some(self.scale)
    }
}

/// `X ↦ M X`.
#[derive(Clone, Debug)]
pub struct LeftMul {
    pub m: Array2<f64>,
    pub cols: usize,
}

impl LeftMul {
    pub fn new(m: Array2<f64>, cols: usize) -> LinearOp {
        Arc::new(Self { m, cols })
    }
}

impl LinearOperator for LeftMul {
    fn input_shape(&self) -> (usize, usize) {
        (self.m.ncols(), self.cols)
    }
    fn output_shape(&self) -> (usize, usize) {
        (self.m.nrows(), self.cols)
    }
    fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.m.dot(&x)
    }
    fn adjoint(&self, y: ArrayView2<f64>) -> Array2<f64> {
        self.m.t().dot(&y)
    }
    fn gram(&self) -> Gram {
        Gram::Kron { left: Some(self.m.t().dot(&self.m)), right: None }
    }
}

/// `X ↦ X M`.
#[derive(Clone, Debug)]
pub struct RightMul {
    pub m: Array2<f64>,
    pub rows: usize,
}

impl RightMul {
    pub fn new(m: Array2<f64>, rows: usize) -> LinearOp {
        Arc::new(Self { m, rows })
    }
}

impl LinearOperator for RightMul {
    fn input_shape(&self) -> (usize, usize) {
        (self.rows, self.m.nrows())
    }
    fn output_shape(&self) -> (usize, usize) {
        (self.rows, self.m.ncols())
    }
    fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.m)
    }
    fn adjoint(&self, y: ArrayView2<f64>) -> Array2<f64> {
        y.dot(&self.m.t())
    }
    fn gram(&self) -> Gram {
        Gram::Kron { left: None, right: Some(self.m.dot(&self.m.t())) }
    }
}

/// Fills an `out`-shaped array with a 1×1 input. The adjoint sums.
#[derive(Clone, Debug)]
pub struct Broadcast {
    pub out: (usize, usize),
}

impl Broadcast {
    pub fn new(out: (usize, usize)) -> LinearOp {
        Arc::new(Self { out })
    }
}

impl LinearOperator for Broadcast {
    fn input_shape(&self) -> (usize, usize) {
        (1, 1)
    }
    fn output_shape(&self) -> (usize, usize) {
        self.out
    }
    fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        Array2::from_elem(self.out, x[[0, 0]])
    }
    fn adjoint(&self, y: ArrayView2<f64>) -> Array2<f64> {
        Array2::from_elem((1, 1), y.sum())
    }
    fn gram(&self) -> Gram {
        Gram::Scalar((self.out.0 * self.out.1) as f64)
    }
}

/// Diagonal of an `n×n` matrix as an `n×1` column.
#[derive(Clone, Debug)]
pub struct DiagExtract {
    pub n: usize,
}

impl DiagExtract {
    pub fn new(n: usize) -> LinearOp {
        Arc::new(Self { n })
    }
}

impl LinearOperator for DiagExtract {
    fn input_shape(&self) -> (usize, usize) {
        (self.n, self.n)
    }
    fn output_shape(&self) -> (usize, usize) {
        (self.n, 1)
    }
    fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        Array2::from_shape_fn((self.n, 1), |(i, _)| x[[i, i]])
    }
    fn adjoint(&self, y: ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((self.n, self.n));
        for i in 0..self.n {
            out[[i, i]] = y[[i, 0]];
        }
        out
    }
    fn gram(&self) -> Gram {
        Gram::Mask(Array2::eye(self.n))
    }
}

/// Explicit matrix acting on row-major vectorizations.
#[derive(Clone, Debug)]
pub struct DenseOp {
    pub m: Array2<f64>,
    pub input: (usize, usize),
    pub output: (usize, usize),
}

impl DenseOp {
    pub fn new(m: Array2<f64>, input: (usize, usize), output: (usize, usize)) -> LinearOp {
        assert_eq!(m.dim(), (output.0 * output.1, input.0 * input.1), "dense operator shape");
        Arc::new(Self { m, input, output })
    }
}

impl LinearOperator for DenseOp {
    fn input_shape(&self) -> (usize, usize) {
        self.input
    }
    fn output_shape(&self) -> (usize, usize) {
        self.output
    }
    fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let v = x.as_standard_layout().into_owned().into_shape_with_order(self.input.0 * self.input.1).unwrap();
        self.m.dot(&v).into_shape_with_order(self.output).unwrap()
    }
    fn adjoint(&self, y: ArrayView2<f64>) -> Array2<f64> {
        let v = y.as_standard_layout().into_owned().into_shape_with_order(self.output.0 * self.output.1).unwrap();
        self.m.t().dot(&v).into_shape_with_order(self.input).unwrap()
    }
    fn gram(&self) -> Gram {
        Gram::Dense(self.m.t().dot(&self.m))
    }
    fn to_matrix(&self) -> Option<Array2<f64>> {
        Some(self.m.clone())
    }
}

/// Symmetric PSD square root of an operator mapping a block space to itself.
pub fn psd_sqrt_op(op: &dyn LinearOperator, scale: f64) -> LinearOp {
    let shape = op.input_shape();
    if let Some(s) = op.as_scaled_identity() {
        return ScaledIdentity::new(shape, scale * s.max(0.0).sqrt());
    }
    let m = densify(op);
    let r = linalg::psd_sqrt(m.view()) * scale;
    DenseOp::new(r, shape, shape)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn randn(shape: (usize, usize), rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn(shape, |_| StandardNormal.sample(rng))
    }

    fn check_adjoint(op: &dyn LinearOperator, rng: &mut ChaCha8Rng) {
        for _ in 0..20 {
            let x = randn(op.input_shape(), rng);
            let y = randn(op.output_shape(), rng);
            let lhs = linalg::frob_dot(op.apply(x.view()).view(), y.view());
            let rhs = linalg::frob_dot(x.view(), op.adjoint(y.view()).view());
            assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()), "{op:?}: {lhs} vs {rhs}");
        }
    }

    fn check_gram(op: &dyn LinearOperator) {
        let m = densify(op);
        let expected = m.t().dot(&m);
        let got = match op.gram() {
            Gram::Unknown => return,
            _ => dense_gram_from_structure(op),
        };
        for (a, b) in got.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-10, "{op:?}");
        }
    }

    fn dense_gram_from_structure(op: &dyn LinearOperator) -> Array2<f64> {
        let (r, c) = op.input_shape();
        let n = r * c;
        match op.gram() {
            Gram::Scalar(s) => Array2::eye(n) * s,
            Gram::Mask(m) => Array2::from_diag(&m.iter().copied().collect::<ndarray::Array1<f64>>()),
            Gram::Kron { left, right } => {
                let p = left.unwrap_or_else(|| Array2::eye(r));
                let q = right.unwrap_or_else(|| Array2::eye(c));
                Array2::from_shape_fn((n, n), |(a, b)| p[[a / c, b / c]] * q[[b % c, a % c]])
            }
            Gram::Dense(m) => m,
            Gram::Fourier(_) | Gram::Unknown => unreachable!(),
        }
    }

    #[test]
    fn adjoints_and_grams_agree_with_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ops: Vec<LinearOp> = vec![
            ScaledIdentity::new((3, 4), -2.5),
            LeftMul::new(randn((5, 3), &mut rng), 4),
            RightMul::new(randn((4, 2), &mut rng), 3),
            Broadcast::new((3, 5)),
            DiagExtract::new(4),
            DenseOp::new(randn((6, 6), &mut rng), (2, 3), (3, 2)),
        ];
        for op in &ops {
            check_adjoint(op.as_ref(), &mut rng);
            check_gram(op.as_ref());
        }
    }

    #[test]
    fn diag_extract_reads_diagonal() {
        let op = DiagExtract::new(2);
        assert_eq!(op.apply(array![[1.0, 2.0], [3.0, 4.0]].view()), array![[1.0], [4.0]]);
    }

    #[test]
    fn sqrt_of_identity_is_scaled_identity() {
        let op = ScaledIdentity::new((2, 2), 4.0);
        let r = psd_sqrt_op(op.as_ref(), 0.5);
        assert_eq!(r.as_scaled_identity(), Some(1.0));
    }
}
