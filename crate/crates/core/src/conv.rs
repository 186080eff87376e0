//! Circular 2D convolution through the FFT.
//!
//! Indexing is zero-phase: `(A ∗ X)[i, j] = Σ_{p,q} A[p, q] · X[(i − p) mod n, (j − q) mod m]`,
//! with the kernel `A` occupying the top-left corner of the signal grid.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use ndarray::{s, Array2, ArrayView2, Axis, Zip};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

type Plans = (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>);

fn plans(len: usize) -> Plans {
    static CACHE: OnceLock<Mutex<(FftPlanner<f64>, HashMap<usize, Plans>)>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new((FftPlanner::new(), HashMap::new())));
    let mut guard = cache.lock().expect("fft planner poisoned");
    let (planner, map) = &mut *guard;
    map.entry(len)
        .or_insert_with(|| (planner.plan_fft_forward(len), planner.plan_fft_inverse(len)))
        .clone()
}

fn fft_axis(data: &mut Array2<Complex64>, axis: Axis, inverse: bool) {
    let len = data.len_of(axis);
    if len == 0 {
        return;
    }
    let (fwd, inv) = plans(len);
    let plan = if inverse { inv } else { fwd };
    let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
    // rustfft transforms consecutive chunks of a slice, so lay the lanes out
    // contiguously first.
    if axis == Axis(1) && data.is_standard_layout() {
        plan.process_with_scratch(data.as_slice_mut().expect("standard layout"), &mut scratch);
        return;
    }
    let mut lanes = if axis == Axis(1) { data.as_standard_layout().into_owned() } else { data.t().as_standard_layout().into_owned() };
    plan.process_with_scratch(lanes.as_slice_mut().expect("standard layout"), &mut scratch);
    *data = if axis == Axis(1) { lanes } else { lanes.t().as_standard_layout().into_owned() };
}

/// Forward 2D DFT of a real array zero-padded (bottom/right) to `shape`.
pub fn fft2_padded(x: ArrayView2<f64>, shape: (usize, usize)) -> Array2<Complex64> {
    let mut out = Array2::from_elem(shape, Complex64::new(0.0, 0.0));
    let (r, c) = x.dim();
    Zip::from(out.slice_mut(s![..r, ..c]))
        .and(&x)
        .for_each(|o, v| *o = Complex64::new(*v, 0.0));
    fft_axis(&mut out, Axis(1), false);
    fft_axis(&mut out, Axis(0), false);
    out
}

pub fn fft2(x: ArrayView2<f64>) -> Array2<Complex64> {
    fft2_padded(x, x.dim())
}

/// Inverse 2D DFT, keeping the real part.
pub fn ifft2_real(mut x: Array2<Complex64>) -> Array2<f64> {
    let n = x.len() as f64;
    fft_axis(&mut x, Axis(0), true);
    fft_axis(&mut x, Axis(1), true);
    x.mapv(|v| v.re / n)
}

/// `kernel ∗ signal`; output has the signal's shape.
pub fn conv2(kernel: ArrayView2<f64>, signal: ArrayView2<f64>) -> Array2<f64> {
    let shape = signal.dim();
    let kh = fft2_padded(kernel, shape);
    conv2_with_kernel_hat(&kh, signal)
}

/// Convolution with a pre-transformed kernel.
pub fn conv2_with_kernel_hat(kernel_hat: &Array2<Complex64>, signal: ArrayView2<f64>) -> Array2<f64> {
    let mut xh = fft2(signal);
    Zip::from(&mut xh).and(kernel_hat).for_each(|x, k| *x *= *k);
    ifft2_real(xh)
}

/// Adjoint of `X ↦ A ∗ X`: circular correlation with the kernel.
pub fn conv2_adjoint_signal(kernel_hat: &Array2<Complex64>, w: ArrayView2<f64>) -> Array2<f64> {
    let mut wh = fft2(w);
    Zip::from(&mut wh).and(kernel_hat).for_each(|x, k| *x *= k.conj());
    ifft2_real(wh)
}

/// Adjoint of `A ↦ A ∗ X`, cropped to the kernel support.
pub fn conv2_adjoint_kernel(
    signal_hat: &Array2<Complex64>,
    w: ArrayView2<f64>,
    kernel_shape: (usize, usize),
) -> Array2<f64> {
    let mut wh = fft2(w);
    Zip::from(&mut wh).and(signal_hat).for_each(|x, s| *x *= s.conj());
    let full = ifft2_real(wh);
    full.slice(s![..kernel_shape.0, ..kernel_shape.1]).to_owned()
}

/// Circular autocorrelation `r[d] = Σ_u X[u] X[u + d]`.
pub fn autocorrelation(signal_hat: &Array2<Complex64>) -> Array2<f64> {
    ifft2_real(signal_hat.mapv(|v| Complex64::new(v.norm_sqr(), 0.0)))
}

/// Dense Gram matrix of `A ↦ A ∗ X` over kernels of shape `kernel_shape`,
/// indexed by the row-major kernel vectorization.
pub fn kernel_gram(signal_hat: &Array2<Complex64>, kernel_shape: (usize, usize)) -> Array2<f64> {
    let r = autocorrelation(signal_hat);
    let (n, m) = r.dim();
    let (kr, kc) = kernel_shape;
    let dim = kr * kc;
    Array2::from_shape_fn((dim, dim), |(a, b)| {
        let (p, q) = (a / kc, a % kc);
        let (pp, qq) = (b / kc, b % kc);
        r[[(p + n - pp) % n, (q + m - qq) % m]]
    })
}

/// Direct O(n²k²) evaluation, used as a test oracle.
pub fn conv2_naive(kernel: ArrayView2<f64>, signal: ArrayView2<f64>) -> Array2<f64> {
    let (n, m) = signal.dim();
    let (kr, kc) = kernel.dim();
    Array2::from_shape_fn((n, m), |(i, j)| {
        let mut acc = 0.0;
        for p in 0..kr {
            for q in 0..kc {
                acc += kernel[[p, q]] * signal[[(i + n - p % n) % n, (j + m - q % m) % m]];
            }
        }
        acc
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::frob_dot;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn randn(shape: (usize, usize), rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn(shape, |_| StandardNormal.sample(rng))
    }

    #[test]
    fn fft_conv_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = randn((3, 4), &mut rng);
        let x = randn((7, 9), &mut rng);
        let fast = conv2(a.view(), x.view());
        let slow = conv2_naive(a.view(), x.view());
        for (u, v) in fast.iter().zip(slow.iter()) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn delta_kernel_is_identity() {
        let mut a = Array2::zeros((2, 2));
        a[[0, 0]] = 1.0;
        let x = Array2::from_shape_fn((4, 5), |(i, j)| (i * 5 + j) as f64);
        let y = conv2(a.view(), x.view());
        for (u, v) in y.iter().zip(x.iter()) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn adjoints_satisfy_inner_product_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let a = randn((3, 3), &mut rng);
            let x = randn((8, 6), &mut rng);
            let w = randn((8, 6), &mut rng);
            let y = conv2(a.view(), x.view());
            let lhs = frob_dot(y.view(), w.view());
            let ah = fft2_padded(a.view(), (8, 6));
            let xh = fft2(x.view());
            let rs = frob_dot(x.view(), conv2_adjoint_signal(&ah, w.view()).view());
            let rk = frob_dot(a.view(), conv2_adjoint_kernel(&xh, w.view(), (3, 3)).view());
            assert!((lhs - rs).abs() <= 1e-10 * (1.0 + lhs.abs()));
            assert!((lhs - rk).abs() <= 1e-10 * (1.0 + lhs.abs()));
        }
    }

    #[test]
    fn kernel_gram_matches_probing() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = randn((6, 5), &mut rng);
        let xh = fft2(x.view());
        let g = kernel_gram(&xh, (2, 3));
        let mut cols = Vec::new();
        for b in 0..6 {
            let mut e = Array2::zeros((2, 3));
            e[[b / 3, b % 3]] = 1.0;
            cols.push(conv2_naive(e.view(), x.view()));
        }
        for a in 0..6 {
            for b in 0..6 {
                let want = frob_dot(cols[a].view(), cols[b].view());
                assert!((g[[a, b]] - want).abs() < 1e-10);
            }
        }
    }
}
