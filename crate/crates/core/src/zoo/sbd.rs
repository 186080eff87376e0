//! Sparse blind deconvolution `Y ≈ A∗X + b1` with circular convolution.

use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{positive, randn, ZooInstance};
use crate::conv::conv2;
use crate::error::{Error, Result};
use crate::linalg::frob_norm;
use crate::linop::Broadcast;
use crate::multiaffine::{MultiaffineSystem, Role, Term};
use crate::prox::ObjectiveTerm;
use crate::solver::{Problem, ReportFn};

/// Weight of `‖X‖₁` in the reported objective.
const REPORT_L1: f64 = 0.1;

fn build(y: &Array2<f64>, kshape: (usize, usize), mu: Option<f64>) -> Result<ZooInstance> {
    let shape = y.dim();
    if kshape.0 == 0 || kshape.1 == 0 || kshape.0 > shape.0 || kshape.1 > shape.1 {
        return Err(Error::InvalidArgument(format!("kernel {kshape:?} does not fit data {shape:?}")));
    }
    let mut sb = MultiaffineSystem::builder();
    let a = sb.block("A", Role::X(0), kshape);
    let x = sb.block("X", Role::X(1), shape);
    let b = sb.block("b", Role::X(2), (1, 1));
    let mut terms = vec![Term::conv(a, x), Term::linear(Broadcast::new(shape), b), Term::constant(y.clone()).neg()];
    let z = mu.map(|_| sb.block("Z", Role::Z2, shape));
    if let Some(z) = z {
        terms.push(Term::var(z, shape).neg());
    }
    sb.equation(shape, terms);
    let mut obj = vec![ObjectiveTerm::l1(x, 1.0)];
    if let (Some(z), Some(mu)) = (z, mu) {
        obj.push(ObjectiveTerm::quadratic(z, mu, Array2::zeros(shape)));
    }
    let name = if mu.is_some() { "sbd1" } else { "sbd0" };
    let data = y.clone();
    let report: ReportFn = Arc::new(move |v: &[Array2<f64>]| {
        let fit = &data - &conv2(v[a.0].view(), v[x.0].view()) - v[b.0][[0, 0]];
        REPORT_L1 * v[x.0].iter().map(|e| e.abs()).sum::<f64>() + 0.5 * frob_norm(fit.view()).powi(2)
    });
    let problem = Problem::with_inner_blocks(name, sb.build()?, obj, vec![a, x, b], z.into_iter().collect(), vec![x])?
        .with_report(report);
    let mut inst = ZooInstance::new(problem).meta(&[
        ("n_rows", shape.0 as f64),
        ("n_cols", shape.1 as f64),
        ("k_rows", kshape.0 as f64),
        ("k_cols", kshape.1 as f64),
    ]);
    if let Some(mu) = mu {
        inst.metadata.insert("mu".into(), mu);
    }
    inst.iterative_blocks.push(("X".into(), "L1 through a convolution has no closed-form prox".into()));
    Ok(inst)
}

/// `min ‖X‖₁ + μ/2‖Z‖²  s.t.  A∗X + b1 − Z = Y`.
pub fn sbd1(y: &Array2<f64>, kernel_shape: (usize, usize), mu: f64) -> Result<ZooInstance> {
    positive("mu", mu)?;
    build(y, kernel_shape, Some(mu))
}

/// `min ‖X‖₁  s.t.  A∗X + b1 = Y`, without a final group.
pub fn sbd0(y: &Array2<f64>, kernel_shape: (usize, usize)) -> Result<ZooInstance> {
    build(y, kernel_shape, None)
}

/// Observation and the ground truth that produced it.
#[derive(Clone, Debug)]
pub struct SbdData {
    pub y: Array2<f64>,
    pub a: Array2<f64>,
    pub x: Array2<f64>,
    pub b: f64,
}

/// `Y = A∗X + b1 + ξ` with a unit-norm Gaussian kernel, Bernoulli(θ)
/// Gaussian sparse map and Gaussian noise of standard deviation `sigma`.
pub fn gen_sbd_data(n: usize, kernel_shape: (usize, usize), theta: f64, sigma: f64, bias: f64, seed: u64) -> Result<SbdData> {
    if !(0.0..1.0).contains(&theta) {
        return Err(Error::InvalidArgument(format!("sparsity must lie in [0, 1), got {theta}")));
    }
    if kernel_shape.0 > n || kernel_shape.1 > n || kernel_shape.0 == 0 || kernel_shape.1 == 0 {
        return Err(Error::InvalidArgument(format!("kernel {kernel_shape:?} does not fit {n}x{n}")));
    }
    if !(sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise level must be nonnegative, got {sigma}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = randn(kernel_shape, &mut rng);
    a /= frob_norm(a.view());
    let mut x = Array2::zeros((n, n));
    for v in x.iter_mut() {
        let on = rng.random::<f64>() < theta;
        let g = randn((1, 1), &mut rng)[[0, 0]];
        if on {
            *v = g;
        }
    }
    let noise = randn((n, n), &mut rng);
    let y = conv2(a.view(), x.view()) + bias + &(noise * sigma);
    Ok(SbdData { y, a, x, b: bias })
}
