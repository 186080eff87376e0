//! Monotone accelerated proximal gradient for block subproblems without a
//! closed form.

use ndarray::Array2;

use crate::linalg::{frob_dot, frob_norm};

#[derive(Clone, Debug)]
pub struct InnerOptions {
    /// Stop once `‖x_k − x_{k−1}‖ ≤ tol · (1 + ‖x_k‖)`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for InnerOptions {
    fn default() -> Self {
        InnerOptions { tol: 1e-10, max_iter: 100 }
    }
}

#[derive(Clone, Debug)]
pub struct InnerResult {
    pub y: Array2<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Objective at `y`.
    pub value: f64,
}

/// Minimize `f + g` from `x0`, where `f` is smooth with gradient `grad` and
/// `prox(v, τ) = argmin_y g(y) + ‖y − v‖²/(2τ)`.
///
/// `lipschitz` is an initial curvature estimate; it is doubled whenever the
/// quadratic upper model fails. Objective values never increase, so the
/// result is no worse than `x0`.
pub fn mfista(
    f: impl Fn(&Array2<f64>) -> f64,
    grad: impl Fn(&Array2<f64>) -> Array2<f64>,
    g: impl Fn(&Array2<f64>) -> f64,
    prox: impl Fn(&Array2<f64>, f64) -> Array2<f64>,
    x0: &Array2<f64>,
    lipschitz: f64,
    opts: &InnerOptions,
) -> InnerResult {
    let mut l = if lipschitz > 0.0 && lipschitz.is_finite() { lipschitz } else { 1.0 };
    let mut x = x0.clone();
    let mut fx = f(&x) + g(&x);
    let mut y = x.clone();
    let mut t = 1.0_f64;
    for k in 1..=opts.max_iter {
        let fy = f(&y);
        let gy = grad(&y);
        let z = loop {
            let z = prox(&(&y - &(&gy / l)), 1.0 / l);
            let d = &z - &y;
            let model = fy + frob_dot(gy.view(), d.view()) + 0.5 * l * frob_dot(d.view(), d.view());
            if f(&z) <= model + 1e-12 * (1.0 + fy.abs()) || l > 1e300 {
                break z;
            }
            l *= 2.0;
        };
        let fz = f(&z) + g(&z);
        let x_prev = x.clone();
        if fz <= fx {
            x = z.clone();
            fx = fz;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = &x + &((&z - &x) * (t / t_next)) + &((&x - &x_prev) * ((t - 1.0) / t_next));
        t = t_next;
        let step = frob_norm((&x - &x_prev).view());
        let moved = frob_norm((&z - &x_prev).view());
        if step.max(moved) <= opts.tol * (1.0 + frob_norm(x.view())) {
            return InnerResult { y: x, iterations: k, converged: true, value: fx };
        }
    }
    InnerResult { y: x, iterations: opts.max_iter, converged: false, value: fx }
}

/// [`mfista`] specialised to `f(y) = ½⟨y, Hy⟩ − ⟨r, y⟩ + c`. Extrapolated
/// points are linear combinations of evaluated ones, so `H` is applied once
/// per iteration (plus once per failed curvature test).
#[allow(clippy::too_many_arguments)]
pub fn mfista_quadratic(
    h: impl Fn(&Array2<f64>) -> Array2<f64>,
    r: &Array2<f64>,
    c: f64,
    g: impl Fn(&Array2<f64>) -> f64,
    prox: impl Fn(&Array2<f64>, f64) -> Array2<f64>,
    x0: &Array2<f64>,
    lipschitz: f64,
    opts: &InnerOptions,
) -> InnerResult {
    let quad = |y: &Array2<f64>, hy: &Array2<f64>| 0.5 * frob_dot(y.view(), hy.view()) - frob_dot(r.view(), y.view()) + c;
    let mut l = if lipschitz > 0.0 && lipschitz.is_finite() { lipschitz } else { 1.0 };
    let mut x = x0.clone();
    let mut hx = h(&x);
    let mut fx = quad(&x, &hx) + g(&x);
    let (mut y, mut hy) = (x.clone(), hx.clone());
    let mut t = 1.0_f64;
    for k in 1..=opts.max_iter {
        let fy = quad(&y, &hy);
        let gy = &hy - r;
        let (z, hz, fz_smooth) = loop {
            let z = prox(&(&y - &(&gy / l)), 1.0 / l);
            let hz = h(&z);
            let fz = quad(&z, &hz);
            let d = &z - &y;
            let model = fy + frob_dot(gy.view(), d.view()) + 0.5 * l * frob_dot(d.view(), d.view());
            if fz <= model + 1e-12 * (1.0 + fy.abs()) || l > 1e300 {
                break (z, hz, fz);
            }
            l *= 2.0;
        };
        let fz = fz_smooth + g(&z);
        let (x_prev, hx_prev) = (x.clone(), hx.clone());
        if fz <= fx {
            x = z.clone();
            hx = hz.clone();
            fx = fz;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let (a, b) = (t / t_next, (t - 1.0) / t_next);
        y = &x + &((&z - &x) * a) + &((&x - &x_prev) * b);
        hy = &hx + &((&hz - &hx) * a) + &((&hx - &hx_prev) * b);
        t = t_next;
        let step = frob_norm((&x - &x_prev).view());
        let moved = frob_norm((&z - &x_prev).view());
        if step.max(moved) <= opts.tol * (1.0 + frob_norm(x.view())) {
            return InnerResult { y: x, iterations: k, converged: true, value: fx };
        }
    }
    InnerResult { y: x, iterations: opts.max_iter, converged: false, value: fx }
}
