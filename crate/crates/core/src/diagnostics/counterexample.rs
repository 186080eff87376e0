//! ADMM on `min x² + y²  s.t.  xy = 1`, where a zero iterate traps the
//! primal variables at the origin and the multiplier falls without bound.

use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CounterexampleRow {
    pub k: usize,
    pub x: f64,
    pub y: f64,
    pub w: f64,
}

/// Runs from `y⁰ = 0`.
pub fn run_counterexample(x0: f64, w0: f64, rho: f64, iters: usize) -> Vec<CounterexampleRow> {
    run_counterexample_from(x0, 0.0, w0, rho, iters)
}

/// Closed-form scalar updates `x⁺ = (ρ − w)y / (2 + ρy²)`, symmetric in `y`,
/// then `w⁺ = w + ρ(x⁺y⁺ − 1)`. Row `k = 0` is the starting point.
pub fn run_counterexample_from(x0: f64, y0: f64, w0: f64, rho: f64, iters: usize) -> Vec<CounterexampleRow> {
    let mut rows = Vec::with_capacity(iters + 1);
    let (mut x, mut y, mut w) = (x0, y0, w0);
    rows.push(CounterexampleRow { k: 0, x, y, w });
    for k in 1..=iters {
        x = (rho - w) * y / (2.0 + rho * y * y);
        y = (rho - w) * x / (2.0 + rho * x * x);
        w += rho * (x * y - 1.0);
        rows.push(CounterexampleRow { k, x, y, w });
    }
    rows
}
