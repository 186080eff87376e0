//! Exact minimization of block subproblems that are quadratic in the focus.
//!
//! For a frozen form `C(Y) − b`, multipliers `W` and quadratic objective
//! pieces, the minimizer of `⟨W, C(Y) − b⟩ + ρ/2 ‖C(Y) − b‖² + Σ q(Y)` solves
//! `H Y = R` with `H = ρ CᵀC + Σ μ MᵀM` and `R = Cᵀ(ρ b − W) + Σ μ Mᵀc − Σ coeff`.
//! The solve always runs in correction form `H Δ = R − H Y₀`, so a singular
//! `H` returns the minimizer nearest the warm start `Y₀`.

use ndarray::{Array2, Zip};
use rustfft::num_complex::Complex64;

use crate::conv;
use crate::error::{Error, Result};
use crate::linalg::{self, blocks_axpy, blocks_dot, blocks_norm, blocks_norm_sq, blocks_zeros_like};
use crate::linop::Gram;
use crate::multiaffine::FrozenLinearForm;
use crate::prox::ObjectiveKind;

/// Which algorithm to use for a quadratic block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum MethodChoice {
    /// Dense for small blocks, closed forms when the structure allows, CG otherwise.
    #[default]
    Auto,
    Dense,
    Structured,
    Cg,
}

#[derive(Clone, Debug)]
pub struct QuadOptions {
    /// CG stops once the residual is below `cg_tol · ‖rhs‖`.
    pub cg_tol: f64,
    /// Defaults to ten times the number of unknowns.
    pub cg_maxit: Option<usize>,
    /// Joint solves over several blocks with at most this many unknowns are dense.
    pub dense_max: usize,
    pub method: MethodChoice,
}

impl Default for QuadOptions {
    fn default() -> Self {
        QuadOptions { cg_tol: 1e-10, cg_maxit: None, dense_max: 64, method: MethodChoice::Auto }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveMethod {
    Dense,
    Diagonal,
    LeftSolve,
    RightSolve,
    Sylvester,
    Kron,
    Fourier,
    DenseStructured,
    Probed,
    Cg { iterations: usize },
}

#[derive(Clone, Debug)]
pub struct QuadSolution {
    pub y: Vec<Array2<f64>>,
    pub methods: Vec<SolveMethod>,
}

/// Normal equations of one quadratic block subproblem.
#[derive(Clone, Debug)]
pub struct NormalEquations {
    form: FrozenLinearForm,
    w: Vec<Array2<f64>>,
    rho: f64,
    extras: Vec<(usize, ObjectiveKind)>,
}

/// Sum of Gram structures acting on one slot.
#[derive(Default, Debug)]
struct Combined {
    scalar: f64,
    mask: Option<Array2<f64>>,
    left: Option<Array2<f64>>,
    right: Option<Array2<f64>>,
    krons: Vec<(Array2<f64>, Array2<f64>)>,
    dense: Option<Array2<f64>>,
    fourier: Option<Array2<f64>>,
    unknown: bool,
}

fn add_into(slot: &mut Option<Array2<f64>>, m: Array2<f64>) {
    match slot {
        Some(acc) => *acc += &m,
        None => *slot = Some(m),
    }
}

impl Combined {
    fn add(&mut self, g: Gram) {
        match g {
            Gram::Scalar(c) => self.scalar += c,
            Gram::Mask(m) => add_into(&mut self.mask, m),
            Gram::Kron { left: None, right: None } => self.scalar += 1.0,
            Gram::Kron { left: Some(p), right: None } => add_into(&mut self.left, p),
            Gram::Kron { left: None, right: Some(q) } => add_into(&mut self.right, q),
            Gram::Kron { left: Some(p), right: Some(q) } => self.krons.push((p, q)),
            Gram::Dense(m) => add_into(&mut self.dense, m),
            Gram::Fourier(m) => add_into(&mut self.fourier, m),
            Gram::Unknown => self.unknown = true,
        }
    }

    fn only_diagonal(&self) -> bool {
        !self.unknown
            && self.left.is_none()
            && self.right.is_none()
            && self.krons.is_empty()
            && self.dense.is_none()
            && self.fourier.is_none()
    }

    fn upper_bound(&self) -> Option<f64> {
        if self.unknown {
            return None;
        }
        let lmax = |m: &Array2<f64>| m.rows().into_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
        let mut b = self.scalar;
        b += self.mask.as_ref().map_or(0.0, |m| m.iter().copied().fold(0.0, f64::max));
        b += self.left.as_ref().map_or(0.0, lmax);
        b += self.right.as_ref().map_or(0.0, lmax);
        b += self.krons.iter().map(|(p, q)| lmax(p) * lmax(q)).sum::<f64>();
        b += self.dense.as_ref().map_or(0.0, lmax);
        b += self.fourier.as_ref().map_or(0.0, |m| m.iter().copied().fold(0.0, f64::max));
        Some(b)
    }
}

/// `num / den` with the pseudoinverse convention for vanishing denominators.
fn pinv_div(num: f64, den: f64, floor: f64) -> f64 {
    if den.abs() <= floor {
        0.0
    } else {
        num / den
    }
}

fn floor_of<'a>(vals: impl Iterator<Item = &'a f64>) -> f64 {
    1e-12 * vals.fold(0.0_f64, |m, v| m.max(v.abs()))
}

impl NormalEquations {
    /// `extras` lists quadratic or linear objective pieces by focus slot.
    pub fn new(form: &FrozenLinearForm, w: &[Array2<f64>], rho: f64, extras: &[(usize, ObjectiveKind)]) -> Result<Self> {
        if !(rho > 0.0) {
            return Err(Error::InvalidArgument(format!("penalty must be positive, got {rho}")));
        }
        if w.len() != form.eq_shapes.len() || w.iter().zip(&form.eq_shapes).any(|(a, s)| a.dim() != *s) {
            return Err(Error::InvalidArgument("multiplier shapes do not match the equations".into()));
        }
        for (slot, kind) in extras {
            let shape = *form
                .focus_shapes
                .get(*slot)
                .ok_or_else(|| Error::InvalidArgument(format!("objective slot {slot} out of range")))?;
            if !kind.is_quadratic() {
                return Err(Error::InvalidArgument(format!("{kind:?} is not quadratic")));
            }
            kind.validate(shape)?;
        }
        Ok(NormalEquations { form: form.clone(), w: w.to_vec(), rho, extras: extras.to_vec() })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn form(&self) -> &FrozenLinearForm {
        &self.form
    }

    /// `H Y`.
    pub fn apply(&self, y: &[Array2<f64>]) -> Vec<Array2<f64>> {
        let cy = self.form.apply(y);
        let mut out = self.form.adjoint(&cy);
        for o in out.iter_mut() {
            *o *= self.rho;
        }
        for (slot, kind) in &self.extras {
            if let ObjectiveKind::Quadratic { mu, map, .. } = kind {
                match map {
                    Some(op) => out[*slot].scaled_add(*mu, &op.adjoint(op.apply(y[*slot].view()).view())),
                    None => out[*slot].scaled_add(*mu, &y[*slot]),
                }
            }
        }
        out
    }

    /// `R`.
    pub fn rhs(&self) -> Vec<Array2<f64>> {
        let target: Vec<Array2<f64>> = self.form.offset.iter().zip(&self.w).map(|(b, w)| b * self.rho - w).collect();
        let mut out = self.form.adjoint(&target);
        for (slot, kind) in &self.extras {
            match kind {
                ObjectiveKind::Quadratic { mu, center, map } => match map {
                    Some(op) => out[*slot].scaled_add(*mu, &op.adjoint(center.view())),
                    None => out[*slot].scaled_add(*mu, center),
                },
                ObjectiveKind::Linear { coeff, .. } => out[*slot] -= coeff,
                _ => {}
            }
        }
        out
    }

    /// `Y ↦ HY` for a single block whose Hessian is diagonal in the Fourier
    /// basis: two FFTs instead of a forward and an adjoint pass.
    pub fn fourier_hessian(&self) -> Option<impl Fn(&Array2<f64>) -> Array2<f64>> {
        if self.form.focus.len() != 1 {
            return None;
        }
        let c = self.combined(0);
        let other = c.unknown || c.mask.is_some() || c.left.is_some() || c.right.is_some() || !c.krons.is_empty() || c.dense.is_some();
        let diag = c.fourier.filter(|_| !other)? + c.scalar;
        Some(move |y: &Array2<f64>| {
            let mut yh = conv::fft2(y.view());
            Zip::from(&mut yh).and(&diag).for_each(|v, &d| *v *= d);
            conv::ifft2_real(yh)
        })
    }

    /// Gradient `H Y − R` of the smooth part.
    pub fn gradient(&self, y: &[Array2<f64>]) -> Vec<Array2<f64>> {
        let mut g = self.apply(y);
        blocks_axpy(&mut g, -1.0, &self.rhs());
        g
    }

    /// `⟨W, C(Y) − b⟩ + ρ/2 ‖C(Y) − b‖² + Σ q(Y)`.
    pub fn smooth_value(&self, y: &[Array2<f64>]) -> f64 {
        let r = self.form.residual(y);
        let mut v = blocks_dot(&self.w, &r) + 0.5 * self.rho * blocks_norm_sq(&r);
        for (slot, kind) in &self.extras {
            v += kind.value(y[*slot].view());
        }
        v
    }

    fn combined(&self, slot: usize) -> Combined {
        let mut c = Combined::default();
        let mut seen = vec![false; self.form.eq_shapes.len()];
        for p in self.form.slot_pieces(slot) {
            if std::mem::replace(&mut seen[p.eq], true) {
                c.unknown = true;
            }
            c.add(p.gram().scaled(self.rho));
        }
        for (s, kind) in &self.extras {
            if *s == slot {
                if let Some(h) = kind.hessian() {
                    c.add(h);
                }
            }
        }
        c
    }

    /// Entrywise curvature of `H` on `slot`, when `H` is diagonal there and
    /// the slot does not share an equation with another slot.
    pub fn diagonal(&self, slot: usize) -> Option<Array2<f64>> {
        let sub = self.restrict(slot);
        if !sub_is_isolated(&self.form, slot) {
            return None;
        }
        let c = sub.combined(0);
        if !c.only_diagonal() {
            return None;
        }
        let shape = self.form.focus_shapes[slot];
        let mut d = Array2::from_elem(shape, c.scalar);
        if let Some(m) = &c.mask {
            d += m;
        }
        Some(d)
    }

    /// An upper bound on the largest eigenvalue of `H`.
    pub fn lipschitz_upper(&self) -> f64 {
        if self.form.is_decoupled() {
            let bounds: Option<Vec<f64>> = (0..self.form.focus.len()).map(|s| self.combined(s).upper_bound()).collect();
            if let Some(b) = bounds {
                return b.into_iter().fold(0.0, f64::max);
            }
        }
        self.power_estimate() * 1.1
    }

    fn power_estimate(&self) -> f64 {
        let mut v: Vec<Array2<f64>> =
            self.form.focus_shapes.iter().map(|s| Array2::from_shape_fn(*s, |(i, j)| 1.0 + ((i * 31 + j * 17) % 7) as f64)).collect();
        let mut est = 0.0;
        for _ in 0..60 {
            let n = blocks_norm(&v);
            if n == 0.0 {
                return 0.0;
            }
            for b in v.iter_mut() {
                *b /= n;
            }
            let hv = self.apply(&v);
            est = blocks_dot(&v, &hv);
            v = hv;
        }
        est
    }

    fn restrict(&self, slot: usize) -> NormalEquations {
        NormalEquations {
            form: self.form.slot(slot),
            w: self.w.clone(),
            rho: self.rho,
            extras: self.extras.iter().filter(|(s, _)| *s == slot).map(|(_, k)| (0, k.clone())).collect(),
        }
    }

    /// Minimizer nearest `warm` (zeros when `None`).
    pub fn solve(&self, warm: Option<&[Array2<f64>]>, opts: &QuadOptions) -> Result<QuadSolution> {
        let warm: Vec<Array2<f64>> = match warm {
            Some(w) => w.to_vec(),
            None => self.form.focus_shapes.iter().map(|s| Array2::zeros(*s)).collect(),
        };
        let rhs = self.rhs();
        let mut corr = rhs.clone();
        blocks_axpy(&mut corr, -1.0, &self.apply(&warm));
        let target = opts.cg_tol * blocks_norm(&rhs).max(blocks_norm(&corr));
        let (delta, methods) = self.solve_delta(&corr, target, opts)?;
        let mut y = warm;
        blocks_axpy(&mut y, 1.0, &delta);
        Ok(QuadSolution { y, methods })
    }

    fn solve_delta(&self, rhs: &[Array2<f64>], target: f64, opts: &QuadOptions) -> Result<(Vec<Array2<f64>>, Vec<SolveMethod>)> {
        let dim = self.form.focus_dim();
        let maxit = opts.cg_maxit.unwrap_or(10 * dim);
        match opts.method {
            MethodChoice::Dense => return Ok((self.probed(rhs), vec![SolveMethod::Dense])),
            MethodChoice::Cg => {
                let (x, it) = self.cg(rhs, target, maxit)?;
                return Ok((x, vec![SolveMethod::Cg { iterations: it }]));
            }
            MethodChoice::Auto if dim <= opts.dense_max && self.form.focus.len() > 1 => return Ok((self.probed(rhs), vec![SolveMethod::Dense])),
            _ => {}
        }
        if self.form.focus.len() == 1 {
            let (x, m) = self.structured(&rhs[0], target, maxit)?;
            return Ok((vec![x], vec![m]));
        }
        if self.form.is_decoupled() {
            let mut xs = Vec::new();
            let mut ms = Vec::new();
            for s in 0..self.form.focus.len() {
                let (mut x, m) = self.restrict(s).solve_delta(&rhs[s..=s], target, opts)?;
                xs.push(x.remove(0));
                ms.extend(m);
            }
            return Ok((xs, ms));
        }
        let (x, it) = self.cg(rhs, target, maxit)?;
        Ok((x, vec![SolveMethod::Cg { iterations: it }]))
    }

    /// Dense matrix of `H` on the stacked row-major vectorization.
    pub fn dense_matrix(&self) -> Array2<f64> {
        let shapes = self.form.focus_shapes.clone();
        let dim = self.form.focus_dim();
        let mut h = Array2::zeros((dim, dim));
        let mut e = vec![0.0; dim];
        for j in 0..dim {
            e[j] = 1.0;
            let col = linalg::flatten(&self.apply(&linalg::unflatten(&e, &shapes)));
            for (i, v) in col.iter().enumerate() {
                h[[i, j]] = *v;
            }
            e[j] = 0.0;
        }
        h
    }

    fn probed(&self, rhs: &[Array2<f64>]) -> Vec<Array2<f64>> {
        let h = self.dense_matrix();
        let b = Array2::from_shape_vec((h.nrows(), 1), linalg::flatten(rhs)).unwrap();
        let x = linalg::solve_psd(h.view(), b.view());
        linalg::unflatten(x.as_slice().unwrap(), &self.form.focus_shapes)
    }

    fn structured(&self, rhs: &Array2<f64>, target: f64, maxit: usize) -> Result<(Array2<f64>, SolveMethod)> {
        let c = self.combined(0);
        let (r, cols) = rhs.dim();
        let dim = r * cols;
        let s = c.scalar;
        let has_mask = c.mask.is_some();
        let no_kron = c.krons.is_empty();
        if !c.unknown && c.dense.is_none() && c.fourier.is_none() && no_kron {
            match (&c.left, &c.right, has_mask) {
                (None, None, _) => {
                    let d = match &c.mask {
                        Some(m) => m + s,
                        None => Array2::from_elem(rhs.dim(), s),
                    };
                    let floor = floor_of(d.iter());
                    return Ok((Zip::from(rhs).and(&d).map_collect(|&n, &d| pinv_div(n, d, floor)), SolveMethod::Diagonal));
                }
                (Some(p), None, false) => {
                    let g = p + &(Array2::<f64>::eye(r) * s);
                    return Ok((linalg::solve_psd(g.view(), rhs.view()), SolveMethod::LeftSolve));
                }
                (None, Some(q), false) => {
                    let g = q + &(Array2::<f64>::eye(cols) * s);
                    let x = linalg::solve_psd(g.view(), rhs.t());
                    return Ok((x.reversed_axes().as_standard_layout().into_owned(), SolveMethod::RightSolve));
                }
                (Some(p), Some(q), false) => {
                    let (a, u) = linalg::symmetric_eigen(p.view());
                    let (b, v) = linalg::symmetric_eigen(q.view());
                    let rt = u.t().dot(rhs).dot(&v);
                    let den = Array2::from_shape_fn((r, cols), |(i, j)| a[i] + s + b[j]);
                    let floor = floor_of(den.iter());
                    let xt = Zip::from(&rt).and(&den).map_collect(|&n, &d| pinv_div(n, d, floor));
                    return Ok((u.dot(&xt).dot(&v.t()), SolveMethod::Sylvester));
                }
                _ => {}
            }
        }
        if !c.unknown && c.dense.is_none() && c.fourier.is_none() && !has_mask && c.left.is_none() && c.right.is_none() && c.krons.len() == 1 {
            let (p, q) = &c.krons[0];
            let (a, u) = linalg::symmetric_eigen(p.view());
            // PΔQ acts on row-major vec as P ⊗ Qᵀ; Q is symmetric.
            let (b, v) = linalg::symmetric_eigen(q.view());
            let rt = u.t().dot(rhs).dot(&v);
            let den = Array2::from_shape_fn((r, cols), |(i, j)| a[i] * b[j] + s);
            let floor = floor_of(den.iter());
            let xt = Zip::from(&rt).and(&den).map_collect(|&n, &d| pinv_div(n, d, floor));
            return Ok((u.dot(&xt).dot(&v.t()), SolveMethod::Kron));
        }
        if !c.unknown && c.dense.is_none() && !has_mask && no_kron && c.left.is_none() && c.right.is_none() {
            if let Some(f) = &c.fourier {
                let den = f + s;
                let floor = floor_of(den.iter());
                let mut rh = conv::fft2(rhs.view());
                Zip::from(&mut rh).and(&den).for_each(|x, &d| {
                    *x = if d.abs() <= floor { Complex64::new(0.0, 0.0) } else { *x / d }
                });
                return Ok((conv::ifft2_real(rh), SolveMethod::Fourier));
            }
        }
        if !c.unknown && c.fourier.is_none() && no_kron && c.left.is_none() && c.right.is_none() {
            if let Some(d) = &c.dense {
                let mut g = d + &(Array2::<f64>::eye(dim) * s);
                if let Some(m) = &c.mask {
                    for (i, v) in m.iter().enumerate() {
                        g[[i, i]] += v;
                    }
                }
                let b = Array2::from_shape_vec((dim, 1), rhs.iter().copied().collect()).unwrap();
                let x = linalg::solve_psd(g.view(), b.view());
                return Ok((x.into_shape_with_order((r, cols)).unwrap(), SolveMethod::DenseStructured));
            }
        }
        if dim <= 2048 {
            return Ok((self.probed(std::slice::from_ref(rhs)).remove(0), SolveMethod::Probed));
        }
        let (mut x, it) = self.cg(std::slice::from_ref(rhs), target, maxit)?;
        Ok((x.remove(0), SolveMethod::Cg { iterations: it }))
    }

    fn cg(&self, b: &[Array2<f64>], target: f64, maxit: usize) -> Result<(Vec<Array2<f64>>, usize)> {
        let mut x = blocks_zeros_like(b);
        let mut r = b.to_vec();
        let mut p = r.clone();
        let mut rr = blocks_norm_sq(&r);
        if rr.sqrt() <= target {
            return Ok((x, 0));
        }
        for it in 1..=maxit {
            let hp = self.apply(&p);
            let php = blocks_dot(&p, &hp);
            if !(php > 0.0) {
                break;
            }
            let alpha = rr / php;
            blocks_axpy(&mut x, alpha, &p);
            blocks_axpy(&mut r, -alpha, &hp);
            let rr_new = blocks_norm_sq(&r);
            if rr_new.sqrt() <= target {
                return Ok((x, it));
            }
            let beta = rr_new / rr;
            for (pi, ri) in p.iter_mut().zip(&r) {
                *pi *= beta;
                *pi += ri;
            }
            rr = rr_new;
        }
        Err(Error::CgNotConverged { iterations: maxit, residual: rr.sqrt(), target })
    }
}

fn sub_is_isolated(form: &FrozenLinearForm, slot: usize) -> bool {
    let eqs: Vec<usize> = form.slot_pieces(slot).map(|p| p.eq).collect();
    form.pieces.iter().all(|p| p.slot == slot || !eqs.contains(&p.eq))
}

/// Minimize `⟨W, C(Y) − b⟩ + ρ/2 ‖C(Y) − b‖² + Σ extra(Y)` exactly.
pub fn quad_block_solve(
    form: &FrozenLinearForm,
    w: &[Array2<f64>],
    rho: f64,
    extra: &[(usize, ObjectiveKind)],
    warm: Option<&[Array2<f64>]>,
    opts: &QuadOptions,
) -> Result<QuadSolution> {
    NormalEquations::new(form, w, rho, extra)?.solve(warm, opts)
}
