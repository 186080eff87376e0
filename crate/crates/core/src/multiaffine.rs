//! Symbolic multiaffine constraint systems.
//!
//! A system is a list of equations, each a signed sum of terms that are
//! multilinear in distinct blocks. Freezing every block except a focus set
//! yields a [`FrozenLinearForm`] `Y ↦ C_U(Y) − b_U`, which is what each
//! block subproblem of the ADMM loop sees.

use std::collections::BTreeSet;
use std::fmt;

use ndarray::{Array2, ArrayView2, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::conv;
use crate::error::{Error, Result};
use crate::linop::{Gram, LinearOp};

/// Index of a block inside its system.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BlockId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    X(usize),
    Z0,
    Z1,
    Z2,
}

impl Role {
    pub fn is_z(self) -> bool {
        !matches!(self, Role::X(_))
    }

    /// Z1 and Z2 blocks may only enter through linear terms.
    pub fn is_linear_only(self) -> bool {
        matches!(self, Role::Z1 | Role::Z2)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BlockSpec {
    pub name: String,
    pub role: Role,
    pub shape: (usize, usize),
}

/// One value per block, indexed by `BlockId`.
pub type Assignment = Vec<Array2<f64>>;

#[derive(Clone, Debug)]
pub enum Factor {
    Const(Array2<f64>),
    Var(BlockId),
    /// Transposed block.
    VarT(BlockId),
}

#[derive(Clone, Debug)]
pub enum TermKind {
    /// Ordered matrix product of constants and distinct blocks.
    MatChain(Vec<Factor>),
    /// `post(left ∘ right)`.
    Hadamard {
        left: BlockId,
        right: BlockId,
        post: Option<LinearOp>,
    },
    /// Circular convolution `kernel ∗ signal`.
    Conv2d { kernel: BlockId, signal: BlockId },
    Linear { op: LinearOp, block: BlockId },
    Constant(Array2<f64>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Term {
    pub kind: TermKind,
    pub sign: Sign,
}

impl Term {
    pub fn new(kind: TermKind) -> Self {
        Term { kind, sign: Sign::Plus }
    }

    pub fn chain(factors: Vec<Factor>) -> Self {
        Term::new(TermKind::MatChain(factors))
    }

    /// `a · b` for two blocks.
    pub fn product(a: BlockId, b: BlockId) -> Self {
        Term::chain(vec![Factor::Var(a), Factor::Var(b)])
    }

    /// The block itself, as an identity linear term.
    pub fn var(block: BlockId, shape: (usize, usize)) -> Self {
        Term::linear(crate::linop::ScaledIdentity::new(shape, 1.0), block)
    }

    pub fn linear(op: LinearOp, block: BlockId) -> Self {
        Term::new(TermKind::Linear { op, block })
    }

    pub fn hadamard(left: BlockId, right: BlockId, post: Option<LinearOp>) -> Self {
        Term::new(TermKind::Hadamard { left, right, post })
    }

    pub fn conv(kernel: BlockId, signal: BlockId) -> Self {
        Term::new(TermKind::Conv2d { kernel, signal })
    }

    pub fn constant(value: Array2<f64>) -> Self {
        Term::new(TermKind::Constant(value))
    }

    pub fn neg(mut self) -> Self {
        self.sign = match self.sign {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        };
        self
    }

    pub fn blocks(&self) -> Vec<BlockId> {
        match &self.kind {
            TermKind::MatChain(f) => f
                .iter()
                .filter_map(|f| match f {
                    Factor::Var(b) | Factor::VarT(b) => Some(*b),
                    Factor::Const(_) => None,
                })
                .collect(),
            TermKind::Hadamard { left, right, .. } => vec![*left, *right],
            TermKind::Conv2d { kernel, signal } => vec![*kernel, *signal],
            TermKind::Linear { block, .. } => vec![*block],
            TermKind::Constant(_) => vec![],
        }
    }

    fn evaluate(&self, asg: &[Array2<f64>]) -> Array2<f64> {
        let s = self.sign.value();
        match &self.kind {
            TermKind::MatChain(factors) => {
                let mut acc: Option<Array2<f64>> = None;
                for f in factors {
                    let m = match f {
                        Factor::Const(c) => c.view(),
                        Factor::Var(b) => asg[b.0].view(),
                        Factor::VarT(b) => asg[b.0].t(),
                    };
                    acc = Some(match acc {
                        None => m.to_owned(),
                        Some(a) => a.dot(&m),
                    });
                }
                acc.expect("validated non-empty chain") * s
            }
            TermKind::Hadamard { left, right, post } => {
                let h = &asg[left.0] * &asg[right.0];
                match post {
                    Some(op) => op.apply(h.view()) * s,
                    None => h * s,
                }
            }
            TermKind::Conv2d { kernel, signal } => conv::conv2(asg[kernel.0].view(), asg[signal.0].view()) * s,
            TermKind::Linear { op, block } => op.apply(asg[block.0].view()) * s,
            TermKind::Constant(c) => c * s,
        }
    }

    /// True for terms that belong to `Q(Z_>)` rather than `A(X, Z0)`.
    fn is_q_term(&self, blocks: &[BlockSpec]) -> bool {
        matches!(&self.kind, TermKind::Linear { block, .. } if blocks[block.0].role.is_linear_only())
    }
}

#[derive(Clone, Debug)]
pub struct Equation {
    pub id: usize,
    pub shape: (usize, usize),
    pub terms: Vec<Term>,
}

/// Immutable system `C(X, Z) = 0`.
#[derive(Clone, Debug)]
pub struct MultiaffineSystem {
    blocks: Vec<BlockSpec>,
    equations: Vec<Equation>,
}

#[derive(Default)]
pub struct SystemBuilder {
    blocks: Vec<BlockSpec>,
    equations: Vec<Equation>,
}

impl SystemBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn block(&mut self, name: &str, role: Role, shape: (usize, usize)) -> BlockId {
        self.blocks.push(BlockSpec { name: name.to_string(), role, shape });
        BlockId(self.blocks.len() - 1)
    }

    pub fn equation(&mut self, shape: (usize, usize), terms: Vec<Term>) -> usize {
        let id = self.equations.len();
        self.equations.push(Equation { id, shape, terms });
        id
    }

    pub fn build(self) -> Result<MultiaffineSystem> {
        let sys = MultiaffineSystem { blocks: self.blocks, equations: self.equations };
        sys.validate()?;
        Ok(sys)
    }
}

impl MultiaffineSystem {
    pub fn builder() -> SystemBuilder {
        SystemBuilder::new()
    }

    pub fn blocks(&self) -> &[BlockSpec] {
        &self.blocks
    }

    pub fn block(&self, id: BlockId) -> &BlockSpec {
        &self.blocks[id.0]
    }

    pub fn equations(&self) -> &[Equation] {
        &self.equations
    }

    pub fn block_id(&self, name: &str) -> Option<BlockId> {
        self.blocks.iter().position(|b| b.name == name).map(BlockId)
    }

    pub fn block_shapes(&self) -> Vec<(usize, usize)> {
        self.blocks.iter().map(|b| b.shape).collect()
    }

    pub fn equation_shapes(&self) -> Vec<(usize, usize)> {
        self.equations.iter().map(|e| e.shape).collect()
    }

    /// Returns a copy with one extra block and one extra equation.
    pub fn extended(&self, block: BlockSpec, terms_for: impl FnOnce(BlockId) -> (usize, usize, Vec<Term>)) -> Result<(Self, BlockId)> {
        let mut sys = self.clone();
        sys.blocks.push(block);
        let id = BlockId(sys.blocks.len() - 1);
        let (r, c, terms) = terms_for(id);
        let eq = sys.equations.len();
        sys.equations.push(Equation { id: eq, shape: (r, c), terms });
        sys.validate()?;
        Ok((sys, id))
    }

    fn validate(&self) -> Result<()> {
        let mut names = BTreeSet::new();
        for b in &self.blocks {
            if b.shape.0 == 0 || b.shape.1 == 0 {
                return Err(Error::InvalidProblem(format!("block `{}` has empty shape {:?}", b.name, b.shape)));
            }
            if !names.insert(b.name.as_str()) {
                return Err(Error::InvalidProblem(format!("duplicate block name `{}`", b.name)));
            }
        }
        for (e, eq) in self.equations.iter().enumerate() {
            if eq.terms.is_empty() {
                return Err(Error::InvalidTerm { equation: e, reason: "equation has no terms".into() });
            }
            for t in &eq.terms {
                self.validate_term(e, eq.shape, t)?;
            }
        }
        Ok(())
    }

    fn check_block(&self, e: usize, b: BlockId) -> Result<&BlockSpec> {
        self.blocks
            .get(b.0)
            .ok_or_else(|| Error::InvalidTerm { equation: e, reason: format!("unknown block index {}", b.0) })
    }

    fn validate_term(&self, e: usize, shape: (usize, usize), t: &Term) -> Result<()> {
        let bad = |reason: String| Err(Error::InvalidTerm { equation: e, reason });
        let mismatch = |name: &str, got: (usize, usize)| {
            Err(Error::ShapeMismatch { block: name.to_string(), equation: e, expected: shape, got })
        };
        for b in t.blocks() {
            let spec = self.check_block(e, b)?;
            if spec.role.is_linear_only() && !matches!(t.kind, TermKind::Linear { .. }) {
                return bad(format!("block `{}` has role {:?} and may only appear in a linear term", spec.name, spec.role));
            }
        }
        match &t.kind {
            TermKind::MatChain(factors) => {
                if factors.is_empty() {
                    return bad("empty matrix chain".into());
                }
                let mut seen = BTreeSet::new();
                let mut dims: Option<(usize, usize)> = None;
                for f in factors {
                    let d = match f {
                        Factor::Const(c) => c.dim(),
                        Factor::Var(b) => self.blocks[b.0].shape,
                        Factor::VarT(b) => {
                            let (r, c) = self.blocks[b.0].shape;
                            (c, r)
                        }
                    };
                    if let Factor::Var(b) | Factor::VarT(b) = f {
                        if !seen.insert(*b) {
                            return bad(format!("block `{}` appears twice in one product", self.blocks[b.0].name));
                        }
                    }
                    dims = Some(match dims {
                        None => d,
                        Some((r, c)) if c == d.0 => (r, d.1),
                        Some((r, c)) => return bad(format!("product dimensions {r}x{c} and {}x{} do not chain", d.0, d.1)),
                    });
                }
                if seen.is_empty() {
                    return bad("product without variables; use a constant term".into());
                }
                let d = dims.unwrap();
                if d != shape {
                    return mismatch("<product>", d);
                }
            }
            TermKind::Hadamard { left, right, post } => {
                if left == right {
                    return bad("Hadamard product of a block with itself is not multiaffine".into());
                }
                let (l, r) = (&self.blocks[left.0], &self.blocks[right.0]);
                if l.shape != r.shape {
                    return bad(format!("Hadamard operands `{}` {:?} and `{}` {:?} differ", l.name, l.shape, r.name, r.shape));
                }
                let out = match post {
                    Some(op) => {
                        if op.input_shape() != l.shape {
                            return bad(format!("post operator expects {:?}, Hadamard yields {:?}", op.input_shape(), l.shape));
                        }
                        op.output_shape()
                    }
                    None => l.shape,
                };
                if out != shape {
                    return mismatch(&l.name, out);
                }
            }
            TermKind::Conv2d { kernel, signal } => {
                if kernel == signal {
                    return bad("convolution of a block with itself is not multiaffine".into());
                }
                let (k, s) = (&self.blocks[kernel.0], &self.blocks[signal.0]);
                if k.shape.0 > s.shape.0 || k.shape.1 > s.shape.1 {
                    return bad(format!("kernel `{}` {:?} larger than signal {:?}", k.name, k.shape, s.shape));
                }
                if s.shape != shape {
                    return mismatch(&s.name, s.shape);
                }
            }
            TermKind::Linear { op, block } => {
                let b = &self.blocks[block.0];
                if op.input_shape() != b.shape {
                    return Err(Error::ShapeMismatch {
                        block: b.name.clone(),
                        equation: e,
                        expected: op.input_shape(),
                        got: b.shape,
                    });
                }
                if op.output_shape() != shape {
                    return mismatch(&b.name, op.output_shape());
                }
            }
            TermKind::Constant(c) => {
                if c.dim() != shape {
                    return mismatch("<constant>", c.dim());
                }
            }
        }
        Ok(())
    }

    fn check_assignment(&self, asg: &[Array2<f64>]) -> Result<()> {
        if asg.len() != self.blocks.len() {
            return Err(Error::AssignmentLength { expected: self.blocks.len(), got: asg.len() });
        }
        for (i, (spec, v)) in self.blocks.iter().zip(asg).enumerate() {
            if v.dim() != spec.shape {
                let equation = self
                    .equations
                    .iter()
                    .position(|eq| eq.terms.iter().any(|t| t.blocks().contains(&BlockId(i))))
                    .unwrap_or(0);
                return Err(Error::ShapeMismatch { block: spec.name.clone(), equation, expected: spec.shape, got: v.dim() });
            }
        }
        Ok(())
    }

    /// Per-equation residuals `C(X, Z)`.
    pub fn evaluate(&self, asg: &[Array2<f64>]) -> Result<Vec<Array2<f64>>> {
        self.check_assignment(asg)?;
        Ok(self.evaluate_filtered(asg, |_| true))
    }

    fn evaluate_filtered(&self, asg: &[Array2<f64>], keep: impl Fn(&Term) -> bool) -> Vec<Array2<f64>> {
        self.equations
            .iter()
            .map(|eq| {
                let mut acc = Array2::zeros(eq.shape);
                for t in eq.terms.iter().filter(|t| keep(t)) {
                    acc += &t.evaluate(asg);
                }
                acc
            })
            .collect()
    }

    /// The `A(X, Z0)` part of the residual (everything except linear terms in Z1/Z2).
    pub fn evaluate_a(&self, asg: &[Array2<f64>]) -> Result<Vec<Array2<f64>>> {
        self.check_assignment(asg)?;
        Ok(self.evaluate_filtered(asg, |t| !t.is_q_term(&self.blocks)))
    }

    /// Norm of the constant terms, used to scale feasibility tolerances.
    pub fn constant_norm(&self) -> f64 {
        let mut acc = 0.0;
        for eq in &self.equations {
            let mut c = Array2::<f64>::zeros(eq.shape);
            for t in &eq.terms {
                if let TermKind::Constant(v) = &t.kind {
                    c.scaled_add(t.sign.value(), v);
                }
            }
            acc += c.iter().map(|v| v * v).sum::<f64>();
        }
        acc.sqrt()
    }

    /// Equations that mention `block`.
    pub fn equations_of(&self, block: BlockId) -> Vec<usize> {
        self.equations
            .iter()
            .enumerate()
            .filter(|(_, eq)| eq.terms.iter().any(|t| t.blocks().contains(&block)))
            .map(|(i, _)| i)
            .collect()
    }

    /// Linear form seen by the `focus` blocks with every other block fixed at `others`.
    ///
    /// Values of the focus blocks inside `others` are ignored.
    pub fn freeze(&self, focus: &[BlockId], others: &[Array2<f64>]) -> Result<FrozenLinearForm> {
        for f in focus {
            if f.0 >= self.blocks.len() {
                return Err(Error::UnknownBlock(format!("#{}", f.0)));
            }
        }
        self.check_assignment(others)?;
        let slot_of = |b: BlockId| focus.iter().position(|f| *f == b);
        let mut pieces = Vec::new();
        let mut offset = Vec::with_capacity(self.equations.len());
        for (e, eq) in self.equations.iter().enumerate() {
            let mut constant = Array2::<f64>::zeros(eq.shape);
            for t in &eq.terms {
                let hits: Vec<(usize, BlockId)> =
                    t.blocks().into_iter().filter_map(|b| slot_of(b).map(|s| (s, b))).collect();
                match hits.len() {
                    0 => constant += &t.evaluate(others),
                    1 => pieces.push(self.freeze_term(e, t, hits[0].0, hits[0].1, others)),
                    _ => {
                        return Err(Error::InvalidArgument(format!(
                            "term in equation {e} is not linear in the focus group"
                        )))
                    }
                }
            }
            offset.push(-constant);
        }
        Ok(FrozenLinearForm {
            focus: focus.to_vec(),
            focus_shapes: focus.iter().map(|b| self.blocks[b.0].shape).collect(),
            eq_shapes: self.equation_shapes(),
            pieces,
            offset,
        })
    }

    fn freeze_term(&self, eq: usize, t: &Term, slot: usize, focus: BlockId, asg: &[Array2<f64>]) -> Piece {
        let scale = t.sign.value();
        let op = match &t.kind {
            TermKind::MatChain(factors) => {
                let pos = factors
                    .iter()
                    .position(|f| matches!(f, Factor::Var(b) | Factor::VarT(b) if *b == focus))
                    .expect("focus in chain");
                let value = |f: &Factor| -> Array2<f64> {
                    match f {
                        Factor::Const(c) => c.clone(),
                        Factor::Var(b) => asg[b.0].clone(),
                        Factor::VarT(b) => asg[b.0].t().to_owned(),
                    }
                };
                let product = |fs: &[Factor]| -> Option<Array2<f64>> {
                    fs.iter().map(value).reduce(|a, b| a.dot(&b))
                };
                PieceOp::Sandwich {
                    left: product(&factors[..pos]),
                    right: product(&factors[pos + 1..]),
                    transposed: matches!(factors[pos], Factor::VarT(_)),
                }
            }
            TermKind::Hadamard { left, right, post } => {
                let other = if *left == focus { right } else { left };
                PieceOp::Hadamard { mask: asg[other.0].clone(), post: post.clone() }
            }
            TermKind::Conv2d { kernel, signal } => {
                if *kernel == focus {
                    PieceOp::ConvKernel {
                        signal_hat: conv::fft2(asg[signal.0].view()),
                        kernel_shape: self.blocks[kernel.0].shape,
                    }
                } else {
                    let shape = self.blocks[signal.0].shape;
                    PieceOp::ConvSignal { kernel_hat: conv::fft2_padded(asg[kernel.0].view(), shape) }
                }
            }
            TermKind::Linear { op, .. } => PieceOp::Linear(op.clone()),
            TermKind::Constant(_) => unreachable!("constant terms have no blocks"),
        };
        Piece { eq, slot, scale, op }
    }

    /// Columns spanning a sample of `Im(A)`: the `A` part at `samples` random
    /// assignments plus the one given, vectorized row-major and stacked by equation.
    pub fn jacobian_image_basis(&self, asg: &[Array2<f64>], samples: usize, seed: u64) -> Result<Array2<f64>> {
        self.check_assignment(asg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: usize = self.equations.iter().map(|e| e.shape.0 * e.shape.1).sum();
        let mut out = Array2::zeros((rows, samples + 1));
        let mut fill = |col: usize, vals: Vec<Array2<f64>>| {
            for (i, v) in vals.iter().flat_map(|v| v.iter()).enumerate() {
                out[[i, col]] = *v;
            }
        };
        fill(0, self.evaluate_a(asg)?);
        for s in 1..=samples {
            let random: Assignment = self
                .blocks
                .iter()
                .map(|b| Array2::from_shape_fn(b.shape, |_| StandardNormal.sample(&mut rng)))
                .collect();
            fill(s, self.evaluate_filtered(&random, |t| !t.is_q_term(&self.blocks)));
        }
        Ok(out)
    }
}

#[derive(Clone)]
pub(crate) enum PieceOp {
    /// `L · op(Y) · R`, `op` being identity or transpose.
    Sandwich {
        left: Option<Array2<f64>>,
        right: Option<Array2<f64>>,
        transposed: bool,
    },
    /// `post(mask ∘ Y)`.
    Hadamard { mask: Array2<f64>, post: Option<LinearOp> },
    ConvKernel {
        signal_hat: Array2<Complex64>,
        kernel_shape: (usize, usize),
    },
    ConvSignal { kernel_hat: Array2<Complex64> },
    Linear(LinearOp),
}

#[derive(Clone)]
pub(crate) struct Piece {
    pub eq: usize,
    pub slot: usize,
    pub scale: f64,
    pub op: PieceOp,
}

impl Piece {
    fn apply(&self, y: ArrayView2<f64>) -> Array2<f64> {
        let out = match &self.op {
            PieceOp::Sandwich { left, right, transposed } => {
                let mut t = if *transposed { y.t().to_owned() } else { y.to_owned() };
                if let Some(l) = left {
                    t = l.dot(&t);
                }
                if let Some(r) = right {
                    t = t.dot(r);
                }
                t
            }
            PieceOp::Hadamard { mask, post } => {
                let h = &y * mask;
                match post {
                    Some(op) => op.apply(h.view()),
                    None => h,
                }
            }
            PieceOp::ConvKernel { signal_hat, .. } => {
                let kh = conv::fft2_padded(y, signal_hat.dim());
                let mut prod = kh;
                Zip::from(&mut prod).and(signal_hat).for_each(|a, b| *a *= *b);
                conv::ifft2_real(prod)
            }
            PieceOp::ConvSignal { kernel_hat } => conv::conv2_with_kernel_hat(kernel_hat, y),
            PieceOp::Linear(op) => op.apply(y),
        };
        out * self.scale
    }

    fn adjoint(&self, w: ArrayView2<f64>) -> Array2<f64> {
        let out = match &self.op {
            PieceOp::Sandwich { left, right, transposed } => {
                let mut t = w.to_owned();
                if let Some(l) = left {
                    t = l.t().dot(&t);
                }
                if let Some(r) = right {
                    t = t.dot(&r.t());
                }
                if *transposed {
                    t.reversed_axes().as_standard_layout().into_owned()
                } else {
                    t
                }
            }
            PieceOp::Hadamard { mask, post } => {
                let v = match post {
                    Some(op) => op.adjoint(w),
                    None => w.to_owned(),
                };
                v * mask
            }
            PieceOp::ConvKernel { signal_hat, kernel_shape } => conv::conv2_adjoint_kernel(signal_hat, w, *kernel_shape),
            PieceOp::ConvSignal { kernel_hat } => conv::conv2_adjoint_signal(kernel_hat, w),
            PieceOp::Linear(op) => op.adjoint(w),
        };
        out * self.scale
    }

    /// Structure of `PᵀP` for this piece alone.
    pub(crate) fn gram(&self) -> Gram {
        let s2 = self.scale * self.scale;
        let g = match &self.op {
            PieceOp::Sandwich { left, right, transposed } => {
                let gl = left.as_ref().map(|l| l.t().dot(l));
                let gr = right.as_ref().map(|r| r.dot(&r.t()));
                let (p, q) = if *transposed { (gr, gl) } else { (gl, gr) };
                match (p, q) {
                    (None, None) => Gram::Scalar(1.0),
                    (p, q) => Gram::Kron { left: p, right: q },
                }
            }
            PieceOp::Hadamard { mask, post } => {
                let post_gram = match post {
                    None => Gram::Scalar(1.0),
                    Some(op) => op.gram(),
                };
                match post_gram {
                    Gram::Scalar(c) => Gram::Mask(mask.mapv(|v| c * v * v)),
                    Gram::Mask(m) => Gram::Mask(&m * &mask.mapv(|v| v * v)),
                    Gram::Dense(g) => {
                        let d: Vec<f64> = mask.iter().copied().collect();
                        Gram::Dense(Array2::from_shape_fn(g.dim(), |(i, j)| d[i] * g[[i, j]] * d[j]))
                    }
                    _ if mask.len() <= 4096 => {
                        let g = crate::linop::dense_gram(post.as_deref().expect("non-scalar gram has a post operator"));
                        let d: Vec<f64> = mask.iter().copied().collect();
                        Gram::Dense(Array2::from_shape_fn(g.dim(), |(i, j)| d[i] * g[[i, j]] * d[j]))
                    }
                    _ => Gram::Unknown,
                }
            }
            PieceOp::ConvKernel { signal_hat, kernel_shape } => {
                if kernel_shape.0 * kernel_shape.1 <= 4096 {
                    Gram::Dense(conv::kernel_gram(signal_hat, *kernel_shape))
                } else {
                    Gram::Unknown
                }
            }
            PieceOp::ConvSignal { kernel_hat } => Gram::Fourier(kernel_hat.mapv(|v| v.norm_sqr())),
            PieceOp::Linear(op) => op.gram(),
        };
        g.scaled(s2)
    }

    /// True when the piece maps the focus entrywise (identity, scaled
    /// identity or Hadamard mask), so separable proxes stay exact.
    pub(crate) fn is_entrywise(&self) -> bool {
        match &self.op {
            PieceOp::Sandwich { left: None, right: None, transposed: false } => true,
            PieceOp::Hadamard { post: None, .. } => true,
            PieceOp::Linear(op) => op.as_scaled_identity().is_some() && op.input_shape() == op.output_shape(),
            _ => false,
        }
    }
}

/// `Y ↦ C_U(Y)` together with the offset `b_U`; the constraint reads `C_U(Y) − b_U = 0`.
#[derive(Clone)]
pub struct FrozenLinearForm {
    pub focus: Vec<BlockId>,
    pub focus_shapes: Vec<(usize, usize)>,
    pub eq_shapes: Vec<(usize, usize)>,
    pub(crate) pieces: Vec<Piece>,
    pub offset: Vec<Array2<f64>>,
}

impl fmt::Debug for FrozenLinearForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FrozenLinearForm")
            .field("focus", &self.focus)
            .field("focus_shapes", &self.focus_shapes)
            .field("pieces", &self.pieces.len())
            .finish()
    }
}

impl FrozenLinearForm {
    pub fn apply(&self, y: &[Array2<f64>]) -> Vec<Array2<f64>> {
        let mut out: Vec<Array2<f64>> = self.eq_shapes.iter().map(|s| Array2::zeros(*s)).collect();
        for p in &self.pieces {
            out[p.eq] += &p.apply(y[p.slot].view());
        }
        out
    }

    pub fn adjoint(&self, w: &[Array2<f64>]) -> Vec<Array2<f64>> {
        let mut out: Vec<Array2<f64>> = self.focus_shapes.iter().map(|s| Array2::zeros(*s)).collect();
        for p in &self.pieces {
            out[p.slot] += &p.adjoint(w[p.eq].view());
        }
        out
    }

    /// `C_U(Y) − b_U`.
    pub fn residual(&self, y: &[Array2<f64>]) -> Vec<Array2<f64>> {
        let mut r = self.apply(y);
        for (a, b) in r.iter_mut().zip(&self.offset) {
            *a -= b;
        }
        r
    }

    pub fn with_offset(&self, offset: Vec<Array2<f64>>) -> Self {
        FrozenLinearForm { offset, ..self.clone() }
    }

    pub fn focus_dim(&self) -> usize {
        self.focus_shapes.iter().map(|(r, c)| r * c).sum()
    }

    /// True when no equation couples two different focus slots.
    pub fn is_decoupled(&self) -> bool {
        let mut owner: Vec<Option<usize>> = vec![None; self.eq_shapes.len()];
        for p in &self.pieces {
            match owner[p.eq] {
                None => owner[p.eq] = Some(p.slot),
                Some(s) if s != p.slot => return false,
                _ => {}
            }
        }
        true
    }

    /// Pieces acting on one focus slot.
    pub(crate) fn slot_pieces(&self, slot: usize) -> impl Iterator<Item = &Piece> {
        self.pieces.iter().filter(move |p| p.slot == slot)
    }

    /// Restrict to one focus slot (valid when the form is decoupled).
    pub fn slot(&self, slot: usize) -> FrozenLinearForm {
        FrozenLinearForm {
            focus: vec![self.focus[slot]],
            focus_shapes: vec![self.focus_shapes[slot]],
            eq_shapes: self.eq_shapes.clone(),
            pieces: self
                .pieces
                .iter()
                .filter(|p| p.slot == slot)
                .cloned()
                .map(|mut p| {
                    p.slot = 0;
                    p
                })
                .collect(),
            offset: self.offset.clone(),
        }
    }

    /// Whether every piece touching `slot` acts entrywise, with at most one
    /// piece per equation.
    pub fn slot_is_entrywise(&self, slot: usize) -> bool {
        let mut eqs = BTreeSet::new();
        self.slot_pieces(slot).all(|p| p.is_entrywise() && eqs.insert(p.eq))
    }
}
