//! Ready-made formulations whose block subproblems all have closed forms,
//! plus synthetic data generators with planted solutions.

pub mod defaults;
mod factorization;
mod maxcut;
mod portfolio;
pub mod rpca;
mod sbd;

use std::collections::BTreeMap;

use ndarray::{array, Array2};

use crate::error::{Error, Result};
use crate::linalg::blocks_norm;
use crate::multiaffine::{Assignment, BlockId, MultiaffineSystem, Role, Term};
use crate::prox::ObjectiveTerm;
use crate::solver::{Problem, SolverState};

pub use defaults::{default_instance, random_graph};
pub use factorization::{dl3, dl3_weighted, nmf3, planted_dictionary, planted_nmf, Planted};
pub use maxcut::{brute_force_max_cut, cut_value, mc1, rounded_cut, Edge};
pub use portfolio::{parity_spread, random_spd, rp2};
pub use rpca::{planted_rpca, rpca2, rpca2_raw, rpca2_slack, Rpca2, RpcaData};
pub use sbd::{gen_sbd_data, sbd0, sbd1, SbdData};

#[derive(Clone, Debug)]
pub struct ZooInstance {
    pub problem: Problem,
    /// A feasible assignment with a known structure, when one exists.
    pub ground_truth: Option<Assignment>,
    pub metadata: BTreeMap<String, f64>,
    /// The formulation is known to break the convergence assumptions.
    pub assumptions_violated: bool,
    /// Blocks deliberately solved iteratively, with the reason.
    pub iterative_blocks: Vec<(String, String)>,
}

impl ZooInstance {
    fn new(problem: Problem) -> Self {
        ZooInstance {
            problem,
            ground_truth: None,
            metadata: BTreeMap::new(),
            assumptions_violated: false,
            iterative_blocks: Vec::new(),
        }
    }

    fn meta(mut self, entries: &[(&str, f64)]) -> Self {
        for (k, v) in entries {
            self.metadata.insert((*k).to_string(), *v);
        }
        self
    }

    pub fn block(&self, name: &str) -> BlockId {
        self.problem.system.block_id(name).unwrap_or_else(|| panic!("zoo instance has no block `{name}`"))
    }

    pub fn value<'a>(&self, state: &'a SolverState, name: &str) -> &'a Array2<f64> {
        &state.values[self.block(name).0]
    }

    /// Installs a ground truth given by name; unnamed blocks are zero. Fails
    /// when the assignment is not feasible to 1e-10.
    pub fn with_ground_truth(mut self, named: &[(&str, Array2<f64>)]) -> Result<Self> {
        let mut asg: Assignment = self.problem.system.block_shapes().into_iter().map(Array2::zeros).collect();
        for (name, v) in named {
            let id = self.problem.system.block_id(name).ok_or_else(|| Error::UnknownBlock((*name).to_string()))?;
            asg[id.0] = v.clone();
        }
        let res = blocks_norm(&self.problem.system.evaluate(&asg)?);
        if res > 1e-10 {
            return Err(Error::InvalidArgument(format!("ground truth violates the constraints by {res:e}")));
        }
        self.ground_truth = Some(asg);
        Ok(self)
    }
}

/// `min x² + y²  s.t.  xy = 1` with both variables as primal blocks and no
/// final group. A zero iterate traps ADMM at the origin.
pub fn counterexample() -> Problem {
    let mut b = MultiaffineSystem::builder();
    let x = b.block("x", Role::X(0), (1, 1));
    let y = b.block("y", Role::X(1), (1, 1));
    b.equation((1, 1), vec![Term::product(x, y), Term::constant(array![[1.0]]).neg()]);
    let sys = b.build().expect("static system");
    let obj = vec![ObjectiveTerm::quadratic(x, 2.0, array![[0.0]]), ObjectiveTerm::quadratic(y, 2.0, array![[0.0]])];
    Problem::new("counterexample", sys, obj, vec![x, y], vec![]).expect("static problem")
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")))
    }
}

fn randn(shape: (usize, usize), rng: &mut rand_chacha::ChaCha8Rng) -> Array2<f64> {
    use rand_distr::{Distribution, StandardNormal};
    Array2::from_shape_fn(shape, |_| StandardNormal.sample(rng))
}

#[cfg(test)]
mod tests;
