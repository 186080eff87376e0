//! Block-coordinate ADMM for problems with multiaffine constraints.

pub mod conv;
pub mod diagnostics;
pub mod error;
pub mod linalg;
pub mod linop;
pub mod multiaffine;
pub mod prox;
pub mod solver;
pub mod zoo;

pub use error::{Error, Result};
pub use multiaffine::{Assignment, BlockId, BlockSpec, Factor, FrozenLinearForm, MultiaffineSystem, Role, Sign, Term, TermKind};
