//! Self-contained optimization kernels.
//!
//! * [`lp`]: bounded-variable revised simplex (Dantzig pricing with a Bland
//!   fallback) plus a dual simplex used to warm-start re-solves.
//! * [`qp`]: primal active-set method for the proximal master problems
//!   `min (1/2t)||v_P - z||^2 + c'v` under linear constraints.
//! * [`milp`]: best-bound branch-and-bound over binary variables.
//!
//! Everything is dense and sized for problems with at most a few hundred rows.

// Dense kernels index several parallel arrays per loop; `!(a > b)` also rejects NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod brute;
pub mod lp;
pub mod milp;
pub mod qp;
pub mod random;

mod dense;

pub use lp::{solve_lp, LinearProgram, LpSolution, LpStatus, SparseRow};
pub use milp::{solve_milp, MipOptions, MipSolution, MipStatus, MixedIntegerProgram};
pub use qp::{solve_qp, solve_qp_from, QpSolution, QuadraticProgram};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("malformed problem: {0}")]
    Malformed(String),
    #[error("simplex stalled after {iterations} iterations")]
    Stalled { iterations: usize },
    #[error("basis matrix became singular")]
    SingularBasis,
    #[error("quadratic program is infeasible")]
    QpInfeasible,
    #[error("quadratic program is unbounded below")]
    QpUnbounded,
    #[error("active-set method did not converge in {iterations} iterations")]
    QpNoConvergence { iterations: usize },
    #[error("node limit {limit} reached; best bound {bound}, incumbent {incumbent:?}")]
    NodeLimit {
        limit: usize,
        bound: f64,
        incumbent: Option<f64>,
        /// Best integral point found before the limit, if any.
        incumbent_x: Option<Vec<f64>>,
    },
}

pub type Result<T> = std::result::Result<T, KernelError>;
