//! Multistage adaptive robust LPs solved through causal affine state rules.
//!
//! The multistage problem becomes a two-stage problem over the aggregated
//! first stage `xhat = (x, P_t, q_t)` ([`transform`]). Its worst-case
//! recourse is evaluated by KKT/big-M MILPs ([`adversarial`]) and minimized
//! with a proximal bundle method ([`bundle`]). [`lowerbound`] certifies the
//! result with a scenario-tree relaxation, and [`oracle`] recomputes
//! everything by enumeration on small instances.

// Dense kernels index several parallel arrays per loop; `!(a > b)` also rejects NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod adversarial;
pub mod bundle;
pub mod inventory;
pub mod lowerbound;
pub mod model;
pub mod oracle;
pub mod transform;

pub use model::{load_instance, save_instance, validate, Instance, Matrix, Polytope, StageData};
pub use transform::{build_two_stage, TwoStageProblem, XhatIndex};
