//! Similarity search over discrete probability distributions under the
//! Earth Mover's Distance (EMD).
//!
//! The crate provides three layers:
//!
//! * exact EMD between discrete distributions (transportation simplex),
//! * cheap lower bounds on the EMD built from 1-D projections and normal
//!   approximations of the projected distributions, and
//! * a dominance-space quad-tree index with a threshold-style K-NN engine
//!   that prunes candidates with those bounds and refines survivors with
//!   the exact distance, returning exact nearest neighbours.
//!
//! Every pruning bound is paired with an independent oracle in [`oracle`]
//! so soundness can be checked mechanically.

// Negated comparisons like `!(x > 0.0)` are deliberate: they treat NaN as
// out of range, which the suggested `x <= 0.0` would silently accept.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod distribution;
pub mod dominance;
pub mod emd;
pub mod error;
pub mod index;
pub mod normal;
pub mod oracle;
mod par;
pub mod projection;
pub mod quadtree;
pub mod query;
pub mod synthetic;

pub use distribution::{CostMatrix, DiscreteDistribution, Flow};
pub use emd::{exact_emd, exact_emd_with_flow};
pub use error::{Error, Result};
