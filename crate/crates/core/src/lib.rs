//! Finite-lattice PEPS engine for thermal expectation values.
//!
//! Two routes to the same Gibbs averages share one imaginary-time evolution
//! core ([`ntu`], [`trotter`]) and one boundary contraction core
//! ([`zipper`]):
//!
//! * [`sampler`]: minimally entangled typical thermal states, a Markov chain
//!   of evolve / measure / collapse steps;
//! * [`purification`]: a deterministic ancilla purification.
//!
//! [`ed`] provides exact dense results for small lattices.

pub mod checkpoint;
pub mod ed;
pub mod error;
mod linalg;
pub mod metts;
pub mod models;
pub mod ntu;
pub mod observables;
pub mod peps;
pub mod purification;
pub mod stats;
pub mod sampler;
pub mod tensor;
pub mod trotter;
pub mod zipper;

pub use error::{Error, Result};
pub use tensor::{contract, qr_split, svd_truncated, SvdResult, Tensor};
