//! Hidden Markov chains and fields whose observations live in Riemannian
//! manifolds: location-scale emission families on the sphere, the Poincaré
//! disk and the SPD cone, normalized forward-backward recursions, an EM
//! estimator generalizing Baum-Welch, simulators, and exact-enumeration
//! hidden Markov fields on small grids.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiment;
pub mod geometry;
pub mod hmm;
pub mod io;
pub mod mrf;
pub mod numerics;
pub mod oracle;
pub mod sampling;
pub mod special;

pub use error::{Error, Result};
