//! Asymptotic secure key rates for discrete-modulation CV-QKD protocols
//! (4/8/12-PSK and a two-ring 12-state constellation) under trusted noisy
//! heterodyne detection.
//!
//! The pipeline minimizes the quantum relative entropy
//! `D(G(rho_AB) || Z[G(rho_AB)])` over the set of density operators
//! compatible with the observed first and second heterodyne moments,
//! using Frank-Wolfe iterations with dense SDP subproblems, then converts
//! the approximate minimum into a certified lower bound via the dual
//! program. Constellation parameter sweeps and a Gaussian-modulation
//! baseline sit on top.

// keep the BLAS provider linked for ndarray's `blas` feature
use blas_src as _;

pub mod conic;
pub mod constellation;
pub mod error;
pub mod fock;
pub mod linalg;
pub mod quad;
pub mod rate;
pub mod search;
pub mod statistics;

pub use error::{Error, Result};
