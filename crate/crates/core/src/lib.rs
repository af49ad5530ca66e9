//! Simulator and analytic toolkit for synchronization in dissipative XX qubit
//! chains under amplitude-damping noise.
//!
//! The library is organized around the conserved excitation number of the XX
//! model: [`hilbert`] manages sector-truncated bases and sparse operators,
//! [`dfs`] enumerates the decoherence-free subspace from a gcd condition and
//! builds its dark eigenstates, [`dynamics`] integrates the GKLS master
//! equation on the truncated density matrix, [`observables`] measures
//! synchronization (Pearson coefficient, frequency spectrum) and edge-qubit
//! entanglement (concurrence), and [`predictor`] evaluates the closed-form
//! asymptotic dynamics on the dark subspace together with an independent
//! Liouvillian peripheral-spectrum oracle.

pub mod dfs;
pub mod dynamics;
pub mod error;
pub mod hilbert;
pub mod observables;
pub mod predictor;

pub use error::{Error, Result};

// Force the link against the system BLAS/LAPACK the workspace pins.
extern crate openblas_src;
