//! Residual-error based sparse extreme learning machines.
//!
//! The crate is organised bottom-up:
//!
//! * [`linalg`]: one-sided Jacobi SVD, truncated pseudoinverse, the
//!   pseudo-identity `H†H`, the residual-error functional and per-column
//!   relative errors.
//! * [`elm`]: random hidden layers, design matrices, ridge output weights and
//!   prediction.
//! * [`pruning`]: greedy residual-error neuron selection (RES-ELM) and the
//!   random-pruning baseline (RP-ELM).
//! * [`dataio`]: functional-connectivity vectors, age binarisation,
//!   normalisation, synthetic data and CSV/JSON formats.
//! * [`harness`]: repeated-split experiments, grid sweeps, paired t-tests,
//!   diagnostics and modality attribution.
//! * [`verify`]: randomized property suites for residual-error monotonicity
//!   and eigenvalue interlacing.
//! * [`model_io`]: the single-file model format.
//!
//! Data-parallel loops go through [`exec`]; building without the default
//! `parallel` feature makes every loop sequential.

pub mod dataio;
pub mod elm;
pub mod error;
pub mod exec;
pub mod harness;
pub mod linalg;
pub mod model_io;
pub mod pruning;
pub mod seeds;
pub mod verify;

pub use error::{Error, Result};
pub use nalgebra::{DMatrix, DVector};
