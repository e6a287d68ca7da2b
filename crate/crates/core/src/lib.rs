//! Unrolled projected-gradient-descent networks for constrained optimization,
//! instantiated as a weighted sum-rate maximizer for downlink multiuser
//! systems with finite-blocklength transmission.
//!
//! The crate is organized around the pipeline:
//!
//! * [`autodiff`] — dense real tensors, a reverse-mode tape, and Adam.
//! * [`fbl`] — finite-blocklength link math: channels, SINR, dispersion,
//!   rates, and the MMSE receive beamformer.
//! * [`proj`] — the split of constraints into a directly-projected set and a
//!   penalized set, with the exact projection and the violation metric.
//! * [`hwgcn`] — polynomial graph-filter networks over the channel/beamformer
//!   coupling graph.
//! * [`unroll`] — one unrolled PGD layer and the stacked network with
//!   analytic beamformer updates between layers.
//! * [`learn`] — unsupervised primal-dual training with a multi-task loss.
//! * [`cost`] — closed-form flop counts for the unrolled model and the
//!   iterative baseline.
//! * [`harness`] — datasets, evaluation reports, a brute-force grid oracle,
//!   and the run-configuration format used by the CLI.

pub mod autodiff;
pub mod cost;
pub mod fbl;
pub mod harness;
pub mod hwgcn;
pub mod learn;
pub mod proj;
pub mod unroll;

pub use autodiff::{adam_step, AdamState, Grads, Tape, Tensor, Var};
pub use fbl::{Beamformers, CMat, Geometry, Realization, SystemParams};
pub use proj::{C1Spec, C2Evaluator, OptVector};
pub use unroll::{UpgdLayer, UsrmNet};

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument violated a precondition of the operation.
    #[error("contract violation: {0}")]
    Contract(String),
    /// An input left the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// A non-finite value appeared during numeric evaluation.
    #[error("numeric error at node {node}: {msg}")]
    Numeric { node: usize, msg: String },
    /// The requested feasible region is empty.
    #[error("infeasible: {0}")]
    Infeasible(String),
    /// A projection hit a constraint with a vanishing gradient.
    #[error("degenerate constraint: {0}")]
    Degenerate(String),
    /// File or serialization failure.
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
