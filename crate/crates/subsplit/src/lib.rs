//! Model-parallel training of feed-forward networks by subnetwork splitting.
//!
//! A deep feed-forward network is cut at layer boundaries into `n`
//! contiguous subnetworks. Each cut introduces an activation variable `p`
//! (the input fed to the next subnetwork) and, for the ADMM-style trainer,
//! an output variable `q` with a dual multiplier `u`. The hard chain
//! constraints are relaxed into quadratic penalties, and training proceeds
//! by alternating minimization over weights, activations, outputs, and
//! duals:
//!
//! * `gsadmm`: augmented-Lagrangian splitting; the output variables have a
//!   closed-form update and the duals take a fixed ascent step.
//! * `gsam`: penalty-only alternating minimization; activation variables
//!   are swept sequentially from input side to output side.
//!
//! Within an epoch every phase decomposes into independent per-subnetwork
//! tasks that touch disjoint state, so phases run on a small thread pool
//! without changing any numeric result. The `verify` module hosts the
//! correctness suite: closed-form optimality of the output update, gradient
//! checks against central finite differences, a loss-gap bound derived from
//! per-layer Lipschitz constants, and the exact reduction to plain SGD when
//! the network is left in one piece.
//!
//! Data layout is row-major with one sample per row; all arithmetic is f64.

pub mod cli;
pub mod data;
pub mod error;
pub mod metrics;
pub mod network;
pub mod optim;
pub mod rng;
pub mod runtime;
pub mod tensor;
pub mod verify;

pub use error::{Error, Result};
pub use network::{Activation, DenseLayer, LossKind, NetworkSpec, Subnetwork};
pub use optim::{AuxMode, AuxState, Hyperparams, InnerOpt, TrainState};
pub use rng::RngState;
pub use tensor::Tensor;
