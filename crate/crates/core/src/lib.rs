//! Low-rank gradient optimizers that keep Adam's state in a rank-r subspace.
//!
//! The basis moves by random Grassmannian walks ([`SubspaceStrategy::GrassWalk`]),
//! random jumps ([`SubspaceStrategy::GrassJump`]), SVD refreshes or not at all.
//! Adam moments are rotated into each new basis, and the gradient component
//! outside the subspace is reinjected after columnwise rescaling.

pub mod cli;
pub mod diagnostics;
pub mod harness;
pub mod linalg;
pub mod optimizer;
pub mod recovery;
pub mod rng;
pub mod subspace;

pub use linalg::{LinalgError, Matrix, SvdResult};
pub use optimizer::{AdamHyper, FullAdamState, LowRankAdamState, MemoryFootprint};
pub use recovery::RecoveryState;
pub use rng::SplitMix64;
pub use subspace::{SubspaceState, SubspaceStrategy};
