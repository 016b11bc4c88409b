//! Deterministic simulator for hierarchical (bi-level) mixture-of-experts
//! routing on a modeled two-tier GPU cluster, side by side with a flat
//! single-level baseline.
//!
//! The crate is organized around the life of a token batch:
//!
//! 1. [`topology`] describes the cluster (n nodes × m GPUs) and builds the
//!    orthogonal intra-node / inter-node process groups.
//! 2. [`router`] computes routing probabilities and picks destinations,
//!    with exact multiply-accumulate counters.
//! 3. [`balance`] scores the routing with the additive load-balancing loss
//!    and provides analytic gradients plus a finite-difference oracle.
//! 4. [`dispatch`] applies capacity limits and lowers routing decisions to
//!    an ordered schedule of collective operations.
//! 5. [`expert`] is the feed-forward payload evaluated at the destination.
//! 6. [`netsim`] prices the collective schedule under launch overhead,
//!    heterogeneous bandwidth, and bisection congestion.
//! 7. [`harness`] composes everything into CLI scenarios that emit CSV.
//!
//! Everything is double precision and seeded; identical inputs produce
//! byte-identical outputs.

pub mod balance;
pub mod dispatch;
pub mod expert;
pub mod harness;
mod mat;
pub mod netsim;
pub mod router;
pub mod topology;

pub use mat::Mat;
