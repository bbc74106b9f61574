//! Dynamic pickup-and-delivery dispatching laboratory.
//!
//! Orders arrive over a simulated day and must be assigned immediately to a
//! vehicle whose route absorbs the order's pickup and delivery under time
//! window, capacity, LIFO loading and back-to-depot rules. The crate provides
//! the insertion route planner, spatial-temporal demand scoring, the
//! per-order decision process, a graph-attention Double-DQN dispatcher,
//! greedy baselines and an exact branch-and-bound oracle.
//!
//! Numeric modules are generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the double-precision versions used by the simulator.

pub mod baselines_exact;
pub mod env;
pub mod harness;
pub mod instance;
pub mod neural;
pub mod policy;
pub mod routing;
pub mod scalar;
pub mod st_demand;

pub use scalar::Scalar;

pub type Real = f64;

pub type DemandGrid = st_demand::StdMatrix<Real>;

pub type Tensor = neural::Tensor2<Real>;

pub type QNet = policy::QNetwork<Real>;

pub type DqnTrainer = policy::Trainer<Real>;

pub type LearnedDispatch = policy::LearnedPolicy<Real>;
