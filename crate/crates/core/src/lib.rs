//! Online control of multihop energy-harvesting sensor networks that use
//! distributed source coding.
//!
//! The crate models the network and its queues, solves the per-slot
//! rate-distortion and power problems, runs the perturbed drift-plus-penalty
//! controller, computes Lagrangian lower bounds on the optimal cost and drives
//! reproducible simulation experiments.


pub mod bound;
pub mod cost;
pub mod error;
pub mod model;
pub mod policy;
pub mod power;
pub mod rd;
pub mod region;
pub mod side_info;
pub mod sim;


pub use cost::DistortionCost;
pub use error::{Error, Result};
pub use model::{GlobalParams, Link, NetworkGraph, QueueState, SlotDecision, SlotState, Vertex};
pub use policy::{Controller, InvariantReport, PolicyConfig, RdSolver, SideInfoMode, Violation, ViolationKind};
pub use rd::{DistributedOptions, RdProblem, RdSolution, StepRule};
pub use region::RateRegion;
