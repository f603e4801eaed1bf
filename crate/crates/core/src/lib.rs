//! Cooperative reach-while-avoid certificates for multi-agent systems with
//! distance-limited neighborhoods: neural certificate training,
//! branch-and-bound verification, counterexample-guided synthesis and
//! transfer to larger systems.

pub mod cegis;
pub mod certificate;
pub mod dynamics;
pub mod network;
pub mod optim;
pub mod pipeline;
pub mod scenario;
pub mod sets;
pub mod sim;
pub mod system;
pub mod topology;
pub mod transfer;
pub mod training;

pub use certificate::{CoRwaCertificate, Slacks};
pub use dynamics::DynamicsModel;
pub use nalgebra::DMatrix;
pub use network::{Activation, FeedForwardNet, Interval, IntervalBox};
pub use system::{AgentSpec, ExoSpec, System};
pub use topology::{JointState, SystemTopology};
pub mod verifier;

#[cfg(test)]
pub(crate) mod testutil;
