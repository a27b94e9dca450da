//! MDP-based cell selection for mmWave cellular networks.
//!
//! Every UE–BS link follows the same K-state Markov chain (outage / NLOS / LOS
//! by default). Each UE solves a discounted MDP over a symmetry-reduced state
//! made of its serving connection and the multiset of neighbor connections,
//! where every connection is a (channel state, cell load) pair. The multi-user
//! problem is handled by round-robin best responses, each UE modelling the
//! others through their policies averaged over the stationary channel law.
//!
//! The crate also ships the comparison baselines (least-load, best-rate,
//! best-channel and a centralized exhaustive search) and a slot-level Monte
//! Carlo simulator that evaluates any of them on the ground-truth system.

pub mod baselines;
pub mod channel;
pub mod error;
pub mod mdp;
pub mod multiuser;
pub mod profile_io;
pub mod rng;
pub mod simulator;
pub mod state_space;

pub use channel::{ChannelMatrix, ChannelState, RateTable};
pub use error::{Error, Result};
pub use mdp::{DeterministicPolicy, Kernel, RewardTable, SolverParams, ValueFunction};
pub use multiuser::{Environment, PolicyProfile};
pub use simulator::{Metrics, SchemeKind, SimConfig};
pub use state_space::{Connection, StateSpace, SystemState};

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
