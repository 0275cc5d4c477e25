//! Interference alignment for partially connected MIMO cellular networks:
//! stream assignment, structured transceiver design, and evaluation.

pub mod allocation;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod feasibility;
pub mod linalg;
pub mod network;
pub mod subspace;
pub mod transceiver;

pub use allocation::{MsPlan, PartialAssignment, StreamAssignment, SubspacePlan};
pub use error::{Error, Result};
pub use evaluation::{DofBoundQuery, Scheme, SchemeOutcome, ThroughputSample};
pub use experiment::{ExperimentSpec, SweepResult};
pub use feasibility::FeasibilityInstance;
pub use linalg::CMatrix;
pub use network::{ChannelSet, ConnectivitySpec, MsId, NetworkConfig, Topology};
pub use subspace::Subspace;
pub use transceiver::{IterationOptions, LeakageReport, TransceiverSet};
