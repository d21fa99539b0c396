//! Multi-agent traffic signal control with neighbour-corrected rewards.

pub mod agent;
pub mod attention;
pub mod baselines;
pub mod coordination;
pub mod harness;
pub mod rng;
pub mod roadnet;
pub mod simulator;

pub use agent::{AgentConfig, AgentError, LocalView, QArch, QFunction, TargetQFunction, Transition};
pub use coordination::{CoordinationConfig, CoordinationError};
pub use harness::{ExperimentConfig, HarnessError, Method, MetricsRow, RunManifest, ScenarioConfig};
pub use roadnet::{FlowSpec, RoadNetwork, RoadnetError, SyntheticSpec};
pub use simulator::{SimConfig, SimError, SimState};
