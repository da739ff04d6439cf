//! Topology-control arena for transmission grids.
//!
//! The crate is organized bottom-up: [`grid`] describes the network and its
//! busbar topologies, [`power_flow`] solves DC flows, [`env`] runs episodes,
//! [`scenario`] produces injection time series, [`agents`] holds the
//! baselines and the episode runner, [`oracle`] computes the offline upper
//! bound over a finite action dictionary and [`report`] turns records into
//! tables.

pub mod agents;
pub mod env;
pub mod grid;
pub mod oracle;
pub mod power_flow;
pub mod report;
pub mod scenario;

pub use agents::{
    discounted_return, run_episode, Agent, AgentFault, ConstantTopologyAgent, DoNothingAgent, EpisodeRecord,
    GreedyAgent, Simulator, StepRecord,
};
pub use env::{EnvError, Environment, Mode, Observation, RuleParams, StepInfo, StepResult};
pub use grid::{load_case, Action, Asset, CaseError, GridCase, Topology, TopologyError};
pub use oracle::{normalized_score, ActionDictionary, OracleError, OracleRecord, RewardMatrix, TopologySpace};
pub use power_flow::{DcModel, Injections, PowerFlowError, PowerFlowResult};
pub use report::{ReportError, ScoreReport};
pub use scenario::{Difficulty, GenerationConfig, Scenario, ScenarioError};
