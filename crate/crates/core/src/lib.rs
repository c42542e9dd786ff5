//! Co-simulation of a connected-vehicle intersection: vehicles broadcast
//! cooperative awareness messages over a two-ray radio channel, an adaptive
//! signal controller acts on whatever arrives, and an optional estimator
//! extrapolates vehicles whose messages were lost.
//!
//! A single run is [`engine::run`]; a matrix of conditions and replications
//! is [`experiment::execute`].

pub mod error;
pub mod rng;
pub mod scenario;
pub mod traffic;
pub mod channel;
pub mod controller;
pub mod estimator;
pub mod engine;
pub mod analytics;
pub mod experiment;

pub use analytics::{ConditionSummary, RunSummary, SgSummary};
pub use channel::{CamMessage, CommsCounters, Scope};
pub use controller::{Report, ReportRegistry};
pub use engine::{run, RunConfig, RunMetrics, RunOutputs, TraceLevel};
pub use error::{ScenarioError, SimError};
pub use experiment::{ExperimentPlan, ExperimentResult};
pub use scenario::{Approach, Condition, Environment, Intersection, Scenario};
