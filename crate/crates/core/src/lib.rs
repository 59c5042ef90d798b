//! Cascade pumped micro-hydro storage toolkit.
//!
//! A cascade is a chain (or tree) of reservoirs at descending elevations,
//! linked by reversible pump/turbine stages. The crate simulates its water
//! balance under load and renewable time series, dispatches stages with a
//! rule-based controller, places intermediate reservoirs along a terrain
//! profile, and searches configurations against a weighted fitness.

pub mod cli;
pub mod dispatch;
pub mod hydraulics;
pub mod model;
pub mod optimizer;
pub mod planner;
pub mod scenario;
pub mod simulation;

pub use dispatch::{dispatch_step, DispatchDecision, DispatchPolicy, RuleBasedDispatch, StageAction};
pub use model::{
    derive_head, validate_network, CascadeNetwork, GridLimits, PhysicalConstants, Reservoir,
    SeriesUnit, Stage, TimeSeries, ValidationReport, Violation,
};
pub use simulation::{
    mass_balance_report, run_simulation, step_reservoir, summarize, ReservoirState, SeriesSet,
    SimulationError, SimulationRun, StepRecord, Summary,
};
pub use optimizer::{optimize, Configuration, FitnessWeights, OptimizationResult, SearchSpace};
pub use planner::{plan_cascade, CascadePlan, PlanConstraints, TerrainProfile};
pub use scenario::{bundled_mountain_lake_scenario, load_scenario, load_timeseries_csv, Scenario};
