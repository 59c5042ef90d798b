//! Command-line front end.
//!
//! Exit codes: 0 success, 1 domain violation or infeasibility, 2 usage or
//! parse error.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::dispatch::RuleBasedDispatch;
use crate::model::validate_network;
use crate::optimizer::{optimize, FitnessWeights};
use crate::planner::{plan_cascade, PlanConstraints};
use crate::scenario::{
    bundled_scenario_with, energy_estimates, load_scenario, load_terrain_csv, parse_override,
    write_evaluation_log, write_results, Scenario, ScenarioError, BUNDLED_NAME,
};
use crate::simulation::{run_simulation, summarize, SimulationError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DOMAIN: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "cpmhs", version, about = "Cascade pumped micro-hydro storage toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    /// Scenario JSON file, or `bundled` for the Mountain Lake case study.
    #[arg(long)]
    pub scenario: String,
    /// Override a scenario field, e.g. `reservoirs.mountain.volume_init_m3=0`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a scenario's network and print the violation report.
    Validate(ScenarioArgs),
    /// Stored-energy estimate (η = 1) from each root reservoir to every lower lake.
    EstimateEnergy(ScenarioArgs),
    /// Run the full time series and write steps.csv, reservoirs.csv, summary.json.
    Simulate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Print the dispatch decision taken at one step of a simulation.
    Dispatch {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value_t = 0)]
        step: usize,
    },
    /// Place intermediate reservoirs along a terrain profile.
    Plan {
        /// CSV with header `distance_km,elevation_m`.
        #[arg(long)]
        terrain: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        segment_max_km: f64,
        #[arg(long, default_value_t = 5.0)]
        head_min_m: f64,
    },
    /// Search the scenario's configuration space for the lowest fitness.
    Optimize {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value_t = 64)]
        budget: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for evaluations.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
    fn domain(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_DOMAIN,
            message: message.into(),
        }
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        if e.is_parse_error() {
            Failure::usage(e.to_string())
        } else {
            Failure::domain(e.to_string())
        }
    }
}

impl From<SimulationError> for Failure {
    fn from(e: SimulationError) -> Self {
        Failure::domain(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::usage(e.to_string())
    }
}

type CmdResult = Result<i32, Failure>;

fn load(args: &ScenarioArgs) -> Result<Scenario, Failure> {
    let overrides = args
        .overrides
        .iter()
        .map(|s| parse_override(s))
        .collect::<Result<Vec<_>, _>>()?;
    let scenario = if args.scenario == "bundled" || args.scenario == BUNDLED_NAME {
        bundled_scenario_with(&overrides)?
    } else {
        load_scenario(Path::new(&args.scenario), &overrides)?
    };
    Ok(scenario)
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK {
                write!(out, "{text}")
            } else {
                write!(err, "{text}")
            };
            return code;
        }
    };
    match execute(&cli.command, out) {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message.trim_end());
            f.code
        }
    }
}

fn execute(command: &Command, out: &mut dyn Write) -> CmdResult {
    match command {
        Command::Validate(args) => cmd_validate(args, out),
        Command::EstimateEnergy(args) => cmd_estimate_energy(args, out),
        Command::Simulate { scenario, out: dir } => cmd_simulate(scenario, dir, out),
        Command::Dispatch { scenario, step } => cmd_dispatch(scenario, *step, out),
        Command::Plan {
            terrain,
            segment_max_km,
            head_min_m,
        } => cmd_plan(terrain, *segment_max_km, *head_min_m, out),
        Command::Optimize {
            scenario,
            budget,
            seed,
            out: dir,
        } => cmd_optimize(scenario, *budget, *seed, dir.as_deref(), out),
    }
}

fn cmd_validate(args: &ScenarioArgs, out: &mut dyn Write) -> CmdResult {
    let scenario = match load(args) {
        Ok(s) => s,
        Err(f) if f.code == EXIT_DOMAIN => {
            write!(out, "{}", f.message)?;
            if !f.message.ends_with('\n') {
                writeln!(out)?;
            }
            return Ok(EXIT_DOMAIN);
        }
        Err(f) => return Err(f),
    };
    let report = validate_network(&scenario.network);
    write!(out, "{report}")?;
    Ok(if report.is_valid() { EXIT_OK } else { EXIT_DOMAIN })
}

fn cmd_estimate_energy(args: &ScenarioArgs, out: &mut dyn Write) -> CmdResult {
    let scenario = load(args)?;
    writeln!(
        out,
        "upper,lower,head_m,upper_volume_m3,derived_gwh,reference_gwh,reference_over_derived"
    )?;
    for e in energy_estimates(&scenario) {
        let (reference, ratio) = match e.reference_gwh {
            Some(r) if e.estimate.gwh > 0.0 => (format!("{r:.4}"), format!("{:.4}", r / e.estimate.gwh)),
            Some(r) => (format!("{r:.4}"), "-".into()),
            None => ("-".into(), "-".into()),
        };
        writeln!(
            out,
            "{},{},{:.2},{},{:.4},{},{}",
            e.upper_id, e.lower_id, e.head_m, e.volume_m3, e.estimate.gwh, reference, ratio
        )?;
    }
    Ok(EXIT_OK)
}

fn cmd_simulate(args: &ScenarioArgs, dir: &Path, out: &mut dyn Write) -> CmdResult {
    let scenario = load(args)?;
    let run = run_simulation(&scenario.network, &RuleBasedDispatch, &scenario.series, scenario.dt_s)?;
    let summary = summarize(&scenario.network, &run);
    let paths = write_results(&scenario.name, &scenario.network, &run, &summary, dir)?;
    writeln!(out, "steps: {}", summary.steps)?;
    writeln!(out, "generated_wh: {}", summary.generated_wh)?;
    writeln!(out, "pumped_wh: {}", summary.pumped_wh)?;
    writeln!(out, "imported_wh: {}", summary.imported_wh)?;
    writeln!(out, "exported_wh: {}", summary.exported_wh)?;
    writeln!(out, "unserved_wh: {}", summary.unserved_wh)?;
    writeln!(out, "spilled_m3: {}", summary.spilled_m3)?;
    for p in paths {
        writeln!(out, "wrote {}", p.display())?;
    }
    Ok(EXIT_OK)
}

fn cmd_dispatch(args: &ScenarioArgs, step: usize, out: &mut dyn Write) -> CmdResult {
    let scenario = load(args)?;
    let n = scenario.series.len();
    if step >= n {
        return Err(Failure::usage(format!("step {step} is outside the series (length {n})")));
    }
    let mut series = scenario.series.clone();
    series.load = truncate(&series.load, step + 1);
    series.renewable = truncate(&series.renewable, step + 1);
    for s in series.inflows.values_mut() {
        *s = truncate(s, step + 1);
    }
    let run = run_simulation(&scenario.network, &RuleBasedDispatch, &series, scenario.dt_s)?;
    let r = run.records.last().expect("at least one step");
    let before = if step == 0 {
        run.initial.clone()
    } else {
        run.records[step - 1].reservoirs.clone()
    };
    writeln!(out, "step: {step}")?;
    writeln!(out, "net_load_w: {}", r.load_w - r.renewable_w)?;
    for (s, f) in scenario.network.stages().iter().zip(&r.stages) {
        let action = if f.q_turbine_m3s > 0.0 {
            format!("generate q_m3s={} p_w={}", f.q_turbine_m3s, f.p_gen_w)
        } else if f.q_pump_m3s > 0.0 {
            format!("pump q_m3s={} p_w={}", f.q_pump_m3s, f.p_pump_w)
        } else {
            "idle".to_string()
        };
        writeln!(out, "stage {}: {action}", s.id)?;
    }
    writeln!(out, "grid_import_w: {}", r.grid_import_w)?;
    writeln!(out, "grid_export_w: {}", r.grid_export_w)?;
    writeln!(out, "unserved_w: {}", r.unserved_w)?;
    writeln!(out, "curtailed_w: {}", r.curtailed_w)?;
    for ((res, a), b) in scenario.network.reservoirs().iter().zip(&before).zip(&r.reservoirs) {
        writeln!(out, "reservoir {}: {} -> {} m3", res.id, a.volume_m3, b.volume_m3)?;
    }
    Ok(EXIT_OK)
}

fn truncate(series: &crate::model::TimeSeries, len: usize) -> crate::model::TimeSeries {
    crate::model::TimeSeries::new(series.step_seconds(), series.unit(), series.values()[..len].to_vec())
        .expect("prefix of a valid series is valid")
}

fn cmd_plan(terrain: &Path, segment_max_km: f64, head_min_m: f64, out: &mut dyn Write) -> CmdResult {
    let profile = load_terrain_csv(terrain)?;
    let constraints = PlanConstraints {
        segment_max_km,
        head_min_m,
        ..PlanConstraints::default()
    };
    let plan = plan_cascade(&profile, &constraints).map_err(|e| match e {
        crate::planner::PlanError::Constraints(_) => Failure::usage(e.to_string()),
        _ => Failure::domain(e.to_string()),
    })?;
    writeln!(out, "intermediates: {}", plan.n_intermediate)?;
    writeln!(out, "stages: {}", plan.segments.len())?;
    writeln!(out, "total_head_m: {:.4}", plan.total_head_m)?;
    writeln!(out, "min_segment_head_m: {:.4}", plan.min_segment_head_m())?;
    for (k, site) in plan.sites.iter().enumerate() {
        writeln!(
            out,
            "site {}: distance_km={:.4} elevation_m={:.4}",
            k + 1,
            site.distance_km,
            site.elevation_m
        )?;
    }
    for (k, seg) in plan.segments.iter().enumerate() {
        writeln!(out, "segment {}: span_km={:.4} head_m={:.4}", k + 1, seg.span_km, seg.head_m)?;
    }
    Ok(EXIT_OK)
}

fn cmd_optimize(
    args: &ScenarioArgs,
    budget: usize,
    seed: u64,
    dir: Option<&Path>,
    out: &mut dyn Write,
) -> CmdResult {
    let scenario = load(args)?;
    let space = scenario
        .search_space
        .clone()
        .ok_or_else(|| Failure::usage("scenario has no search_space"))?;
    let weights = scenario.weights.unwrap_or_else(FitnessWeights::default);
    let result = optimize(&space, &scenario, &weights, budget, seed)
        .map_err(|e| Failure::usage(e.to_string()))?;
    writeln!(
        out,
        "evaluations: {} ({})",
        result.log.len(),
        if result.exhaustive { "exhaustive" } else { "sampled" }
    )?;
    let describe = |c: &crate::optimizer::Configuration| {
        let mut parts: Vec<String> = c
            .n_intermediate
            .iter()
            .map(|(b, n)| format!("n_intermediate_{b}={n}"))
            .collect();
        parts.push(format!("intermediate_volume_max_m3={}", c.intermediate_volume_max_m3));
        parts.push(format!("q_turbine_max_m3s={}", c.q_turbine_max_m3s));
        parts.push(format!("p_pump_max_w={}", c.p_pump_max_w));
        parts.join(" ")
    };
    for e in &result.log {
        writeln!(out, "eval index={} fitness={} {}", e.index, e.fitness, describe(&e.config))?;
    }
    writeln!(
        out,
        "best index={} fitness={} {}",
        result.best_index,
        result.fitness,
        describe(&result.best)
    )?;
    if let Some(dir) = dir {
        let path = dir.join("evaluations.csv");
        write_evaluation_log(&result, &path)?;
        writeln!(out, "wrote {}", path.display())?;
    }
    Ok(if result.fitness.is_finite() { EXIT_OK } else { EXIT_DOMAIN })
}
