//! Time-stepped water balance.
//!
//! Each step carries the previous volume forward less the loss fraction α,
//! then adds `(q_in + natural_inflow - q_out) * dt`. Overfill is spilled and
//! counted; underfill is an error because dispatch is expected to keep every
//! release within the water actually available.

use std::collections::BTreeMap;

use crate::dispatch::{DispatchPolicy, StageAction};
use crate::model::{validate_network, CascadeNetwork, Reservoir, TimeSeries, ValidationReport};

/// Default step length, s.
pub const DEFAULT_DT_S: f64 = 3600.0;

/// Seconds per hour, for W·step → Wh conversion.
const SECONDS_PER_HOUR: f64 = 3600.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimulationError {
    #[error("reservoir {reservoir_id} would fall to {volume_m3} m³, below its minimum {min_m3} m³{}", step_suffix(.step))]
    Infeasible {
        step: Option<usize>,
        reservoir_id: String,
        volume_m3: f64,
        min_m3: f64,
    },
    #[error("invalid flow input: {0}")]
    InvalidFlow(String),
    #[error("network failed validation:\n{0}")]
    InvalidNetwork(ValidationReport),
    #[error("time series mismatch: {0}")]
    Series(String),
}

fn step_suffix(step: &Option<usize>) -> String {
    step.map(|s| format!(" at step {s}")).unwrap_or_default()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReservoirState {
    pub volume_m3: f64,
    pub spilled_m3_cum: f64,
    pub evap_leak_m3_cum: f64,
}

impl ReservoirState {
    pub fn initial(reservoir: &Reservoir) -> Self {
        Self {
            volume_m3: reservoir.volume_init_m3,
            spilled_m3_cum: 0.0,
            evap_leak_m3_cum: 0.0,
        }
    }
}

/// Volume carried into the next step and the α-loss taken from it.
///
/// The loss never eats into storage below `volume_min_m3`; unbounded
/// reservoirs lose nothing.
pub fn carried_volume(reservoir: &Reservoir, volume_m3: f64) -> (f64, f64) {
    let above_min = (volume_m3 - reservoir.volume_min_m3).max(0.0);
    let loss = (reservoir.loss_alpha * volume_m3).clamp(0.0, above_min);
    let loss = if loss.is_finite() { loss } else { 0.0 };
    (volume_m3 - loss, loss)
}

/// Advances one reservoir by one step.
pub fn step_reservoir(
    state: &ReservoirState,
    reservoir: &Reservoir,
    q_in_m3s: f64,
    q_out_m3s: f64,
    natural_inflow_m3s: f64,
    dt_s: f64,
) -> Result<ReservoirState, SimulationError> {
    for (name, v) in [
        ("q_in_m3s", q_in_m3s),
        ("q_out_m3s", q_out_m3s),
        ("natural_inflow_m3s", natural_inflow_m3s),
    ] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(SimulationError::InvalidFlow(format!("{name} = {v}")));
        }
    }
    if !(dt_s > 0.0 && dt_s.is_finite()) {
        return Err(SimulationError::InvalidFlow(format!("dt_s = {dt_s}")));
    }

    let (carried, loss) = carried_volume(reservoir, state.volume_m3);
    let inflow = (q_in_m3s + natural_inflow_m3s) * dt_s;
    let outflow = q_out_m3s * dt_s;
    let mut volume = carried + inflow - outflow;
    let mut spilled = 0.0;

    if volume > reservoir.volume_max_m3 {
        spilled = volume - reservoir.volume_max_m3;
        volume = reservoir.volume_max_m3;
    } else if volume < reservoir.volume_min_m3 {
        // Rounding in the dispatch arithmetic can land a hair under the bound.
        let scale = carried.abs().max(inflow).max(outflow).max(1.0);
        if reservoir.volume_min_m3 - volume > 1e-9 * scale {
            return Err(SimulationError::Infeasible {
                step: None,
                reservoir_id: reservoir.id.clone(),
                volume_m3: volume,
                min_m3: reservoir.volume_min_m3,
            });
        }
        volume = reservoir.volume_min_m3;
    }

    Ok(ReservoirState {
        volume_m3: volume,
        spilled_m3_cum: state.spilled_m3_cum + spilled,
        evap_leak_m3_cum: state.evap_leak_m3_cum + loss,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StageFlows {
    pub q_turbine_m3s: f64,
    pub q_pump_m3s: f64,
    pub p_gen_w: f64,
    pub p_pump_w: f64,
}

impl From<&StageAction> for StageFlows {
    fn from(action: &StageAction) -> Self {
        Self {
            q_turbine_m3s: action.q_turbine_m3s(),
            q_pump_m3s: action.q_pump_m3s(),
            p_gen_w: action.generation_w(),
            p_pump_w: action.pumping_w(),
        }
    }
}

/// Everything that happened during one step. Reservoir snapshots are taken at
/// the end of the step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step_index: usize,
    pub load_w: f64,
    pub renewable_w: f64,
    pub reservoirs: Vec<ReservoirState>,
    pub natural_inflow_m3s: Vec<f64>,
    pub stages: Vec<StageFlows>,
    pub grid_import_w: f64,
    pub grid_export_w: f64,
    pub unserved_w: f64,
    pub curtailed_w: f64,
}

impl StepRecord {
    pub fn generation_w(&self) -> f64 {
        self.stages.iter().map(|s| s.p_gen_w).sum()
    }

    pub fn pumping_w(&self) -> f64 {
        self.stages.iter().map(|s| s.p_pump_w).sum()
    }

    /// Supply minus demand; zero up to rounding when the step balances.
    pub fn power_imbalance_w(&self) -> f64 {
        let supply = self.renewable_w + self.generation_w() + self.grid_import_w;
        let demand = self.load_w
            + self.pumping_w()
            + self.grid_export_w
            + self.curtailed_w
            + self.unserved_w;
        supply - demand
    }
}

/// Exogenous inputs of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesSet {
    pub load: TimeSeries,
    pub renewable: TimeSeries,
    /// Natural inflow series keyed by the id reservoirs refer to.
    pub inflows: BTreeMap<String, TimeSeries>,
}

impl SeriesSet {
    pub fn len(&self) -> usize {
        self.load.len()
    }

    pub fn is_empty(&self) -> bool {
        self.load.is_empty()
    }

    /// All series share one length and step.
    pub fn check_consistent(&self, dt_s: f64) -> Result<(), SimulationError> {
        let n = self.load.len();
        let mut all = vec![("load", &self.load), ("renewable", &self.renewable)];
        all.extend(self.inflows.iter().map(|(k, v)| (k.as_str(), v)));
        for (name, s) in all {
            if s.len() != n {
                return Err(SimulationError::Series(format!(
                    "series {name} has {} steps, load has {n}",
                    s.len()
                )));
            }
            if s.step_seconds() != dt_s {
                return Err(SimulationError::Series(format!(
                    "series {name} has step {} s, run uses {dt_s} s",
                    s.step_seconds()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationRun {
    pub dt_s: f64,
    pub initial: Vec<ReservoirState>,
    pub records: Vec<StepRecord>,
}

impl SimulationRun {
    pub fn final_states(&self) -> &[ReservoirState] {
        self.records
            .last()
            .map(|r| r.reservoirs.as_slice())
            .unwrap_or(&self.initial)
    }
}

/// Runs `policy` over every step of `series`.
pub fn run_simulation(
    network: &CascadeNetwork,
    policy: &impl DispatchPolicy,
    series: &SeriesSet,
    dt_s: f64,
) -> Result<SimulationRun, SimulationError> {
    let report = validate_network(network);
    if !report.is_valid() {
        return Err(SimulationError::InvalidNetwork(report));
    }
    series.check_consistent(dt_s)?;

    let inflow_series: Vec<Option<&TimeSeries>> = network
        .reservoirs()
        .iter()
        .map(|r| match &r.natural_inflow_id {
            None => Ok(None),
            Some(id) => series.inflows.get(id).map(Some).ok_or_else(|| {
                SimulationError::Series(format!(
                    "reservoir {} refers to missing inflow series {id}",
                    r.id
                ))
            }),
        })
        .collect::<Result<_, _>>()?;

    let n_res = network.reservoirs().len();
    let initial: Vec<ReservoirState> = network
        .reservoirs()
        .iter()
        .map(ReservoirState::initial)
        .collect();
    let mut states = initial.clone();
    let mut records = Vec::with_capacity(series.len());
    let mut q_in = vec![0.0; n_res];
    let mut q_out = vec![0.0; n_res];
    let mut inflows = vec![0.0; n_res];

    for t in 0..series.len() {
        let load_w = series.load.values()[t];
        let renewable_w = series.renewable.values()[t];
        for (slot, s) in inflows.iter_mut().zip(&inflow_series) {
            *slot = s.map_or(0.0, |s| s.values()[t]);
        }

        let decision = policy.decide(network, &states, &inflows, load_w - renewable_w, dt_s);

        q_in.fill(0.0);
        q_out.fill(0.0);
        for (s, action) in decision.actions.iter().enumerate() {
            let Some((up, lo)) = network.stage_link(s) else {
                continue;
            };
            match *action {
                StageAction::Generate { q_turbine_m3s, .. } => {
                    q_out[up] += q_turbine_m3s;
                    q_in[lo] += q_turbine_m3s;
                }
                StageAction::Pump { q_pump_m3s, .. } => {
                    q_out[lo] += q_pump_m3s;
                    q_in[up] += q_pump_m3s;
                }
                StageAction::Idle => {}
            }
        }

        for (i, r) in network.reservoirs().iter().enumerate() {
            states[i] = step_reservoir(&states[i], r, q_in[i], q_out[i], inflows[i], dt_s).map_err(
                |e| match e {
                    SimulationError::Infeasible {
                        reservoir_id,
                        volume_m3,
                        min_m3,
                        ..
                    } => SimulationError::Infeasible {
                        step: Some(t),
                        reservoir_id,
                        volume_m3,
                        min_m3,
                    },
                    other => other,
                },
            )?;
        }

        records.push(StepRecord {
            step_index: t,
            load_w,
            renewable_w,
            reservoirs: states.clone(),
            natural_inflow_m3s: inflows.clone(),
            stages: decision.actions.iter().map(StageFlows::from).collect(),
            grid_import_w: decision.grid_import_w,
            grid_export_w: decision.grid_export_w,
            unserved_w: decision.unserved_w,
            curtailed_w: decision.curtailed_w,
        });
    }

    Ok(SimulationRun {
        dt_s,
        initial,
        records,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReservoirResidual {
    pub reservoir_id: String,
    pub absolute_m3: f64,
    /// Absolute residual over the larger of the volumes and gross throughput.
    pub relative: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MassBalance {
    pub per_reservoir: Vec<ReservoirResidual>,
    pub system_absolute_m3: f64,
    pub system_relative: f64,
}

impl MassBalance {
    pub fn max_relative(&self) -> f64 {
        self.per_reservoir
            .iter()
            .map(|r| r.relative)
            .fold(self.system_relative, f64::max)
    }
}

/// Re-derives every reservoir's final volume from the recorded flows and
/// reports how far it lands from the simulated one.
pub fn mass_balance_report(network: &CascadeNetwork, run: &SimulationRun) -> MassBalance {
    let n = network.reservoirs().len();
    let dt = run.dt_s;
    let mut net_in = vec![0.0; n];
    let mut gross = vec![0.0; n];
    let mut natural = vec![0.0; n];
    for rec in &run.records {
        for (s, f) in rec.stages.iter().enumerate() {
            let Some((up, lo)) = network.stage_link(s) else {
                continue;
            };
            let transfer = (f.q_pump_m3s - f.q_turbine_m3s) * dt;
            net_in[up] += transfer;
            net_in[lo] -= transfer;
            gross[up] += transfer.abs();
            gross[lo] += transfer.abs();
        }
        for (i, q) in rec.natural_inflow_m3s.iter().enumerate() {
            natural[i] += q * dt;
            gross[i] += q * dt;
        }
    }

    let finals = run.final_states();
    let mut per_reservoir = Vec::with_capacity(n);
    let (mut sys_lhs, mut sys_scale) = (0.0, 0.0f64);
    for (i, r) in network.reservoirs().iter().enumerate() {
        let v0 = run.initial[i].volume_m3;
        let st = finals[i];
        let out_of_system = st.spilled_m3_cum + st.evap_leak_m3_cum;
        let residual = st.volume_m3 - v0 - net_in[i] - natural[i] + out_of_system;
        let scale = v0
            .abs()
            .max(st.volume_m3.abs())
            .max(gross[i])
            .max(out_of_system)
            .max(1.0);
        per_reservoir.push(ReservoirResidual {
            reservoir_id: r.id.clone(),
            absolute_m3: residual.abs(),
            relative: residual.abs() / scale,
        });
        // Stage transfers cancel across the system.
        sys_lhs += st.volume_m3 - v0 - natural[i] + out_of_system;
        sys_scale = sys_scale.max(scale);
    }
    MassBalance {
        per_reservoir,
        system_absolute_m3: sys_lhs.abs(),
        system_relative: sys_lhs.abs() / sys_scale.max(1.0),
    }
}

/// Run totals. Energies in Wh, volumes in m³.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Summary {
    pub steps: usize,
    pub dt_s: f64,
    pub load_wh: f64,
    pub renewable_wh: f64,
    pub generated_wh: f64,
    pub pumped_wh: f64,
    pub imported_wh: f64,
    pub exported_wh: f64,
    pub unserved_wh: f64,
    pub curtailed_wh: f64,
    pub spilled_m3: f64,
    pub losses_m3: f64,
    pub final_volumes_m3: Vec<(String, f64)>,
    pub reservoir_count: usize,
}

pub fn summarize(network: &CascadeNetwork, run: &SimulationRun) -> Summary {
    let h = run.dt_s / SECONDS_PER_HOUR;
    let mut s = Summary {
        steps: run.records.len(),
        dt_s: run.dt_s,
        reservoir_count: network.reservoirs().len(),
        ..Summary::default()
    };
    for r in &run.records {
        s.load_wh += r.load_w * h;
        s.renewable_wh += r.renewable_w * h;
        s.generated_wh += r.generation_w() * h;
        s.pumped_wh += r.pumping_w() * h;
        s.imported_wh += r.grid_import_w * h;
        s.exported_wh += r.grid_export_w * h;
        s.unserved_wh += r.unserved_w * h;
        s.curtailed_wh += r.curtailed_w * h;
    }
    let finals = run.final_states();
    s.spilled_m3 = finals.iter().map(|f| f.spilled_m3_cum).sum();
    s.losses_m3 = finals.iter().map(|f| f.evap_leak_m3_cum).sum();
    s.final_volumes_m3 = network
        .reservoirs()
        .iter()
        .zip(finals)
        .map(|(r, f)| (r.id.clone(), f.volume_m3))
        .collect();
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispatch::RuleBasedDispatch;
    use crate::model::tests::{reservoir, stage};
    use crate::model::{GridLimits, PhysicalConstants, SeriesUnit};

    fn state(v: f64) -> ReservoirState {
        ReservoirState {
            volume_m3: v,
            spilled_m3_cum: 0.0,
            evap_leak_m3_cum: 0.0,
        }
    }

    #[test]
    fn step_with_net_inflow() {
        let r = reservoir("r", 100.0, 2.0e6, 1.0e6);
        let next = step_reservoir(&state(1.0e6), &r, 2.0, 1.0, 0.0, 3600.0).unwrap();
        assert_eq!(next.volume_m3, 1_003_600.0);
    }

    #[test]
    fn balanced_flows_leave_volume_unchanged() {
        let r = reservoir("r", 100.0, 2.0e6, 1.0e6);
        for dt in [1.0, 60.0, 3600.0, 86400.0] {
            let next = step_reservoir(&state(1.0e6), &r, 3.5, 3.5, 0.0, dt).unwrap();
            assert_eq!(next.volume_m3, 1.0e6);
        }
    }

    #[test]
    fn pure_decay() {
        let mut r = reservoir("r", 100.0, 2.0e6, 1.0e6);
        r.loss_alpha = 0.001;
        let next = step_reservoir(&state(1.0e6), &r, 0.0, 0.0, 0.0, 3600.0).unwrap();
        assert!((next.volume_m3 - 999_000.0).abs() < 1e-6);
        assert!((next.evap_leak_m3_cum - 1_000.0).abs() < 1e-6);
    }

    #[test]
    fn overfill_spills() {
        let r = reservoir("r", 100.0, 1000.0, 900.0);
        let next = step_reservoir(&state(900.0), &r, 1.0, 0.0, 0.0, 200.0).unwrap();
        assert_eq!(next.volume_m3, 1000.0);
        assert_eq!(next.spilled_m3_cum, 100.0);
    }

    #[test]
    fn underfill_is_an_error() {
        let r = reservoir("r", 100.0, 1000.0, 10.0);
        let err = step_reservoir(&state(10.0), &r, 0.0, 1.0, 0.0, 20.0).unwrap_err();
        assert!(matches!(err, SimulationError::Infeasible { .. }));
    }

    #[test]
    fn negative_flow_rejected() {
        let r = reservoir("r", 100.0, 1000.0, 10.0);
        assert!(step_reservoir(&state(10.0), &r, -1.0, 0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn loss_stops_at_dead_storage() {
        let mut r = reservoir("r", 100.0, 1000.0, 100.0);
        r.volume_min_m3 = 100.0;
        r.loss_alpha = 0.5;
        let next = step_reservoir(&state(100.0), &r, 0.0, 0.0, 0.0, 1.0).unwrap();
        assert_eq!(next.volume_m3, 100.0);
        assert_eq!(next.evap_leak_m3_cum, 0.0);
    }

    fn flat(len: usize, v: f64) -> TimeSeries {
        TimeSeries::constant(3600.0, SeriesUnit::Watts, v, len).unwrap()
    }

    fn single_stage() -> CascadeNetwork {
        let a = reservoir("a", 200.0, 1e9, 1e9);
        let b = reservoir("b", 100.0, 1e9, 0.0);
        let s = stage("ab", &a, &b);
        CascadeNetwork::new(
            PhysicalConstants::default(),
            vec![a, b],
            vec![s],
            GridLimits {
                import_max_w: 1e6,
                export_max_w: 1e6,
            },
        )
    }

    #[test]
    fn quiescent_run_is_constant() {
        let n = single_stage();
        let series = SeriesSet {
            load: flat(24, 0.0),
            renewable: flat(24, 0.0),
            inflows: BTreeMap::new(),
        };
        let run = run_simulation(&n, &RuleBasedDispatch, &series, 3600.0).unwrap();
        assert_eq!(run.records.len(), 24);
        for rec in &run.records {
            assert_eq!(rec.reservoirs, run.initial);
            assert!(rec.stages.iter().all(|f| *f == StageFlows::default()));
            assert_eq!(rec.grid_import_w + rec.grid_export_w, 0.0);
        }
    }

    #[test]
    fn deficit_equal_to_max_generation() {
        let n = single_stage();
        let s = &n.stages()[0];
        let p_max = s.eta_turbine * 1000.0 * 9.81 * s.head_m * s.q_turbine_max_m3s;
        let series = SeriesSet {
            load: flat(1, p_max),
            renewable: flat(1, 0.0),
            inflows: BTreeMap::new(),
        };
        let run = run_simulation(&n, &RuleBasedDispatch, &series, 3600.0).unwrap();
        let rec = &run.records[0];
        assert!((rec.stages[0].p_gen_w - p_max).abs() <= 1e-9 * p_max);
        assert_eq!(rec.grid_import_w, 0.0);
    }

    #[test]
    fn mass_balance_of_empty_run_is_zero() {
        let n = single_stage();
        let run = SimulationRun {
            dt_s: 3600.0,
            initial: n.reservoirs().iter().map(ReservoirState::initial).collect(),
            records: vec![],
        };
        let mb = mass_balance_report(&n, &run);
        assert_eq!(mb.max_relative(), 0.0);
    }

    #[test]
    fn mass_balance_counts_spill() {
        let mut n = single_stage();
        let (c, mut res, stages, grid) = n.into_parts();
        res[1].volume_max_m3 = 5.0e4;
        res[1].natural_inflow_id = Some("creek".into());
        n = CascadeNetwork::new(c, res, stages, grid);
        let mut inflows = BTreeMap::new();
        inflows.insert(
            "creek".to_string(),
            TimeSeries::constant(3600.0, SeriesUnit::CubicMetresPerSecond, 5.0, 12).unwrap(),
        );
        let series = SeriesSet {
            load: flat(12, 2.0e6),
            renewable: flat(12, 0.0),
            inflows,
        };
        let run = run_simulation(&n, &RuleBasedDispatch, &series, 3600.0).unwrap();
        assert!(run.final_states()[1].spilled_m3_cum > 0.0);
        let mb = mass_balance_report(&n, &run);
        assert!(mb.max_relative() < 1e-6, "{mb:?}");

        // Independent re-summation of the lower reservoir.
        let mut v = run.initial[1].volume_m3;
        for r in &run.records {
            v += (r.stages[0].q_turbine_m3s - r.stages[0].q_pump_m3s + 5.0) * 3600.0;
        }
        let st = run.final_states()[1];
        assert!((v - st.spilled_m3_cum - st.volume_m3).abs() < 1e-6 * v);
    }

    #[test]
    fn series_length_mismatch() {
        let n = single_stage();
        let series = SeriesSet {
            load: flat(24, 0.0),
            renewable: flat(23, 0.0),
            inflows: BTreeMap::new(),
        };
        assert!(matches!(
            run_simulation(&n, &RuleBasedDispatch, &series, 3600.0),
            Err(SimulationError::Series(_))
        ));
    }
}
