//! Rule-based controller for one time step.
//!
//! A deficit walks the stages from the top of the cascade downward and
//! generates wherever the upper reservoir has water and the lower one has
//! room; whatever hydro cannot cover is imported, then left unserved. A
//! surplus walks the stages from the bottom upward and pumps, then exports,
//! then curtails.
//!
//! Water is committed against the start-of-step state: water released into a
//! reservoir during a step is not available to the stage below it until the
//! next step.

use crate::hydraulics::{flow_for_power, generation_power, pumping_flow, pumping_power};
use crate::model::CascadeNetwork;
use crate::simulation::{carried_volume, ReservoirState};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StageAction {
    Idle,
    Generate { q_turbine_m3s: f64, power_w: f64 },
    Pump { power_w: f64, q_pump_m3s: f64 },
}

impl StageAction {
    pub fn generation_w(&self) -> f64 {
        match *self {
            StageAction::Generate { power_w, .. } => power_w,
            _ => 0.0,
        }
    }

    pub fn pumping_w(&self) -> f64 {
        match *self {
            StageAction::Pump { power_w, .. } => power_w,
            _ => 0.0,
        }
    }

    pub fn q_turbine_m3s(&self) -> f64 {
        match *self {
            StageAction::Generate { q_turbine_m3s, .. } => q_turbine_m3s,
            _ => 0.0,
        }
    }

    pub fn q_pump_m3s(&self) -> f64 {
        match *self {
            StageAction::Pump { q_pump_m3s, .. } => q_pump_m3s,
            _ => 0.0,
        }
    }
}

/// One action per stage plus the grid exchange that closes the power balance.
#[derive(Debug, Clone, PartialEq)]
pub struct DispatchDecision {
    pub actions: Vec<StageAction>,
    pub grid_import_w: f64,
    pub grid_export_w: f64,
    pub curtailed_w: f64,
    pub unserved_w: f64,
}

impl DispatchDecision {
    pub fn idle(stage_count: usize) -> Self {
        Self {
            actions: vec![StageAction::Idle; stage_count],
            grid_import_w: 0.0,
            grid_export_w: 0.0,
            curtailed_w: 0.0,
            unserved_w: 0.0,
        }
    }

    pub fn total_generation_w(&self) -> f64 {
        self.actions.iter().map(StageAction::generation_w).sum()
    }

    pub fn total_pumping_w(&self) -> f64 {
        self.actions.iter().map(StageAction::pumping_w).sum()
    }
}

/// Anything that maps a step's system state to stage actions.
pub trait DispatchPolicy {
    fn decide(
        &self,
        network: &CascadeNetwork,
        states: &[ReservoirState],
        inflows_m3s: &[f64],
        net_load_w: f64,
        dt_s: f64,
    ) -> DispatchDecision;
}

/// The generate-top-down / pump-bottom-up controller.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleBasedDispatch;

impl DispatchPolicy for RuleBasedDispatch {
    fn decide(
        &self,
        network: &CascadeNetwork,
        states: &[ReservoirState],
        inflows_m3s: &[f64],
        net_load_w: f64,
        dt_s: f64,
    ) -> DispatchDecision {
        dispatch_step(network, states, inflows_m3s, net_load_w, dt_s)
    }
}

/// Volume each reservoir can give up and take in during one step without
/// leaving its bounds, given the loss and natural inflow that step brings.
#[derive(Debug, Clone, Copy, PartialEq)]
struct WaterBudget {
    drawable_m3: f64,
    headroom_m3: f64,
}

fn water_budgets(
    network: &CascadeNetwork,
    states: &[ReservoirState],
    inflows_m3s: &[f64],
    dt_s: f64,
) -> Vec<WaterBudget> {
    network
        .reservoirs()
        .iter()
        .zip(states)
        .enumerate()
        .map(|(i, (r, st))| {
            let (carried, _) = carried_volume(r, st.volume_m3);
            let inflow = inflows_m3s.get(i).copied().unwrap_or(0.0) * dt_s;
            let start = carried + inflow;
            WaterBudget {
                drawable_m3: (start - r.volume_min_m3).max(0.0),
                headroom_m3: (r.volume_max_m3 - start).max(0.0),
            }
        })
        .collect()
}

/// Chooses stage actions and grid exchange for one step.
///
/// `net_load_w > 0` is a deficit, `< 0` a surplus. `inflows_m3s` holds the
/// natural inflow of each reservoir for this step (missing entries count as
/// zero).
pub fn dispatch_step(
    network: &CascadeNetwork,
    states: &[ReservoirState],
    inflows_m3s: &[f64],
    net_load_w: f64,
    dt_s: f64,
) -> DispatchDecision {
    if net_load_w > 0.0 {
        generating_mode(network, states, inflows_m3s, net_load_w, dt_s)
    } else if net_load_w < 0.0 {
        pumping_mode(network, states, inflows_m3s, -net_load_w, dt_s)
    } else {
        DispatchDecision::idle(network.stages().len())
    }
}

/// Covers `deficit_w` with turbines (topmost stage first), then grid import,
/// recording the rest as unserved.
pub fn generating_mode(
    network: &CascadeNetwork,
    states: &[ReservoirState],
    inflows_m3s: &[f64],
    deficit_w: f64,
    dt_s: f64,
) -> DispatchDecision {
    let mut decision = DispatchDecision::idle(network.stages().len());
    let mut budgets = water_budgets(network, states, inflows_m3s, dt_s);
    let c = network.constants();
    let mut remaining = deficit_w.max(0.0);

    for &s in network.generation_order() {
        if remaining <= 0.0 {
            break;
        }
        let stage = &network.stages()[s];
        let Some((up, lo)) = network.stage_link(s) else {
            continue;
        };
        let q_feasible = stage
            .q_turbine_max_m3s
            .min(budgets[up].drawable_m3 / dt_s)
            .min(budgets[lo].headroom_m3 / dt_s);
        // Below the turbine's minimum viable flow the stage is passed over.
        if !(q_feasible > 0.0) || q_feasible < stage.q_turbine_min_m3s {
            continue;
        }
        let Ok(p_cap) = generation_power(stage.eta_turbine, c.rho, c.g, stage.head_m, q_feasible)
        else {
            continue;
        };
        let (q, p) = if remaining >= p_cap {
            (q_feasible, p_cap)
        } else {
            let Ok(q) = flow_for_power(stage.eta_turbine, c.rho, c.g, stage.head_m, remaining)
            else {
                continue;
            };
            (q.min(q_feasible), remaining)
        };
        budgets[up].drawable_m3 -= q * dt_s;
        budgets[lo].headroom_m3 -= q * dt_s;
        remaining -= p;
        decision.actions[s] = StageAction::Generate {
            q_turbine_m3s: q,
            power_w: p,
        };
    }

    let remaining = remaining.max(0.0);
    decision.grid_import_w = remaining.min(network.grid().import_max_w.max(0.0));
    decision.unserved_w = remaining - decision.grid_import_w;
    decision
}

/// Absorbs `surplus_w` with pumps (bottom stage first), then grid export,
/// recording the rest as curtailed.
pub fn pumping_mode(
    network: &CascadeNetwork,
    states: &[ReservoirState],
    inflows_m3s: &[f64],
    surplus_w: f64,
    dt_s: f64,
) -> DispatchDecision {
    let mut decision = DispatchDecision::idle(network.stages().len());
    let mut budgets = water_budgets(network, states, inflows_m3s, dt_s);
    let c = network.constants();
    let mut remaining = surplus_w.max(0.0);

    for &s in network.pumping_order() {
        if remaining <= 0.0 {
            break;
        }
        let stage = &network.stages()[s];
        let Some((up, lo)) = network.stage_link(s) else {
            continue;
        };
        let q_limit = budgets[lo].drawable_m3.min(budgets[up].headroom_m3) / dt_s;
        if !(q_limit > 0.0) {
            continue;
        }
        let p_water = if q_limit.is_finite() {
            match pumping_power(stage.eta_pump, c.rho, c.g, stage.head_m, q_limit) {
                Ok(p) => p,
                Err(_) => continue,
            }
        } else {
            f64::INFINITY
        };
        let p = stage.p_pump_max_w.min(remaining).min(p_water);
        if !(p > 0.0) {
            continue;
        }
        let Ok(q) = pumping_flow(stage.eta_pump, c.rho, c.g, stage.head_m, p) else {
            continue;
        };
        let q = q.min(q_limit);
        budgets[lo].drawable_m3 -= q * dt_s;
        budgets[up].headroom_m3 -= q * dt_s;
        remaining -= p;
        decision.actions[s] = StageAction::Pump {
            power_w: p,
            q_pump_m3s: q,
        };
    }

    let remaining = remaining.max(0.0);
    decision.grid_export_w = remaining.min(network.grid().export_max_w.max(0.0));
    decision.curtailed_w = remaining - decision.grid_export_w;
    decision
}
