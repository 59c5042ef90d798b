#![allow(dead_code)]

use std::collections::BTreeMap;

use cpmhs::model::{
    derive_head, CascadeNetwork, GridLimits, PhysicalConstants, Reservoir, SeriesUnit, Stage,
    TimeSeries,
};
use cpmhs::simulation::{SeriesSet, SimulationRun};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub struct RandomCase {
    pub network: CascadeNetwork,
    pub series: SeriesSet,
    pub dt_s: f64,
}

fn reservoir(rng: &mut ChaCha8Rng, id: String, elevation_m: f64, is_root: bool) -> Reservoir {
    let volume_max_m3 = rng.gen_range(1.0e3..2.0e6);
    let volume_min_m3 = if rng.gen_bool(0.5) {
        0.0
    } else {
        rng.gen_range(0.0..0.3) * volume_max_m3
    };
    let volume_init_m3 = if is_root {
        rng.gen_range(volume_min_m3..=volume_max_m3)
    } else if rng.gen_bool(0.5) {
        volume_min_m3
    } else {
        rng.gen_range(volume_min_m3..=volume_max_m3)
    };
    Reservoir {
        name: id.clone(),
        id,
        elevation_m,
        surface_area_m2: rng.gen_range(1.0e3..1.0e6),
        volume_min_m3,
        volume_max_m3,
        volume_init_m3,
        loss_alpha: if rng.gen_bool(0.3) {
            rng.gen_range(0.0..0.01)
        } else {
            0.0
        },
        natural_inflow_id: None,
    }
}

fn stage(rng: &mut ChaCha8Rng, id: String, upper: &Reservoir, lower: &Reservoir) -> Stage {
    let q_turbine_max_m3s = rng.gen_range(0.5..20.0);
    Stage {
        id,
        upper_id: upper.id.clone(),
        lower_id: lower.id.clone(),
        head_m: derive_head(upper.elevation_m, lower.elevation_m),
        distance_km: rng.gen_range(0.1..3.0),
        eta_turbine: rng.gen_range(0.6..0.97),
        eta_pump: rng.gen_range(0.6..0.97),
        q_turbine_min_m3s: if rng.gen_bool(0.5) {
            0.0
        } else {
            rng.gen_range(0.0..0.3) * q_turbine_max_m3s
        },
        q_turbine_max_m3s,
        p_pump_max_w: rng.gen_range(1.0e4..5.0e6),
    }
}

/// A random forest of at most `max_reservoirs` reservoirs, occasionally with a
/// reservoir fed by two upstream stages or an unbounded sink, and random
/// load, renewable and inflow series of at most `max_steps` steps.
pub fn random_case(rng: &mut ChaCha8Rng, max_reservoirs: usize, max_steps: usize) -> RandomCase {
    let n = rng.gen_range(2..=max_reservoirs);
    let mut reservoirs: Vec<Reservoir> = Vec::with_capacity(n);
    let mut stages: Vec<Stage> = Vec::new();
    let top = rng.gen_range(200.0..400.0);
    reservoirs.push(reservoir(rng, "r0".into(), top, true));
    for i in 1..n {
        let new_root = rng.gen_bool(0.1);
        if new_root {
            let elev = rng.gen_range(200.0..400.0);
            reservoirs.push(reservoir(rng, format!("r{i}"), elev, true));
            continue;
        }
        let parent = rng.gen_range(0..i);
        let elev = reservoirs[parent].elevation_m - rng.gen_range(1.0..60.0);
        let mut r = reservoir(rng, format!("r{i}"), elev, false);
        if rng.gen_bool(0.15) {
            r.volume_min_m3 = f64::NEG_INFINITY;
            r.volume_max_m3 = f64::INFINITY;
            r.volume_init_m3 = 0.0;
            r.loss_alpha = 0.0;
        }
        let s = stage(rng, format!("s{}", stages.len()), &reservoirs[parent], &r);
        stages.push(s);
        // Occasional second feeder from any strictly higher reservoir.
        if rng.gen_bool(0.2) {
            let other = rng.gen_range(0..i);
            if other != parent && reservoirs[other].elevation_m > r.elevation_m + 0.5 {
                let s = stage(rng, format!("s{}", stages.len()), &reservoirs[other], &r);
                stages.push(s);
            }
        }
        reservoirs.push(r);
    }
    let dt_s = if rng.gen_bool(0.8) { 3600.0 } else { 900.0 };
    let steps = rng.gen_range(1..=max_steps);
    let scale = rng.gen_range(1.0e5..5.0e6);
    let load: Vec<f64> = (0..steps).map(|_| rng.gen_range(0.0..scale)).collect();
    let renewable: Vec<f64> = (0..steps).map(|_| rng.gen_range(0.0..1.5 * scale)).collect();
    let mut inflows = BTreeMap::new();
    for r in &mut reservoirs {
        if rng.gen_bool(0.25) {
            let key = format!("in_{}", r.id);
            let q: Vec<f64> = (0..steps).map(|_| rng.gen_range(0.0..5.0)).collect();
            inflows.insert(
                key.clone(),
                TimeSeries::new(dt_s, SeriesUnit::CubicMetresPerSecond, q).unwrap(),
            );
            r.natural_inflow_id = Some(key);
        }
    }
    let grid = GridLimits {
        import_max_w: rng.gen_range(0.0..scale),
        export_max_w: rng.gen_range(0.0..scale),
    };
    RandomCase {
        network: CascadeNetwork::new(PhysicalConstants::default(), reservoirs, stages, grid),
        series: SeriesSet {
            load: TimeSeries::new(dt_s, SeriesUnit::Watts, load).unwrap(),
            renewable: TimeSeries::new(dt_s, SeriesUnit::Watts, renewable).unwrap(),
            inflows,
        },
        dt_s,
    }
}

fn index_of(network: &CascadeNetwork, id: &str) -> usize {
    network.reservoirs().iter().position(|r| r.id == id).unwrap()
}

/// Largest per-reservoir relative mass-balance residual, recomputed from the
/// stage flows, natural inflows, spill and loss recorded in each step.
pub fn mass_balance_residual(network: &CascadeNetwork, run: &SimulationRun) -> f64 {
    let n = network.reservoirs().len();
    let links: Vec<(usize, usize)> = network
        .stages()
        .iter()
        .map(|s| (index_of(network, &s.upper_id), index_of(network, &s.lower_id)))
        .collect();
    let mut volume: Vec<f64> = run.initial.iter().map(|s| s.volume_m3).collect();
    let mut worst: f64 = 0.0;
    let mut prev_spill = vec![0.0; n];
    let mut prev_loss = vec![0.0; n];
    let mut magnitude: Vec<f64> = volume.iter().map(|v| v.abs()).collect();
    for rec in &run.records {
        let mut delta = vec![0.0; n];
        for (f, &(up, lo)) in rec.stages.iter().zip(&links) {
            delta[up] += (f.q_pump_m3s - f.q_turbine_m3s) * run.dt_s;
            delta[lo] += (f.q_turbine_m3s - f.q_pump_m3s) * run.dt_s;
            magnitude[up] += (f.q_pump_m3s + f.q_turbine_m3s) * run.dt_s;
            magnitude[lo] += (f.q_pump_m3s + f.q_turbine_m3s) * run.dt_s;
        }
        for i in 0..n {
            let st = rec.reservoirs[i];
            let spill = st.spilled_m3_cum - prev_spill[i];
            let loss = st.evap_leak_m3_cum - prev_loss[i];
            prev_spill[i] = st.spilled_m3_cum;
            prev_loss[i] = st.evap_leak_m3_cum;
            let inflow = rec.natural_inflow_m3s[i] * run.dt_s;
            volume[i] += delta[i] + inflow - spill - loss;
            magnitude[i] += inflow + spill + loss;
        }
    }
    let finals = run.records.last().map(|r| r.reservoirs.clone()).unwrap_or_default();
    for i in 0..n {
        let scale = magnitude[i].max(finals[i].volume_m3.abs()).max(1.0);
        worst = worst.max((finals[i].volume_m3 - volume[i]).abs() / scale);
    }
    worst
}

/// Largest per-step relative power imbalance:
/// renewable + generation + import + unserved vs load + pumping + export + curtailed.
pub fn power_balance_residual(run: &SimulationRun) -> f64 {
    run.records
        .iter()
        .map(|r| {
            let gen: f64 = r.stages.iter().map(|f| f.p_gen_w).sum();
            let pump: f64 = r.stages.iter().map(|f| f.p_pump_w).sum();
            let supply = r.renewable_w + gen + r.grid_import_w + r.unserved_w;
            let demand = r.load_w + pump + r.grid_export_w + r.curtailed_w;
            let scale = supply.abs().max(demand.abs()).max(1.0);
            (supply - demand).abs() / scale
        })
        .fold(0.0, f64::max)
}

/// First violation of storage bounds, ratings, grid caps or stage
/// exclusivity, if any.
pub fn bound_violation(network: &CascadeNetwork, run: &SimulationRun) -> Option<String> {
    let grid = network.grid();
    for rec in &run.records {
        let t = rec.step_index;
        for (r, st) in network.reservoirs().iter().zip(&rec.reservoirs) {
            let tol = 1e-9 * r.volume_max_m3.abs().clamp(1.0, 1e12);
            if st.volume_m3 < r.volume_min_m3 - tol || st.volume_m3 > r.volume_max_m3 + tol {
                return Some(format!(
                    "step {t}: {} volume {} outside [{}, {}]",
                    r.id, st.volume_m3, r.volume_min_m3, r.volume_max_m3
                ));
            }
        }
        for (s, f) in network.stages().iter().zip(&rec.stages) {
            if f.q_turbine_m3s > 0.0 && f.q_pump_m3s > 0.0 {
                return Some(format!("step {t}: {} pumps and generates", s.id));
            }
            if f.q_turbine_m3s < 0.0 || f.q_pump_m3s < 0.0 {
                return Some(format!("step {t}: {} negative flow", s.id));
            }
            if f.q_turbine_m3s > s.q_turbine_max_m3s * (1.0 + 1e-12) {
                return Some(format!("step {t}: {} above turbine rating", s.id));
            }
            if f.p_pump_w > s.p_pump_max_w * (1.0 + 1e-12) {
                return Some(format!("step {t}: {} above pump rating", s.id));
            }
        }
        if rec.grid_import_w > grid.import_max_w * (1.0 + 1e-12)
            || rec.grid_export_w > grid.export_max_w * (1.0 + 1e-12)
        {
            return Some(format!("step {t}: grid cap exceeded"));
        }
        if rec.unserved_w < 0.0 || rec.curtailed_w < 0.0 {
            return Some(format!("step {t}: negative unserved or curtailed power"));
        }
    }
    None
}
