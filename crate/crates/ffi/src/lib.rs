//! C ABI over the `cpmhs` toolkit.
//!
//! Scenarios and simulation runs are opaque handles owned by the caller and
//! released with their `_free` function. Every fallible call returns a
//! [`CpmhsStatus`]; on failure [`cpmhs_last_error`] describes the problem
//! until the next call on the same thread. No call unwinds into C.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use cpmhs::dispatch::RuleBasedDispatch;
use cpmhs::hydraulics;
use cpmhs::planner::{plan_cascade, PlanConstraints, TerrainProfile};
use cpmhs::scenario::{self, ScenarioError};
use cpmhs::simulation::{run_simulation, summarize, SimulationRun, Summary};
use cpmhs::{validate_network, Scenario};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CpmhsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Io = 4,
    Validation = 5,
    Infeasible = 6,
    Panic = 7,
}

/// A loaded scenario.
pub struct CpmhsScenario {
    inner: Scenario,
}

/// A completed simulation together with the scenario it ran.
pub struct CpmhsRun {
    scenario: Scenario,
    run: SimulationRun,
    summary: Summary,
}

/// Run totals. Energies in Wh, volumes in m³.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CpmhsSummary {
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
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let text = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = text);
}

fn guard(f: impl FnOnce() -> Result<(), (CpmhsStatus, String)>) -> CpmhsStatus {
    set_error("");
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CpmhsStatus::Ok,
        Ok(Err((status, message))) => {
            set_error(&message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            CpmhsStatus::Panic
        }
    }
}

fn scenario_status(e: ScenarioError) -> (CpmhsStatus, String) {
    let status = match &e {
        ScenarioError::Io { .. } => CpmhsStatus::Io,
        ScenarioError::Validation(_) => CpmhsStatus::Validation,
        ScenarioError::Override(_) => CpmhsStatus::InvalidArgument,
        _ => CpmhsStatus::Parse,
    };
    (status, e.to_string())
}

fn null(what: &str) -> (CpmhsStatus, String) {
    (CpmhsStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (CpmhsStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (CpmhsStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

fn hydraulics_status(e: hydraulics::HydraulicsError) -> (CpmhsStatus, String) {
    (CpmhsStatus::InvalidArgument, e.to_string())
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn cpmhs_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a scenario JSON file. Series paths resolve against its directory.
#[no_mangle]
pub unsafe extern "C" fn cpmhs_scenario_load(
    path: *const c_char,
    out: *mut *mut CpmhsScenario,
) -> CpmhsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let path = str_arg(path, "path")?;
        let inner = scenario::load_scenario(Path::new(path), &[]).map_err(scenario_status)?;
        *out = Box::into_raw(Box::new(CpmhsScenario { inner }));
        Ok(())
    })
}

/// The built-in Mountain Lake case study.
#[no_mangle]
pub unsafe extern "C" fn cpmhs_scenario_bundled(out: *mut *mut CpmhsScenario) -> CpmhsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = scenario::bundled_scenario_with(&[]).map_err(scenario_status)?;
        *out = Box::into_raw(Box::new(CpmhsScenario { inner }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn cpmhs_scenario_free(scenario: *mut CpmhsScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Stores the number of validation violations in `violations`; the report
/// text is available from [`cpmhs_last_error`] when it is non-zero.
#[no_mangle]
pub unsafe extern "C" fn cpmhs_scenario_validate(
    scenario: *const CpmhsScenario,
    violations: *mut usize,
) -> CpmhsStatus {
    let mut report_text = String::new();
    let status = guard(|| {
        let s = scenario.as_ref().ok_or_else(|| null("scenario"))?;
        if violations.is_null() {
            return Err(null("violations"));
        }
        let report = validate_network(&s.inner.network);
        *violations = report.violations.len();
        if !report.is_valid() {
            report_text = report.to_string();
        }
        Ok(())
    });
    if status == CpmhsStatus::Ok && !report_text.is_empty() {
        set_error(&report_text);
    }
    status
}

#[no_mangle]
pub unsafe extern "C" fn cpmhs_scenario_reservoir_count(scenario: *const CpmhsScenario) -> usize {
    scenario
        .as_ref()
        .map_or(0, |s| s.inner.network.reservoirs().len())
}

#[no_mangle]
pub unsafe extern "C" fn cpmhs_scenario_stage_count(scenario: *const CpmhsScenario) -> usize {
    scenario.as_ref().map_or(0, |s| s.inner.network.stages().len())
}

#[no_mangle]
pub unsafe extern "C" fn cpmhs_scenario_step_count(scenario: *const CpmhsScenario) -> usize {
    scenario.as_ref().map_or(0, |s| s.inner.series.len())
}

/// Runs the rule-based dispatch over the scenario's series.
#[no_mangle]
pub unsafe extern "C" fn cpmhs_simulate(
    scenario: *const CpmhsScenario,
    out: *mut *mut CpmhsRun,
) -> CpmhsStatus {
    guard(|| {
        let s = scenario.as_ref().ok_or_else(|| null("scenario"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let sc = &s.inner;
        let run = run_simulation(&sc.network, &RuleBasedDispatch, &sc.series, sc.dt_s)
            .map_err(|e| (CpmhsStatus::Infeasible, e.to_string()))?;
        let summary = summarize(&sc.network, &run);
        *out = Box::into_raw(Box::new(CpmhsRun {
            scenario: sc.clone(),
            run,
            summary,
        }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn cpmhs_run_free(run: *mut CpmhsRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

#[no_mangle]
pub unsafe extern "C" fn cpmhs_run_step_count(run: *const CpmhsRun) -> usize {
    run.as_ref().map_or(0, |r| r.run.records.len())
}

#[no_mangle]
pub unsafe extern "C" fn cpmhs_run_summary(
    run: *const CpmhsRun,
    out: *mut CpmhsSummary,
) -> CpmhsStatus {
    guard(|| {
        let r = run.as_ref().ok_or_else(|| null("run"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let s = &r.summary;
        *out = CpmhsSummary {
            steps: s.steps,
            dt_s: s.dt_s,
            load_wh: s.load_wh,
            renewable_wh: s.renewable_wh,
            generated_wh: s.generated_wh,
            pumped_wh: s.pumped_wh,
            imported_wh: s.imported_wh,
            exported_wh: s.exported_wh,
            unserved_wh: s.unserved_wh,
            curtailed_wh: s.curtailed_wh,
            spilled_m3: s.spilled_m3,
            losses_m3: s.losses_m3,
        };
        Ok(())
    })
}

/// Volume of reservoir `reservoir` (declaration order) after step `step`.
#[no_mangle]
pub unsafe extern "C" fn cpmhs_run_volume(
    run: *const CpmhsRun,
    step: usize,
    reservoir: usize,
    out_m3: *mut f64,
) -> CpmhsStatus {
    guard(|| {
        let r = run.as_ref().ok_or_else(|| null("run"))?;
        if out_m3.is_null() {
            return Err(null("out_m3"));
        }
        let v = r
            .run
            .records
            .get(step)
            .and_then(|rec| rec.reservoirs.get(reservoir))
            .ok_or_else(|| {
                (
                    CpmhsStatus::InvalidArgument,
                    format!("no volume for step {step}, reservoir {reservoir}"),
                )
            })?;
        *out_m3 = v.volume_m3;
        Ok(())
    })
}

/// Writes `steps.csv`, `reservoirs.csv` and `summary.json` into `out_dir`.
#[no_mangle]
pub unsafe extern "C" fn cpmhs_run_write(run: *const CpmhsRun, out_dir: *const c_char) -> CpmhsStatus {
    guard(|| {
        let r = run.as_ref().ok_or_else(|| null("run"))?;
        let dir = str_arg(out_dir, "out_dir")?;
        scenario::write_results(
            &r.scenario.name,
            &r.scenario.network,
            &r.run,
            &r.summary,
            Path::new(dir),
        )
        .map_err(scenario_status)?;
        Ok(())
    })
}

/// η_t·ρ·g·h·q in watts.
#[no_mangle]
pub unsafe extern "C" fn cpmhs_generation_power(
    eta_turbine: f64,
    rho: f64,
    g: f64,
    head_m: f64,
    q_turbine_m3s: f64,
    out_w: *mut f64,
) -> CpmhsStatus {
    guard(|| {
        if out_w.is_null() {
            return Err(null("out_w"));
        }
        *out_w = hydraulics::generation_power(eta_turbine, rho, g, head_m, q_turbine_m3s)
            .map_err(hydraulics_status)?;
        Ok(())
    })
}

/// η_p·P/(ρ·g·h) in m³/s.
#[no_mangle]
pub unsafe extern "C" fn cpmhs_pumping_flow(
    eta_pump: f64,
    rho: f64,
    g: f64,
    head_m: f64,
    p_charge_w: f64,
    out_m3s: *mut f64,
) -> CpmhsStatus {
    guard(|| {
        if out_m3s.is_null() {
            return Err(null("out_m3s"));
        }
        *out_m3s = hydraulics::pumping_flow(eta_pump, rho, g, head_m, p_charge_w)
            .map_err(hydraulics_status)?;
        Ok(())
    })
}

/// η·ρ·g·h·V, reported in both joules and GWh.
#[no_mangle]
pub unsafe extern "C" fn cpmhs_potential_energy(
    eta: f64,
    rho: f64,
    g: f64,
    head_m: f64,
    volume_m3: f64,
    out_joules: *mut f64,
    out_gwh: *mut f64,
) -> CpmhsStatus {
    guard(|| {
        if out_joules.is_null() || out_gwh.is_null() {
            return Err(null("output pointer"));
        }
        let e = hydraulics::potential_energy(eta, rho, g, head_m, volume_m3)
            .map_err(hydraulics_status)?;
        *out_joules = e.joules;
        *out_gwh = e.gwh;
        Ok(())
    })
}

/// Plans intermediate sites over `n` profile vertices. On success
/// `out_n_intermediate` holds the site count and `out_min_head_m` the smallest
/// hop head.
#[no_mangle]
pub unsafe extern "C" fn cpmhs_plan_cascade(
    distance_km: *const f64,
    elevation_m: *const f64,
    n: usize,
    segment_max_km: f64,
    head_min_m: f64,
    out_n_intermediate: *mut usize,
    out_min_head_m: *mut f64,
) -> CpmhsStatus {
    guard(|| {
        if distance_km.is_null() || elevation_m.is_null() {
            return Err(null("profile"));
        }
        if out_n_intermediate.is_null() || out_min_head_m.is_null() {
            return Err(null("output pointer"));
        }
        let d = std::slice::from_raw_parts(distance_km, n);
        let e = std::slice::from_raw_parts(elevation_m, n);
        let pairs: Vec<(f64, f64)> = d.iter().copied().zip(e.iter().copied()).collect();
        let profile = TerrainProfile::from_pairs(&pairs)
            .map_err(|err| (CpmhsStatus::InvalidArgument, err.to_string()))?;
        let constraints = PlanConstraints {
            segment_max_km,
            head_min_m,
            ..PlanConstraints::default()
        };
        let plan = plan_cascade(&profile, &constraints).map_err(|err| match err {
            cpmhs::planner::PlanError::Constraints(_) => {
                (CpmhsStatus::InvalidArgument, err.to_string())
            }
            _ => (CpmhsStatus::Infeasible, err.to_string()),
        })?;
        *out_n_intermediate = plan.n_intermediate;
        *out_min_head_m = plan.min_segment_head_m();
        Ok(())
    })
}
