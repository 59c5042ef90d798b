use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use cpmhs_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(cpmhs_last_error()) }
        .to_string_lossy()
        .into_owned()
}

#[test]
fn bundled_scenario_round_trip() {
    unsafe {
        let mut sc = ptr::null_mut();
        assert_eq!(cpmhs_scenario_bundled(&mut sc), CpmhsStatus::Ok);
        assert_eq!(cpmhs_scenario_reservoir_count(sc), 8);
        assert_eq!(cpmhs_scenario_stage_count(sc), 7);
        assert_eq!(cpmhs_scenario_step_count(sc), 24);

        let mut violations = usize::MAX;
        assert_eq!(cpmhs_scenario_validate(sc, &mut violations), CpmhsStatus::Ok);
        assert_eq!(violations, 0);

        let mut run = ptr::null_mut();
        assert_eq!(cpmhs_simulate(sc, &mut run), CpmhsStatus::Ok);
        assert_eq!(cpmhs_run_step_count(run), 24);
        let mut summary = CpmhsSummary::default();
        assert_eq!(cpmhs_run_summary(run, &mut summary), CpmhsStatus::Ok);
        assert_eq!(summary.steps, 24);
        assert!((summary.load_wh - 24.0e6).abs() < 1e-6);
        assert!((summary.generated_wh + summary.imported_wh + summary.unserved_wh - 24.0e6).abs() < 1e-3);

        let mut v = 0.0;
        assert_eq!(cpmhs_run_volume(run, 0, 0, &mut v), CpmhsStatus::Ok);
        assert!(v < 11.2316e6 && v > 11.0e6);
        assert_eq!(cpmhs_run_volume(run, 99, 0, &mut v), CpmhsStatus::InvalidArgument);
        assert!(last_error().contains("step 99"));

        let dir = tempfile::tempdir().unwrap();
        let cdir = CString::new(dir.path().to_str().unwrap()).unwrap();
        assert_eq!(cpmhs_run_write(run, cdir.as_ptr()), CpmhsStatus::Ok);
        for f in ["steps.csv", "reservoirs.csv", "summary.json"] {
            assert!(dir.path().join(f).is_file(), "{f}");
        }

        cpmhs_run_free(run);
        cpmhs_scenario_free(sc);
    }
}

#[test]
fn load_errors_map_to_status_codes() {
    unsafe {
        let mut sc = ptr::null_mut();
        let missing = CString::new("/definitely/not/here.json").unwrap();
        assert_eq!(cpmhs_scenario_load(missing.as_ptr(), &mut sc), CpmhsStatus::Io);
        assert!(sc.is_null());
        assert!(!last_error().is_empty());

        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.json");
        std::fs::write(&bad, "{ not json").unwrap();
        let cbad = CString::new(bad.to_str().unwrap()).unwrap();
        assert_eq!(cpmhs_scenario_load(cbad.as_ptr(), &mut sc), CpmhsStatus::Parse);

        assert_eq!(cpmhs_scenario_load(ptr::null(), &mut sc), CpmhsStatus::NullPointer);
        assert_eq!(cpmhs_simulate(ptr::null(), ptr::null_mut()), CpmhsStatus::NullPointer);
        cpmhs_scenario_free(ptr::null_mut());
        cpmhs_run_free(ptr::null_mut());
    }
}

#[test]
fn hydraulics_wrappers() {
    unsafe {
        let mut p = 0.0;
        assert_eq!(
            cpmhs_generation_power(0.9, 1000.0, 9.81, 63.01, 10.0, &mut p),
            CpmhsStatus::Ok
        );
        assert!((p - 0.9 * 1000.0 * 9.81 * 63.01 * 10.0).abs() < 1e-6);
        assert!(last_error().is_empty());

        let mut q = 0.0;
        assert_eq!(
            cpmhs_pumping_flow(0.85, 1000.0, 9.81, 0.0, 1e6, &mut q),
            CpmhsStatus::InvalidArgument
        );
        assert!(!last_error().is_empty());

        let (mut j, mut gwh) = (0.0, 0.0);
        assert_eq!(
            cpmhs_potential_energy(1.0, 1000.0, 9.81, 26.76, 11.2316e6, &mut j, &mut gwh),
            CpmhsStatus::Ok
        );
        let expected = 1000.0 * 9.81 * 26.76 * 11.2316e6 / 3.6e12;
        assert!((gwh - expected).abs() < 1e-12);
    }
}

#[test]
fn planner_wrapper() {
    let d: Vec<f64> = (0..=10).map(|k| k as f64 * 0.3).collect();
    let e: Vec<f64> = d.iter().map(|x| 100.0 - 10.0 * x).collect();
    let (mut n, mut h) = (usize::MAX, 0.0);
    unsafe {
        assert_eq!(
            cpmhs_plan_cascade(d.as_ptr(), e.as_ptr(), d.len(), 1.0, 1.0, &mut n, &mut h),
            CpmhsStatus::Ok
        );
    }
    // 3 km at 0.3 km spacing with 1 km hops: 0.9 km hops need 3 intermediates.
    assert_eq!(n, 3);
    assert!(h > 0.0);

    let flat = [0.0, 0.5, 1.0, 1.5, 2.0, 2.5];
    let level = [10.0, 10.0, 10.0, 10.0, 10.0, 0.0];
    unsafe {
        assert_eq!(
            cpmhs_plan_cascade(flat.as_ptr(), level.as_ptr(), 6, 1.0, 1.0, &mut n, &mut h),
            CpmhsStatus::Infeasible
        );
    }
}

#[test]
fn header_is_generated_and_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/cpmhs.h");
    let text = std::fs::read_to_string(&header).expect("header exists");
    for symbol in [
        "cpmhs_scenario_load",
        "cpmhs_simulate",
        "cpmhs_run_summary",
        "cpmhs_plan_cascade",
        "CPMHS_STATUS_INFEASIBLE",
        "typedef struct CpmhsScenario CpmhsScenario",
    ] {
        assert!(text.contains(symbol), "{symbol} missing from header");
    }

    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"cpmhs.h\"\nint main(void) { CpmhsScenario *s = 0; \
         if (cpmhs_scenario_bundled(&s) != CPMHS_STATUS_OK) return 1; \
         cpmhs_scenario_free(s); return 0; }\n",
    )
    .unwrap();
    let Ok(status) = Command::new("cc")
        .arg("-fsyntax-only")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(header.parent().unwrap())
        .arg(&src)
        .status()
    else {
        eprintln!("no C compiler found; skipped the syntax check");
        return;
    };
    assert!(status.success(), "header failed to compile");
}
