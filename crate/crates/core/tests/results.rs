use std::collections::HashMap;

use cpmhs::dispatch::RuleBasedDispatch;
use cpmhs::model::{SeriesUnit, TimeSeries};
use cpmhs::scenario::{bundled_mountain_lake_scenario, write_results};
use cpmhs::simulation::{run_simulation, summarize};

fn column_sums(path: &std::path::Path) -> (usize, HashMap<String, f64>) {
    let mut reader = csv::Reader::from_path(path).unwrap();
    let header = reader.headers().unwrap().clone();
    let mut sums: HashMap<String, f64> = HashMap::new();
    let mut rows = 0;
    for rec in reader.records() {
        let rec = rec.unwrap();
        rows += 1;
        for (h, v) in header.iter().zip(rec.iter()) {
            *sums.entry(h.to_string()).or_default() += v.parse::<f64>().unwrap();
        }
    }
    (rows, sums)
}

#[test]
fn summary_totals_equal_step_column_sums() {
    let mut scenario = bundled_mountain_lake_scenario();
    // Alternate deficit and surplus so every column moves.
    let load: Vec<f64> = (0..48).map(|t| if t % 6 < 3 { 3.0e6 } else { 0.5e6 }).collect();
    let ren: Vec<f64> = (0..48).map(|t| if t % 6 < 3 { 0.0 } else { 9.0e6 }).collect();
    scenario.series.load = TimeSeries::new(3600.0, SeriesUnit::Watts, load).unwrap();
    scenario.series.renewable = TimeSeries::new(3600.0, SeriesUnit::Watts, ren).unwrap();
    let run = run_simulation(&scenario.network, &RuleBasedDispatch, &scenario.series, 3600.0).unwrap();
    let summary = summarize(&scenario.network, &run);
    let dir = tempfile::tempdir().unwrap();
    write_results(&scenario.name, &scenario.network, &run, &summary, dir.path()).unwrap();

    let (rows, sums) = column_sums(&dir.path().join("steps.csv"));
    assert_eq!(rows, 48);
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    let totals = &doc["totals"];
    for (col, key) in [
        ("load_w", "load_wh"),
        ("renewable_w", "renewable_wh"),
        ("generation_w", "generated_wh"),
        ("pumping_w", "pumped_wh"),
        ("grid_import_w", "imported_wh"),
        ("grid_export_w", "exported_wh"),
        ("unserved_w", "unserved_wh"),
        ("curtailed_w", "curtailed_wh"),
    ] {
        let total = totals[key].as_f64().unwrap();
        // One-hour steps: W summed over rows is Wh.
        let resum = sums[col];
        assert!((total - resum).abs() <= 1e-9 * total.abs().max(1.0), "{key}: {total} vs {resum}");
    }
    assert!(totals["pumped_wh"].as_f64().unwrap() > 0.0);
    assert!(totals["generated_wh"].as_f64().unwrap() > 0.0);
    assert!(totals["exported_wh"].as_f64().unwrap() > 0.0);

    let res_rows = reservoir_rows(&dir.path().join("reservoirs.csv"));
    assert_eq!(res_rows, 48 * scenario.network.reservoirs().len());
    let finals = doc["final_volumes_m3"].as_array().unwrap();
    assert_eq!(finals.len(), scenario.network.reservoirs().len());
}

fn reservoir_rows(path: &std::path::Path) -> usize {
    let mut reader = csv::Reader::from_path(path).unwrap();
    assert_eq!(
        reader.headers().unwrap().iter().collect::<Vec<_>>(),
        ["step", "reservoir_id", "volume_m3", "spilled_m3_cum", "evap_leak_m3_cum", "natural_inflow_m3s"]
    );
    reader.records().count()
}

#[test]
fn quiescent_day_has_zero_flows() {
    let mut scenario = bundled_mountain_lake_scenario();
    scenario.series.load = TimeSeries::constant(3600.0, SeriesUnit::Watts, 0.0, 24).unwrap();
    let run = run_simulation(&scenario.network, &RuleBasedDispatch, &scenario.series, 3600.0).unwrap();
    let summary = summarize(&scenario.network, &run);
    let dir = tempfile::tempdir().unwrap();
    write_results(&scenario.name, &scenario.network, &run, &summary, dir.path()).unwrap();
    let (rows, sums) = column_sums(&dir.path().join("steps.csv"));
    assert_eq!(rows, 24);
    for (col, total) in sums {
        if col != "step" {
            assert_eq!(total, 0.0, "{col}");
        }
    }
}

#[test]
fn write_to_unwritable_path_names_it() {
    let scenario = bundled_mountain_lake_scenario();
    let run = run_simulation(&scenario.network, &RuleBasedDispatch, &scenario.series, 3600.0).unwrap();
    let summary = summarize(&scenario.network, &run);
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let err = write_results(&scenario.name, &scenario.network, &run, &summary, &blocker.join("out"))
        .unwrap_err();
    assert!(err.to_string().contains("file"), "{err}");
}
