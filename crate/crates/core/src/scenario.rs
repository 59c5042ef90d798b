//! Scenario files, time-series CSV, result writers and the bundled Mountain
//! Lake case study.
//!
//! A scenario is one JSON document; its time series live in sibling CSV files
//! referenced by relative path. Series CSVs carry the header `step,value_<unit>`
//! with `unit` one of `w` or `m3s`, and a 0-based contiguous step column.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::hydraulics::{potential_energy, EnergyEstimate};
use crate::model::{
    derive_head, validate_network, CascadeNetwork, GridLimits, PhysicalConstants, Reservoir,
    SeriesUnit, Stage, TimeSeries, ValidationReport,
};
use crate::optimizer::{FitnessWeights, OptimizationResult, SearchSpace};
use crate::planner::TerrainProfile;
use crate::simulation::{
    mass_balance_report, SeriesSet, SimulationRun, Summary, DEFAULT_DT_S,
};

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{origin}: parse error: {message}")]
    Parse { origin: String, message: String },
    #[error("{origin}: {message}")]
    Csv { origin: String, message: String },
    #[error("series mismatch: {0}")]
    Series(String),
    #[error("unknown or invalid override {0}")]
    Override(String),
    #[error("scenario failed validation:\n{0}")]
    Validation(ValidationReport),
}

impl ScenarioError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        ScenarioError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Problems with the input text itself, as opposed to its contents.
    pub fn is_parse_error(&self) -> bool {
        matches!(
            self,
            ScenarioError::Io { .. }
                | ScenarioError::Parse { .. }
                | ScenarioError::Csv { .. }
                | ScenarioError::Series(_)
                | ScenarioError::Override(_)
        )
    }
}

/// A network together with the series it runs against.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub description: String,
    pub dt_s: f64,
    pub network: CascadeNetwork,
    pub series: SeriesSet,
    pub weights: Option<FitnessWeights>,
    pub search_space: Option<SearchSpace>,
    /// Free-form annotations carried through untouched.
    pub metadata: Map<String, Value>,
}

// ---------------------------------------------------------------------------
// Document layer

/// A volume bound: a number, or `"inf"` / `"-inf"` for unbounded sinks.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Bound(f64);

impl Serialize for Bound {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0 == f64::INFINITY {
            s.serialize_str("inf")
        } else if self.0 == f64::NEG_INFINITY {
            s.serialize_str("-inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Bound {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(Bound(v)),
            Repr::Text(t) => match t.as_str() {
                "inf" | "+inf" => Ok(Bound(f64::INFINITY)),
                "-inf" => Ok(Bound(f64::NEG_INFINITY)),
                other => Err(serde::de::Error::custom(format!(
                    "expected a number, \"inf\" or \"-inf\", got {other:?}"
                ))),
            },
        }
    }
}

fn default_dt() -> f64 {
    DEFAULT_DT_S
}
fn default_rho() -> f64 {
    PhysicalConstants::default().rho
}
fn default_g() -> f64 {
    PhysicalConstants::default().g
}
fn default_eta_turbine() -> f64 {
    0.90
}
fn default_eta_pump() -> f64 {
    0.85
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConstantsDoc {
    #[serde(default = "default_rho")]
    rho: f64,
    #[serde(default = "default_g")]
    g: f64,
}

impl Default for ConstantsDoc {
    fn default() -> Self {
        Self {
            rho: default_rho(),
            g: default_g(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReservoirDoc {
    id: String,
    #[serde(default)]
    name: Option<String>,
    elevation_m: f64,
    surface_area_m2: f64,
    #[serde(default)]
    volume_min_m3: Option<Bound>,
    volume_max_m3: Bound,
    #[serde(default)]
    volume_init_m3: Option<f64>,
    #[serde(default)]
    loss_alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    natural_inflow_id: Option<String>,
}

const RESERVOIR_FIELDS: &[&str] = &[
    "id",
    "name",
    "elevation_m",
    "surface_area_m2",
    "volume_min_m3",
    "volume_max_m3",
    "volume_init_m3",
    "loss_alpha",
    "natural_inflow_id",
];

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StageDoc {
    id: String,
    upper_id: String,
    lower_id: String,
    #[serde(default)]
    head_m: Option<f64>,
    distance_km: f64,
    #[serde(default = "default_eta_turbine")]
    eta_turbine: f64,
    #[serde(default = "default_eta_pump")]
    eta_pump: f64,
    #[serde(default)]
    q_turbine_min_m3s: f64,
    q_turbine_max_m3s: f64,
    p_pump_max_w: f64,
}

const STAGE_FIELDS: &[&str] = &[
    "id",
    "upper_id",
    "lower_id",
    "head_m",
    "distance_km",
    "eta_turbine",
    "eta_pump",
    "q_turbine_min_m3s",
    "q_turbine_max_m3s",
    "p_pump_max_w",
];

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridDoc {
    import_max_w: f64,
    export_max_w: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SeriesDoc {
    load: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    renewable: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    inflows: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightsDoc {
    #[serde(default)]
    w_unserved: f64,
    #[serde(default)]
    w_import: f64,
    #[serde(default)]
    w_spill: f64,
    #[serde(default)]
    w_export_credit: f64,
    #[serde(default)]
    w_reservoir: f64,
}

const WEIGHT_FIELDS: &[&str] = &[
    "w_unserved",
    "w_import",
    "w_spill",
    "w_export_credit",
    "w_reservoir",
];

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SearchSpaceDoc {
    #[serde(default)]
    n_intermediate: BTreeMap<String, Vec<usize>>,
    intermediate_volume_max_m3: Vec<f64>,
    q_turbine_max_m3s: Vec<f64>,
    p_pump_max_w: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioDoc {
    name: String,
    #[serde(default)]
    description: String,
    #[serde(default = "default_dt")]
    dt_s: f64,
    #[serde(default)]
    constants: ConstantsDoc,
    reservoirs: Vec<ReservoirDoc>,
    stages: Vec<StageDoc>,
    grid: GridDoc,
    series: SeriesDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weights: Option<WeightsDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    search_space: Option<SearchSpaceDoc>,
    #[serde(default, skip_serializing_if = "Map::is_empty")]
    metadata: Map<String, Value>,
}

// ---------------------------------------------------------------------------
// Overrides

/// Splits `key=value`.
pub fn parse_override(text: &str) -> Result<(String, String), ScenarioError> {
    text.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .filter(|(k, _)| !k.is_empty())
        .ok_or_else(|| ScenarioError::Override(format!("{text:?} (expected key=value)")))
}

fn override_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Applies dotted-path overrides such as `reservoirs.mountain.volume_init_m3=0`
/// or `grid.import_max_w=2e6` to a raw scenario document. Array elements are
/// addressed by `id` or by position. Unknown paths are rejected.
fn apply_overrides(doc: &mut Value, overrides: &[(String, String)]) -> Result<(), ScenarioError> {
    for (key, raw) in overrides {
        let bad = || ScenarioError::Override(key.clone());
        let parts: Vec<&str> = key.split('.').collect();
        let root = doc.as_object_mut().ok_or_else(bad)?;
        let value = override_value(raw);
        match parts.as_slice() {
            [field @ ("name" | "description" | "dt_s")] => {
                root.insert(field.to_string(), value);
            }
            ["constants", field @ ("rho" | "g")] => {
                let c = root
                    .entry("constants")
                    .or_insert_with(|| Value::Object(Map::new()));
                c.as_object_mut().ok_or_else(bad)?.insert(field.to_string(), value);
            }
            ["grid", field @ ("import_max_w" | "export_max_w")] => {
                let g = root.get_mut("grid").and_then(Value::as_object_mut).ok_or_else(bad)?;
                g.insert(field.to_string(), value);
            }
            ["weights", field] if WEIGHT_FIELDS.contains(field) => {
                let w = root
                    .entry("weights")
                    .or_insert_with(|| Value::Object(Map::new()));
                w.as_object_mut().ok_or_else(bad)?.insert(field.to_string(), value);
            }
            ["series", field @ ("load" | "renewable")] => {
                let s = root.get_mut("series").and_then(Value::as_object_mut).ok_or_else(bad)?;
                s.insert(field.to_string(), value);
            }
            [list @ ("reservoirs" | "stages"), selector, field] => {
                let allowed = if *list == "reservoirs" {
                    RESERVOIR_FIELDS
                } else {
                    STAGE_FIELDS
                };
                if !allowed.contains(field) {
                    return Err(bad());
                }
                let items = root.get_mut(*list).and_then(Value::as_array_mut).ok_or_else(bad)?;
                let pos = items
                    .iter()
                    .position(|it| it.get("id").and_then(Value::as_str) == Some(selector))
                    .or_else(|| selector.parse::<usize>().ok().filter(|&i| i < items.len()))
                    .ok_or_else(bad)?;
                items[pos]
                    .as_object_mut()
                    .ok_or_else(bad)?
                    .insert(field.to_string(), value);
            }
            _ => return Err(bad()),
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Time series CSV

/// Parses series CSV text. `origin` names the source in error messages.
pub fn parse_timeseries_csv(
    text: &str,
    expected_unit: SeriesUnit,
    dt_s: f64,
    origin: &str,
) -> Result<TimeSeries, ScenarioError> {
    let err = |message: String| ScenarioError::Csv {
        origin: origin.to_string(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| err(format!("cannot read header: {e}")))?
        .clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(err("empty file: missing header".into()));
    }
    if headers.len() != 2 || &headers[0] != "step" {
        return Err(err(format!(
            "header must be `step,value_{}`, got `{}`",
            expected_unit.suffix(),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let unit = headers[1]
        .strip_prefix("value_")
        .and_then(SeriesUnit::from_suffix)
        .ok_or_else(|| err(format!("unrecognised value column `{}`", &headers[1])))?;
    if unit != expected_unit {
        return Err(err(format!(
            "unit mismatch: expected value_{}, found value_{}",
            expected_unit.suffix(),
            unit.suffix()
        )));
    }

    let mut values = Vec::new();
    for (expected_step, record) in reader.records().enumerate() {
        let record = record.map_err(|e| err(e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let step: usize = record[0]
            .parse()
            .map_err(|_| err(format!("line {line}: invalid step `{}`", &record[0])))?;
        if step > expected_step {
            return Err(err(format!(
                "line {line}: missing step index {expected_step}"
            )));
        }
        if step < expected_step {
            return Err(err(format!("line {line}: duplicate step index {step}")));
        }
        let value: f64 = record[1]
            .parse()
            .map_err(|_| err(format!("line {line}: invalid value `{}`", &record[1])))?;
        if !value.is_finite() {
            return Err(err(format!("line {line} (row {}): non-finite value", step + 1)));
        }
        values.push(value);
    }
    TimeSeries::new(dt_s, unit, values).map_err(|e| err(e.to_string()))
}

/// Reads a series CSV from disk with the default hourly step.
pub fn load_timeseries_csv(path: &Path, expected_unit: SeriesUnit) -> Result<TimeSeries, ScenarioError> {
    let text = fs::read_to_string(path).map_err(|e| ScenarioError::io(path, e))?;
    parse_timeseries_csv(&text, expected_unit, DEFAULT_DT_S, &path.display().to_string())
}

fn format_timeseries_csv(series: &TimeSeries) -> String {
    let mut out = format!("step,value_{}\n", series.unit().suffix());
    for (i, v) in series.values().iter().enumerate() {
        out.push_str(&format!("{i},{v}\n"));
    }
    out
}

/// Parses terrain CSV text with header `distance_km,elevation_m`.
pub fn parse_terrain_csv(text: &str, origin: &str) -> Result<TerrainProfile, ScenarioError> {
    let err = |message: String| ScenarioError::Csv {
        origin: origin.to_string(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| err(format!("cannot read header: {e}")))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != ["distance_km", "elevation_m"] {
        return Err(err(format!(
            "header must be `distance_km,elevation_m`, got `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut pairs = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| err(e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let num = |i: usize| -> Result<f64, ScenarioError> {
            record[i]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(format!("line {line}: invalid number `{}`", &record[i])))
        };
        pairs.push((num(0)?, num(1)?));
    }
    TerrainProfile::from_pairs(&pairs).map_err(|e| err(e.to_string()))
}

pub fn load_terrain_csv(path: &Path) -> Result<TerrainProfile, ScenarioError> {
    let text = fs::read_to_string(path).map_err(|e| ScenarioError::io(path, e))?;
    parse_terrain_csv(&text, &path.display().to_string())
}

// ---------------------------------------------------------------------------
// Loading

fn doc_to_scenario(
    doc: ScenarioDoc,
    read: &dyn Fn(&str) -> Result<String, ScenarioError>,
) -> Result<Scenario, ScenarioError> {
    let lowers: Vec<&str> = doc.stages.iter().map(|s| s.lower_id.as_str()).collect();
    let reservoirs: Vec<Reservoir> = doc
        .reservoirs
        .iter()
        .map(|r| {
            let min = r.volume_min_m3.map_or(0.0, |b| b.0);
            let max = r.volume_max_m3.0;
            let is_root = !lowers.contains(&r.id.as_str());
            let init = r.volume_init_m3.unwrap_or(if min.is_finite() {
                if is_root {
                    max
                } else {
                    min
                }
            } else {
                0.0
            });
            Reservoir {
                id: r.id.clone(),
                name: r.name.clone().unwrap_or_else(|| r.id.clone()),
                elevation_m: r.elevation_m,
                surface_area_m2: r.surface_area_m2,
                volume_min_m3: min,
                volume_max_m3: max,
                volume_init_m3: init,
                loss_alpha: r.loss_alpha,
                natural_inflow_id: r.natural_inflow_id.clone(),
            }
        })
        .collect();
    let elevation = |id: &str| reservoirs.iter().find(|r| r.id == id).map(|r| r.elevation_m);
    let stages: Vec<Stage> = doc
        .stages
        .iter()
        .map(|s| Stage {
            id: s.id.clone(),
            upper_id: s.upper_id.clone(),
            lower_id: s.lower_id.clone(),
            head_m: s.head_m.unwrap_or_else(|| {
                match (elevation(&s.upper_id), elevation(&s.lower_id)) {
                    (Some(u), Some(l)) => derive_head(u, l),
                    _ => f64::NAN,
                }
            }),
            distance_km: s.distance_km,
            eta_turbine: s.eta_turbine,
            eta_pump: s.eta_pump,
            q_turbine_min_m3s: s.q_turbine_min_m3s,
            q_turbine_max_m3s: s.q_turbine_max_m3s,
            p_pump_max_w: s.p_pump_max_w,
        })
        .collect();
    let network = CascadeNetwork::new(
        PhysicalConstants {
            rho: doc.constants.rho,
            g: doc.constants.g,
        },
        reservoirs,
        stages,
        GridLimits {
            import_max_w: doc.grid.import_max_w,
            export_max_w: doc.grid.export_max_w,
        },
    );
    let report = validate_network(&network);
    if !report.is_valid() {
        return Err(ScenarioError::Validation(report));
    }
    if !(doc.dt_s > 0.0 && doc.dt_s.is_finite()) {
        return Err(ScenarioError::Series(format!("dt_s must be > 0 (got {})", doc.dt_s)));
    }

    let load_series = |rel: &str, unit: SeriesUnit| -> Result<TimeSeries, ScenarioError> {
        parse_timeseries_csv(&read(rel)?, unit, doc.dt_s, rel)
    };
    let load = load_series(&doc.series.load, SeriesUnit::Watts)?;
    let renewable = match &doc.series.renewable {
        Some(p) => load_series(p, SeriesUnit::Watts)?,
        None => TimeSeries::constant(doc.dt_s, SeriesUnit::Watts, 0.0, load.len())
            .map_err(|e| ScenarioError::Series(e.to_string()))?,
    };
    let mut inflows = BTreeMap::new();
    for (id, p) in &doc.series.inflows {
        let s = load_series(p, SeriesUnit::CubicMetresPerSecond)?;
        if let Some(i) = s.values().iter().position(|v| *v < 0.0) {
            return Err(ScenarioError::Series(format!(
                "inflow series {id} is negative at step {i}"
            )));
        }
        inflows.insert(id.clone(), s);
    }
    for r in network.reservoirs() {
        if let Some(id) = &r.natural_inflow_id {
            if !inflows.contains_key(id) {
                return Err(ScenarioError::Series(format!(
                    "reservoir {} refers to missing inflow series {id}",
                    r.id
                )));
            }
        }
    }
    let series = SeriesSet {
        load,
        renewable,
        inflows,
    };
    series
        .check_consistent(doc.dt_s)
        .map_err(|e| ScenarioError::Series(e.to_string()))?;

    let weights = doc.weights.map(|w| FitnessWeights {
        w_unserved: w.w_unserved,
        w_import: w.w_import,
        w_spill: w.w_spill,
        w_export_credit: w.w_export_credit,
        w_reservoir: w.w_reservoir,
    });
    if let Some(w) = &weights {
        if !w.is_valid() {
            return Err(ScenarioError::Validation(ValidationReport {
                violations: vec![crate::model::Violation {
                    subject: crate::model::Subject::Network,
                    reason: "fitness weights must be >= 0".into(),
                }],
            }));
        }
    }
    let search_space = doc.search_space.map(|s| SearchSpace {
        n_intermediate: s.n_intermediate.into_iter().collect(),
        intermediate_volume_max_m3: s.intermediate_volume_max_m3,
        q_turbine_max_m3s: s.q_turbine_max_m3s,
        p_pump_max_w: s.p_pump_max_w,
    });

    Ok(Scenario {
        name: doc.name,
        description: doc.description,
        dt_s: doc.dt_s,
        network,
        series,
        weights,
        search_space,
        metadata: doc.metadata,
    })
}

/// Builds a scenario from JSON text. `read` resolves series paths.
pub fn scenario_from_str(
    text: &str,
    origin: &str,
    overrides: &[(String, String)],
    read: &dyn Fn(&str) -> Result<String, ScenarioError>,
) -> Result<Scenario, ScenarioError> {
    let mut raw: Value = serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
        origin: origin.to_string(),
        message: e.to_string(),
    })?;
    apply_overrides(&mut raw, overrides)?;
    let doc: ScenarioDoc = serde_json::from_value(raw).map_err(|e| ScenarioError::Parse {
        origin: origin.to_string(),
        message: e.to_string(),
    })?;
    doc_to_scenario(doc, read)
}

/// Loads a scenario file; series paths resolve against its directory.
pub fn load_scenario(path: &Path, overrides: &[(String, String)]) -> Result<Scenario, ScenarioError> {
    let text = fs::read_to_string(path).map_err(|e| ScenarioError::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let read = |rel: &str| -> Result<String, ScenarioError> {
        let p = base.join(rel);
        fs::read_to_string(&p).map_err(|e| ScenarioError::io(&p, e))
    };
    scenario_from_str(&text, &path.display().to_string(), overrides, &read)
}

// ---------------------------------------------------------------------------
// Bundled case study

const BUNDLED_JSON: &str = include_str!("../scenarios/mountain_lake/scenario.json");
const BUNDLED_LOAD: &str = include_str!("../scenarios/mountain_lake/load.csv");
const BUNDLED_RENEWABLE: &str = include_str!("../scenarios/mountain_lake/renewable.csv");

/// Name accepted wherever a scenario path is expected.
pub const BUNDLED_NAME: &str = "bundled:mountain-lake";

fn bundled_read(rel: &str) -> Result<String, ScenarioError> {
    match rel {
        "load.csv" => Ok(BUNDLED_LOAD.to_string()),
        "renewable.csv" => Ok(BUNDLED_RENEWABLE.to_string()),
        other => Err(ScenarioError::io(
            Path::new(other),
            std::io::Error::new(std::io::ErrorKind::NotFound, "not part of the bundled scenario"),
        )),
    }
}

/// The bundled scenario with overrides applied.
pub fn bundled_scenario_with(overrides: &[(String, String)]) -> Result<Scenario, ScenarioError> {
    scenario_from_str(BUNDLED_JSON, BUNDLED_NAME, overrides, &bundled_read)
}

/// Mountain Lake feeding Rush Lake through two intermediate reservoirs and
/// Ives Lake through three, with a flat 1 MW 24 h load.
pub fn bundled_mountain_lake_scenario() -> Scenario {
    bundled_scenario_with(&[]).expect("bundled scenario is valid")
}

/// The bundled scenario plus Lake Superior as an unbounded sink below Rush Lake.
pub fn bundled_mountain_lake_scenario_with_sink() -> Scenario {
    let mut scenario = bundled_mountain_lake_scenario();
    let (c, mut reservoirs, mut stages, grid) = scenario.network.clone().into_parts();
    let rush = reservoirs.iter().find(|r| r.id == "rush").cloned().unwrap();
    let superior = Reservoir {
        id: "superior".into(),
        name: "Lake Superior".into(),
        elevation_m: 183.52,
        surface_area_m2: 86_000.0e6,
        volume_min_m3: f64::NEG_INFINITY,
        volume_max_m3: f64::INFINITY,
        volume_init_m3: 0.0,
        loss_alpha: 0.0,
        natural_inflow_id: None,
    };
    let template = stages.iter().find(|s| s.lower_id == "rush").cloned().unwrap();
    stages.push(Stage {
        id: "rush_superior_stage1".into(),
        upper_id: rush.id.clone(),
        lower_id: superior.id.clone(),
        head_m: derive_head(rush.elevation_m, superior.elevation_m),
        // Straight-line separations to Mountain Lake differ by this much.
        distance_km: 3.06 - 1.09,
        ..template
    });
    reservoirs.push(superior);
    scenario.network = CascadeNetwork::new(c, reservoirs, stages, grid);
    scenario
}

/// Stored-energy estimate for one lower lake, from its root reservoir.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchEnergy {
    pub upper_id: String,
    pub lower_id: String,
    pub lower_name: String,
    pub head_m: f64,
    pub volume_m3: f64,
    pub estimate: EnergyEstimate,
    /// Externally reported figure from `metadata.reference_energy_gwh`, if any.
    pub reference_gwh: Option<f64>,
}

/// η = 1 potential energy of each root's stored volume dropped to every leaf
/// it drains into.
pub fn energy_estimates(scenario: &Scenario) -> Vec<BranchEnergy> {
    let net = &scenario.network;
    let c = net.constants();
    let reference = scenario
        .metadata
        .get("reference_energy_gwh")
        .and_then(Value::as_object);
    let mut out = Vec::new();
    for leaf in net.leaves() {
        let mut head = 0.0;
        let mut cur = leaf;
        let mut hops = 0;
        while let Some(s) = net.stage_into(cur) {
            head += net.stages()[s].head_m;
            cur = net.stage_link(s).unwrap().0;
            hops += 1;
            if hops > net.stages().len() {
                break;
            }
        }
        if hops == 0 {
            continue;
        }
        let root = &net.reservoirs()[cur];
        let lower = &net.reservoirs()[leaf];
        let volume = root.volume_init_m3.max(0.0);
        let Ok(estimate) = potential_energy(1.0, c.rho, c.g, head, volume) else {
            continue;
        };
        out.push(BranchEnergy {
            upper_id: root.id.clone(),
            lower_id: lower.id.clone(),
            lower_name: lower.name.clone(),
            head_m: head,
            volume_m3: volume,
            estimate,
            reference_gwh: reference.and_then(|m| m.get(&lower.id)).and_then(Value::as_f64),
        });
    }
    out
}

// ---------------------------------------------------------------------------
// Writing

fn write_file(path: &Path, contents: &str) -> Result<(), ScenarioError> {
    fs::write(path, contents).map_err(|e| ScenarioError::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<(), ScenarioError> {
    fs::create_dir_all(dir).map_err(|e| ScenarioError::io(dir, e))
}

fn scenario_to_doc(scenario: &Scenario, series: SeriesDoc) -> ScenarioDoc {
    let net = &scenario.network;
    ScenarioDoc {
        name: scenario.name.clone(),
        description: scenario.description.clone(),
        dt_s: scenario.dt_s,
        constants: ConstantsDoc {
            rho: net.constants().rho,
            g: net.constants().g,
        },
        reservoirs: net
            .reservoirs()
            .iter()
            .map(|r| ReservoirDoc {
                id: r.id.clone(),
                name: Some(r.name.clone()),
                elevation_m: r.elevation_m,
                surface_area_m2: r.surface_area_m2,
                volume_min_m3: Some(Bound(r.volume_min_m3)),
                volume_max_m3: Bound(r.volume_max_m3),
                volume_init_m3: Some(r.volume_init_m3),
                loss_alpha: r.loss_alpha,
                natural_inflow_id: r.natural_inflow_id.clone(),
            })
            .collect(),
        stages: net
            .stages()
            .iter()
            .map(|s| StageDoc {
                id: s.id.clone(),
                upper_id: s.upper_id.clone(),
                lower_id: s.lower_id.clone(),
                head_m: Some(s.head_m),
                distance_km: s.distance_km,
                eta_turbine: s.eta_turbine,
                eta_pump: s.eta_pump,
                q_turbine_min_m3s: s.q_turbine_min_m3s,
                q_turbine_max_m3s: s.q_turbine_max_m3s,
                p_pump_max_w: s.p_pump_max_w,
            })
            .collect(),
        grid: GridDoc {
            import_max_w: net.grid().import_max_w,
            export_max_w: net.grid().export_max_w,
        },
        series,
        weights: scenario.weights.map(|w| WeightsDoc {
            w_unserved: w.w_unserved,
            w_import: w.w_import,
            w_spill: w.w_spill,
            w_export_credit: w.w_export_credit,
            w_reservoir: w.w_reservoir,
        }),
        search_space: scenario.search_space.as_ref().map(|s| SearchSpaceDoc {
            n_intermediate: s.n_intermediate.iter().cloned().collect(),
            intermediate_volume_max_m3: s.intermediate_volume_max_m3.clone(),
            q_turbine_max_m3s: s.q_turbine_max_m3s.clone(),
            p_pump_max_w: s.p_pump_max_w.clone(),
        }),
        metadata: scenario.metadata.clone(),
    }
}

/// Writes `scenario.json` plus one CSV per series into `dir`. Returns the
/// scenario file path.
pub fn write_scenario(scenario: &Scenario, dir: &Path) -> Result<PathBuf, ScenarioError> {
    ensure_dir(dir)?;
    write_file(&dir.join("load.csv"), &format_timeseries_csv(&scenario.series.load))?;
    write_file(
        &dir.join("renewable.csv"),
        &format_timeseries_csv(&scenario.series.renewable),
    )?;
    let mut inflows = BTreeMap::new();
    for (id, s) in &scenario.series.inflows {
        let file = format!("inflow_{id}.csv");
        write_file(&dir.join(&file), &format_timeseries_csv(s))?;
        inflows.insert(id.clone(), file);
    }
    let doc = scenario_to_doc(
        scenario,
        SeriesDoc {
            load: "load.csv".into(),
            renewable: Some("renewable.csv".into()),
            inflows,
        },
    );
    let path = dir.join("scenario.json");
    let mut text = serde_json::to_string_pretty(&doc).expect("scenario serializes");
    text.push('\n');
    write_file(&path, &text)?;
    Ok(path)
}

#[derive(Serialize)]
struct Totals {
    load_wh: f64,
    renewable_wh: f64,
    generated_wh: f64,
    pumped_wh: f64,
    imported_wh: f64,
    exported_wh: f64,
    unserved_wh: f64,
    curtailed_wh: f64,
    spilled_m3: f64,
    losses_m3: f64,
}

#[derive(Serialize)]
struct FinalVolume<'a> {
    id: &'a str,
    volume_m3: f64,
}

#[derive(Serialize)]
struct SummaryDoc<'a> {
    name: &'a str,
    steps: usize,
    dt_s: f64,
    totals: Totals,
    final_volumes_m3: Vec<FinalVolume<'a>>,
    mass_balance_max_relative: f64,
}

/// Column names of `steps.csv` for `network`.
pub fn step_csv_header(network: &CascadeNetwork) -> Vec<String> {
    let mut h: Vec<String> = [
        "step",
        "load_w",
        "renewable_w",
        "net_load_w",
        "generation_w",
        "pumping_w",
        "grid_import_w",
        "grid_export_w",
        "unserved_w",
        "curtailed_w",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for s in network.stages() {
        for suffix in ["q_turbine_m3s", "q_pump_m3s", "p_gen_w", "p_pump_w"] {
            h.push(format!("{}_{suffix}", s.id));
        }
    }
    h
}

fn csv_text(header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<String, ScenarioError> {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    let wrap = |e: csv::Error| ScenarioError::Csv {
        origin: "writer".into(),
        message: e.to_string(),
    };
    w.write_record(header).map_err(wrap)?;
    for row in rows {
        w.write_record(&row).map_err(wrap)?;
    }
    let bytes = w.into_inner().map_err(|e| ScenarioError::Csv {
        origin: "writer".into(),
        message: e.to_string(),
    })?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Writes `steps.csv`, `reservoirs.csv` and `summary.json` into `out_dir`.
pub fn write_results(
    name: &str,
    network: &CascadeNetwork,
    run: &SimulationRun,
    summary: &Summary,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, ScenarioError> {
    ensure_dir(out_dir)?;

    let steps = csv_text(
        &step_csv_header(network),
        run.records.iter().map(|r| {
            let mut row = vec![
                r.step_index.to_string(),
                r.load_w.to_string(),
                r.renewable_w.to_string(),
                (r.load_w - r.renewable_w).to_string(),
                r.generation_w().to_string(),
                r.pumping_w().to_string(),
                r.grid_import_w.to_string(),
                r.grid_export_w.to_string(),
                r.unserved_w.to_string(),
                r.curtailed_w.to_string(),
            ];
            for f in &r.stages {
                row.extend([
                    f.q_turbine_m3s.to_string(),
                    f.q_pump_m3s.to_string(),
                    f.p_gen_w.to_string(),
                    f.p_pump_w.to_string(),
                ]);
            }
            row
        }),
    )?;

    let res_header: Vec<String> = [
        "step",
        "reservoir_id",
        "volume_m3",
        "spilled_m3_cum",
        "evap_leak_m3_cum",
        "natural_inflow_m3s",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let reservoirs = csv_text(
        &res_header,
        run.records.iter().flat_map(|r| {
            network
                .reservoirs()
                .iter()
                .zip(&r.reservoirs)
                .zip(&r.natural_inflow_m3s)
                .map(move |((res, st), q)| {
                    vec![
                        r.step_index.to_string(),
                        res.id.clone(),
                        st.volume_m3.to_string(),
                        st.spilled_m3_cum.to_string(),
                        st.evap_leak_m3_cum.to_string(),
                        q.to_string(),
                    ]
                })
        }),
    )?;

    let doc = SummaryDoc {
        name,
        steps: summary.steps,
        dt_s: summary.dt_s,
        totals: Totals {
            load_wh: summary.load_wh,
            renewable_wh: summary.renewable_wh,
            generated_wh: summary.generated_wh,
            pumped_wh: summary.pumped_wh,
            imported_wh: summary.imported_wh,
            exported_wh: summary.exported_wh,
            unserved_wh: summary.unserved_wh,
            curtailed_wh: summary.curtailed_wh,
            spilled_m3: summary.spilled_m3,
            losses_m3: summary.losses_m3,
        },
        final_volumes_m3: summary
            .final_volumes_m3
            .iter()
            .map(|(id, v)| FinalVolume { id, volume_m3: *v })
            .collect(),
        mass_balance_max_relative: mass_balance_report(network, run).max_relative(),
    };
    let mut summary_text = serde_json::to_string_pretty(&doc).expect("summary serializes");
    summary_text.push('\n');

    let paths = vec![
        out_dir.join("steps.csv"),
        out_dir.join("reservoirs.csv"),
        out_dir.join("summary.json"),
    ];
    write_file(&paths[0], &steps)?;
    write_file(&paths[1], &reservoirs)?;
    write_file(&paths[2], &summary_text)?;
    Ok(paths)
}

/// Writes the optimizer's evaluation log as CSV: enumeration index, the
/// flattened configuration, fitness.
pub fn write_evaluation_log(result: &OptimizationResult, path: &Path) -> Result<(), ScenarioError> {
    let branches: Vec<String> = result
        .best
        .n_intermediate
        .iter()
        .map(|(b, _)| format!("n_intermediate_{b}"))
        .collect();
    let mut header = vec!["index".to_string()];
    header.extend(branches);
    header.extend(
        ["intermediate_volume_max_m3", "q_turbine_max_m3s", "p_pump_max_w", "fitness"]
            .iter()
            .map(|s| s.to_string()),
    );
    let text = csv_text(
        &header,
        result.log.iter().map(|e| {
            let mut row = vec![e.index.to_string()];
            row.extend(e.config.n_intermediate.iter().map(|(_, n)| n.to_string()));
            row.extend([
                e.config.intermediate_volume_max_m3.to_string(),
                e.config.q_turbine_max_m3s.to_string(),
                e.config.p_pump_max_w.to_string(),
                e.fitness.to_string(),
            ]);
            row
        }),
    )?;
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    write_file(path, &text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hourly_csv() {
        let mut text = String::from("step,value_w\n");
        for i in 0..24 {
            text.push_str(&format!("{i},1000000\n"));
        }
        let s = parse_timeseries_csv(&text, SeriesUnit::Watts, DEFAULT_DT_S, "t").unwrap();
        assert_eq!(s.len(), 24);
        assert_eq!(s.step_seconds(), 3600.0);
    }

    #[test]
    fn gap_in_steps_names_missing_index() {
        let text = "step,value_w\n0,1\n1,1\n3,1\n";
        let err = parse_timeseries_csv(text, SeriesUnit::Watts, 3600.0, "t").unwrap_err();
        assert!(err.to_string().contains("missing step index 2"), "{err}");
    }

    #[test]
    fn duplicate_step_rejected() {
        let text = "step,value_w\n0,1\n0,1\n";
        let err = parse_timeseries_csv(text, SeriesUnit::Watts, 3600.0, "t").unwrap_err();
        assert!(err.to_string().contains("duplicate step index 0"), "{err}");
    }

    #[test]
    fn nan_value_reports_row() {
        let text = "step,value_w\n0,1\n1,NaN\n";
        let err = parse_timeseries_csv(text, SeriesUnit::Watts, 3600.0, "t").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("non-finite") && msg.contains("row 2"), "{msg}");
    }

    #[test]
    fn unit_mismatch_rejected() {
        let text = "step,value_m3s\n0,1\n";
        let err = parse_timeseries_csv(text, SeriesUnit::Watts, 3600.0, "t").unwrap_err();
        assert!(err.to_string().contains("unit mismatch"), "{err}");
    }

    #[test]
    fn empty_scenario_is_parse_error() {
        let err = scenario_from_str("", "empty", &[], &bundled_read).unwrap_err();
        assert!(matches!(err, ScenarioError::Parse { .. }));
        assert!(err.is_parse_error());
    }

    #[test]
    fn parse_error_carries_field_context() {
        let err = scenario_from_str(r#"{"name": "x"}"#, "doc", &[], &bundled_read).unwrap_err();
        assert!(err.to_string().contains("missing field"), "{err}");
    }

    #[test]
    fn bound_accepts_infinity_strings() {
        let b: Bound = serde_json::from_str("\"inf\"").unwrap();
        assert_eq!(b.0, f64::INFINITY);
        let b: Bound = serde_json::from_str("\"-inf\"").unwrap();
        assert_eq!(b.0, f64::NEG_INFINITY);
        assert!(serde_json::from_str::<Bound>("\"lots\"").is_err());
        assert_eq!(serde_json::to_string(&Bound(f64::INFINITY)).unwrap(), "\"inf\"");
    }

    #[test]
    fn override_paths() {
        let mut doc: Value = serde_json::from_str(BUNDLED_JSON).unwrap();
        apply_overrides(
            &mut doc,
            &[
                ("reservoirs.mountain.volume_init_m3".into(), "0".into()),
                ("stages.0.eta_turbine".into(), "0.8".into()),
                ("grid.import_max_w".into(), "1e6".into()),
                ("weights.w_spill".into(), "2".into()),
            ],
        )
        .unwrap();
        assert_eq!(doc["reservoirs"][0]["volume_init_m3"], 0);
        assert_eq!(doc["stages"][0]["eta_turbine"], 0.8);

        for bad in [
            "reservoirs.mountain.colour",
            "reservoirs.atlantis.elevation_m",
            "grid.voltage",
            "nonsense",
        ] {
            let err = apply_overrides(&mut doc, &[(bad.into(), "1".into())]).unwrap_err();
            assert!(matches!(err, ScenarioError::Override(_)), "{bad}");
        }
    }

    #[test]
    fn parse_override_splits_once() {
        assert_eq!(
            parse_override("a.b=c=d").unwrap(),
            ("a.b".to_string(), "c=d".to_string())
        );
        assert!(parse_override("novalue").is_err());
    }
}
