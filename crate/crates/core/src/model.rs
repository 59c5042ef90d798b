//! Domain types for a cascade of reservoirs joined by pump/turbine stages,
//! plus the structural validation every other module relies on.

use std::collections::HashMap;
use std::fmt;

/// Tolerance used when comparing a stage's declared head to the elevation
/// difference of its reservoirs.
pub const HEAD_TOLERANCE_M: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalConstants {
    /// Water density, kg/m³.
    pub rho: f64,
    /// Gravitational acceleration, m/s².
    pub g: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self { rho: 1000.0, g: 9.81 }
    }
}

impl PhysicalConstants {
    /// ρ·g, the weight of one cubic metre of water in newtons.
    pub fn specific_weight(&self) -> f64 {
        self.rho * self.g
    }
}

/// A water body in the cascade.
///
/// Volumes are in m³. An unbounded reservoir (a sink such as a Great Lake)
/// carries `volume_min_m3 = -inf` and `volume_max_m3 = +inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct Reservoir {
    pub id: String,
    pub name: String,
    pub elevation_m: f64,
    pub surface_area_m2: f64,
    pub volume_min_m3: f64,
    pub volume_max_m3: f64,
    pub volume_init_m3: f64,
    /// Fraction of the carried-over volume lost per time step.
    pub loss_alpha: f64,
    pub natural_inflow_id: Option<String>,
}

impl Reservoir {
    pub fn is_unbounded(&self) -> bool {
        self.volume_min_m3 == f64::NEG_INFINITY && self.volume_max_m3 == f64::INFINITY
    }
}

/// A reversible pump/turbine link from `upper_id` down to `lower_id`.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub id: String,
    pub upper_id: String,
    pub lower_id: String,
    pub head_m: f64,
    pub distance_km: f64,
    pub eta_turbine: f64,
    pub eta_pump: f64,
    /// Smallest turbine flow worth running, m³/s.
    pub q_turbine_min_m3s: f64,
    pub q_turbine_max_m3s: f64,
    pub p_pump_max_w: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GridLimits {
    pub import_max_w: f64,
    pub export_max_w: f64,
}

/// Elevation difference between two reservoir surfaces. Negative results are
/// returned as-is; [`validate_network`] is where they get reported.
pub fn derive_head(upper_elevation_m: f64, lower_elevation_m: f64) -> f64 {
    upper_elevation_m - lower_elevation_m
}

/// A validated-on-demand chain (or tree) of reservoirs and stages.
///
/// Construction never fails: reference errors, cycles and bound violations
/// are reported by [`validate_network`]. The struct is immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeNetwork {
    constants: PhysicalConstants,
    reservoirs: Vec<Reservoir>,
    stages: Vec<Stage>,
    grid: GridLimits,
    /// (upper index, lower index) per stage, `None` when a reference dangles.
    links: Vec<Option<(usize, usize)>>,
    generation_order: Vec<usize>,
    pumping_order: Vec<usize>,
}

impl CascadeNetwork {
    pub fn new(
        constants: PhysicalConstants,
        reservoirs: Vec<Reservoir>,
        stages: Vec<Stage>,
        grid: GridLimits,
    ) -> Self {
        let index: HashMap<&str, usize> = reservoirs
            .iter()
            .enumerate()
            .map(|(i, r)| (r.id.as_str(), i))
            .collect();
        let links: Vec<Option<(usize, usize)>> = stages
            .iter()
            .map(|s| Some((*index.get(s.upper_id.as_str())?, *index.get(s.lower_id.as_str())?)))
            .collect();

        let linked: Vec<usize> = (0..stages.len()).filter(|&i| links[i].is_some()).collect();

        // Topmost upper reservoir first; stable sort keeps declaration order on ties.
        let mut generation_order = linked.clone();
        generation_order.sort_by(|&a, &b| {
            let ea = reservoirs[links[a].unwrap().0].elevation_m;
            let eb = reservoirs[links[b].unwrap().0].elevation_m;
            eb.total_cmp(&ea)
        });
        // Lowest lower reservoir first.
        let mut pumping_order = linked;
        pumping_order.sort_by(|&a, &b| {
            let ea = reservoirs[links[a].unwrap().1].elevation_m;
            let eb = reservoirs[links[b].unwrap().1].elevation_m;
            ea.total_cmp(&eb)
        });

        Self {
            constants,
            reservoirs,
            stages,
            grid,
            links,
            generation_order,
            pumping_order,
        }
    }

    pub fn constants(&self) -> PhysicalConstants {
        self.constants
    }

    pub fn reservoirs(&self) -> &[Reservoir] {
        &self.reservoirs
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn grid(&self) -> GridLimits {
        self.grid
    }

    pub fn reservoir_index(&self, id: &str) -> Option<usize> {
        self.reservoirs.iter().position(|r| r.id == id)
    }

    pub fn reservoir(&self, id: &str) -> Option<&Reservoir> {
        self.reservoirs.iter().find(|r| r.id == id)
    }

    /// Reservoir indices `(upper, lower)` of stage `stage`, if both exist.
    pub fn stage_link(&self, stage: usize) -> Option<(usize, usize)> {
        self.links.get(stage).copied().flatten()
    }

    /// Stage indices ordered topmost-first (ties by declaration order).
    pub fn generation_order(&self) -> &[usize] {
        &self.generation_order
    }

    /// Stage indices ordered bottom-first (ties by declaration order).
    pub fn pumping_order(&self) -> &[usize] {
        &self.pumping_order
    }

    /// Reservoirs that never appear as the lower end of a stage.
    pub fn roots(&self) -> Vec<usize> {
        (0..self.reservoirs.len())
            .filter(|&i| !self.links.iter().flatten().any(|&(_, lo)| lo == i))
            .collect()
    }

    /// Reservoirs that never appear as the upper end of a stage.
    pub fn leaves(&self) -> Vec<usize> {
        (0..self.reservoirs.len())
            .filter(|&i| !self.links.iter().flatten().any(|&(up, _)| up == i))
            .collect()
    }

    /// The stage whose lower end is reservoir `idx`, if any.
    pub fn stage_into(&self, idx: usize) -> Option<usize> {
        self.links
            .iter()
            .position(|l| matches!(l, Some((_, lo)) if *lo == idx))
    }

    pub fn into_parts(self) -> (PhysicalConstants, Vec<Reservoir>, Vec<Stage>, GridLimits) {
        (self.constants, self.reservoirs, self.stages, self.grid)
    }
}

/// What a violation refers to.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Subject {
    Network,
    Reservoir(String),
    Stage(String),
}

impl fmt::Display for Subject {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Subject::Network => write!(f, "network"),
            Subject::Reservoir(id) => write!(f, "reservoir {id}"),
            Subject::Stage(id) => write!(f, "stage {id}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub subject: Subject,
    pub reason: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.subject, self.reason)
    }
}

/// Ordered list of violations; empty means valid.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, subject: Subject, reason: impl Into<String>) {
        self.violations.push(Violation {
            subject,
            reason: reason.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return writeln!(f, "valid");
        }
        for v in &self.violations {
            writeln!(f, "{v}")?;
        }
        Ok(())
    }
}

fn finite_or(report: &mut ValidationReport, subject: &Subject, name: &str, value: f64) -> bool {
    if value.is_finite() {
        true
    } else {
        report.push(subject.clone(), format!("{name} must be finite (got {value})"));
        false
    }
}

/// Checks every structural and numeric invariant of the network.
pub fn validate_network(network: &CascadeNetwork) -> ValidationReport {
    let mut report = ValidationReport::default();
    let c = network.constants();
    if !(c.rho > 0.0 && c.rho.is_finite()) {
        report.push(Subject::Network, "rho > 0 failed");
    }
    if !(c.g > 0.0 && c.g.is_finite()) {
        report.push(Subject::Network, "g > 0 failed");
    }
    let grid = network.grid();
    if !(grid.import_max_w >= 0.0) {
        report.push(Subject::Network, "grid import_max_w >= 0 failed");
    }
    if !(grid.export_max_w >= 0.0) {
        report.push(Subject::Network, "grid export_max_w >= 0 failed");
    }

    let mut seen = HashMap::new();
    for r in network.reservoirs() {
        let subj = Subject::Reservoir(r.id.clone());
        if seen.insert(r.id.as_str(), ()).is_some() {
            report.push(subj.clone(), "duplicate reservoir id");
        }
        finite_or(&mut report, &subj, "elevation_m", r.elevation_m);
        if finite_or(&mut report, &subj, "surface_area_m2", r.surface_area_m2)
            && r.surface_area_m2 <= 0.0
        {
            report.push(subj.clone(), "surface_area_m2 > 0 failed");
        }
        if !(r.loss_alpha >= 0.0 && r.loss_alpha < 1.0) {
            report.push(subj.clone(), "0 <= loss_alpha < 1 failed");
        }
        if r.volume_init_m3.is_nan() || r.volume_min_m3.is_nan() || r.volume_max_m3.is_nan() {
            report.push(subj.clone(), "volumes must not be NaN");
            continue;
        }
        if r.is_unbounded() {
            if !r.volume_init_m3.is_finite() {
                report.push(subj.clone(), "volume_init_m3 must be finite");
            }
            continue;
        }
        if !(r.volume_min_m3 >= 0.0 && r.volume_min_m3.is_finite()) {
            report.push(subj.clone(), "0 <= volume_min_m3 failed");
        }
        if !r.volume_max_m3.is_finite() {
            report.push(
                subj.clone(),
                "volume_max_m3 must be finite unless the reservoir is unbounded",
            );
        }
        if !(r.volume_min_m3 <= r.volume_init_m3 && r.volume_init_m3 <= r.volume_max_m3) {
            report.push(
                subj.clone(),
                "volume_min_m3 <= volume_init_m3 <= volume_max_m3 failed",
            );
        }
    }

    let mut stage_ids = HashMap::new();
    for s in network.stages() {
        let subj = Subject::Stage(s.id.clone());
        if stage_ids.insert(s.id.as_str(), ()).is_some() {
            report.push(subj.clone(), "duplicate stage id");
        }
        let upper = network.reservoir(&s.upper_id);
        let lower = network.reservoir(&s.lower_id);
        if upper.is_none() {
            report.push(subj.clone(), format!("unknown upper reservoir {}", s.upper_id));
        }
        if lower.is_none() {
            report.push(subj.clone(), format!("unknown lower reservoir {}", s.lower_id));
        }
        if s.upper_id == s.lower_id {
            report.push(subj.clone(), "stage connects a reservoir to itself");
        }
        if finite_or(&mut report, &subj, "head_m", s.head_m) && s.head_m <= 0.0 {
            report.push(subj.clone(), "head_m > 0 failed");
        }
        if let (Some(u), Some(l)) = (upper, lower) {
            let derived = derive_head(u.elevation_m, l.elevation_m);
            if derived <= 0.0 {
                report.push(
                    subj.clone(),
                    format!(
                        "elevations must strictly decrease along the chain ({} at {} m, {} at {} m)",
                        u.id, u.elevation_m, l.id, l.elevation_m
                    ),
                );
            }
            if (derived - s.head_m).abs() > HEAD_TOLERANCE_M {
                report.push(
                    subj.clone(),
                    format!(
                        "head_m {} inconsistent with reservoir elevations ({derived} m)",
                        s.head_m
                    ),
                );
            }
        }
        if !(s.distance_km >= 0.0 && s.distance_km.is_finite()) {
            report.push(subj.clone(), "distance_km >= 0 failed");
        }
        if !(s.eta_turbine > 0.0 && s.eta_turbine <= 1.0) {
            report.push(subj.clone(), "0 < eta_turbine <= 1 failed");
        }
        if !(s.eta_pump > 0.0 && s.eta_pump <= 1.0) {
            report.push(subj.clone(), "0 < eta_pump <= 1 failed");
        }
        if !(s.q_turbine_min_m3s >= 0.0
            && s.q_turbine_min_m3s <= s.q_turbine_max_m3s
            && s.q_turbine_max_m3s.is_finite())
        {
            report.push(
                subj.clone(),
                "0 <= q_turbine_min_m3s <= q_turbine_max_m3s failed",
            );
        }
        if !(s.p_pump_max_w >= 0.0 && s.p_pump_max_w.is_finite()) {
            report.push(subj, "p_pump_max_w >= 0 failed");
        }
    }

    if has_cycle(network) {
        report.push(Subject::Network, "stage graph is acyclic failed");
    }
    report
}

fn has_cycle(network: &CascadeNetwork) -> bool {
    // Kahn's algorithm over linked stages.
    let n = network.reservoirs().len();
    let mut indegree = vec![0usize; n];
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
    for s in 0..network.stages().len() {
        if let Some((up, lo)) = network.stage_link(s) {
            out[up].push(lo);
            indegree[lo] += 1;
        }
    }
    let mut queue: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut visited = 0;
    while let Some(v) = queue.pop() {
        visited += 1;
        for &w in &out[v] {
            indegree[w] -= 1;
            if indegree[w] == 0 {
                queue.push(w);
            }
        }
    }
    visited < n
}

/// Unit of a time series.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesUnit {
    /// Power, W.
    Watts,
    /// Volumetric flow, m³/s.
    CubicMetresPerSecond,
}

impl SeriesUnit {
    /// Suffix used in CSV headers (`value_w`, `value_m3s`).
    pub fn suffix(self) -> &'static str {
        match self {
            SeriesUnit::Watts => "w",
            SeriesUnit::CubicMetresPerSecond => "m3s",
        }
    }

    pub fn from_suffix(s: &str) -> Option<Self> {
        match s {
            "w" => Some(SeriesUnit::Watts),
            "m3s" => Some(SeriesUnit::CubicMetresPerSecond),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SeriesError {
    #[error("step_seconds must be > 0 and finite (got {0})")]
    BadStep(f64),
    #[error("non-finite value at step {index}")]
    NonFinite { index: usize },
}

/// Fixed-step series of power or flow values.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    step_seconds: f64,
    unit: SeriesUnit,
    values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(step_seconds: f64, unit: SeriesUnit, values: Vec<f64>) -> Result<Self, SeriesError> {
        if !(step_seconds > 0.0 && step_seconds.is_finite()) {
            return Err(SeriesError::BadStep(step_seconds));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(SeriesError::NonFinite { index });
        }
        Ok(Self {
            step_seconds,
            unit,
            values,
        })
    }

    /// A series of `len` copies of `value`.
    pub fn constant(step_seconds: f64, unit: SeriesUnit, value: f64, len: usize) -> Result<Self, SeriesError> {
        Self::new(step_seconds, unit, vec![value; len])
    }

    pub fn step_seconds(&self) -> f64 {
        self.step_seconds
    }

    pub fn unit(&self) -> SeriesUnit {
        self.unit
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}
