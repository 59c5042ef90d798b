//! Intermediate-reservoir placement along a terrain profile.
//!
//! Candidate sites are the profile's own vertices. A plan is a chain of
//! vertices from the upper lake (first vertex) to the lower lake (last
//! vertex) where every hop spans at most `segment_max_km` and drops at least
//! `head_min_m` (and strictly more than zero). Among feasible plans the one
//! with the fewest intermediate sites wins; among those, the one whose
//! smallest hop head is largest.

use crate::model::{
    derive_head, validate_network, CascadeNetwork, GridLimits, PhysicalConstants, Reservoir,
    Stage, ValidationReport, HEAD_TOLERANCE_M,
};

/// Slack on span and head comparisons so that profiles typed in decimal
/// (0.2 km steps etc.) behave as written.
const SPAN_EPS_KM: f64 = 1e-9;
const HEAD_EPS_M: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlanError {
    #[error("terrain profile needs at least two vertices")]
    TooFewVertices,
    #[error("terrain profile must start at distance 0 (got {0} km)")]
    BadStart(f64),
    #[error("terrain distances must strictly increase (vertex {index})")]
    NotIncreasing { index: usize },
    #[error("non-finite terrain value at vertex {index}")]
    NonFinite { index: usize },
    #[error("invalid constraints: {0}")]
    Constraints(String),
    #[error(
        "no feasible cascade: nothing within reach beyond {reached_km} km ({reached_elevation_m} m) \
         satisfies the span and head limits; blocking stretch {reached_km}..{gap_to_km} km"
    )]
    Infeasible {
        reached_km: f64,
        reached_elevation_m: f64,
        gap_to_km: f64,
    },
    #[error("profile endpoint elevation {profile_m} m does not match reservoir {reservoir_id} at {reservoir_m} m")]
    EndpointMismatch {
        reservoir_id: String,
        profile_m: f64,
        reservoir_m: f64,
    },
    #[error("generated network failed validation:\n{0}")]
    Validation(ValidationReport),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerrainVertex {
    pub distance_km: f64,
    pub elevation_m: f64,
}

/// Elevation along the path between two lakes, first vertex at the upper lake.
#[derive(Debug, Clone, PartialEq)]
pub struct TerrainProfile {
    vertices: Vec<TerrainVertex>,
}

impl TerrainProfile {
    pub fn new(vertices: Vec<TerrainVertex>) -> Result<Self, PlanError> {
        if vertices.len() < 2 {
            return Err(PlanError::TooFewVertices);
        }
        for (index, v) in vertices.iter().enumerate() {
            if !v.distance_km.is_finite() || !v.elevation_m.is_finite() {
                return Err(PlanError::NonFinite { index });
            }
        }
        if vertices[0].distance_km != 0.0 {
            return Err(PlanError::BadStart(vertices[0].distance_km));
        }
        if let Some(index) = (1..vertices.len())
            .find(|&i| vertices[i].distance_km <= vertices[i - 1].distance_km)
        {
            return Err(PlanError::NotIncreasing { index });
        }
        Ok(Self { vertices })
    }

    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self, PlanError> {
        Self::new(
            pairs
                .iter()
                .map(|&(distance_km, elevation_m)| TerrainVertex {
                    distance_km,
                    elevation_m,
                })
                .collect(),
        )
    }

    pub fn vertices(&self) -> &[TerrainVertex] {
        &self.vertices
    }

    pub fn total_span_km(&self) -> f64 {
        self.vertices.last().unwrap().distance_km
    }

    pub fn total_drop_m(&self) -> f64 {
        self.vertices[0].elevation_m - self.vertices.last().unwrap().elevation_m
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanConstraints {
    pub segment_max_km: f64,
    pub head_min_m: f64,
    /// Weight per intermediate reservoir, reported through [`CascadePlan::cost`].
    pub cost_per_reservoir: f64,
}

impl Default for PlanConstraints {
    fn default() -> Self {
        Self {
            segment_max_km: 1.0,
            head_min_m: 5.0,
            cost_per_reservoir: 1.0,
        }
    }
}

impl PlanConstraints {
    fn check(&self) -> Result<(), PlanError> {
        if !(self.segment_max_km > 0.0 && self.segment_max_km.is_finite()) {
            return Err(PlanError::Constraints(format!(
                "segment_max_km must be > 0 (got {})",
                self.segment_max_km
            )));
        }
        if !(self.head_min_m >= 0.0 && self.head_min_m.is_finite()) {
            return Err(PlanError::Constraints(format!(
                "head_min_m must be >= 0 (got {})",
                self.head_min_m
            )));
        }
        Ok(())
    }

    /// Whether a single hop of `span_km` dropping `head_m` is allowed.
    pub fn admits(&self, span_km: f64, head_m: f64) -> bool {
        span_km <= self.segment_max_km + SPAN_EPS_KM
            && head_m > 0.0
            && head_m >= self.head_min_m - HEAD_EPS_M
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub span_km: f64,
    pub head_m: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadePlan {
    /// Profile vertex index of every chosen point, endpoints included.
    pub vertex_indices: Vec<usize>,
    /// Intermediate sites only.
    pub sites: Vec<TerrainVertex>,
    pub segments: Vec<Segment>,
    pub total_head_m: f64,
    pub n_intermediate: usize,
    pub cost: f64,
}

impl CascadePlan {
    pub fn min_segment_head_m(&self) -> f64 {
        self.segments
            .iter()
            .map(|s| s.head_m)
            .fold(f64::INFINITY, f64::min)
    }

    fn from_vertices(
        vertices: &[TerrainVertex],
        vertex_indices: Vec<usize>,
        cost_per_reservoir: f64,
    ) -> Self {
        let segments: Vec<Segment> = vertex_indices
            .windows(2)
            .map(|w| Segment {
                span_km: vertices[w[1]].distance_km - vertices[w[0]].distance_km,
                head_m: vertices[w[0]].elevation_m - vertices[w[1]].elevation_m,
            })
            .collect();
        let sites = vertex_indices[1..vertex_indices.len() - 1]
            .iter()
            .map(|&i| vertices[i])
            .collect();
        let n_intermediate = vertex_indices.len() - 2;
        Self {
            total_head_m: segments.iter().map(|s| s.head_m).sum(),
            vertex_indices,
            sites,
            segments,
            n_intermediate,
            cost: cost_per_reservoir * n_intermediate as f64,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Best {
    segments: usize,
    min_head: f64,
    pred: Option<usize>,
}

/// Fewest intermediates, then the largest smallest-hop head, by dynamic
/// programming over profile vertices. Ties go to the earliest predecessor.
pub fn plan_cascade(
    profile: &TerrainProfile,
    constraints: &PlanConstraints,
) -> Result<CascadePlan, PlanError> {
    constraints.check()?;
    let v = profile.vertices();
    let n = v.len();
    let mut best: Vec<Option<Best>> = vec![None; n];
    best[0] = Some(Best {
        segments: 0,
        min_head: f64::INFINITY,
        pred: None,
    });

    for j in 1..n {
        let mut chosen: Option<Best> = None;
        for i in 0..j {
            let Some(prev) = best[i] else { continue };
            let span = v[j].distance_km - v[i].distance_km;
            let head = v[i].elevation_m - v[j].elevation_m;
            if !constraints.admits(span, head) {
                continue;
            }
            let cand = Best {
                segments: prev.segments + 1,
                min_head: prev.min_head.min(head),
                pred: Some(i),
            };
            let better = match chosen {
                None => true,
                Some(c) => {
                    cand.segments < c.segments
                        || (cand.segments == c.segments && cand.min_head > c.min_head)
                }
            };
            if better {
                chosen = Some(cand);
            }
        }
        best[j] = chosen;
    }

    if best[n - 1].is_none() {
        let reached = (0..n).rev().find(|&i| best[i].is_some()).unwrap_or(0);
        return Err(PlanError::Infeasible {
            reached_km: v[reached].distance_km,
            reached_elevation_m: v[reached].elevation_m,
            gap_to_km: v[(reached + 1).min(n - 1)].distance_km,
        });
    }

    let mut path = vec![n - 1];
    let mut cur = n - 1;
    while let Some(p) = best[cur].and_then(|b| b.pred) {
        path.push(p);
        cur = p;
    }
    path.reverse();
    Ok(CascadePlan::from_vertices(
        v,
        path,
        constraints.cost_per_reservoir,
    ))
}

/// A plan with `n_intermediate` sites evenly splitting both span and head.
pub fn even_plan(
    total_span_km: f64,
    upper_elevation_m: f64,
    lower_elevation_m: f64,
    n_intermediate: usize,
) -> CascadePlan {
    let hops = n_intermediate + 1;
    let drop = upper_elevation_m - lower_elevation_m;
    let vertices: Vec<TerrainVertex> = (0..=hops)
        .map(|k| {
            let f = k as f64 / hops as f64;
            TerrainVertex {
                distance_km: total_span_km * f,
                elevation_m: if k == hops {
                    lower_elevation_m
                } else {
                    upper_elevation_m - drop * f
                },
            }
        })
        .collect();
    CascadePlan::from_vertices(&vertices, (0..=hops).collect(), 0.0)
}

/// Equipment and sizing applied to every generated stage and intermediate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageDefaults {
    pub eta_turbine: f64,
    pub eta_pump: f64,
    pub q_turbine_min_m3s: f64,
    pub q_turbine_max_m3s: f64,
    pub p_pump_max_w: f64,
    pub intermediate_volume_max_m3: f64,
    pub intermediate_surface_area_m2: f64,
    pub intermediate_loss_alpha: f64,
}

impl Default for StageDefaults {
    fn default() -> Self {
        Self {
            eta_turbine: 0.90,
            eta_pump: 0.85,
            q_turbine_min_m3s: 0.5,
            q_turbine_max_m3s: 10.0,
            p_pump_max_w: 2.0e6,
            intermediate_volume_max_m3: 0.05e6,
            intermediate_surface_area_m2: 1.0e4,
            intermediate_loss_alpha: 0.0,
        }
    }
}

pub fn intermediate_id(upper_id: &str, lower_id: &str, k: usize) -> String {
    format!("{upper_id}_{lower_id}_{k}")
}

pub fn stage_id(upper_id: &str, lower_id: &str, k: usize) -> String {
    format!("{upper_id}_{lower_id}_stage{k}")
}

/// Builds the reservoirs and stages a plan describes, from `upper` down to
/// `lower`. Intermediates start empty.
pub fn plan_to_network(
    plan: &CascadePlan,
    upper: &Reservoir,
    lower: &Reservoir,
    defaults: &StageDefaults,
) -> Result<CascadeNetwork, PlanError> {
    let plan_lower = upper.elevation_m - plan.total_head_m;
    if (plan_lower - lower.elevation_m).abs() > HEAD_TOLERANCE_M {
        return Err(PlanError::EndpointMismatch {
            reservoir_id: lower.id.clone(),
            profile_m: plan_lower,
            reservoir_m: lower.elevation_m,
        });
    }

    let mut chain = vec![upper.clone()];
    let mut elevation = upper.elevation_m;
    for (k, seg) in plan.segments[..plan.segments.len() - 1].iter().enumerate() {
        elevation -= seg.head_m;
        let id = intermediate_id(&upper.id, &lower.id, k + 1);
        chain.push(Reservoir {
            name: format!("{} to {} intermediate {}", upper.name, lower.name, k + 1),
            id,
            elevation_m: elevation,
            surface_area_m2: defaults.intermediate_surface_area_m2,
            volume_min_m3: 0.0,
            volume_max_m3: defaults.intermediate_volume_max_m3,
            volume_init_m3: 0.0,
            loss_alpha: defaults.intermediate_loss_alpha,
            natural_inflow_id: None,
        });
    }
    chain.push(lower.clone());

    let stages = chain
        .windows(2)
        .zip(&plan.segments)
        .enumerate()
        .map(|(k, (pair, seg))| Stage {
            id: stage_id(&upper.id, &lower.id, k + 1),
            upper_id: pair[0].id.clone(),
            lower_id: pair[1].id.clone(),
            head_m: derive_head(pair[0].elevation_m, pair[1].elevation_m),
            distance_km: seg.span_km,
            eta_turbine: defaults.eta_turbine,
            eta_pump: defaults.eta_pump,
            q_turbine_min_m3s: defaults.q_turbine_min_m3s,
            q_turbine_max_m3s: defaults.q_turbine_max_m3s,
            p_pump_max_w: defaults.p_pump_max_w,
        })
        .collect();

    let network = CascadeNetwork::new(
        PhysicalConstants::default(),
        chain,
        stages,
        GridLimits::default(),
    );
    let report = validate_network(&network);
    if report.is_valid() {
        Ok(network)
    } else {
        Err(PlanError::Validation(report))
    }
}
