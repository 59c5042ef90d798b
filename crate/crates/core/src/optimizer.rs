//! Configuration search.
//!
//! A configuration picks, for every branch of the base network, how many
//! evenly spaced intermediate reservoirs to build, plus one intermediate
//! volume, one turbine flow rating and one pump power rating applied to every
//! stage. Each configuration is scored by running the full simulation and
//! weighting its totals; lower fitness is better.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dispatch::RuleBasedDispatch;
use crate::model::{validate_network, CascadeNetwork, Reservoir, ValidationReport};
use crate::planner::{even_plan, plan_to_network, StageDefaults};
use crate::scenario::Scenario;
use crate::simulation::{run_simulation, summarize, SeriesSet, Summary};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OptimizeError {
    #[error("search space is empty: {0}")]
    EmptySpace(String),
    #[error("evaluation budget must be at least 1")]
    ZeroBudget,
    #[error("search space names branch {0}, which is not a leaf of the base network")]
    UnknownBranch(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitnessWeights {
    /// Per Wh of unserved demand.
    pub w_unserved: f64,
    /// Per Wh imported.
    pub w_import: f64,
    /// Per m³ spilled.
    pub w_spill: f64,
    /// Credit per Wh exported.
    pub w_export_credit: f64,
    /// Per reservoir in the network.
    pub w_reservoir: f64,
}

impl Default for FitnessWeights {
    fn default() -> Self {
        Self {
            w_unserved: 10.0,
            w_import: 1.0,
            w_spill: 0.0,
            w_export_credit: 0.5,
            w_reservoir: 0.0,
        }
    }
}

impl FitnessWeights {
    pub fn zero() -> Self {
        Self {
            w_unserved: 0.0,
            w_import: 0.0,
            w_spill: 0.0,
            w_export_credit: 0.0,
            w_reservoir: 0.0,
        }
    }

    pub fn is_valid(&self) -> bool {
        [
            self.w_unserved,
            self.w_import,
            self.w_spill,
            self.w_export_credit,
            self.w_reservoir,
        ]
        .iter()
        .all(|w| *w >= 0.0 && w.is_finite())
    }
}

/// Weighted sum of a run's totals.
pub fn fitness_from_summary(summary: &Summary, weights: &FitnessWeights) -> f64 {
    weights.w_unserved * summary.unserved_wh
        + weights.w_import * summary.imported_wh
        + weights.w_spill * summary.spilled_m3
        - weights.w_export_credit * summary.exported_wh
        + weights.w_reservoir * summary.reservoir_count as f64
}

/// Outcome of scoring one network. A network that cannot be simulated scores
/// `f64::INFINITY` and carries the reason.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub fitness: f64,
    pub summary: Option<Summary>,
    pub report: Option<ValidationReport>,
    pub error: Option<String>,
}

impl Evaluation {
    fn failed(report: Option<ValidationReport>, error: String) -> Self {
        Self {
            fitness: f64::INFINITY,
            summary: None,
            report,
            error: Some(error),
        }
    }

    pub fn is_feasible(&self) -> bool {
        self.fitness.is_finite()
    }
}

pub fn evaluate_network(
    network: &CascadeNetwork,
    series: &SeriesSet,
    dt_s: f64,
    weights: &FitnessWeights,
) -> Evaluation {
    let report = validate_network(network);
    if !report.is_valid() {
        let msg = report.to_string();
        return Evaluation::failed(Some(report), msg);
    }
    match run_simulation(network, &RuleBasedDispatch, series, dt_s) {
        Ok(run) => {
            let summary = summarize(network, &run);
            Evaluation {
                fitness: fitness_from_summary(&summary, weights),
                summary: Some(summary),
                report: None,
                error: None,
            }
        }
        Err(e) => Evaluation::failed(None, e.to_string()),
    }
}

/// Builds `config` on top of `scenario` and scores it.
pub fn evaluate_fitness(
    config: &Configuration,
    scenario: &Scenario,
    weights: &FitnessWeights,
) -> Evaluation {
    match instantiate(config, &scenario.network) {
        Ok(network) => evaluate_network(&network, &scenario.series, scenario.dt_s, weights),
        Err(e) => Evaluation::failed(None, e),
    }
}

/// Discrete candidates for every searchable parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    /// Intermediate-count candidates keyed by the branch's lower-lake id.
    pub n_intermediate: Vec<(String, Vec<usize>)>,
    pub intermediate_volume_max_m3: Vec<f64>,
    pub q_turbine_max_m3s: Vec<f64>,
    pub p_pump_max_w: Vec<f64>,
}

impl SearchSpace {
    fn dims(&self) -> Vec<usize> {
        let mut d: Vec<usize> = self.n_intermediate.iter().map(|(_, c)| c.len()).collect();
        d.push(self.intermediate_volume_max_m3.len());
        d.push(self.q_turbine_max_m3s.len());
        d.push(self.p_pump_max_w.len());
        d
    }

    /// Number of configurations; saturates at `usize::MAX`.
    pub fn size(&self) -> usize {
        self.dims()
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .unwrap_or(usize::MAX)
    }

    pub fn check(&self) -> Result<(), OptimizeError> {
        for (branch, c) in &self.n_intermediate {
            if c.is_empty() {
                return Err(OptimizeError::EmptySpace(format!("n_intermediate.{branch}")));
            }
        }
        for (name, list) in [
            ("intermediate_volume_max_m3", &self.intermediate_volume_max_m3),
            ("q_turbine_max_m3s", &self.q_turbine_max_m3s),
            ("p_pump_max_w", &self.p_pump_max_w),
        ] {
            if list.is_empty() {
                return Err(OptimizeError::EmptySpace(name.to_string()));
            }
            if list.iter().any(|v| !v.is_finite()) {
                return Err(OptimizeError::EmptySpace(format!("{name} holds a non-finite value")));
            }
        }
        Ok(())
    }

    fn digits(&self, mut index: usize) -> Vec<usize> {
        let dims = self.dims();
        let mut out = vec![0; dims.len()];
        for (k, &d) in dims.iter().enumerate().rev() {
            out[k] = index % d;
            index /= d;
        }
        out
    }

    fn index_of(&self, digits: &[usize]) -> usize {
        self.dims()
            .iter()
            .zip(digits)
            .fold(0, |acc, (&d, &x)| acc * d + x)
    }

    /// Configuration at position `index` of the enumeration order (first
    /// branch slowest, pump rating fastest).
    pub fn configuration(&self, index: usize) -> Configuration {
        let digits = self.digits(index);
        let nb = self.n_intermediate.len();
        Configuration {
            n_intermediate: self
                .n_intermediate
                .iter()
                .zip(&digits)
                .map(|((b, c), &x)| (b.clone(), c[x]))
                .collect(),
            intermediate_volume_max_m3: self.intermediate_volume_max_m3[digits[nb]],
            q_turbine_max_m3s: self.q_turbine_max_m3s[digits[nb + 1]],
            p_pump_max_w: self.p_pump_max_w[digits[nb + 2]],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Configuration {
    pub n_intermediate: Vec<(String, usize)>,
    pub intermediate_volume_max_m3: f64,
    pub q_turbine_max_m3s: f64,
    pub p_pump_max_w: f64,
}

/// One root-to-leaf path of the base network.
#[derive(Debug, Clone)]
struct Branch {
    root: usize,
    leaf: usize,
    /// Reservoir indices strictly between root and leaf.
    intermediates: Vec<usize>,
    /// Stage indices from root to leaf.
    stages: Vec<usize>,
}

fn branches(network: &CascadeNetwork) -> Result<Vec<Branch>, String> {
    let mut out = Vec::new();
    let mut claimed: HashMap<usize, usize> = HashMap::new();
    for leaf in network.leaves() {
        let mut stages = Vec::new();
        let mut cur = leaf;
        while let Some(s) = network.stage_into(cur) {
            stages.push(s);
            cur = network.stage_link(s).map(|(up, _)| up).ok_or("dangling stage")?;
            if stages.len() > network.stages().len() {
                return Err("cycle in stage graph".into());
            }
        }
        if stages.is_empty() {
            continue;
        }
        stages.reverse();
        let intermediates: Vec<usize> = stages[1..]
            .iter()
            .map(|&s| network.stage_link(s).unwrap().0)
            .collect();
        for &i in &intermediates {
            if let Some(other) = claimed.insert(i, leaf) {
                return Err(format!(
                    "reservoir {} is shared by the branches to {} and {}",
                    network.reservoirs()[i].id,
                    network.reservoirs()[other].id,
                    network.reservoirs()[leaf].id
                ));
            }
        }
        out.push(Branch {
            root: cur,
            leaf,
            intermediates,
            stages,
        });
    }
    Ok(out)
}

/// Rebuilds `base` with the intermediate counts and ratings of `config`.
///
/// Lakes (roots and leaves) are kept; every branch's intermediates are
/// replaced by an even split of its span and head. Branches missing from the
/// configuration keep their current intermediate count.
pub fn instantiate(config: &Configuration, base: &CascadeNetwork) -> Result<CascadeNetwork, String> {
    let branches = branches(base)?;
    for (id, _) in &config.n_intermediate {
        if !branches.iter().any(|b| &base.reservoirs()[b.leaf].id == id) {
            return Err(OptimizeError::UnknownBranch(id.clone()).to_string());
        }
    }
    let dropped: Vec<usize> = branches.iter().flat_map(|b| b.intermediates.clone()).collect();
    let mut reservoirs: Vec<Reservoir> = base
        .reservoirs()
        .iter()
        .enumerate()
        .filter(|(i, _)| !dropped.contains(i))
        .map(|(_, r)| r.clone())
        .collect();
    let mut stages = Vec::new();

    for b in &branches {
        let root = &base.reservoirs()[b.root];
        let leaf = &base.reservoirs()[b.leaf];
        let n = config
            .n_intermediate
            .iter()
            .find(|(id, _)| id == &leaf.id)
            .map(|(_, n)| *n)
            .unwrap_or(b.intermediates.len());
        let first = &base.stages()[b.stages[0]];
        let template = b.intermediates.first().map(|&i| &base.reservoirs()[i]);
        let defaults = StageDefaults {
            eta_turbine: first.eta_turbine,
            eta_pump: first.eta_pump,
            q_turbine_min_m3s: first.q_turbine_min_m3s.min(config.q_turbine_max_m3s),
            q_turbine_max_m3s: config.q_turbine_max_m3s,
            p_pump_max_w: config.p_pump_max_w,
            intermediate_volume_max_m3: config.intermediate_volume_max_m3,
            intermediate_surface_area_m2: template
                .map_or(StageDefaults::default().intermediate_surface_area_m2, |r| {
                    r.surface_area_m2
                }),
            intermediate_loss_alpha: template.map_or(0.0, |r| r.loss_alpha),
        };
        let span: f64 = b.stages.iter().map(|&s| base.stages()[s].distance_km).sum();
        let plan = even_plan(span, root.elevation_m, leaf.elevation_m, n);
        let fragment = plan_to_network(&plan, root, leaf, &defaults).map_err(|e| e.to_string())?;
        let (_, res, st, _) = fragment.into_parts();
        let count = res.len();
        reservoirs.extend(res.into_iter().skip(1).take(count - 2));
        stages.extend(st);
    }

    Ok(CascadeNetwork::new(
        base.constants(),
        reservoirs,
        stages,
        base.grid(),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogEntry {
    /// Position in the search space's enumeration order.
    pub index: usize,
    pub config: Configuration,
    pub fitness: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationResult {
    pub best_index: usize,
    pub best: Configuration,
    pub fitness: f64,
    pub exhaustive: bool,
    /// Every evaluation in the order it was scheduled.
    pub log: Vec<LogEntry>,
}

fn score_batch(
    space: &SearchSpace,
    scenario: &Scenario,
    weights: &FitnessWeights,
    indices: &[usize],
) -> Vec<LogEntry> {
    indices
        .par_iter()
        .map(|&index| {
            let config = space.configuration(index);
            let fitness = evaluate_fitness(&config, scenario, weights).fitness;
            LogEntry {
                index,
                config,
                fitness,
            }
        })
        .collect()
}

/// Lowest fitness wins; equal fitness goes to the earlier enumeration index.
fn better(a: &LogEntry, b: &LogEntry) -> bool {
    match a.fitness.total_cmp(&b.fitness) {
        std::cmp::Ordering::Less => true,
        std::cmp::Ordering::Equal => a.index < b.index,
        std::cmp::Ordering::Greater => false,
    }
}

/// Searches `space` for the lowest-fitness configuration.
///
/// When the whole space fits in `budget` evaluations it is enumerated.
/// Otherwise half the budget goes to seeded random sampling and the rest to
/// coordinate descent from the best sample.
pub fn optimize(
    space: &SearchSpace,
    scenario: &Scenario,
    weights: &FitnessWeights,
    budget: usize,
    seed: u64,
) -> Result<OptimizationResult, OptimizeError> {
    space.check()?;
    if budget == 0 {
        return Err(OptimizeError::ZeroBudget);
    }
    let total = space.size();
    let exhaustive = total <= budget;

    let log = if exhaustive {
        let all: Vec<usize> = (0..total).collect();
        score_batch(space, scenario, weights, &all)
    } else {
        sampled_search(space, scenario, weights, budget, seed, total)
    };

    let best = log
        .iter()
        .fold(None::<&LogEntry>, |acc, e| match acc {
            Some(b) if !better(e, b) => Some(b),
            _ => Some(e),
        })
        .expect("budget >= 1 guarantees one evaluation");
    Ok(OptimizationResult {
        best_index: best.index,
        best: best.config.clone(),
        fitness: best.fitness,
        exhaustive,
        log: log.clone(),
    })
}

fn sampled_search(
    space: &SearchSpace,
    scenario: &Scenario,
    weights: &FitnessWeights,
    budget: usize,
    seed: u64,
    total: usize,
) -> Vec<LogEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_samples = (budget / 2).max(1);
    let samples = rand::seq::index::sample(&mut rng, total, n_samples).into_vec();
    let mut log = score_batch(space, scenario, weights, &samples);
    let mut seen: HashMap<usize, f64> = log.iter().map(|e| (e.index, e.fitness)).collect();

    let mut current = log
        .iter()
        .fold(None::<&LogEntry>, |acc, e| match acc {
            Some(b) if !better(e, b) => Some(b),
            _ => Some(e),
        })
        .unwrap()
        .clone();
    let dims = space.dims();

    loop {
        let mut moved = false;
        for (d, &size) in dims.iter().enumerate() {
            let base = space.digits(current.index);
            let fresh: Vec<usize> = (0..size)
                .filter(|&c| c != base[d])
                .map(|c| {
                    let mut digits = base.clone();
                    digits[d] = c;
                    space.index_of(&digits)
                })
                .filter(|i| !seen.contains_key(i))
                .take(budget - log.len())
                .collect();
            let batch = score_batch(space, scenario, weights, &fresh);
            for e in &batch {
                seen.insert(e.index, e.fitness);
            }
            log.extend(batch);

            // Best along this coordinate among everything evaluated so far.
            for c in 0..size {
                let mut digits = base.clone();
                digits[d] = c;
                let index = space.index_of(&digits);
                if let Some(&fitness) = seen.get(&index) {
                    let cand = LogEntry {
                        index,
                        config: space.configuration(index),
                        fitness,
                    };
                    if better(&cand, &current) {
                        current = cand;
                        moved = true;
                    }
                }
            }
            if log.len() >= budget {
                return log;
            }
        }
        if !moved {
            return log;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space() -> SearchSpace {
        SearchSpace {
            n_intermediate: vec![("a".into(), vec![0, 1, 2]), ("b".into(), vec![1, 3])],
            intermediate_volume_max_m3: vec![1.0, 2.0],
            q_turbine_max_m3s: vec![5.0],
            p_pump_max_w: vec![1.0, 2.0, 3.0],
        }
    }

    #[test]
    fn enumeration_is_a_bijection() {
        let s = space();
        assert_eq!(s.size(), 3 * 2 * 2 * 1 * 3);
        for i in 0..s.size() {
            assert_eq!(s.index_of(&s.digits(i)), i);
        }
        let first = s.configuration(0);
        assert_eq!(first.n_intermediate, vec![("a".into(), 0), ("b".into(), 1)]);
        let second = s.configuration(1);
        assert_eq!(second.p_pump_max_w, 2.0);
    }

    #[test]
    fn empty_candidate_list_rejected() {
        let mut s = space();
        s.q_turbine_max_m3s.clear();
        assert!(matches!(s.check(), Err(OptimizeError::EmptySpace(_))));
    }

    #[test]
    fn fitness_weighted_sum() {
        let summary = Summary {
            unserved_wh: 2.0,
            imported_wh: 3.0,
            spilled_m3: 4.0,
            exported_wh: 5.0,
            reservoir_count: 3,
            ..Summary::default()
        };
        let w = FitnessWeights {
            w_unserved: 10.0,
            w_import: 1.0,
            w_spill: 0.5,
            w_export_credit: 2.0,
            w_reservoir: 1.0,
        };
        assert_eq!(fitness_from_summary(&summary, &w), 20.0 + 3.0 + 2.0 - 10.0 + 3.0);
        assert_eq!(fitness_from_summary(&summary, &FitnessWeights::zero()), 0.0);
    }
}
