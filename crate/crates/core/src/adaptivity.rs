//! Refinement decisions and the solve-estimate-refine loop.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::adjoint::dual_simulate;
use crate::error::{Error, Result};
use crate::estimator::{estimate, ErrorReport};
use crate::mesh::{QuadMesh, RefinementMarks};
use crate::model::GoalSpec;
use crate::scenario::{Scenario, HOUR, KM};
use crate::solver::{simulate, Discretization, SolverSettings};

/// Effort constant of the cost model: one unit for `k = 8 h`, `h = 64 km`.
pub const COST_CONSTANT: f64 = 64.0 * 64.0 * 8.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Halve `h` and `k` together.
    Uniform,
    /// Halve `h`, `k` or both according to the balance of the estimator parts.
    Balance,
    /// Refine elements whose indicator exceeds `gamma` times the mean; `k` fixed.
    Local,
    /// Refine whole regions whose aggregate exceeds `gamma` times the mean; `k` fixed.
    Regional,
}

impl std::str::FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Strategy::Uniform),
            "balance" => Ok(Strategy::Balance),
            "local" => Ok(Strategy::Local),
            "regional" => Ok(Strategy::Regional),
            _ => Err(Error::InvalidArgument(format!("unknown strategy '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptPlan {
    pub strategy: Strategy,
    pub gamma: f64,
    /// Number of solve-estimate passes, including the first.
    pub max_iterations: usize,
    /// Stop once `|eta_total|` is at or below this value.
    pub tolerance: Option<f64>,
    /// Elements at this level or deeper are never marked by `local`/`regional`.
    pub max_level: Option<u32>,
    /// Region grid used by `regional`.
    pub regions: (usize, usize),
}

impl Default for AdaptPlan {
    fn default() -> Self {
        AdaptPlan {
            strategy: Strategy::Balance,
            gamma: 2.0,
            max_iterations: 3,
            tolerance: None,
            max_level: None,
            regions: (4, 4),
        }
    }
}

impl AdaptPlan {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) {
            return Err(Error::InvalidArgument("gamma must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument("at least one iteration is required".into()));
        }
        if self.regions.0 == 0 || self.regions.1 == 0 {
            return Err(Error::InvalidArgument("region grid must be non-empty".into()));
        }
        Ok(())
    }
}

/// Marks `K` iff `eta_K > gamma * mean(eta)`.
pub fn mark_elements(indicators: &[f64], gamma: f64) -> RefinementMarks {
    if indicators.is_empty() {
        return RefinementMarks::none(0);
    }
    let mean = indicators.iter().sum::<f64>() / indicators.len() as f64;
    let threshold = gamma * mean;
    RefinementMarks::from_flags(indicators.iter().map(|&x| x > threshold).collect())
}

/// Per-region sums of element indicators.
pub fn region_sums(indicators: &[f64], region_ids: &[usize], n_regions: usize) -> Vec<f64> {
    let mut sums = vec![0.0; n_regions];
    for (&x, &r) in indicators.iter().zip(region_ids) {
        sums[r] += x;
    }
    sums
}

/// Marks every element of each region whose aggregate exceeds `gamma` times the mean aggregate.
pub fn regional_marks(indicators: &[f64], region_ids: &[usize], n_regions: usize, gamma: f64) -> Result<RefinementMarks> {
    if indicators.len() != region_ids.len() {
        return Err(Error::InvalidArgument(format!(
            "{} indicators for {} region ids",
            indicators.len(),
            region_ids.len()
        )));
    }
    if let Some(&bad) = region_ids.iter().find(|&&r| r >= n_regions) {
        return Err(Error::InvalidArgument(format!("region id {bad} out of {n_regions}")));
    }
    let sums = region_sums(indicators, region_ids, n_regions);
    let hot: Vec<bool> = mark_elements(&sums, gamma).flags().to_vec();
    Ok(RefinementMarks::from_flags(region_ids.iter().map(|&r| hot[r]).collect()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    RefineTime,
    RefineSpace,
    RefineBoth,
}

/// Splitting error counts as temporal.
pub fn balance_step(eta_h: f64, eta_k: f64, eta_beta: f64) -> Decision {
    let time = eta_k + eta_beta;
    if time > 2.0 * eta_h {
        Decision::RefineTime
    } else if eta_h > 2.0 * time {
        Decision::RefineSpace
    } else {
        Decision::RefineBoth
    }
}

/// Effort `C / (k h^2)` with `k` in hours and `h` in km.
pub fn cost_model(k_hours: f64, h_km: f64, c: f64) -> f64 {
    c / (k_hours * h_km * h_km)
}

/// Total effort of a sequence of `(k_hours, h_km)` discretizations.
pub fn ladder_cost(ladder: &[(f64, f64)]) -> f64 {
    ladder.iter().map(|&(k, h)| cost_model(k, h, COST_CONSTANT)).sum()
}

/// Number of free unknowns `(v_x, v_y, A, H)` on a mesh.
pub fn unknowns(mesh: &Arc<QuadMesh>, scenario: &Scenario) -> usize {
    let d = Discretization::new(mesh.clone(), scenario);
    d.n_velocity() + 2 * d.n_scalar()
}

/// One pass of the feedback loop.
#[derive(Clone, Debug)]
pub struct AdaptIteration {
    pub mesh: Arc<QuadMesh>,
    pub k: f64,
    pub unknowns: usize,
    pub report: ErrorReport,
    /// Refinement chosen after this pass; `None` on the last pass.
    pub decision: Option<Decision>,
    /// Elements marked for refinement after this pass.
    pub marked: Option<RefinementMarks>,
}

impl AdaptIteration {
    pub fn h_km(&self) -> f64 {
        self.mesh.min_h() / KM
    }

    pub fn k_hours(&self) -> f64 {
        self.k / HOUR
    }
}

/// History of a feedback loop; `error` holds the failure that ended it early.
#[derive(Debug)]
pub struct AdaptHistory {
    pub iterations: Vec<AdaptIteration>,
    pub error: Option<Error>,
}

fn capped(mut marks: RefinementMarks, mesh: &QuadMesh, max_level: Option<u32>) -> RefinementMarks {
    if let Some(cap) = max_level {
        let flags: Vec<bool> = marks.flags().iter().enumerate().map(|(e, &m)| m && mesh.level(e) < cap).collect();
        marks = RefinementMarks::from_flags(flags);
    }
    marks
}

/// Solve, estimate, and refine until the tolerance or the iteration limit is reached.
///
/// Every pass restarts from `t = 0` on the new discretization.
pub fn feedback_loop(
    scenario: &Scenario,
    mesh: Arc<QuadMesh>,
    k: f64,
    plan: &AdaptPlan,
    goal: &GoalSpec,
    settings: &SolverSettings,
) -> Result<AdaptHistory> {
    plan.validate()?;
    let mut history = AdaptHistory { iterations: Vec::new(), error: None };
    let (mut mesh, mut k) = (mesh, k);
    if plan.strategy == Strategy::Regional && mesh.region_grid() != Some(plan.regions) {
        let mut m = (*mesh).clone();
        m.set_regions(plan.regions.0, plan.regions.1)?;
        mesh = Arc::new(m);
    }
    for it in 0..plan.max_iterations {
        let pass = simulate(scenario, mesh.clone(), k, settings).and_then(|primal| {
            let dual = dual_simulate(scenario, &primal, goal, settings)?;
            estimate(scenario, &primal, &dual, goal)
        });
        let report = match pass {
            Ok(r) => r,
            Err(e) => {
                history.error = Some(e);
                return Ok(history);
            }
        };
        log::info!(
            "adapt {it}: {} elements, k = {:.3} h, J = {:.6}, eta = {:.3e}",
            mesh.n_elements(),
            k / HOUR,
            report.j_value,
            report.eta_total
        );
        let done = it + 1 == plan.max_iterations || plan.tolerance.is_some_and(|tol| report.eta_total.abs() <= tol);
        let mut entry = AdaptIteration {
            mesh: mesh.clone(),
            k,
            unknowns: unknowns(&mesh, scenario),
            report,
            decision: None,
            marked: None,
        };
        if done {
            history.iterations.push(entry);
            break;
        }
        let r = &entry.report;
        let n_el = mesh.n_elements();
        let (refine_time, marks) = match plan.strategy {
            Strategy::Uniform => (true, Some(RefinementMarks::all(n_el))),
            Strategy::Balance => {
                let d = balance_step(r.eta_h.abs(), r.eta_k.abs(), r.eta_beta.abs());
                entry.decision = Some(d);
                match d {
                    Decision::RefineTime => (true, None),
                    Decision::RefineSpace => (false, Some(RefinementMarks::all(n_el))),
                    Decision::RefineBoth => (true, Some(RefinementMarks::all(n_el))),
                }
            }
            Strategy::Local => (false, Some(capped(mark_elements(&r.per_element, plan.gamma), &mesh, plan.max_level))),
            Strategy::Regional => {
                let m = regional_marks(&r.per_element, mesh.region_ids(), mesh.n_regions(), plan.gamma)?;
                (false, Some(capped(m, &mesh, plan.max_level)))
            }
        };
        if refine_time {
            k *= 0.5;
        }
        let stalled = !refine_time && marks.as_ref().is_none_or(|m| m.count() == 0);
        if let Some(m) = &marks {
            if m.count() > 0 {
                mesh = Arc::new(mesh.refine(m)?);
            }
        }
        entry.marked = marks;
        history.iterations.push(entry);
        if stalled {
            break;
        }
    }
    Ok(history)
}
