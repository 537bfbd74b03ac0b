//! The `run`, `estimate`, `adapt`, `report` and `study` commands.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;

use seaice_core::adaptivity::{feedback_loop, AdaptHistory, Strategy};
use seaice_core::adjoint::dual_simulate;
use seaice_core::checkpoint;
use seaice_core::estimator::{estimate, ErrorReport};
use seaice_core::mesh::{uniform_mesh, QuadMesh};
use seaice_core::scenario::{HOUR, KM};
use seaice_core::solver::{simulate, Trajectory};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::report::{self, StudyRow};
use crate::vtk;

pub const TRAJECTORY_FILE: &str = "trajectory.chk";
pub const DUAL_FILE: &str = "dual.chk";
pub const SUMMARY_FILE: &str = "summary.json";
pub const REPORT_FILE: &str = "report.json";
pub const STUDY_FILE: &str = "study.csv";
pub const HISTORY_FILE: &str = "adapt_history.csv";
pub const ADAPT_FILE: &str = "adapt.json";

fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

pub fn config_mesh(cfg: &RunConfig) -> CliResult<Arc<QuadMesh>> {
    let mesh = uniform_mesh(cfg.scenario.domain, cfg.subdivisions)?.with_regions(cfg.regions.0, cfg.regions.1)?;
    Ok(Arc::new(mesh))
}

#[derive(Clone, Debug, Serialize)]
pub struct StepSummary {
    pub n: usize,
    pub t_hours: f64,
    pub min_a: f64,
    pub max_a: f64,
    pub min_h: f64,
    pub max_h: f64,
    pub newton_iterations: usize,
    pub transport_iterations: usize,
    pub linear_iterations: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub scenario: String,
    pub h_km: f64,
    pub k_hours: f64,
    pub n_steps: usize,
    pub j_value: f64,
    pub mesh_hash: String,
    pub steps: Vec<StepSummary>,
    pub snapshots: Vec<String>,
}

fn summarize(cfg: &RunConfig, tr: &Trajectory, snapshots: Vec<String>) -> RunSummary {
    RunSummary {
        scenario: cfg.scenario_name.clone(),
        h_km: cfg.h_km(),
        k_hours: cfg.k_hours(),
        n_steps: tr.n_steps(),
        j_value: tr.goal_value(&cfg.goal),
        mesh_hash: format!("{:016x}", tr.mesh.hash()),
        steps: tr
            .diagnostics
            .iter()
            .enumerate()
            .map(|(n, d)| StepSummary {
                n,
                t_hours: tr.times[n] / HOUR,
                min_a: d.min_a,
                max_a: d.max_a,
                min_h: d.min_h,
                max_h: d.max_h,
                newton_iterations: d.newton_iterations,
                transport_iterations: d.transport_iterations,
                linear_iterations: d.linear_iterations,
            })
            .collect(),
        snapshots,
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Simulates and writes the checkpoint, VTK snapshots and the run summary.
pub fn cmd_run(cfg: &RunConfig) -> CliResult<RunSummary> {
    let dir = &cfg.output.dir;
    ensure_dir(dir)?;
    let mesh = config_mesh(cfg)?;
    let tr = simulate(&cfg.scenario, mesh.clone(), cfg.k, &cfg.solver)?;
    checkpoint::save_trajectory(&dir.join(TRAJECTORY_FILE), &tr)?;
    let mut snapshots = Vec::new();
    if cfg.output.vtk {
        let vdir = dir.join("vtk");
        ensure_dir(&vdir)?;
        let last = tr.n_steps();
        for (n, s) in tr.states.iter().enumerate() {
            if n % cfg.output.every == 0 || n == last {
                let name = format!("state_{n:04}.vtk");
                vtk::write(&vdir.join(&name), &mesh, s, tr.times[n])?;
                snapshots.push(format!("vtk/{name}"));
            }
        }
    }
    let summary = summarize(cfg, &tr, snapshots);
    write_json(&dir.join(SUMMARY_FILE), &summary)?;
    log::info!("run: {} steps, J = {:.6}", tr.n_steps(), summary.j_value);
    Ok(summary)
}

#[derive(Clone, Debug, Serialize)]
pub struct EstimateOutput {
    pub h_km: f64,
    pub k_hours: f64,
    pub report: ErrorReport,
}

/// Dual solve and error estimate for a stored trajectory.
pub fn cmd_estimate(cfg: &RunConfig, checkpoint_path: Option<&Path>) -> CliResult<ErrorReport> {
    let dir = &cfg.output.dir;
    ensure_dir(dir)?;
    let path: PathBuf = checkpoint_path.map(Path::to_path_buf).unwrap_or_else(|| dir.join(TRAJECTORY_FILE));
    let mesh = config_mesh(cfg)?;
    let tr = checkpoint::load_trajectory(&path, mesh)?;
    if (tr.k() - cfg.k).abs() > 1e-9 * cfg.k || tr.n_steps() != cfg.scenario.steps(cfg.k)? {
        return Err(CliError::Config(format!(
            "checkpoint step {} h / {} steps does not match the configuration ({} h)",
            tr.k() / HOUR,
            tr.n_steps(),
            cfg.k_hours()
        )));
    }
    let dual = dual_simulate(&cfg.scenario, &tr, &cfg.goal, &cfg.solver)?;
    checkpoint::save_dual(&dir.join(DUAL_FILE), &dual)?;
    let mut rep = estimate(&cfg.scenario, &tr, &dual, &cfg.goal)?;
    if let Some(j) = cfg.output.reference_j {
        rep = rep.with_reference(j);
    }
    write_json(
        &dir.join(REPORT_FILE),
        &EstimateOutput {
            h_km: cfg.h_km(),
            k_hours: cfg.k_hours(),
            report: rep.clone(),
        },
    )?;
    report::append_rows(&dir.join(STUDY_FILE), &[StudyRow::new(cfg.h_km(), cfg.k_hours(), &rep)])?;
    Ok(rep)
}

#[derive(Clone, Debug, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub strategy: Strategy,
    pub decision: Option<seaice_core::adaptivity::Decision>,
    pub elements: usize,
    pub unknowns: usize,
    pub h_min_km: f64,
    pub h_max_km: f64,
    pub k_hours: f64,
    #[serde(rename = "J")]
    pub j: f64,
    pub eta_total: f64,
    pub eta_h: f64,
    pub eta_k: f64,
    pub eta_beta: f64,
    pub marked: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct AdaptRecord {
    pub iterations: Vec<IterationRecord>,
    /// Regions refined after each pass (regional strategy only).
    pub marked_regions: Vec<Vec<usize>>,
    pub error: Option<String>,
}

pub fn adapt_record(history: &AdaptHistory, strategy: Strategy) -> AdaptRecord {
    let iterations = history
        .iterations
        .iter()
        .enumerate()
        .map(|(i, it)| IterationRecord {
            iteration: i,
            strategy,
            decision: it.decision,
            elements: it.mesh.n_elements(),
            unknowns: it.unknowns,
            h_min_km: it.mesh.min_h() / KM,
            h_max_km: it.mesh.max_h() / KM,
            k_hours: it.k / HOUR,
            j: it.report.j_value,
            eta_total: it.report.eta_total,
            eta_h: it.report.eta_h,
            eta_k: it.report.eta_k,
            eta_beta: it.report.eta_beta,
            marked: it.marked.as_ref().map_or(0, |m| m.count()),
        })
        .collect();
    let marked_regions = history
        .iterations
        .iter()
        .map(|it| match (&it.marked, strategy) {
            (Some(m), Strategy::Regional) => {
                let ids = it.mesh.region_ids();
                let mut r: Vec<usize> = (0..m.len()).filter(|&e| m.is_marked(e)).map(|e| ids[e]).collect();
                r.sort_unstable();
                r.dedup();
                r
            }
            _ => Vec::new(),
        })
        .collect();
    AdaptRecord {
        iterations,
        marked_regions,
        error: history.error.as_ref().map(ToString::to_string),
    }
}

/// Runs the feedback loop and writes the history CSV and JSON.
pub fn cmd_adapt(cfg: &RunConfig) -> CliResult<AdaptRecord> {
    let dir = &cfg.output.dir;
    ensure_dir(dir)?;
    let mesh = config_mesh(cfg)?;
    let history = feedback_loop(&cfg.scenario, mesh, cfg.k, &cfg.adapt, &cfg.goal, &cfg.solver)?;
    let record = adapt_record(&history, cfg.adapt.strategy);
    let mut w = csv::Writer::from_path(dir.join(HISTORY_FILE))?;
    for it in &record.iterations {
        w.serialize(it)?;
    }
    w.flush()?;
    write_json(&dir.join(ADAPT_FILE), &record)?;
    match history.error {
        Some(e) => Err(e.into()),
        None => Ok(record),
    }
}

/// Formats a study CSV against the reference table.
pub fn cmd_report(csv_path: &Path) -> CliResult<String> {
    Ok(report::format_report(&report::read_rows(csv_path)?))
}

/// Mesh subdivisions and steps (hours) of the reference grid, coarse to fine
/// in space within each step size.
pub const STUDY_GRID: [(usize, f64); 12] = [
    (8, 8.0),
    (16, 8.0),
    (32, 8.0),
    (64, 8.0),
    (8, 4.0),
    (16, 4.0),
    (32, 4.0),
    (64, 4.0),
    (8, 2.0),
    (16, 2.0),
    (32, 2.0),
    (64, 2.0),
];

/// Goal value of a reference run (primal only).
pub fn reference_value(cfg: &RunConfig, subdivisions: usize, k_hours: f64) -> CliResult<f64> {
    let mesh = Arc::new(uniform_mesh(cfg.scenario.domain, subdivisions)?);
    Ok(simulate(&cfg.scenario, mesh, k_hours * HOUR, &cfg.solver)?.goal_value(&cfg.goal))
}

/// One study cell: simulate, dual, estimate.
pub fn study_cell(cfg: &RunConfig, subdivisions: usize, k_hours: f64, reference: Option<f64>) -> CliResult<StudyRow> {
    let mesh = Arc::new(uniform_mesh(cfg.scenario.domain, subdivisions)?);
    let tr = simulate(&cfg.scenario, mesh, k_hours * HOUR, &cfg.solver)?;
    let dual = dual_simulate(&cfg.scenario, &tr, &cfg.goal, &cfg.solver)?;
    let mut rep = estimate(&cfg.scenario, &tr, &dual, &cfg.goal)?;
    if let Some(j) = reference {
        rep = rep.with_reference(j);
    }
    Ok(StudyRow::new(cfg.scenario.domain.width() / subdivisions as f64 / KM, k_hours, &rep))
}

/// Runs the reference grid (or `cells`) and writes `study.csv`.
pub fn cmd_study(cfg: &RunConfig, cells: &[(usize, f64)], reference: Option<(usize, f64)>) -> CliResult<Vec<StudyRow>> {
    let dir = &cfg.output.dir;
    ensure_dir(dir)?;
    let j_ref = match (cfg.output.reference_j, reference) {
        (Some(j), _) => Some(j),
        (None, Some((n, k))) => Some(reference_value(cfg, n, k)?),
        (None, None) => None,
    };
    let mut rows = Vec::with_capacity(cells.len());
    for &(n, k) in cells {
        let row = study_cell(cfg, n, k, j_ref)?;
        log::info!("study cell h = {:.3} km, k = {k} h: J = {:.6}, eta = {:.3e}", row.h_km, row.j, row.eta_total);
        rows.push(row);
    }
    report::write_rows(&dir.join(STUDY_FILE), &rows)?;
    Ok(rows)
}
