//! Sectioned key-value run configuration.
//!
//! ```ini
//! [scenario]
//! name = benchmark1day      ; or benchmark33day
//! t_end_hours = 24          ; optional horizon override
//! P_star = 27500            ; any physical constant by symbol
//! [mesh]
//! subdivisions = 8          ; or h_km = 62.5
//! [time]
//! k_hours = 8
//! [solver]
//! preconditioner = lu
//! [adapt]
//! strategy = balance
//! [goal]
//! x0_km = 375
//! [output]
//! dir = out
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ini::Ini;
use seaice_core::adaptivity::{AdaptPlan, Strategy};
use seaice_core::linalg::PreconditionerKind;
use seaice_core::mesh::Rect;
use seaice_core::model::GoalSpec;
use seaice_core::scenario::{Preset, Scenario, HOUR, KM};
use seaice_core::solver::SolverSettings;

use crate::error::{CliError, CliResult};

const SCENARIO_KEYS: &[&str] = &[
    "name",
    "t_end_hours",
    "a0",
    "h0_mean",
    "h0_amplitude",
    "ocean_speed",
    "wind_speed",
    "alpha_up_deg",
    "alpha_down_deg",
    "rho_ice",
    "rho_atm",
    "rho_ocean",
    "C_atm",
    "C_ocean",
    "f_c",
    "P_star",
    "C_conc",
    "Delta_min",
];
const MESH_KEYS: &[&str] = &["subdivisions", "h_km", "regions"];
const TIME_KEYS: &[&str] = &["k_hours"];
const SOLVER_KEYS: &[&str] = &[
    "newton_tol",
    "newton_max_iter",
    "max_halvings",
    "krylov_tol",
    "krylov_max_iter",
    "krylov_restart",
    "preconditioner",
    "workers",
    "deterministic",
];
const ADAPT_KEYS: &[&str] = &["strategy", "gamma", "max_iterations", "tolerance", "max_level"];
const GOAL_KEYS: &[&str] = &["x0_km", "y0_km", "x1_km", "y1_km", "t1_hours", "t2_hours", "empty"];
const OUTPUT_KEYS: &[&str] = &["dir", "every", "vtk", "reference_j"];

fn allowed(section: &str) -> Option<&'static [&'static str]> {
    Some(match section {
        "scenario" => SCENARIO_KEYS,
        "mesh" => MESH_KEYS,
        "time" => TIME_KEYS,
        "solver" => SOLVER_KEYS,
        "adapt" => ADAPT_KEYS,
        "goal" => GOAL_KEYS,
        "output" => OUTPUT_KEYS,
        _ => return None,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Write a VTK snapshot every `every` steps (and always the last one).
    pub every: usize,
    pub vtk: bool,
    /// Reference goal value for effectivity indices.
    pub reference_j: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub scenario_name: String,
    pub scenario: Scenario,
    pub subdivisions: usize,
    pub regions: (usize, usize),
    pub k: f64,
    pub solver: SolverSettings,
    pub workers: Option<usize>,
    /// Reductions run in element order either way; kept for explicit configs.
    pub deterministic: bool,
    pub adapt: AdaptPlan,
    pub goal: GoalSpec,
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn h_km(&self) -> f64 {
        self.scenario.domain.width() / self.subdivisions as f64 / KM
    }

    pub fn k_hours(&self) -> f64 {
        self.k / HOUR
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        for (section, props) in ini.iter() {
            let Some(section) = section else {
                if let Some((k, _)) = props.iter().next() {
                    return Err(CliError::Config(format!("key '{k}' outside of any section")));
                }
                continue;
            };
            let keys = allowed(section).ok_or_else(|| CliError::Config(format!("unknown section [{section}]")))?;
            let entry = sections.entry(section.to_string()).or_default();
            for (k, v) in props.iter() {
                if !keys.contains(&k) {
                    return Err(CliError::Config(format!("unknown key '{k}' in [{section}]")));
                }
                entry.insert(k.to_string(), v.trim().to_string());
            }
        }
        Builder { sections }.build()
    }
}

struct Builder {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl Builder {
    fn raw(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section).and_then(|s| s.get(key)).map(String::as_str)
    }

    fn get<T: std::str::FromStr>(&self, section: &str, key: &str) -> CliResult<Option<T>> {
        match self.raw(section, key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| CliError::Config(format!("invalid value '{v}' for '{key}' in [{section}]"))),
        }
    }

    fn build(&self) -> CliResult<RunConfig> {
        let name = self.raw("scenario", "name").unwrap_or("benchmark1day").to_string();
        let preset: Preset = name.parse().map_err(|e: seaice_core::Error| CliError::Config(e.to_string()))?;
        let mut sc = Scenario::preset(preset);
        if let Some(h) = self.get::<f64>("scenario", "t_end_hours")? {
            sc = sc.with_horizon(h * HOUR);
        }
        for (key, slot) in [
            ("a0", &mut sc.a0),
            ("h0_mean", &mut sc.h0_mean),
            ("h0_amplitude", &mut sc.h0_amplitude),
            ("ocean_speed", &mut sc.ocean_speed),
            ("wind_speed", &mut sc.wind_speed),
            ("alpha_up_deg", &mut sc.alpha_up_deg),
            ("alpha_down_deg", &mut sc.alpha_down_deg),
        ] {
            if let Some(v) = self.get::<f64>("scenario", key)? {
                *slot = v;
            }
        }
        for key in &SCENARIO_KEYS[9..] {
            if let Some(v) = self.get::<f64>("scenario", key)? {
                sc.params.set(key, v)?;
            }
        }

        let subdivisions = match (self.get::<usize>("mesh", "subdivisions")?, self.get::<f64>("mesh", "h_km")?) {
            (Some(_), Some(_)) => return Err(CliError::Config("give either subdivisions or h_km in [mesh]".into())),
            (Some(n), None) => n,
            (None, Some(h)) => {
                let n = sc.domain.width() / (h * KM);
                if !(n >= 1.0) || (n - n.round()).abs() > 1e-9 * n {
                    return Err(CliError::Config(format!("h_km = {h} does not divide the domain")));
                }
                n.round() as usize
            }
            (None, None) => 8,
        };
        if subdivisions == 0 || subdivisions % 2 != 0 {
            return Err(CliError::Config(format!("subdivisions must be even and positive, got {subdivisions}")));
        }
        let regions = match self.raw("mesh", "regions") {
            None => (4, 4),
            Some(v) => {
                let parsed = v.split_once('x').and_then(|(a, b)| Some((a.trim().parse().ok()?, b.trim().parse().ok()?)));
                match parsed {
                    Some((r, c)) if r > 0 && c > 0 => (r, c),
                    _ => return Err(CliError::Config(format!("invalid region grid '{v}', expected RxC"))),
                }
            }
        };

        let k = self.get::<f64>("time", "k_hours")?.unwrap_or(8.0) * HOUR;

        let mut solver = SolverSettings::default();
        if let Some(v) = self.get("solver", "newton_tol")? {
            solver.newton_tol = v;
        }
        if let Some(v) = self.get("solver", "newton_max_iter")? {
            solver.newton_max_iter = v;
        }
        if let Some(v) = self.get("solver", "max_halvings")? {
            solver.max_halvings = v;
        }
        if let Some(v) = self.get("solver", "krylov_tol")? {
            solver.krylov.tol = v;
        }
        if let Some(v) = self.get("solver", "krylov_max_iter")? {
            solver.krylov.max_iter = v;
        }
        if let Some(v) = self.get("solver", "krylov_restart")? {
            solver.krylov.restart = v;
        }
        if let Some(v) = self.raw("solver", "preconditioner") {
            solver.krylov.preconditioner = v.parse::<PreconditionerKind>()?;
        }
        solver.validate()?;
        let workers = self.get::<usize>("solver", "workers")?;
        if workers == Some(0) {
            return Err(CliError::Config("workers must be positive".into()));
        }
        let deterministic = self.get::<bool>("solver", "deterministic")?.unwrap_or(true);

        let mut adapt = AdaptPlan {
            regions,
            ..AdaptPlan::default()
        };
        if let Some(v) = self.raw("adapt", "strategy") {
            adapt.strategy = v.parse::<Strategy>()?;
        }
        if let Some(v) = self.get("adapt", "gamma")? {
            adapt.gamma = v;
        }
        if let Some(v) = self.get("adapt", "max_iterations")? {
            adapt.max_iterations = v;
        }
        adapt.tolerance = self.get("adapt", "tolerance")?;
        adapt.max_level = self.get("adapt", "max_level")?;
        adapt.validate()?;

        let mut goal = sc.goal;
        let r = &mut goal.region;
        for (key, slot) in [("x0_km", &mut r.x0), ("y0_km", &mut r.y0), ("x1_km", &mut r.x1), ("y1_km", &mut r.y1)] {
            if let Some(v) = self.get::<f64>("goal", key)? {
                *slot = v * KM;
            }
        }
        if let Some(v) = self.get::<f64>("goal", "t1_hours")? {
            goal.t1 = v * HOUR;
        }
        if let Some(v) = self.get::<f64>("goal", "t2_hours")? {
            goal.t2 = v * HOUR;
        }
        if self.get::<bool>("goal", "empty")?.unwrap_or(false) {
            // Zero-area region: the goal and its derivative vanish identically.
            goal.region = Rect { x0: 0.0, y0: 0.0, x1: 0.0, y1: 0.0 };
        } else {
            Rect::new(goal.region.x0, goal.region.y0, goal.region.x1, goal.region.y1)?;
        }
        goal.validate(&sc.domain, sc.t_end)?;
        sc.goal = goal;
        sc.validate()?;
        sc.steps(k)?;

        let output = OutputConfig {
            dir: PathBuf::from(self.raw("output", "dir").unwrap_or("out")),
            every: self.get("output", "every")?.unwrap_or(1),
            vtk: self.get("output", "vtk")?.unwrap_or(true),
            reference_j: self.get("output", "reference_j")?,
        };
        if output.every == 0 {
            return Err(CliError::Config("output cadence 'every' must be positive".into()));
        }
        Ok(RunConfig {
            scenario_name: name,
            scenario: sc,
            subdivisions,
            regions,
            k,
            solver,
            workers,
            deterministic,
            adapt,
            goal,
            output,
        })
    }
}
