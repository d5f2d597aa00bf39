//! Experiment runs: configuration, sweep execution and artifacts
//! (`sweep.csv`, `frontier.csv`, `sweep.svg`, `run.meta`).
//!
//! A run config is TOML with one table per concern; every key is optional
//! in the file and may be overridden from the command line:
//!
//! ```toml
//! [env]
//! name = "box_corner"      # or: file = "my.env"
//! gamma = 0.9              # optional override
//!
//! [baseline]
//! kind = "stepwise"        # initial-state | initial-inaction | stepwise
//! tau = 1
//!
//! [measure]
//! kind = "relative-reachability"
//! shape = "abs"            # value-difference only
//!
//! [planner]
//! mu_grid = "0.001:1000:20log"
//!
//! [run]
//! tol = 1e-8
//! seed = 0
//! out = "out"
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{BaselineKind, BaselineSpec};
use crate::env::{build_named_env, compile_to_mdp, load_env, CompiledEnv, GridworldEnv, LAYOUT_VERSION};
use crate::error::{Error, Result};
use crate::measures::{MeasureKind, MeasureSpec, Shape};
use crate::planner::{
    find_safe_effective_range, impact_table, mu_grid, mu_sweep, policy_point, PlanningProblem, SweepRow,
};
use crate::solvers::{enumerate_policies, pareto_frontier};

/// Largest policy count for which `frontier.csv` is produced.
pub const FRONTIER_POLICY_CAP: u64 = 200_000;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;
pub const EXIT_VERIFY: i32 = 4;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSection {
    pub name: Option<String>,
    pub file: Option<PathBuf>,
    pub gamma: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineSection {
    pub kind: Option<String>,
    pub tau: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureSection {
    pub kind: Option<String>,
    pub shape: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannerSection {
    pub mu_grid: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub tol: Option<f64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

/// Partially specified configuration, as read from a file or from flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    #[serde(default)]
    pub env: EnvSection,
    #[serde(default)]
    pub baseline: BaselineSection,
    #[serde(default)]
    pub measure: MeasureSection,
    #[serde(default)]
    pub planner: PlannerSection,
    #[serde(default)]
    pub run: RunSection,
}

macro_rules! take {
    ($base:expr, $over:expr, $($sec:ident . $field:ident),*) => {
        $( if $over.$sec.$field.is_some() { $base.$sec.$field = $over.$sec.$field; } )*
    };
}

impl RawConfig {
    /// Parses a config; a `[provenance]` table (as written to `run.meta`)
    /// is accepted and ignored, so a run can be replayed from its meta file.
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        table.remove("provenance");
        RawConfig::deserialize(toml::Value::Table(table)).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Fields set in `over` replace those in `self`. Naming an env by
    /// name clears a file from the base and vice versa.
    pub fn merge(mut self, over: RawConfig) -> Self {
        if over.env.name.is_some() {
            self.env.file = None;
        }
        if over.env.file.is_some() {
            self.env.name = None;
        }
        take!(self, over, env.name, env.file, env.gamma, baseline.kind, baseline.tau);
        take!(self, over, measure.kind, measure.shape, planner.mu_grid, run.tol, run.seed, run.out);
        self
    }

    pub fn resolve(&self) -> Result<RunConfig> {
        let env = match (&self.env.name, &self.env.file) {
            (Some(_), Some(_)) => return Err(Error::Config("env: give either name or file, not both".into())),
            (Some(n), None) => EnvSource::Named(n.clone()),
            (None, Some(f)) => EnvSource::File(f.clone()),
            (None, None) => return Err(Error::Config("env: an env name or file is required".into())),
        };
        let field = |name: &str, e: Error| Error::Config(format!("{name}: {}", strip_config(e)));
        let baseline_kind = match &self.baseline.kind {
            Some(k) => k.parse::<BaselineKind>().map_err(|e| field("baseline.kind", e))?,
            None => BaselineKind::StepwiseInaction,
        };
        let tau = self.baseline.tau.unwrap_or(1);
        let baseline = BaselineSpec::new(baseline_kind, tau).map_err(|e| field("baseline.tau", e))?;
        let measure = match &self.measure.kind {
            Some(k) => k.parse::<MeasureKind>().map_err(|e| field("measure.kind", e))?,
            None => MeasureKind::RelativeReachability,
        };
        let shape = match &self.measure.shape {
            Some(s) => Some(s.parse::<Shape>().map_err(|e| field("measure.shape", e))?),
            None => None,
        };
        let grid_text = self.planner.mu_grid.clone().unwrap_or_else(|| DEFAULT_MU_GRID.to_string());
        let mu_grid = parse_mu_grid(&grid_text).map_err(|e| field("planner.mu_grid", e))?;
        if let Some(g) = self.env.gamma {
            if !(0.0..1.0).contains(&g) {
                return Err(Error::Config(format!("env.gamma: must be in [0, 1), got {g}")));
            }
        }
        let tol = self.run.tol.unwrap_or(1e-8);
        if !(tol > 0.0) || !tol.is_finite() {
            return Err(Error::Config(format!("run.tol: must be positive, got {tol}")));
        }
        Ok(RunConfig {
            env,
            gamma: self.env.gamma,
            baseline,
            measure,
            shape,
            mu_grid_text: grid_text,
            mu_grid,
            tol,
            seed: self.run.seed.unwrap_or(0),
            out: self.run.out.clone().unwrap_or_else(|| PathBuf::from("out")),
        })
    }
}

fn strip_config(e: Error) -> String {
    match e {
        Error::Config(m) | Error::InvalidParameter(m) => m,
        other => other.to_string(),
    }
}

pub const DEFAULT_MU_GRID: &str = "0.001:1000:20log";

/// `a:b:nlog`, `a:b:nlin`, or a comma-separated ascending list.
pub fn parse_mu_grid(text: &str) -> Result<Vec<f64>> {
    let bad = || Error::Config(format!("expected a:b:n(log|lin) or a comma list, got '{text}'"));
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
    let parts: Vec<&str> = text.split(':').collect();
    let grid = match parts.as_slice() {
        [a, b, n] => {
            let (count, log) = if let Some(c) = n.strip_suffix("log") {
                (c, true)
            } else if let Some(c) = n.strip_suffix("lin") {
                (c, false)
            } else {
                return Err(bad());
            };
            let count: usize = count.trim().parse().map_err(|_| bad())?;
            mu_grid(num(a)?, num(b)?, count, log).map_err(|e| Error::Config(strip_config(e)))?
        }
        [list] => list.split(',').map(num).collect::<Result<Vec<_>>>()?,
        _ => return Err(bad()),
    };
    if grid.is_empty() || grid.iter().any(|m| !(*m >= 0.0) || !m.is_finite()) {
        return Err(Error::Config(format!("mu grid must be non-negative and finite: '{text}'")));
    }
    if grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Config(format!("mu grid must be ascending: '{text}'")));
    }
    Ok(grid)
}

#[derive(Debug, Clone, PartialEq)]
pub enum EnvSource {
    Named(String),
    File(PathBuf),
}

/// A fully resolved run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub env: EnvSource,
    pub gamma: Option<f64>,
    pub baseline: BaselineSpec,
    pub measure: MeasureKind,
    pub shape: Option<Shape>,
    pub mu_grid_text: String,
    pub mu_grid: Vec<f64>,
    pub tol: f64,
    pub seed: u64,
    pub out: PathBuf,
}

impl RunConfig {
    pub fn load_env(&self) -> Result<GridworldEnv> {
        let mut env = match &self.env {
            EnvSource::Named(n) => build_named_env(n).map_err(|e| Error::Config(format!("env.name: {e}")))?,
            EnvSource::File(p) => load_env(p).map_err(|e| Error::Config(format!("env.file: {e}")))?,
        };
        if let Some(g) = self.gamma {
            env.gamma = g;
        }
        Ok(env)
    }

    /// The config as TOML, sufficient to repeat the run.
    pub fn to_raw(&self) -> RawConfig {
        let (name, file) = match &self.env {
            EnvSource::Named(n) => (Some(n.clone()), None),
            EnvSource::File(p) => (None, Some(p.clone())),
        };
        RawConfig {
            env: EnvSection {
                name,
                file,
                gamma: self.gamma,
            },
            baseline: BaselineSection {
                kind: Some(self.baseline.kind.to_string()),
                tau: Some(self.baseline.rollout_horizon),
            },
            measure: MeasureSection {
                kind: Some(self.measure.to_string()),
                shape: self.shape.map(|s| match s {
                    Shape::Relu => "relu".to_string(),
                    Shape::Abs => "abs".to_string(),
                }),
            },
            planner: PlannerSection {
                mu_grid: Some(self.mu_grid_text.clone()),
            },
            run: RunSection {
                tol: Some(self.tol),
                seed: Some(self.seed),
                out: Some(self.out.clone()),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrontierPoint {
    pub policy: Vec<usize>,
    pub value: f64,
    pub impact: f64,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub rows: Vec<SweepRow>,
    pub frontier: Option<Vec<FrontierPoint>>,
    pub safe_effective: Vec<(f64, f64)>,
    pub files: Vec<PathBuf>,
}

impl RunReport {
    pub fn has_errors(&self) -> bool {
        self.rows.iter().any(|r| r.error.is_some())
    }
}

/// Builds the measure for a run from the environment's annotations.
pub fn measure_for(cfg: &RunConfig, env: &CompiledEnv) -> MeasureSpec {
    let mut m = MeasureSpec::from_env(cfg.measure, env, cfg.baseline.rollout_horizon);
    if let Some(shape) = cfg.shape {
        m.shape = shape;
    }
    m.tol = m.tol.min(cfg.tol);
    m
}

/// Runs a sweep and writes every artifact into `cfg.out`.
pub fn run(cfg: &RunConfig) -> Result<RunReport> {
    let env_def = cfg.load_env()?;
    let env = compile_to_mdp(&env_def)?;
    let measure = measure_for(cfg, &env);
    let mut problem = PlanningProblem::from_env(&env);
    problem.tol = cfg.tol;
    let rows = mu_sweep(&problem, &measure, &cfg.baseline, &cfg.mu_grid, cfg.seed)?;
    let frontier = frontier(&problem, &measure, &cfg.baseline)?;
    let safe_effective = find_safe_effective_range(&rows);

    fs::create_dir_all(&cfg.out)?;
    let mut files = Vec::new();
    let mut write = |name: &str, body: String| -> Result<()> {
        let path = cfg.out.join(name);
        fs::write(&path, body)?;
        files.push(path);
        Ok(())
    };
    write("sweep.csv", sweep_csv(&rows))?;
    if let Some(points) = &frontier {
        write("frontier.csv", frontier_csv(points))?;
    }
    write("sweep.svg", sweep_svg(&rows, &env_def.name))?;
    write("run.meta", run_meta(cfg, &env_def)?)?;
    Ok(RunReport {
        rows,
        frontier,
        safe_effective,
        files,
    })
}

/// Non-dominated (discounted value, discounted impact) points over every
/// deterministic stationary policy, when that set is small enough and the
/// impact is stationary.
pub fn frontier(problem: &PlanningProblem, measure: &MeasureSpec, baseline: &BaselineSpec) -> Result<Option<Vec<FrontierPoint>>> {
    let mdp = problem.mdp;
    let count = (mdp.n_actions() as f64).powi(mdp.n_states() as i32);
    if count > FRONTIER_POLICY_CAP as f64 {
        return Ok(None);
    }
    let table = match impact_table(problem, measure, baseline) {
        Ok(t) if t.n_layers() == 1 => t,
        Ok(_) | Err(_) => return Ok(None),
    };
    let policies: Vec<Vec<usize>> = enumerate_policies(mdp, FRONTIER_POLICY_CAP)?.collect();
    let points: Vec<(f64, f64)> = policies.iter().map(|p| policy_point(problem, &table, p)).collect();
    Ok(Some(
        pareto_frontier(&points)
            .into_iter()
            .map(|i| FrontierPoint {
                policy: policies[i].clone(),
                value: points[i].0,
                impact: points[i].1,
            })
            .collect(),
    ))
}

fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else {
        String::new()
    }
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("mu,task_return,total_impact,audit_impact,behavior,policy_hash\n");
    for r in rows {
        let behavior = match (&r.error, r.behavior) {
            (Some(_), _) => "error".to_string(),
            (None, Some(b)) => b.to_string(),
            (None, None) => String::new(),
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            num(r.mu),
            num(r.task_return),
            num(r.total_impact),
            r.audit_impact.map(num).unwrap_or_default(),
            behavior,
            r.policy_hash
        );
    }
    out
}

pub fn frontier_csv(points: &[FrontierPoint]) -> String {
    let mut out = String::from("rank,value,impact,policy\n");
    for (i, p) in points.iter().enumerate() {
        let policy: Vec<String> = p.policy.iter().map(|a| a.to_string()).collect();
        let _ = writeln!(out, "{i},{},{},{}", num(p.value), num(p.impact), policy.join(" "));
    }
    out
}

/// Task return and total impact against mu on a log axis. Zero mu values
/// are drawn at the left edge.
pub fn sweep_svg(rows: &[SweepRow], title: &str) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const L: f64 = 60.0;
    const R: f64 = 20.0;
    const T: f64 = 40.0;
    const B: f64 = 50.0;
    let ok: Vec<&SweepRow> = rows.iter().filter(|r| r.error.is_none()).collect();
    let positive: Vec<f64> = ok.iter().map(|r| r.mu).filter(|m| *m > 0.0).collect();
    let lo = positive.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = positive.iter().copied().fold(0.0, f64::max);
    let (lx, hx) = if positive.is_empty() {
        (0.0, 1.0)
    } else if hi > lo {
        (lo.log10(), hi.log10())
    } else {
        (lo.log10() - 1.0, lo.log10() + 1.0)
    };
    let x = |mu: f64| {
        let v = if mu > 0.0 { mu.log10() } else { lx };
        L + (v - lx) / (hx - lx) * (W - L - R)
    };
    let ymax = ok
        .iter()
        .flat_map(|r| [r.task_return, r.total_impact])
        .filter(|v| v.is_finite())
        .fold(1e-12, f64::max);
    let y = |v: f64| H - B - v / ymax * (H - T - B);
    let line = |f: &dyn Fn(&SweepRow) -> f64| -> String {
        ok.iter()
            .map(|r| format!("{:.2},{:.2}", x(r.mu), y(f(r))))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle">{}</text>"#, W / 2.0, xml_escape(title));
    let _ = writeln!(
        s,
        r#"<line x1="{L}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/><line x1="{L}" y1="{T}" x2="{L}" y2="{0}" stroke="black"/>"#,
        H - B,
        W - R
    );
    if !positive.is_empty() {
        let mut d = lx.floor() as i32;
        while (d as f64) <= hx.ceil() {
            let px = L + (d as f64 - lx) / (hx - lx) * (W - L - R);
            if (L - 1e-9..=W - R + 1e-9).contains(&px) {
                let _ = writeln!(
                    s,
                    r#"<line x1="{px:.2}" y1="{0}" x2="{px:.2}" y2="{1}" stroke="black"/><text x="{px:.2}" y="{2}" text-anchor="middle">1e{d}</text>"#,
                    H - B,
                    H - B + 5.0,
                    H - B + 20.0
                );
            }
            d += 1;
        }
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">mu</text>"#, (L + W - R) / 2.0, H - 10.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, L - 5.0, T + 4.0, num(ymax));
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">0</text>"#, L - 5.0, H - B + 4.0);
    let _ = writeln!(
        s,
        r##"<polyline fill="none" stroke="#1f77b4" stroke-width="2" points="{}"/>"##,
        line(&|r| r.task_return)
    );
    let _ = writeln!(
        s,
        r##"<polyline fill="none" stroke="#d62728" stroke-width="2" points="{}"/>"##,
        line(&|r| r.total_impact)
    );
    let _ = writeln!(
        s,
        r##"<text x="{0}" y="{1}" fill="#1f77b4">task return</text><text x="{0}" y="{2}" fill="#d62728">total impact</text>"##,
        W - R - 100.0,
        T + 10.0,
        T + 26.0
    );
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Full config, seed and versions, as TOML that `run --config` accepts
/// once the `[provenance]` table is dropped.
pub fn run_meta(cfg: &RunConfig, env: &GridworldEnv) -> Result<String> {
    let mut text = toml::to_string(&cfg.to_raw()).map_err(|e| Error::Config(e.to_string()))?;
    let digest = hex::encode(Sha256::digest(env.to_text().as_bytes()));
    let _ = write!(
        text,
        "\n[provenance]\nimpactlab = \"{}\"\nlayout_version = {}\nenv_layout_version = {}\nenv_sha256 = \"{}\"\n",
        env!("CARGO_PKG_VERSION"),
        LAYOUT_VERSION,
        env.layout_version,
        digest
    );
    Ok(text)
}

/// Reads a `run.meta` back into a config.
pub fn parse_run_meta(text: &str) -> Result<RawConfig> {
    RawConfig::from_toml(text)
}
