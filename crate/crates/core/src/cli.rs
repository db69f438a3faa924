//! Config-driven command line front end.
//!
//! A project file (JSON) names systems, maps and morphisms by their
//! expression strings and lists the analyses to run. Every analysis writes
//! its artifacts under `<out>/<analysis name>/`; the run writes
//! `summary.json` (deterministic for a fixed config and seed) and
//! `run_metadata.json` (wall times and timestamps).

use std::collections::{BTreeMap, HashSet};
use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::integrate::{integrate, integrate_many, IntegratorConfig, Termination, Trajectory};
use crate::metric::{trajectory_distance, SamplingPlan};
use crate::morphism::{
    check_equilibria_preserved, check_open, check_related, transfer, TransferConfig, DEFAULT_OPEN_MARGIN, TOOL_VERSION,
};
use crate::stability::{check_stability, StabilityQuery};
use crate::system::{
    DomainSpec, Interval, MetricSpec, MorphismDecl, Region, SmoothMapSpec, SystemError, VectorFieldSpec,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ANALYSIS_FAILED: i32 = 2;
pub const EXIT_USAGE: i32 = 64;
pub const EXIT_CONFIG: i32 = 65;
pub const EXIT_IO: i32 = 74;

pub const LOG_ENV: &str = "FLOWSTAB_LOG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("duplicate {what} name `{name}`")]
    Duplicate { what: &'static str, name: String },
    #[error("{what} `{name}` is not defined")]
    Dangling { what: &'static str, name: String },
    #[error("{0}")]
    Dimension(String),
    #[error("{0}")]
    Invalid(String),
    #[error("`{name}`: {source}")]
    System { name: String, source: SystemError },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemEntry {
    pub name: String,
    pub dim: usize,
    pub components: Vec<String>,
    /// Omitted means all of ℝⁿ.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<Vec<Interval>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapEntry {
    pub name: String,
    /// Name of the system the map starts from.
    pub source: String,
    /// Name of the system the map lands in.
    pub target: String,
    pub components: Vec<String>,
    /// Omitted means the source system's domain.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<Vec<Interval>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MorphismEntry {
    pub name: String,
    pub map: String,
    /// Defaults to the map's source system.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    /// Defaults to the map's target system.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<Region>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<usize>,
}

impl SweepGrid {
    fn points(&self) -> Vec<Vec<f64>> {
        let mut out = self.points.clone().unwrap_or_default();
        if let Some(r) = &self.region {
            out.extend(r.grid(self.density.unwrap_or(0)));
        }
        out
    }
}

/// Stability knobs shared by `stability` and `transfer`; unset fields take
/// the library defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityOptions {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_ladder: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<MetricSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius_cap: Option<f64>,
}

impl StabilityOptions {
    fn query(&self, x0: Vec<f64>, seed: u64) -> StabilityQuery {
        let d = StabilityQuery::default();
        StabilityQuery {
            x0,
            eps_ladder: self.eps_ladder.clone().unwrap_or(d.eps_ladder),
            delta_min: self.delta_min.unwrap_or(d.delta_min),
            probes: self.probes.unwrap_or(d.probes),
            metric: self.metric.clone().unwrap_or(d.metric),
            radius_cap: self.radius_cap.unwrap_or(d.radius_cap),
            seed,
            ..d
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AnalysisSpec {
    Simulate {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
        system: String,
        initial: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        horizon: Option<f64>,
    },
    Distance {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
        system: String,
        a: Vec<f64>,
        b: Vec<f64>,
        #[serde(default)]
        metric: MetricSpec,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        horizon: Option<f64>,
    },
    Stability {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
        system: String,
        x0: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
        #[serde(default)]
        options: StabilityOptions,
    },
    Morphism {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
        morphism: String,
        region: Region,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        grid_density: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tol: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        margin: Option<f64>,
        /// Source equilibria to check for preservation.
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        equilibria: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Transfer {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
        morphism: String,
        x0: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
        #[serde(default)]
        options: StabilityOptions,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        grid_density: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        related_tol: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        open_margin: Option<f64>,
    },
    Sweep {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
        system: String,
        grid: SweepGrid,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        horizon: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalysisKind {
    Simulate,
    Distance,
    Stability,
    Morphism,
    Transfer,
    Sweep,
}

impl AnalysisKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AnalysisKind::Simulate => "simulate",
            AnalysisKind::Distance => "distance",
            AnalysisKind::Stability => "stability",
            AnalysisKind::Morphism => "morphism",
            AnalysisKind::Transfer => "transfer",
            AnalysisKind::Sweep => "sweep",
        }
    }
}

impl AnalysisSpec {
    pub fn kind(&self) -> AnalysisKind {
        match self {
            AnalysisSpec::Simulate { .. } => AnalysisKind::Simulate,
            AnalysisSpec::Distance { .. } => AnalysisKind::Distance,
            AnalysisSpec::Stability { .. } => AnalysisKind::Stability,
            AnalysisSpec::Morphism { .. } => AnalysisKind::Morphism,
            AnalysisSpec::Transfer { .. } => AnalysisKind::Transfer,
            AnalysisSpec::Sweep { .. } => AnalysisKind::Sweep,
        }
    }

    fn explicit_name(&self) -> Option<&str> {
        match self {
            AnalysisSpec::Simulate { name, .. }
            | AnalysisSpec::Distance { name, .. }
            | AnalysisSpec::Stability { name, .. }
            | AnalysisSpec::Morphism { name, .. }
            | AnalysisSpec::Transfer { name, .. }
            | AnalysisSpec::Sweep { name, .. } => name.as_deref(),
        }
    }

    fn explicit_seed(&self) -> Option<u64> {
        match self {
            AnalysisSpec::Stability { seed, .. }
            | AnalysisSpec::Morphism { seed, .. }
            | AnalysisSpec::Transfer { seed, .. } => *seed,
            _ => None,
        }
    }

    fn is_stochastic(&self) -> bool {
        matches!(
            self.kind(),
            AnalysisKind::Stability | AnalysisKind::Morphism | AnalysisKind::Transfer
        )
    }
}

/// The project file as written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectConfig {
    #[serde(default)]
    pub systems: Vec<SystemEntry>,
    #[serde(default)]
    pub maps: Vec<MapEntry>,
    #[serde(default)]
    pub morphisms: Vec<MorphismEntry>,
    pub analyses: Vec<AnalysisSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub seed: u64,
}

/// A validated project with every name resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct Project {
    pub config: ProjectConfig,
    pub systems: BTreeMap<String, Arc<VectorFieldSpec>>,
    pub maps: BTreeMap<String, Arc<SmoothMapSpec>>,
    pub morphisms: BTreeMap<String, Arc<MorphismDecl>>,
    /// Resolved analysis names, in config order.
    pub names: Vec<String>,
}

fn domain_of(intervals: &Option<Vec<Interval>>, dim: usize, owner: &str) -> Result<DomainSpec, ConfigError> {
    match intervals {
        None => Ok(DomainSpec::whole(dim)),
        Some(iv) => {
            if iv.len() != dim {
                return Err(ConfigError::Dimension(format!(
                    "`{owner}` has dimension {dim} but its domain lists {} intervals",
                    iv.len()
                )));
            }
            DomainSpec::new(iv.clone()).map_err(|source| ConfigError::System {
                name: owner.to_string(),
                source,
            })
        }
    }
}

fn unique<'a>(what: &'static str, names: impl Iterator<Item = &'a str>) -> Result<(), ConfigError> {
    let mut seen = HashSet::new();
    for n in names {
        if !seen.insert(n) {
            return Err(ConfigError::Duplicate {
                what,
                name: n.to_string(),
            });
        }
    }
    Ok(())
}

fn lookup<'a, T>(m: &'a BTreeMap<String, T>, what: &'static str, name: &str) -> Result<&'a T, ConfigError> {
    m.get(name).ok_or_else(|| ConfigError::Dangling {
        what,
        name: name.to_string(),
    })
}

fn check_point(what: &str, x: &[f64], dim: usize) -> Result<(), ConfigError> {
    if x.len() != dim {
        return Err(ConfigError::Dimension(format!(
            "{what} has {} coordinates, expected {dim}",
            x.len()
        )));
    }
    Ok(())
}

impl Project {
    pub fn resolve(config: ProjectConfig) -> Result<Project, ConfigError> {
        unique("system", config.systems.iter().map(|s| s.name.as_str()))?;
        unique("map", config.maps.iter().map(|s| s.name.as_str()))?;
        unique("morphism", config.morphisms.iter().map(|s| s.name.as_str()))?;
        if config.analyses.is_empty() {
            return Err(ConfigError::Invalid("at least one analysis is required".into()));
        }
        config
            .integrator
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("integrator: {e}")))?;

        let mut systems = BTreeMap::new();
        for s in &config.systems {
            if s.components.len() != s.dim {
                return Err(ConfigError::Dimension(format!(
                    "system `{}` has dim {} but {} components",
                    s.name,
                    s.dim,
                    s.components.len()
                )));
            }
            let domain = domain_of(&s.domain, s.dim, &s.name)?;
            let srcs: Vec<&str> = s.components.iter().map(String::as_str).collect();
            let field =
                VectorFieldSpec::parse(s.name.clone(), &srcs, domain).map_err(|source| ConfigError::System {
                    name: s.name.clone(),
                    source,
                })?;
            systems.insert(s.name.clone(), Arc::new(field));
        }

        let mut maps = BTreeMap::new();
        let mut map_ends = BTreeMap::new();
        for m in &config.maps {
            let src = lookup(&systems, "system", &m.source)?;
            let tgt = lookup(&systems, "system", &m.target)?;
            if m.components.len() != tgt.dim() {
                return Err(ConfigError::Dimension(format!(
                    "map `{}` has {} components but target `{}` has dimension {}",
                    m.name,
                    m.components.len(),
                    tgt.name(),
                    tgt.dim()
                )));
            }
            let domain = match &m.domain {
                Some(_) => domain_of(&m.domain, src.dim(), &m.name)?,
                None => src.domain().clone(),
            };
            let srcs: Vec<&str> = m.components.iter().map(String::as_str).collect();
            let map = SmoothMapSpec::parse(m.name.clone(), &srcs, domain).map_err(|source| ConfigError::System {
                name: m.name.clone(),
                source,
            })?;
            maps.insert(m.name.clone(), Arc::new(map));
            map_ends.insert(m.name.clone(), (m.source.clone(), m.target.clone()));
        }

        let mut morphisms = BTreeMap::new();
        for d in &config.morphisms {
            let map = lookup(&maps, "map", &d.map)?;
            let (ms, mt) = &map_ends[&d.map];
            let src = lookup(&systems, "system", d.source.as_deref().unwrap_or(ms))?;
            let tgt = lookup(&systems, "system", d.target.as_deref().unwrap_or(mt))?;
            let decl = MorphismDecl::new(map.as_ref().clone(), src.as_ref().clone(), tgt.as_ref().clone()).map_err(
                |source| ConfigError::System {
                    name: d.name.clone(),
                    source,
                },
            )?;
            morphisms.insert(d.name.clone(), Arc::new(decl));
        }

        let mut names = Vec::with_capacity(config.analyses.len());
        for (i, a) in config.analyses.iter().enumerate() {
            let name = a
                .explicit_name()
                .map(str::to_string)
                .unwrap_or_else(|| format!("{:02}-{}", i, a.kind().as_str()));
            if name.is_empty() || name.contains(['/', '\\']) || name == "." || name == ".." {
                return Err(ConfigError::Invalid(format!(
                    "analysis name `{name}` is not a plain file name"
                )));
            }
            names.push(name);
            match a {
                AnalysisSpec::Simulate { system, initial, .. } => {
                    let s = lookup(&systems, "system", system)?;
                    for x in initial {
                        check_point("simulate initial condition", x, s.dim())?;
                    }
                }
                AnalysisSpec::Distance {
                    system, a, b, metric, ..
                } => {
                    let s = lookup(&systems, "system", system)?;
                    check_point("distance endpoint `a`", a, s.dim())?;
                    check_point("distance endpoint `b`", b, s.dim())?;
                    metric.validate(s.dim()).map_err(|source| ConfigError::System {
                        name: system.clone(),
                        source,
                    })?;
                }
                AnalysisSpec::Stability {
                    system, x0, options, ..
                } => {
                    let s = lookup(&systems, "system", system)?;
                    check_point("stability x0", x0, s.dim())?;
                    options
                        .query(x0.clone(), 0)
                        .validate(s.dim())
                        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
                }
                AnalysisSpec::Morphism {
                    morphism,
                    region,
                    equilibria,
                    ..
                } => {
                    let m = lookup(&morphisms, "morphism", morphism)?;
                    check_point("morphism region", &region.lo, m.source.dim())?;
                    for x in equilibria {
                        check_point("equilibrium", x, m.source.dim())?;
                    }
                }
                AnalysisSpec::Transfer {
                    morphism, x0, options, ..
                } => {
                    let m = lookup(&morphisms, "morphism", morphism)?;
                    check_point("transfer x0", x0, m.source.dim())?;
                    options
                        .query(x0.clone(), 0)
                        .validate(m.source.dim())
                        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
                }
                AnalysisSpec::Sweep { system, grid, .. } => {
                    let s = lookup(&systems, "system", system)?;
                    for x in grid.points() {
                        check_point("sweep grid point", &x, s.dim())?;
                    }
                }
            }
        }
        unique("analysis", names.iter().map(String::as_str))?;
        Ok(Project {
            config,
            systems,
            maps,
            morphisms,
            names,
        })
    }
}

pub fn parse_config(text: &str, path: &Path) -> Result<Project, ConfigError> {
    let config: ProjectConfig = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    Project::resolve(config)
}

pub fn load_config(path: &Path) -> Result<Project, ConfigError> {
    let bytes = fs::read(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let text = String::from_utf8(bytes).map_err(|_| ConfigError::Parse {
        path: path.to_path_buf(),
        line: 0,
        column: 0,
        message: "file is not UTF-8".into(),
    })?;
    parse_config(&text, path)
}

pub fn config_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Per-analysis seed derived from the global one (SplitMix64 step).
pub fn derive_seed(global: u64, index: usize) -> u64 {
    let mut z = global.wrapping_add((index as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Write through a temporary file in the same directory, then rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> io::Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let file_name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))?
        .to_string_lossy()
        .into_owned();
    let tmp = dir.join(format!(".{file_name}.tmp-{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub file: String,
    pub initial: Vec<f64>,
    pub termination: Termination,
    pub t_end: f64,
}

/// One CSV per initial condition plus `index.csv`.
pub fn emit_sweep_plot_data(
    system: &VectorFieldSpec,
    grid: &[Vec<f64>],
    cfg: &IntegratorConfig,
    dir: &Path,
) -> Result<Vec<SweepEntry>, String> {
    if grid.is_empty() {
        warn!("sweep over `{}` has an empty grid", system.name());
    }
    let width = grid.len().saturating_sub(1).to_string().len().max(4);
    let mut entries = Vec::with_capacity(grid.len());
    for (k, result) in integrate_many(system, grid, cfg).into_iter().enumerate() {
        let tr = result.map_err(|e| format!("initial condition {:?}: {e}", grid[k]))?;
        let file = format!("ic-{k:0width$}.csv");
        write_atomic(&dir.join(&file), tr.to_csv().as_bytes()).map_err(|e| e.to_string())?;
        entries.push(SweepEntry {
            file,
            initial: grid[k].clone(),
            termination: tr.termination(),
            t_end: tr.t_end(),
        });
    }
    let mut index = String::from("file");
    for i in 1..=system.dim() {
        index.push_str(&format!(",x{i}"));
    }
    index.push_str(",termination,t_end\n");
    for e in &entries {
        index.push_str(&e.file);
        for v in &e.initial {
            index.push_str(&format!(",{v:.16e}"));
        }
        let term = match e.termination {
            Termination::ReachedHorizon => "reached_horizon",
            Termination::BlowUp { .. } => "blow_up",
            Termination::DomainExit { .. } => "domain_exit",
            Termination::StepUnderflow { .. } => "step_underflow",
        };
        index.push_str(&format!(",{term},{:.16e}\n", e.t_end));
    }
    write_atomic(&dir.join("index.csv"), index.as_bytes()).map_err(|e| e.to_string())?;
    Ok(entries)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalysisStatus {
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOutcome {
    pub name: String,
    pub kind: AnalysisKind,
    pub status: AnalysisStatus,
    /// One-word result, e.g. `certified` or `transferred_stable`.
    pub outcome: Option<String>,
    pub seed: Option<u64>,
    pub artifacts: Vec<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub analyses: Vec<AnalysisOutcome>,
}

impl RunReport {
    pub fn exit_code(&self) -> i32 {
        if self.analyses.iter().all(|a| a.status == AnalysisStatus::Completed) {
            EXIT_OK
        } else {
            EXIT_ANALYSIS_FAILED
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub name: String,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub started_unix: f64,
    pub finished_unix: f64,
    pub wall_seconds: f64,
    pub parallel: bool,
    pub timings: Vec<Timing>,
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

struct Produced {
    outcome: String,
    artifacts: Vec<String>,
}

fn with_horizon(cfg: &IntegratorConfig, horizon: Option<f64>) -> IntegratorConfig {
    match horizon {
        Some(h) => cfg.clone().with_horizon(h),
        None => cfg.clone(),
    }
}

fn termination_word(t: Termination) -> &'static str {
    match t {
        Termination::ReachedHorizon => "reached_horizon",
        Termination::BlowUp { .. } => "blow_up",
        Termination::DomainExit { .. } => "domain_exit",
        Termination::StepUnderflow { .. } => "step_underflow",
    }
}

#[derive(Serialize)]
struct TrajectorySummary<'a> {
    file: &'a str,
    initial: &'a [f64],
    termination: Termination,
    t_end: f64,
    steps: usize,
}

#[derive(Serialize)]
struct MorphismReport {
    morphism: String,
    relatedness: crate::morphism::RelatednessReport,
    openness: crate::morphism::OpennessReport,
    equilibria: Vec<EquilibriumResult>,
}

#[derive(Serialize)]
struct EquilibriumResult {
    point: Vec<f64>,
    preserved: Option<bool>,
    error: Option<String>,
}

fn run_one(project: &Project, spec: &AnalysisSpec, seed: u64, dir: &Path) -> Result<Produced, String> {
    let cfg = &project.config.integrator;
    let io = |e: io::Error| e.to_string();
    fs::create_dir_all(dir).map_err(io)?;
    let sys = |n: &str| project.systems[n].clone();
    let mor = |n: &str| project.morphisms[n].clone();
    match spec {
        AnalysisSpec::Simulate {
            system,
            initial,
            horizon,
            ..
        } => {
            let s = sys(system);
            let cfg = with_horizon(cfg, *horizon);
            let mut artifacts = Vec::new();
            let mut summaries = Vec::new();
            let runs: Vec<Trajectory> = integrate_many(&s, initial, &cfg)
                .into_iter()
                .collect::<Result<_, _>>()
                .map_err(|e| e.to_string())?;
            let names: Vec<String> = (0..runs.len()).map(|k| format!("trajectory-{k}.csv")).collect();
            for (tr, file) in runs.iter().zip(&names) {
                write_atomic(&dir.join(file), tr.to_csv().as_bytes()).map_err(io)?;
                artifacts.push(file.clone());
                summaries.push(TrajectorySummary {
                    file,
                    initial: tr.x0(),
                    termination: tr.termination(),
                    t_end: tr.t_end(),
                    steps: tr.steps(),
                });
            }
            write_json(&dir.join("trajectories.json"), &summaries).map_err(io)?;
            artifacts.push("trajectories.json".into());
            let outcome = if runs.iter().all(|t| t.termination().reached_horizon()) {
                "reached_horizon".to_string()
            } else {
                runs.iter()
                    .map(|t| termination_word(t.termination()))
                    .find(|w| *w != "reached_horizon")
                    .unwrap_or("reached_horizon")
                    .to_string()
            };
            Ok(Produced { outcome, artifacts })
        }
        AnalysisSpec::Distance {
            system,
            a,
            b,
            metric,
            horizon,
            ..
        } => {
            let s = sys(system);
            let cfg = with_horizon(cfg, *horizon);
            let ta = integrate(&s, a, &cfg).map_err(|e| e.to_string())?;
            let tb = integrate(&s, b, &cfg).map_err(|e| e.to_string())?;
            let d = trajectory_distance(&ta, &tb, metric, &SamplingPlan::default()).map_err(|e| e.to_string())?;
            write_json(&dir.join("distance.json"), &d).map_err(io)?;
            let status = serde_json::to_value(d.status).ok();
            Ok(Produced {
                outcome: status.and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default(),
                artifacts: vec!["distance.json".into()],
            })
        }
        AnalysisSpec::Stability {
            system, x0, options, ..
        } => {
            let s = sys(system);
            let v = check_stability(&s, &options.query(x0.clone(), seed), cfg).map_err(|e| e.to_string())?;
            write_json(&dir.join("verdict.json"), &v).map_err(io)?;
            Ok(Produced {
                outcome: v.overall.to_string(),
                artifacts: vec!["verdict.json".into()],
            })
        }
        AnalysisSpec::Morphism {
            morphism,
            region,
            grid_density,
            tol,
            margin,
            equilibria,
            ..
        } => {
            let m = mor(morphism);
            let density = grid_density.unwrap_or(41);
            let relatedness =
                check_related(&m, region, density, tol.unwrap_or(1e-8), seed).map_err(|e| e.to_string())?;
            let openness = check_open(&m.map, region, density, margin.unwrap_or(DEFAULT_OPEN_MARGIN))
                .map_err(|e| e.to_string())?;
            let equilibria: Vec<EquilibriumResult> = equilibria
                .iter()
                .map(|x| match check_equilibria_preserved(&m, x, cfg.atol) {
                    Ok(p) => EquilibriumResult {
                        point: x.clone(),
                        preserved: Some(p),
                        error: None,
                    },
                    Err(e) => EquilibriumResult {
                        point: x.clone(),
                        preserved: None,
                        error: Some(e.to_string()),
                    },
                })
                .collect();
            let ok = relatedness.pass
                && relatedness.fd_agreement
                && openness.is_submersion()
                && equilibria.iter().all(|e| e.preserved != Some(false));
            let report = MorphismReport {
                morphism: morphism.clone(),
                relatedness,
                openness,
                equilibria,
            };
            write_json(&dir.join("morphism.json"), &report).map_err(io)?;
            Ok(Produced {
                outcome: if ok { "verified" } else { "not_verified" }.to_string(),
                artifacts: vec!["morphism.json".into()],
            })
        }
        AnalysisSpec::Transfer {
            morphism,
            x0,
            options,
            grid_density,
            related_tol,
            open_margin,
            ..
        } => {
            let m = mor(morphism);
            let d = TransferConfig::default();
            let tc = TransferConfig {
                stability: options.query(Vec::new(), seed),
                grid_density: grid_density.unwrap_or(d.grid_density),
                related_tol: related_tol.unwrap_or(d.related_tol),
                open_margin: open_margin.unwrap_or(d.open_margin),
                corroborate: true,
            };
            let cert = transfer(&m, x0, &tc, cfg).map_err(|e| e.to_string())?;
            write_json(&dir.join("certificate.json"), &cert).map_err(io)?;
            Ok(Produced {
                outcome: if cert.conclusion.is_transferred() {
                    "transferred_stable"
                } else {
                    "not_transferable"
                }
                .to_string(),
                artifacts: vec!["certificate.json".into()],
            })
        }
        AnalysisSpec::Sweep {
            system, grid, horizon, ..
        } => {
            let s = sys(system);
            let cfg = with_horizon(cfg, *horizon);
            let entries = emit_sweep_plot_data(&s, &grid.points(), &cfg, dir)?;
            let mut artifacts: Vec<String> = entries.iter().map(|e| e.file.clone()).collect();
            artifacts.push("index.csv".into());
            Ok(Produced {
                outcome: format!("{}_trajectories", entries.len()),
                artifacts,
            })
        }
    }
}

/// Run the selected analyses and write `summary.json` and `run_metadata.json`.
pub fn run(
    project: &Project,
    config_bytes: &[u8],
    filter: Option<AnalysisKind>,
    out: &Path,
    global_seed: u64,
    parallel: bool,
) -> io::Result<RunReport> {
    fs::create_dir_all(out)?;
    let started = unix_now();
    let clock = Instant::now();
    let selected: Vec<usize> = project
        .config
        .analyses
        .iter()
        .enumerate()
        .filter(|(_, a)| filter.is_none_or(|k| a.kind() == k))
        .map(|(i, _)| i)
        .collect();
    let job = |&i: &usize| {
        let spec = &project.config.analyses[i];
        let name = &project.names[i];
        let seed = spec.explicit_seed().unwrap_or_else(|| derive_seed(global_seed, i));
        info!("running `{name}` ({})", spec.kind().as_str());
        let t = Instant::now();
        let result = run_one(project, spec, seed, &out.join(name));
        let wall = t.elapsed().as_secs_f64();
        let outcome = match result {
            Ok(p) => AnalysisOutcome {
                name: name.clone(),
                kind: spec.kind(),
                status: AnalysisStatus::Completed,
                outcome: Some(p.outcome),
                seed: spec.is_stochastic().then_some(seed),
                artifacts: p.artifacts.into_iter().map(|a| format!("{name}/{a}")).collect(),
                error: None,
            },
            Err(e) => {
                warn!("analysis `{name}` failed: {e}");
                AnalysisOutcome {
                    name: name.clone(),
                    kind: spec.kind(),
                    status: AnalysisStatus::Failed,
                    outcome: None,
                    seed: spec.is_stochastic().then_some(seed),
                    artifacts: Vec::new(),
                    error: Some(e),
                }
            }
        };
        (
            outcome,
            Timing {
                name: name.clone(),
                wall_seconds: wall,
            },
        )
    };
    let results: Vec<(AnalysisOutcome, Timing)> = if parallel {
        selected.par_iter().map(job).collect()
    } else {
        selected.iter().map(job).collect()
    };
    let (analyses, timings): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let report = RunReport {
        tool_version: TOOL_VERSION.to_string(),
        config_hash: config_hash(config_bytes),
        seed: global_seed,
        analyses,
    };
    write_json(&out.join("summary.json"), &report)?;
    let meta = RunMetadata {
        started_unix: started,
        finished_unix: unix_now(),
        wall_seconds: clock.elapsed().as_secs_f64(),
        parallel,
        timings,
    };
    write_json(&out.join("run_metadata.json"), &meta)?;
    Ok(report)
}

#[derive(Debug, Parser)]
#[command(
    name = "flowstab",
    version,
    about = "Stability of ODE trajectories and its transfer along open morphisms"
)]
pub struct Cli {
    /// Project file (JSON).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory; overrides the config's `output_dir`.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Global seed; overrides the config's `seed`.
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Run independent analyses in parallel.
    #[arg(long, global = true)]
    pub parallel: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Run every analysis in the config.
    Run,
    /// Integrate trajectories and write CSVs.
    Simulate,
    /// Sup-over-time distance between two trajectories.
    Distance,
    /// Sampled stability verdicts.
    Stability,
    /// Relatedness, openness and equilibria checks for declared morphisms.
    Morphism,
    /// Stability transfer certificates.
    Transfer,
    /// Trajectory bundles for plotting.
    Sweep,
    /// Load and cross-check the config, then exit.
    ValidateConfig,
}

impl Command {
    fn filter(self) -> Option<AnalysisKind> {
        match self {
            Command::Run | Command::ValidateConfig => None,
            Command::Simulate => Some(AnalysisKind::Simulate),
            Command::Distance => Some(AnalysisKind::Distance),
            Command::Stability => Some(AnalysisKind::Stability),
            Command::Morphism => Some(AnalysisKind::Morphism),
            Command::Transfer => Some(AnalysisKind::Transfer),
            Command::Sweep => Some(AnalysisKind::Sweep),
        }
    }
}

pub fn init_logging() {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().filter_or(LOG_ENV, "warn"))
        .format_timestamp(None)
        .try_init();
}

/// Parse arguments, run, and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let Some(path) = cli.config.as_deref() else {
        eprintln!("error: --config <PATH> is required");
        return EXIT_USAGE;
    };
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) => {
            eprintln!("error: {}: {e}", path.display());
            return EXIT_CONFIG;
        }
    };
    let project = match std::str::from_utf8(&bytes)
        .map_err(|_| ConfigError::Parse {
            path: path.to_path_buf(),
            line: 0,
            column: 0,
            message: "file is not UTF-8".into(),
        })
        .and_then(|text| parse_config(text, path))
    {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    if let Command::ValidateConfig = cli.command {
        println!(
            "ok: {} systems, {} maps, {} morphisms, {} analyses",
            project.systems.len(),
            project.maps.len(),
            project.morphisms.len(),
            project.config.analyses.len()
        );
        return EXIT_OK;
    }
    let filter = cli.command.filter();
    if let Some(k) = filter {
        if !project.config.analyses.iter().any(|a| a.kind() == k) {
            eprintln!("error: the config has no `{}` analyses", k.as_str());
            return EXIT_USAGE;
        }
    }
    let out = cli
        .out
        .clone()
        .or_else(|| project.config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("flowstab-out"));
    let seed = cli.seed.unwrap_or(project.config.seed);
    match run(&project, &bytes, filter, &out, seed, cli.parallel) {
        Ok(report) => {
            for a in &report.analyses {
                match a.status {
                    AnalysisStatus::Completed => {
                        println!("{}: {}", a.name, a.outcome.as_deref().unwrap_or("done"))
                    }
                    AnalysisStatus::Failed => {
                        println!("{}: FAILED ({})", a.name, a.error.as_deref().unwrap_or(""))
                    }
                }
            }
            report.exit_code()
        }
        Err(e) => {
            eprintln!("error: writing to {}: {e}", out.display());
            EXIT_IO
        }
    }
}
