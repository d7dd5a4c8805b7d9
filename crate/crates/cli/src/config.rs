//! Experiment configuration: defaults, TOML file and `key=value` overrides,
//! merged in that order of increasing precedence.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use suspensia::geometry::{gen_matern_hardcore, gen_periodic_lattice, InclusionSet};
use suspensia::homog::HomogenizationCase;
use suspensia::solver::SolverConfig;
use suspensia::stats::EnsembleSpec;
use toml::{Table, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    GenGeometry,
    SolveCell,
    Effective,
    Homogenize,
    RateStudy,
    Regularity,
    Stats,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::GenGeometry => "gen-geometry",
            Kind::SolveCell => "solve-cell",
            Kind::Effective => "effective",
            Kind::Homogenize => "homogenize",
            Kind::RateStudy => "rate-study",
            Kind::Regularity => "regularity",
            Kind::Stats => "stats",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeometryKind {
    Lattice,
    Matern,
    File,
}

/// Periodic cell geometry for `gen-geometry`, `solve-cell`, `effective` and `regularity`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub kind: GeometryKind,
    pub box_size: f64,
    /// Lattice period.
    pub spacing: f64,
    pub radius: f64,
    pub delta: f64,
    /// Matérn parent intensity.
    pub intensity: f64,
    /// Matérn seed; the top-level seed when absent.
    pub seed: Option<u64>,
    /// Inclusion set in TOML form, for `kind = "file"`.
    pub path: Option<PathBuf>,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            kind: GeometryKind::Lattice,
            box_size: 1.0,
            spacing: 1.0,
            radius: 0.25,
            delta: 0.1,
            intensity: 0.1,
            seed: None,
            path: None,
        }
    }
}

impl GeometryConfig {
    pub fn build(&self, seed: u64) -> suspensia::Result<InclusionSet> {
        match self.kind {
            GeometryKind::Lattice => gen_periodic_lattice(self.box_size, self.spacing, self.radius, self.delta),
            GeometryKind::Matern => gen_matern_hardcore(
                self.box_size,
                self.intensity,
                self.radius,
                self.delta,
                self.seed.unwrap_or(seed),
            ),
            GeometryKind::File => {
                let path = self
                    .path
                    .as_ref()
                    .ok_or_else(|| suspensia::Error::Precondition("geometry.path is required for kind = file".into()))?;
                InclusionSet::from_toml(&std::fs::read_to_string(path)?)
            }
        }
    }
}

/// A single scale of the homogenization case in `[rate_study]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HomogenizeConfig {
    pub epsilon: f64,
}

impl Default for HomogenizeConfig {
    fn default() -> Self {
        Self { epsilon: 1.0 / 16.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegularityConfig {
    pub c0: f64,
    pub l_min: f64,
    /// Probe centre; the cell centre when absent.
    pub center: Option<[f64; 2]>,
    /// Outer probe radius; the largest `l_min · 2^k` not above a third of the cell when absent.
    pub outer_radius: Option<f64>,
    pub trials: usize,
    pub sources: usize,
    pub affine_scale: f64,
}

impl Default for RegularityConfig {
    fn default() -> Self {
        Self {
            c0: suspensia::regularity::DEFAULT_C0,
            l_min: 1.0,
            center: None,
            outer_radius: None,
            trials: 20,
            sources: 6,
            affine_scale: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Option<Kind>,
    pub seed: u64,
    /// Cells per side of the periodic cell grid.
    pub resolution: usize,
    pub out: Option<PathBuf>,
    pub geometry: GeometryConfig,
    pub solver: SolverConfig,
    pub homogenize: HomogenizeConfig,
    pub rate_study: HomogenizationCase,
    pub regularity: RegularityConfig,
    pub stats: EnsembleSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: None,
            seed: 0,
            resolution: 64,
            out: None,
            geometry: GeometryConfig::default(),
            solver: SolverConfig::default(),
            homogenize: HomogenizeConfig::default(),
            rate_study: HomogenizationCase::default(),
            regularity: RegularityConfig::default(),
            stats: EnsembleSpec::default(),
        }
    }
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// Deep merge; a table whose `kind` tag changes replaces the old one.
fn merge(base: &mut Table, top: Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(t)) if b.get("kind").is_none() || t.get("kind").is_none() || b.get("kind") == t.get("kind") => {
                merge(b, t)
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Parses a `key.path=value` override; values are read as TOML and fall back to strings.
pub fn parse_override(s: &str) -> Result<(Vec<String>, Value), ConfigError> {
    let (key, raw) = s.split_once('=').ok_or_else(|| ConfigError(format!("override `{s}` is not key=value")))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_owned).collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(ConfigError(format!("bad override key `{key}`")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_owned()));
    Ok((path, value))
}

fn nest(path: &[String], value: Value) -> Table {
    let mut t = Table::new();
    match path {
        [last] => {
            t.insert(last.clone(), value);
        }
        [first, rest @ ..] => {
            t.insert(first.clone(), Value::Table(nest(rest, value)));
        }
        [] => {}
    }
    t
}

fn has_key(t: &Table, path: &[&str]) -> bool {
    match path {
        [last] => t.contains_key(*last),
        [first, rest @ ..] => matches!(t.get(*first), Some(Value::Table(s)) if has_key(s, rest)),
        [] => false,
    }
}

/// Resolves the configuration: defaults, then `file`, then `overrides`. The
/// top-level seed fills `stats.base_seed` unless that is set explicitly.
pub fn resolve(file: Option<&str>, overrides: &[(Vec<String>, Value)]) -> Result<ExperimentConfig, ConfigError> {
    let defaults = Table::try_from(ExperimentConfig::default()).map_err(|e| ConfigError(e.to_string()))?;
    let mut merged = defaults;
    let mut user = Table::new();
    if let Some(text) = file {
        let t: Table = toml::from_str(text).map_err(|e| ConfigError(format!("config file: {e}")))?;
        merge(&mut user, t);
    }
    for (path, value) in overrides {
        merge(&mut user, nest(path, value.clone()));
    }
    let seed_explicit = has_key(&user, &["stats", "base_seed"]);
    merge(&mut merged, user);
    let mut config: ExperimentConfig =
        Value::Table(merged).try_into().map_err(|e: toml::de::Error| ConfigError(e.message().to_owned()))?;
    if !seed_explicit {
        config.stats.base_seed = config.seed;
    }
    Ok(config)
}
