//! Run configuration: a single JSON document.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::{Map, Value};
use topoflock_core::{BoundaryCondition, KernelKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Lagrangian,
    Mass,
    Spectral,
    Compare,
    Sweep,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Lagrangian => "lagrangian",
            Mode::Mass => "mass",
            Mode::Spectral => "spectral",
            Mode::Compare => "compare",
            Mode::Sweep => "sweep",
        }
    }
}

fn default_kind() -> KernelKind {
    KernelKind::Pure
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    #[serde(default = "default_kind")]
    pub kind: KernelKind,
    pub family: String,
    #[serde(default)]
    pub params: Map<String, Value>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySpec {
    pub family: String,
    #[serde(default)]
    pub params: Map<String, Value>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoordinateSpec {
    Mass,
    Space,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VelocitySpec {
    pub coordinate: CoordinateSpec,
    pub family: String,
    #[serde(default)]
    pub params: Map<String, Value>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Resolution {
    pub particles: Option<usize>,
    pub mass_cells: Option<usize>,
    pub space_cells: Option<usize>,
}

fn default_quad() -> usize {
    10001
}
fn default_monitor() -> f64 {
    topoflock_core::m_solver::DEFAULT_MONITOR_FACTOR
}
fn default_flocking() -> f64 {
    topoflock_core::analysis::FLOCKING_THRESHOLD
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "default_quad")]
    pub poincare_quad: usize,
    #[serde(default = "default_monitor")]
    pub monitor_factor: f64,
    #[serde(default = "default_flocking")]
    pub flocking_threshold: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            poincare_quad: default_quad(),
            monitor_factor: default_monitor(),
            flocking_threshold: default_flocking(),
        }
    }
}

fn default_bc() -> BoundaryCondition {
    BoundaryCondition::Neumann
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralSpec {
    #[serde(default = "default_bc")]
    pub bc: BoundaryCondition,
}

impl Default for SpectralSpec {
    fn default() -> Self {
        SpectralSpec { bc: default_bc() }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSpec {
    /// `(particles, space_cells)` per level; the mass grid uses the
    /// particle count.
    pub levels: Vec<[usize; 2]>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub mode: Mode,
    /// Dotted path into the configuration, e.g. `kernel.params.value`.
    pub parameter: String,
    pub values: Vec<Value>,
}

fn default_cfl() -> f64 {
    topoflock_core::m_solver::MAX_CFL
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub kernel: KernelSpec,
    pub rho0: Option<FamilySpec>,
    pub velocity: VelocitySpec,
    #[serde(default)]
    pub resolution: Resolution,
    pub t_final: f64,
    #[serde(default)]
    pub output_times: Vec<f64>,
    pub dt: Option<f64>,
    #[serde(default = "default_cfl")]
    pub cfl: f64,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub spectral: SpectralSpec,
    /// Force the topological argument of the protocol to zero.
    #[serde(default)]
    pub radial: bool,
    pub compare: Option<CompareSpec>,
    pub sweep: Option<SweepSpec>,
    /// Directory used to resolve relative CSV paths.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// One validation problem, with the line of the offending key when known.
#[derive(Clone, Debug, PartialEq)]
pub struct Issue {
    pub line: Option<usize>,
    pub message: String,
}

impl std::fmt::Display for Issue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

/// A parsed configuration together with its source text and raw JSON.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub raw: Value,
    pub text: String,
}

impl LoadedConfig {
    /// Line of the first occurrence of `"key"` in the source.
    pub fn line_of(&self, key: &str) -> Option<usize> {
        line_of(&self.text, key)
    }

    pub fn issue(&self, key: &str, message: impl Into<String>) -> Issue {
        Issue { line: self.line_of(key), message: message.into() }
    }
}

pub fn line_of(text: &str, key: &str) -> Option<usize> {
    let needle = format!("\"{key}\"");
    text.lines().position(|l| l.contains(&needle)).map(|i| i + 1)
}

/// Parses JSON text; syntax and type errors carry serde's line numbers.
pub fn parse_text(text: &str, base_dir: &Path) -> Result<LoadedConfig, Issue> {
    let raw: Value = serde_json::from_str(text).map_err(|e| Issue { line: Some(e.line()), message: e.to_string() })?;
    let mut config: RunConfig =
        serde_json::from_str(text).map_err(|e| Issue { line: Some(e.line()), message: e.to_string() })?;
    config.base_dir = base_dir.to_path_buf();
    Ok(LoadedConfig { config, raw, text: text.to_string() })
}

/// Typed access to a `params` object.
pub struct Params<'a> {
    pub owner: &'a str,
    pub map: &'a Map<String, Value>,
}

impl Params<'_> {
    pub fn f64(&self, key: &str) -> Result<f64, String> {
        match self.map.get(key) {
            Some(v) => v.as_f64().ok_or_else(|| format!("{}.params.{key} must be a number", self.owner)),
            None => Err(format!("{} needs parameter '{key}'", self.owner)),
        }
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64, String> {
        if self.map.contains_key(key) {
            self.f64(key)
        } else {
            Ok(default)
        }
    }

    pub fn opt_f64(&self, key: &str) -> Result<Option<f64>, String> {
        match self.map.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(_) => self.f64(key).map(Some),
        }
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize, String> {
        match self.map.get(key) {
            None => Ok(default),
            Some(v) => v
                .as_u64()
                .map(|x| x as usize)
                .ok_or_else(|| format!("{}.params.{key} must be a nonnegative integer", self.owner)),
        }
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool, String> {
        match self.map.get(key) {
            None => Ok(default),
            Some(v) => v.as_bool().ok_or_else(|| format!("{}.params.{key} must be a boolean", self.owner)),
        }
    }

    pub fn str(&self, key: &str) -> Result<&str, String> {
        match self.map.get(key) {
            Some(v) => v.as_str().ok_or_else(|| format!("{}.params.{key} must be a string", self.owner)),
            None => Err(format!("{} needs parameter '{key}'", self.owner)),
        }
    }

    pub fn f64_list(&self, key: &str) -> Result<Vec<f64>, String> {
        let err = || format!("{}.params.{key} must be an array of numbers", self.owner);
        let arr = self.map.get(key).ok_or_else(|| format!("{} needs parameter '{key}'", self.owner))?;
        arr.as_array().ok_or_else(err)?.iter().map(|v| v.as_f64().ok_or_else(err)).collect()
    }

    /// Rejects keys outside `allowed`.
    pub fn only(&self, allowed: &[&str]) -> Result<(), String> {
        match self.map.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(format!("{} does not take parameter '{k}'", self.owner)),
            None => Ok(()),
        }
    }
}

/// Sets a dotted path inside a JSON object, creating objects as needed.
pub fn set_path(root: &mut Value, path: &str, value: Value) -> Result<(), String> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur.as_object_mut().ok_or_else(|| format!("'{path}' does not address an object field"))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    unreachable!()
}

pub fn get_path<'a>(root: &'a Value, path: &str) -> Option<&'a Value> {
    path.split('.').try_fold(root, |v, p| v.get(p))
}
