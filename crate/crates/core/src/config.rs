//! Scenario configuration.
//!
//! Configs are flat key-value files with dotted paths and inline arrays
//! (a TOML subset). Complex numbers are `[re, im]` pairs; matrices are
//! row-major lists of pairs.
//!
//! ```toml
//! detection = "homodyne"
//! n_traj = 1000
//! master_seed = 42
//! model.preset = "qubit-decay"
//! model.gamma = 1.0
//! grid.dt = 0.001
//! grid.n_steps = 2000
//! observables = ["sigma_z", "population_0"]
//! ```

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::master::{Method, TimeGrid};
use crate::operator::{
    qubit, DensityMatrix, Detection, Operator, SystemModel, HERMITIAN_TOL, MAX_DIM,
};
use crate::simulate::SimulationSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// `H = 0`, `L = sqrt(gamma) sigma_-`, start in `|e>`.
    QubitDecay,
    /// `H = (omega/2) sigma_x`, `L = sqrt(gamma) sigma_-`, start in `|e>`.
    RabiDecay,
    /// `H = 0`, `L = sqrt(lambda) I`, start in `|e>`.
    ConstantRateCounting,
}

impl Preset {
    pub const ALL: [Preset; 3] = [
        Preset::QubitDecay,
        Preset::RabiDecay,
        Preset::ConstantRateCounting,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::QubitDecay => "qubit-decay",
            Preset::RabiDecay => "rabi-decay",
            Preset::ConstantRateCounting => "constant-rate-counting",
        }
    }
}

impl FromStr for Preset {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown preset `{s}`"))
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PresetParams {
    pub gamma: f64,
    pub omega: f64,
    pub lambda: f64,
}

impl Default for PresetParams {
    fn default() -> Self {
        PresetParams {
            gamma: 1.0,
            omega: 2.0 * PI,
            lambda: 0.5,
        }
    }
}

/// Builds the `(H, L, rho0)` of a preset.
pub fn preset_model(
    preset: Preset,
    params: PresetParams,
    detection: Detection,
) -> Result<SystemModel> {
    let (h, l) = match preset {
        Preset::QubitDecay => (
            Operator::zeros(2),
            qubit::sigma_minus().scale_re(params.gamma.sqrt()),
        ),
        Preset::RabiDecay => (
            qubit::sigma_x().scale_re(params.omega / 2.0),
            qubit::sigma_minus().scale_re(params.gamma.sqrt()),
        ),
        Preset::ConstantRateCounting => (
            Operator::zeros(2),
            Operator::identity(2).scale_re(params.lambda.sqrt()),
        ),
    };
    SystemModel::new(h, l, qubit::excited(), detection)
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModelSource {
    Preset {
        preset: Preset,
        params: PresetParams,
    },
    Explicit,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputOptions {
    /// How many trajectories get their record, states and expectations written.
    pub records: usize,
    pub plots: bool,
    /// Scheme for the master-equation reference curve.
    pub method: Method,
}

impl Default for OutputOptions {
    fn default() -> Self {
        OutputOptions {
            records: 1,
            plots: true,
            method: Method::Rk4,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ScenarioConfig {
    pub source: ModelSource,
    pub model: SystemModel,
    pub grid: TimeGrid,
    pub n_traj: usize,
    pub master_seed: u64,
    pub observables: Vec<(String, Operator)>,
    pub output: OutputOptions,
}

impl ScenarioConfig {
    pub fn simulation_spec(&self) -> Result<SimulationSpec> {
        SimulationSpec::new(
            self.model.clone(),
            self.grid,
            self.n_traj,
            self.master_seed,
            self.observables.clone(),
        )
    }

    /// Short `key = value` description used in summaries.
    pub fn describe(&self) -> Vec<(String, String)> {
        let mut out = vec![];
        match &self.source {
            ModelSource::Preset { preset, params } => {
                out.push(("model.preset".into(), preset.to_string()));
                out.push(("model.gamma".into(), params.gamma.to_string()));
                out.push(("model.omega".into(), params.omega.to_string()));
                out.push(("model.lambda".into(), params.lambda.to_string()));
            }
            ModelSource::Explicit => {
                out.push(("model.dim".into(), self.model.dim().to_string()));
                out.push((
                    "model.hamiltonian".into(),
                    self.model.hamiltonian().to_string(),
                ));
                out.push(("model.coupling".into(), self.model.coupling().to_string()));
            }
        }
        out.push(("detection".into(), self.model.detection().to_string()));
        out.push(("grid.t0".into(), self.grid.t0().to_string()));
        out.push(("grid.dt".into(), self.grid.dt().to_string()));
        out.push(("grid.n_steps".into(), self.grid.n_steps().to_string()));
        out.push(("n_traj".into(), self.n_traj.to_string()));
        out.push(("master_seed".into(), self.master_seed.to_string()));
        let names: Vec<&str> = self.observables.iter().map(|(n, _)| n.as_str()).collect();
        out.push(("observables".into(), names.join(",")));
        out
    }
}

/// Named observable presets: `sigma_x`, `sigma_y`, `sigma_z` (qubits) and
/// `population_k` (`|k><k|`).
pub fn named_observable(name: &str, dim: usize) -> std::result::Result<Operator, String> {
    let qubit_only = |op: Operator| {
        if dim == 2 {
            Ok(op)
        } else {
            Err(format!("`{name}` needs dimension 2, model has {dim}"))
        }
    };
    match name {
        "sigma_x" => qubit_only(qubit::sigma_x()),
        "sigma_y" => qubit_only(qubit::sigma_y()),
        "sigma_z" => qubit_only(qubit::sigma_z()),
        _ => {
            let k = name
                .strip_prefix("population_")
                .and_then(|k| k.parse::<usize>().ok())
                .ok_or_else(|| format!("unknown observable `{name}`"))?;
            if k >= dim {
                return Err(format!("`{name}` out of range for dimension {dim}"));
            }
            Ok(Operator::projector(dim, k))
        }
    }
}

/// Collects every problem instead of stopping at the first.
struct Issues(Vec<String>);

impl Issues {
    fn push(&mut self, path: &str, msg: impl fmt::Display) {
        self.0.push(format!("{path}: {msg}"));
    }
}

fn as_f64(v: &Value) -> Option<f64> {
    match v {
        Value::Float(f) => Some(*f),
        Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

fn get_f64(table: &Table, key: &str, path: &str, issues: &mut Issues) -> Option<f64> {
    let v = table.get(key)?;
    match as_f64(v) {
        Some(f) if f.is_finite() => Some(f),
        _ => {
            issues.push(path, "expected a finite number");
            None
        }
    }
}

fn get_u64(table: &Table, key: &str, path: &str, issues: &mut Issues) -> Option<u64> {
    match table.get(key)? {
        Value::Integer(i) if *i >= 0 => Some(*i as u64),
        Value::String(s) => match s.parse::<u64>() {
            Ok(v) => Some(v),
            Err(_) => {
                issues.push(path, "expected a nonnegative integer");
                None
            }
        },
        _ => {
            issues.push(path, "expected a nonnegative integer");
            None
        }
    }
}

fn get_rate(model: &Table, key: &str, default: f64, issues: &mut Issues) -> f64 {
    let path = format!("model.{key}");
    match get_f64(model, key, &path, issues) {
        Some(v) if v < 0.0 => {
            issues.push(&path, "must be nonnegative");
            default
        }
        Some(v) => v,
        None => default,
    }
}

fn get_str<'a>(table: &'a Table, key: &str, path: &str, issues: &mut Issues) -> Option<&'a str> {
    match table.get(key)? {
        Value::String(s) => Some(s),
        _ => {
            issues.push(path, "expected a string");
            None
        }
    }
}

fn get_table<'a>(table: &'a Table, key: &str, issues: &mut Issues) -> Option<&'a Table> {
    match table.get(key)? {
        Value::Table(t) => Some(t),
        _ => {
            issues.push(key, "expected a table of dotted keys");
            None
        }
    }
}

fn check_keys(table: &Table, allowed: &[&str], prefix: &str, issues: &mut Issues) {
    for key in table.keys() {
        if !allowed.contains(&key.as_str()) {
            let path = if prefix.is_empty() {
                key.clone()
            } else {
                format!("{prefix}.{key}")
            };
            issues.push(&path, "unknown key");
        }
    }
}

/// Parses a row-major list of `[re, im]` pairs (bare reals are accepted too).
fn parse_matrix(value: &Value, dim: usize, path: &str, issues: &mut Issues) -> Option<Operator> {
    let Value::Array(items) = value else {
        issues.push(path, "expected an array of [re, im] pairs");
        return None;
    };
    if items.len() != dim * dim {
        issues.push(
            path,
            format!(
                "expected {} entries for dimension {dim}, found {}",
                dim * dim,
                items.len()
            ),
        );
        return None;
    }
    let mut entries = Vec::with_capacity(items.len());
    for (idx, item) in items.iter().enumerate() {
        let z = match item {
            Value::Array(pair) if pair.len() == 2 => match (as_f64(&pair[0]), as_f64(&pair[1])) {
                (Some(re), Some(im)) => Some(Complex64::new(re, im)),
                _ => None,
            },
            other => as_f64(other).map(|re| Complex64::new(re, 0.0)),
        };
        match z {
            Some(z) if z.re.is_finite() && z.im.is_finite() => entries.push(z),
            _ => {
                issues.push(
                    &format!("{path}[{idx}]"),
                    "expected [re, im] with finite numbers",
                );
                return None;
            }
        }
    }
    Operator::from_row_major(dim, entries)
        .map_err(|e| issues.push(path, e))
        .ok()
}

fn syntax_error(text: &str, err: &toml::de::Error) -> Error {
    let line = err
        .span()
        .map(|span| text[..span.start.min(text.len())].matches('\n').count() + 1)
        .unwrap_or(1);
    Error::Syntax {
        line,
        message: err.message().to_string(),
    }
}

/// Parses and fully validates a scenario.
pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    let root: Table = text.parse::<Table>().map_err(|e| syntax_error(text, &e))?;
    let mut issues = Issues(Vec::new());

    check_keys(
        &root,
        &[
            "detection",
            "n_traj",
            "master_seed",
            "model",
            "grid",
            "observables",
            "observable",
            "output",
        ],
        "",
        &mut issues,
    );

    let detection = match get_str(&root, "detection", "detection", &mut issues) {
        Some(s) => s
            .parse::<Detection>()
            .map_err(|e| issues.push("detection", e))
            .ok(),
        None => {
            if !root.contains_key("detection") {
                issues.push("detection", "required");
            }
            None
        }
    };

    let n_traj = match get_u64(&root, "n_traj", "n_traj", &mut issues) {
        Some(0) => {
            issues.push("n_traj", "must be at least 1");
            None
        }
        Some(n) => Some(n as usize),
        None if root.contains_key("n_traj") => None,
        None => Some(1),
    };
    let master_seed = get_u64(&root, "master_seed", "master_seed", &mut issues).unwrap_or(0);

    let grid = parse_grid(&root, &mut issues);
    let (source, model) = parse_model(&root, detection, &mut issues);

    let observables = match &model {
        Some(m) => parse_observables(&root, m.dim(), &mut issues),
        None => Vec::new(),
    };
    let output = parse_output(&root, &mut issues);

    if let (Some(model), Some(grid), Some(n_traj), true) =
        (model, grid, n_traj, issues.0.is_empty())
    {
        let config = ScenarioConfig {
            source: source.expect("model source accompanies model"),
            model,
            grid,
            n_traj,
            master_seed,
            observables,
            output,
        };
        config.simulation_spec()?;
        return Ok(config);
    }
    if issues.0.is_empty() {
        issues.0.push("configuration incomplete".into());
    }
    Err(Error::Config(issues.0))
}

fn parse_grid(root: &Table, issues: &mut Issues) -> Option<TimeGrid> {
    let Some(grid) = get_table(root, "grid", issues) else {
        if !root.contains_key("grid") {
            issues.push("grid.dt", "required");
            issues.push("grid.n_steps", "required");
        }
        return None;
    };
    check_keys(grid, &["t0", "dt", "n_steps"], "grid", issues);
    let t0 = get_f64(grid, "t0", "grid.t0", issues).unwrap_or(0.0);
    let dt = get_f64(grid, "dt", "grid.dt", issues);
    if !grid.contains_key("dt") {
        issues.push("grid.dt", "required");
    }
    let n_steps = get_u64(grid, "n_steps", "grid.n_steps", issues);
    if !grid.contains_key("n_steps") {
        issues.push("grid.n_steps", "required");
    }
    let (dt, n_steps) = (dt?, n_steps?);
    TimeGrid::new(t0, dt, n_steps as usize)
        .map_err(|e| issues.push("grid", e))
        .ok()
}

fn parse_model(
    root: &Table,
    detection: Option<Detection>,
    issues: &mut Issues,
) -> (Option<ModelSource>, Option<SystemModel>) {
    let Some(model) = get_table(root, "model", issues) else {
        if !root.contains_key("model") {
            issues.push("model", "required (model.preset or model.dim)");
        }
        return (None, None);
    };
    let has_preset = model.contains_key("preset");
    let has_explicit = ["dim", "hamiltonian", "coupling"]
        .iter()
        .any(|k| model.contains_key(*k));
    if has_preset == has_explicit {
        issues.push(
            "model",
            "exactly one of model.preset or explicit model.dim/hamiltonian/coupling is required",
        );
        return (None, None);
    }

    if has_preset {
        check_keys(
            model,
            &["preset", "gamma", "omega", "lambda", "initial_state"],
            "model",
            issues,
        );
        let preset = get_str(model, "preset", "model.preset", issues).and_then(|s| {
            s.parse::<Preset>()
                .map_err(|e| issues.push("model.preset", e))
                .ok()
        });
        let defaults = PresetParams::default();
        let params = PresetParams {
            gamma: get_rate(model, "gamma", defaults.gamma, issues),
            omega: get_f64(model, "omega", "model.omega", issues).unwrap_or(defaults.omega),
            lambda: get_rate(model, "lambda", defaults.lambda, issues),
        };
        let initial = model
            .get("initial_state")
            .and_then(|v| parse_matrix(v, 2, "model.initial_state", issues))
            .and_then(|op| {
                DensityMatrix::new(op)
                    .map_err(|e| issues.push("model.initial_state", e))
                    .ok()
            });
        let (Some(preset), Some(detection)) = (preset, detection) else {
            return (None, None);
        };
        let built = preset_model(preset, params, detection).and_then(|m| match initial {
            Some(rho) => m.with_initial_state(rho),
            None => Ok(m),
        });
        return match built {
            Ok(m) => (Some(ModelSource::Preset { preset, params }), Some(m)),
            Err(e) => {
                issues.push("model", e);
                (None, None)
            }
        };
    }

    check_keys(
        model,
        &["dim", "hamiltonian", "coupling", "initial_state"],
        "model",
        issues,
    );
    let dim = match get_u64(model, "dim", "model.dim", issues) {
        Some(d) if d >= 1 && d as usize <= MAX_DIM => Some(d as usize),
        Some(d) => {
            issues.push("model.dim", format!("{d} out of range 1..={MAX_DIM}"));
            None
        }
        None => {
            if !model.contains_key("dim") {
                issues.push("model.dim", "required");
            }
            None
        }
    };
    let Some(dim) = dim else { return (None, None) };
    let mut matrix = |key: &str| {
        let path = format!("model.{key}");
        match model.get(key) {
            Some(v) => parse_matrix(v, dim, &path, issues),
            None => {
                issues.push(&path, "required");
                None
            }
        }
    };
    let h = matrix("hamiltonian");
    let l = matrix("coupling");
    let rho = matrix("initial_state");
    let h = h.filter(|h| {
        let dev = h.hermiticity_deviation();
        if dev > HERMITIAN_TOL {
            issues.push(
                "model.hamiltonian",
                format!("not Hermitian (max deviation {dev:e})"),
            );
        }
        dev <= HERMITIAN_TOL
    });
    let rho = rho.and_then(|r| {
        DensityMatrix::new(r)
            .map_err(|e| issues.push("model.initial_state", e))
            .ok()
    });
    let (Some(h), Some(l), Some(rho), Some(detection)) = (h, l, rho, detection) else {
        return (None, None);
    };
    match SystemModel::new(h, l, rho, detection) {
        Ok(m) => (Some(ModelSource::Explicit), Some(m)),
        Err(e) => {
            issues.push("model", e);
            (None, None)
        }
    }
}

fn parse_observables(root: &Table, dim: usize, issues: &mut Issues) -> Vec<(String, Operator)> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    if let Some(v) = root.get("observables") {
        match v {
            Value::Array(names) => {
                for (i, name) in names.iter().enumerate() {
                    let path = format!("observables[{i}]");
                    match name.as_str() {
                        Some(n) => match named_observable(n, dim) {
                            Ok(op) => {
                                if seen.insert(n.to_string()) {
                                    out.push((n.to_string(), op));
                                }
                            }
                            Err(e) => issues.push(&path, e),
                        },
                        None => issues.push(&path, "expected an observable name"),
                    }
                }
            }
            _ => issues.push("observables", "expected an array of names"),
        }
    }
    if let Some(explicit) = get_table(root, "observable", issues) {
        for (name, value) in explicit {
            let path = format!("observable.{name}");
            if !seen.insert(name.clone()) {
                issues.push(&path, "duplicate observable name");
                continue;
            }
            if let Some(op) = parse_matrix(value, dim, &path, issues) {
                let dev = op.hermiticity_deviation();
                if dev > HERMITIAN_TOL {
                    issues.push(&path, format!("not Hermitian (max deviation {dev:e})"));
                } else {
                    out.push((name.clone(), op));
                }
            }
        }
    }
    if out.is_empty() && !root.contains_key("observables") && !root.contains_key("observable") {
        let default = if dim == 2 { "sigma_z" } else { "population_0" };
        out.push((
            default.to_string(),
            named_observable(default, dim).expect("valid default"),
        ));
    }
    out
}

fn parse_output(root: &Table, issues: &mut Issues) -> OutputOptions {
    let mut out = OutputOptions::default();
    let Some(table) = get_table(root, "output", issues) else {
        return out;
    };
    check_keys(table, &["records", "plots", "method"], "output", issues);
    if let Some(n) = get_u64(table, "records", "output.records", issues) {
        out.records = n as usize;
    }
    match table.get("plots") {
        Some(Value::Boolean(b)) => out.plots = *b,
        Some(_) => issues.push("output.plots", "expected true or false"),
        None => {}
    }
    if let Some(m) = get_str(table, "method", "output.method", issues) {
        match m.parse() {
            Ok(m) => out.method = m,
            Err(e) => issues.push("output.method", e),
        }
    }
    out
}
