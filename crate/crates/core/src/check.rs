//! The built-in verification suite: symbolic identities, integrator accuracy,
//! and Monte Carlo statistics of the simulator and filters.
//!
//! Every check uses fixed seeds, so two runs produce identical summaries.

use std::fmt;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::{preset_model, Preset, PresetParams, ScenarioConfig};
use crate::error::Result;
use crate::filter::{
    counting_rate, innovations, normalize_linear, run_filter, FilterKind, FilterStates,
};
use crate::io::{fmt_f64, format_record, format_trajectory, KeyValueDoc};
use crate::ito::{
    expand_unitarity, flow_differential_with, vacuum_drift, Basis, ItoIncrement, ItoTable,
    NEGLIGIBLE,
};
use crate::master::{integrate_master, Method, TimeGrid};
use crate::operator::{
    lindblad_heisenberg, lindblad_schrodinger, qubit, trace_distance, DensityMatrix, Detection,
    Operator, SystemModel,
};
use crate::simulate::{map_trajectories, ExecutionOptions, SimulatedTrajectory, SimulationSpec};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Bound {
    AtMost(f64),
    Within(f64, f64),
}

impl Bound {
    pub fn admits(self, x: f64) -> bool {
        match self {
            Bound::AtMost(hi) => x <= hi,
            Bound::Within(lo, hi) => lo <= x && x <= hi,
        }
    }
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bound::AtMost(hi) => write!(f, "<= {}", fmt_f64(*hi)),
            Bound::Within(lo, hi) => write!(f, "in [{}, {}]", fmt_f64(*lo), fmt_f64(*hi)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub measured: f64,
    pub bound: Bound,
    pub note: String,
}

impl CheckResult {
    fn new(name: impl Into<String>, measured: f64, bound: Bound, note: impl Into<String>) -> Self {
        CheckResult {
            name: name.into(),
            measured,
            bound,
            note: note.into(),
        }
    }

    pub fn passed(&self) -> bool {
        self.measured.is_finite() && self.bound.admits(self.measured)
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunSummary {
    pub config: Vec<(String, String)>,
    pub checks: Vec<CheckResult>,
    pub diverged: usize,
}

impl RunSummary {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed())
    }

    pub fn get(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Structured key-value rendering; contains no timing information.
    pub fn render(&self) -> String {
        let mut doc = KeyValueDoc::default();
        doc.section("config");
        if self.config.is_empty() {
            doc.entry("source", "built-in");
        }
        for (k, v) in &self.config {
            doc.entry(k, quote(v));
        }
        for c in &self.checks {
            doc.section(&format!("check.{}", c.name))
                .entry("status", if c.passed() { "pass" } else { "fail" })
                .entry("measured", fmt_f64(c.measured))
                .entry("bound", quote(&c.bound.to_string()));
            if !c.note.is_empty() {
                doc.entry("note", quote(&c.note));
            }
        }
        doc.section("totals")
            .entry("checks", self.checks.len())
            .entry("failed", self.failures().count())
            .entry("diverged", self.diverged);
        doc.render()
    }

    /// Aligned human-readable table.
    pub fn table(&self) -> String {
        let width = self
            .checks
            .iter()
            .map(|c| c.name.len())
            .max()
            .unwrap_or(5)
            .max(5);
        let mut out = format!(
            "{:<width$}  {:>12}  {:<22}  status\n",
            "check", "measured", "bound"
        );
        for c in &self.checks {
            out.push_str(&format!(
                "{:<width$}  {:>12.4e}  {:<22}  {}\n",
                c.name,
                c.measured,
                c.bound.to_string(),
                if c.passed() { "pass" } else { "FAIL" }
            ));
            if !c.passed() && !c.note.is_empty() {
                out.push_str(&format!("{:<width$}  {}\n", "", c.note));
            }
        }
        out.push_str(&format!(
            "{} checks, {} failed, {} diverged trajectories\n",
            self.checks.len(),
            self.failures().count(),
            self.diverged
        ));
        out
    }
}

fn quote(s: &str) -> String {
    format!(
        "\"{}\"",
        s.replace('\\', "\\\\")
            .replace('"', "\\\"")
            .replace('\n', "\\n")
    )
}

/// Independently selectable parts of the suite.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Group {
    Ito,
    Symbolic,
    Master,
    Unbiasedness,
    Zakai,
    Wiener,
    Poisson,
    Jumps,
    Orthogonality,
    Determinism,
    Scenario,
}

impl Group {
    pub const ALL: [Group; 11] = [
        Group::Ito,
        Group::Symbolic,
        Group::Master,
        Group::Unbiasedness,
        Group::Zakai,
        Group::Wiener,
        Group::Poisson,
        Group::Jumps,
        Group::Orthogonality,
        Group::Determinism,
        Group::Scenario,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Group::Ito => "ito",
            Group::Symbolic => "symbolic",
            Group::Master => "master",
            Group::Unbiasedness => "unbiasedness",
            Group::Zakai => "zakai",
            Group::Wiener => "wiener",
            Group::Poisson => "poisson",
            Group::Jumps => "jumps",
            Group::Orthogonality => "orthogonality",
            Group::Determinism => "determinism",
            Group::Scenario => "scenario",
        }
    }
}

impl std::str::FromStr for Group {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Group::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Group::ALL.iter().map(|g| g.name()).collect();
                format!(
                    "unknown check group `{s}` (expected one of {})",
                    names.join(", ")
                )
            })
    }
}

#[derive(Clone, Debug, Default)]
pub struct CheckOptions {
    /// Increment table used by the symbolic checks.
    pub table: ItoTable,
    pub execution: ExecutionOptions,
    /// Groups to run; all of them when `None`.
    pub only: Option<Vec<Group>>,
}

impl CheckOptions {
    /// The falsifiability hook: flips the sign of `dA·dA† = dt`.
    pub fn with_ito_sign_error(mut self) -> Self {
        self.table = self.table.with_entry(
            ItoIncrement::DA,
            ItoIncrement::DAdag,
            Some((-1.0, ItoIncrement::Dt)),
        );
        self
    }
}

struct Suite<'a> {
    options: &'a CheckOptions,
    summary: RunSummary,
    progress: &'a mut dyn FnMut(&CheckResult),
}

impl Suite<'_> {
    fn push(&mut self, c: CheckResult) {
        (self.progress)(&c);
        self.summary.checks.push(c);
    }

    /// Runs `f` over every trajectory of `spec`; diverged ones are counted and skipped.
    fn collect<T: Send>(
        &mut self,
        spec: &SimulationSpec,
        f: impl Fn(&SimulatedTrajectory) -> T + Sync,
    ) -> Vec<T> {
        let mut out = Vec::with_capacity(spec.n_traj);
        for r in map_trajectories(spec, self.options.execution, f) {
            match r {
                Ok(v) => out.push(v),
                Err(_) => self.summary.diverged += 1,
            }
        }
        out
    }
}

/// Runs the built-in suite, then the scenario checks of `config` if given.
/// `progress` sees each check as soon as it completes.
pub fn run_checks(
    config: Option<&ScenarioConfig>,
    options: &CheckOptions,
    progress: &mut dyn FnMut(&CheckResult),
) -> Result<RunSummary> {
    let mut suite = Suite {
        options,
        summary: RunSummary::default(),
        progress,
    };
    let on = |g: Group| options.only.as_ref().is_none_or(|only| only.contains(&g));
    if on(Group::Ito) {
        ito_table(&mut suite);
    }
    if on(Group::Symbolic) {
        symbolic(&mut suite)?;
    }
    if on(Group::Master) {
        master_accuracy(&mut suite)?;
    }
    if on(Group::Unbiasedness) {
        unbiasedness(&mut suite, "decay", Preset::QubitDecay, 101)?;
        unbiasedness(&mut suite, "rabi_decay", Preset::RabiDecay, 102)?;
    }
    if on(Group::Zakai) {
        zakai(&mut suite)?;
    }
    if on(Group::Wiener) {
        wiener(&mut suite)?;
    }
    if on(Group::Poisson) {
        poisson(&mut suite)?;
    }
    if on(Group::Jumps) {
        first_jump(&mut suite)?;
    }
    if on(Group::Orthogonality) {
        orthogonality(&mut suite)?;
    }
    if on(Group::Determinism) {
        determinism(&mut suite)?;
    }
    if let Some(cfg) = config {
        suite.summary.config = cfg.describe();
        if on(Group::Scenario) {
            scenario(&mut suite, cfg)?;
        }
    }
    Ok(suite.summary)
}

// ---------------------------------------------------------------- symbolic

fn ito_table(suite: &mut Suite<'_>) {
    use ItoIncrement::*;
    let reference = |a: ItoIncrement, b: ItoIncrement| match (a, b) {
        (DA, DAdag) => Some((1.0, Dt)),
        (DA, DLambda) => Some((1.0, DA)),
        (DLambda, DAdag) => Some((1.0, DAdag)),
        (DLambda, DLambda) => Some((1.0, DLambda)),
        _ => None,
    };
    let mut wrong = Vec::new();
    for a in ItoIncrement::ALL {
        for b in ItoIncrement::ALL {
            if suite.options.table.product(a, b) != reference(a, b) {
                wrong.push(format!("{}·{}", a.symbol(), b.symbol()));
            }
        }
    }
    let note = if wrong.is_empty() {
        "16 products checked".to_string()
    } else {
        format!("wrong entries: {}", wrong.join(", "))
    };
    suite.push(CheckResult::new(
        "ito_table",
        wrong.len() as f64,
        Bound::AtMost(0.0),
        note,
    ));
}

fn random_operator(rng: &mut ChaCha8Rng, dim: usize) -> Operator {
    Operator::from_fn(dim, |_, _| {
        Complex64::new(StandardNormal.sample(rng), StandardNormal.sample(rng))
    })
}

fn random_hermitian(rng: &mut ChaCha8Rng, dim: usize) -> Operator {
    random_operator(rng, dim).hermitian_part()
}

fn random_density(rng: &mut ChaCha8Rng, dim: usize) -> Operator {
    let g = random_operator(rng, dim);
    let p = &g * &g.adjoint();
    let tr = p.trace().re;
    p.scale_re(1.0 / tr)
}

fn random_model(rng: &mut ChaCha8Rng, dim: usize) -> Result<SystemModel> {
    let h = random_hermitian(rng, dim);
    let l = random_operator(rng, dim);
    SystemModel::new(
        h,
        l,
        DensityMatrix::maximally_mixed(dim),
        Detection::Homodyne,
    )
}

const SYMBOLIC_CASES: usize = 100;

fn symbolic(suite: &mut Suite<'_>) -> Result<()> {
    let table = suite.options.table.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst, mut culprit) = (0.0f64, String::new());
    for i in 0..SYMBOLIC_CASES {
        let dim = 2 + i % 5;
        let model = random_model(&mut rng, dim)?;
        for (basis, coeff) in expand_unitarity(&table, &model).terms() {
            let m = coeff.max_abs();
            if m > worst {
                worst = m;
                culprit = format!(
                    "{} coefficient, max |entry| {:.3e} (case {i}, dim {dim})",
                    basis_name(basis),
                    m
                );
            }
        }
    }
    let note = if worst > NEGLIGIBLE {
        format!("nonzero {culprit}")
    } else {
        String::new()
    };
    suite.push(CheckResult::new(
        "unitarity",
        worst,
        Bound::AtMost(1e-12),
        note,
    ));

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for i in 0..SYMBOLIC_CASES {
        let dim = 2 + i % 5;
        let model = random_model(&mut rng, dim)?;
        let x = random_hermitian(&mut rng, dim);
        let drift = vacuum_drift(&flow_differential_with(&table, &model, &x)?);
        worst = worst.max(drift.max_abs_diff(&lindblad_heisenberg(&model, &x)?));
    }
    suite.push(CheckResult::new(
        "lindblad_drift",
        worst,
        Bound::AtMost(1e-12),
        "",
    ));

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for i in 0..SYMBOLIC_CASES {
        let dim = 2 + i % 5;
        let model = random_model(&mut rng, dim)?;
        let rho = random_density(&mut rng, dim);
        let x = random_hermitian(&mut rng, dim);
        let lhs = lindblad_schrodinger(&model, &rho)?.trace_product(&x);
        let rhs = rho.trace_product(&lindblad_heisenberg(&model, &x)?);
        worst = worst.max((lhs - rhs).norm());
    }
    suite.push(CheckResult::new(
        "generator_duality",
        worst,
        Bound::AtMost(1e-10),
        "",
    ));
    Ok(())
}

fn basis_name(b: Basis) -> &'static str {
    match b {
        Basis::Unit => "identity",
        Basis::Dt => "dt",
        Basis::DA => "dA",
        Basis::DAdag => "dA†",
        Basis::DLambda => "dΛ",
    }
}

// ---------------------------------------------------------------- master equation

fn decay_model(detection: Detection) -> Result<SystemModel> {
    preset_model(Preset::QubitDecay, PresetParams::default(), detection)
}

fn excited_population(model: &SystemModel, dt: f64, t_end: f64) -> Result<f64> {
    let grid = TimeGrid::new(0.0, dt, (t_end / dt).round() as usize)?;
    let traj = integrate_master(model, &grid, Method::Rk4)?;
    Ok(traj
        .states
        .last()
        .expect("grid has a final point")
        .as_operator()
        .get(0, 0)
        .re)
}

fn master_accuracy(suite: &mut Suite<'_>) -> Result<()> {
    let model = decay_model(Detection::Homodyne)?;
    let exact = (-1.0f64).exp();
    let err = (excited_population(&model, 1e-3, 1.0)? - exact).abs();
    suite.push(CheckResult::new(
        "master_decay_endpoint",
        err,
        Bound::AtMost(1e-6),
        "rho_ee(1) at RK4, dt = 1e-3",
    ));

    // Least-squares slope of log error against log dt. Below dt ~ 1e-2 the
    // RK4 error on this problem is at rounding level, so coarse grids are used.
    let steps = [0.1, 0.05, 0.025, 0.0125];
    let mut pts = Vec::new();
    for dt in steps {
        let e = (excited_population(&model, dt, 1.0)? - exact).abs();
        pts.push((dt.ln(), e.ln()));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    suite.push(CheckResult::new(
        "rk4_convergence_slope",
        sxy / sxx,
        Bound::Within(3.5, 4.5),
        "qubit decay endpoint error at dt = 0.1 .. 0.0125",
    ));
    Ok(())
}

// ---------------------------------------------------------------- statistics helpers

struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn of(xs: impl IntoIterator<Item = f64>) -> Moments {
        let mut m = Moments {
            n: 0.0,
            mean: 0.0,
            m2: 0.0,
        };
        for x in xs {
            m.n += 1.0;
            let d = x - m.mean;
            m.mean += d / m.n;
            m.m2 += d * (x - m.mean);
        }
        m
    }

    fn variance(&self) -> f64 {
        if self.n > 1.0 {
            self.m2 / (self.n - 1.0)
        } else {
            0.0
        }
    }

    fn stderr(&self) -> f64 {
        (self.variance() / self.n).sqrt()
    }
}

fn correlation(pairs: &[(f64, f64)]) -> f64 {
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

const PROBES: usize = 10;

/// Grid indices of `PROBES` evenly spaced probe times ending at the last point.
fn probe_indices(grid: &TimeGrid) -> Vec<usize> {
    (1..=PROBES).map(|j| grid.n_steps() * j / PROBES).collect()
}

/// Ensemble mean of `x` against the master equation at the probe times.
/// Returns (misses at 3σ, max |z|, note).
fn compare_with_master(
    suite: &mut Suite<'_>,
    spec: &SimulationSpec,
    x: &Operator,
) -> Result<(usize, f64, String)> {
    let probes = probe_indices(&spec.grid);
    let values = suite.collect(spec, |t| {
        let states = t
            .filter
            .densities()
            .expect("simulator output is normalized");
        probes
            .iter()
            .map(|&k| states[k].as_operator().trace_product(x).re)
            .collect::<Vec<_>>()
    });
    let master = integrate_master(&spec.model, &spec.grid, Method::Rk4)?.expectations(x);
    let (mut misses, mut worst, mut at) = (0, 0.0f64, 0.0);
    for (j, &k) in probes.iter().enumerate() {
        let m = Moments::of(values.iter().map(|v| v[j]));
        let diff = (m.mean - master[k]).abs();
        let z = if m.stderr() > 0.0 {
            diff / m.stderr()
        } else if diff <= 1e-12 {
            0.0
        } else {
            f64::INFINITY
        };
        if z > 3.0 {
            misses += 1;
        }
        if z > worst {
            worst = z;
            at = spec.grid.time(k);
        }
    }
    Ok((misses, worst, format!("worst at t = {at:.3}")))
}

fn unbiasedness(suite: &mut Suite<'_>, label: &str, preset: Preset, seed: u64) -> Result<()> {
    let model = preset_model(preset, PresetParams::default(), Detection::Homodyne)?;
    let spec = SimulationSpec::new(model, TimeGrid::new(0.0, 1e-3, 2000)?, 10_000, seed, vec![])?;
    let (misses, worst, note) = compare_with_master(suite, &spec, &qubit::sigma_z())?;
    suite.push(CheckResult::new(
        format!("unbiasedness_{label}_3sigma_misses"),
        misses as f64,
        Bound::AtMost(1.0),
        format!("<sigma_z> at {PROBES} probe times, 10000 trajectories"),
    ));
    suite.push(CheckResult::new(
        format!("unbiasedness_{label}_max_z"),
        worst,
        Bound::AtMost(5.0),
        note,
    ));
    Ok(())
}

// ---------------------------------------------------------------- filters

/// Max over records and grid points of the trace distance between the
/// normalized filter and the normalized linear filter on the same record.
fn zakai_max_distance(suite: &mut Suite<'_>, spec: &SimulationSpec) -> Vec<f64> {
    suite.collect(spec, |t| {
        let linear = run_filter(&spec.model, &t.record, FilterKind::Linear);
        let (Ok(linear), Some(rho)) = (linear, t.filter.densities()) else {
            return f64::INFINITY;
        };
        let FilterStates::Linear { states, .. } = &linear.states else {
            return f64::INFINITY;
        };
        rho.iter()
            .zip(states)
            .map(|(r, s)| match normalize_linear(s) {
                Ok(n) => trace_distance(r.as_operator(), n.as_operator()),
                Err(_) => f64::INFINITY,
            })
            .fold(0.0, f64::max)
    })
}

fn zakai(suite: &mut Suite<'_>) -> Result<()> {
    let model = decay_model(Detection::Homodyne)?;
    let coarse = SimulationSpec::new(
        model.clone(),
        TimeGrid::new(0.0, 1e-3, 2000)?,
        100,
        201,
        vec![],
    )?;
    let fine = SimulationSpec::new(model, TimeGrid::new(0.0, 5e-4, 4000)?, 100, 201, vec![])?;
    let d1 = zakai_max_distance(suite, &coarse)
        .into_iter()
        .fold(0.0, f64::max);
    let d2 = zakai_max_distance(suite, &fine)
        .into_iter()
        .fold(0.0, f64::max);
    suite.push(CheckResult::new(
        "zakai_max_trace_distance",
        d1,
        Bound::AtMost(5e-2),
        "100 decay records, dt = 1e-3",
    ));
    suite.push(CheckResult::new(
        "zakai_halving_ratio",
        d2 / d1,
        Bound::Within(0.35, 0.65),
        format!("max distance {} at dt = 5e-4", fmt_f64(d2)),
    ));
    Ok(())
}

// ---------------------------------------------------------------- probe statistics

fn wiener(suite: &mut Suite<'_>) -> Result<()> {
    let model = SystemModel::new(
        Operator::zeros(2),
        Operator::zeros(2),
        qubit::excited(),
        Detection::Homodyne,
    )?;
    let grid = TimeGrid::new(0.0, 1e-3, 1000)?;
    let n = 10_000;
    let spec = SimulationSpec::new(model, grid, n, 301, vec![])?;
    let sqrt_dt = grid.dt().sqrt();
    // Per trajectory: Y_1, then the sums needed for pooled moments.
    let stats = suite.collect(&spec, |t| {
        let dy = t.record.increments();
        let y1: f64 = dy.iter().sum();
        let (mut s, mut s2, mut lag) = (0.0, 0.0, 0.0);
        for (k, &v) in dy.iter().enumerate() {
            let z = v / sqrt_dt;
            s += z;
            s2 += z * z;
            if k > 0 {
                lag += z * dy[k - 1] / sqrt_dt;
            }
        }
        [y1, s, s2, lag]
    });
    let count = (stats.len() * grid.n_steps()) as f64;
    let y = Moments::of(stats.iter().map(|v| v[0]));
    let mean = stats.iter().map(|v| v[1]).sum::<f64>() / count;
    let second = stats.iter().map(|v| v[2]).sum::<f64>() / count;
    let lag = stats.iter().map(|v| v[3]).sum::<f64>() / (count - stats.len() as f64);
    let var = second - mean * mean;
    let ntraj = stats.len() as f64;

    suite.push(CheckResult::new(
        "wiener_variance_at_t1",
        (y.variance() - 1.0).abs(),
        Bound::AtMost(0.05),
        format!("Var Y_1 = {}", fmt_f64(y.variance())),
    ));
    suite.push(CheckResult::new(
        "wiener_increment_variance",
        (var - 1.0).abs(),
        Bound::AtMost(0.05),
        "relative deviation of Var dy from dt",
    ));
    suite.push(CheckResult::new(
        "wiener_increment_mean",
        mean.abs(),
        Bound::AtMost(4.0 / count.sqrt()),
        "mean of dy / sqrt(dt) over all increments",
    ));
    suite.push(CheckResult::new(
        "wiener_lag1_autocorrelation",
        ((lag - mean * mean) / var).abs(),
        Bound::AtMost(4.0 / ntraj.sqrt()),
        "",
    ));
    Ok(())
}

fn jump_counts(suite: &mut Suite<'_>, spec: &SimulationSpec) -> Vec<(f64, f64)> {
    let model = &spec.model;
    let dt = spec.grid.dt();
    suite.collect(spec, |t| {
        let jumps: f64 = t.record.increments().iter().sum();
        let states = t
            .filter
            .densities()
            .expect("simulator output is normalized");
        let compensator: f64 = states[..states.len() - 1]
            .iter()
            .map(|r| counting_rate(model, r.as_operator()) * dt)
            .sum();
        (jumps, compensator)
    })
}

fn poisson(suite: &mut Suite<'_>) -> Result<()> {
    let model = preset_model(
        Preset::ConstantRateCounting,
        PresetParams::default(),
        Detection::Counting,
    )?;
    let spec = SimulationSpec::new(model, TimeGrid::new(0.0, 1e-3, 2000)?, 10_000, 401, vec![])?;
    let counts = jump_counts(suite, &spec);
    let m = Moments::of(counts.iter().map(|c| c.0));
    suite.push(CheckResult::new(
        "poisson_mean_z",
        (m.mean - 1.0).abs() / m.stderr(),
        Bound::AtMost(4.0),
        format!("mean count {} (lambda T = 1)", fmt_f64(m.mean)),
    ));
    suite.push(CheckResult::new(
        "poisson_fano",
        m.variance() / m.mean,
        Bound::Within(0.9, 1.1),
        "",
    ));
    Ok(())
}

fn first_jump(suite: &mut Suite<'_>) -> Result<()> {
    let spec = SimulationSpec::new(
        decay_model(Detection::Counting)?,
        TimeGrid::new(0.0, 1e-3, 2000)?,
        10_000,
        501,
        vec![],
    )?;
    let counts = jump_counts(suite, &spec);
    let n = counts.len() as f64;
    let fraction = counts.iter().filter(|c| c.0 >= 1.0).count() as f64 / n;
    let most = counts.iter().map(|c| c.0).fold(0.0, f64::max);
    suite.push(CheckResult::new(
        "first_jump_fraction",
        (fraction - (1.0 - (-2.0f64).exp())).abs(),
        Bound::AtMost(0.01),
        format!(
            "fraction {} with a jump by T = 2, at most {most} jumps per trajectory",
            fmt_f64(fraction)
        ),
    ));
    let d = Moments::of(counts.iter().map(|c| c.0 - c.1));
    suite.push(CheckResult::new(
        "jump_consistency_z",
        d.mean.abs() / d.stderr(),
        Bound::AtMost(4.0),
        "jumps minus integrated rate, decay counting",
    ));
    Ok(())
}

fn orthogonality(suite: &mut Suite<'_>) -> Result<()> {
    let spec = SimulationSpec::new(
        decay_model(Detection::Homodyne)?,
        TimeGrid::new(0.0, 1e-3, 2000)?,
        2000,
        601,
        vec![],
    )?;
    // The increment ending at each probe time, paired with the path before it.
    let probes: Vec<usize> = [0.4, 0.8, 1.2, 1.6, 2.0]
        .iter()
        .map(|&t| spec.grid.index_of(t) - 1)
        .collect();
    let model = &spec.model;
    let samples = suite.collect(&spec, |t| {
        let dw = innovations(model, &t.record, &t.filter).unwrap_or_default();
        let y = t.record.cumulative();
        probes
            .iter()
            .map(|&k| (dw.get(k).copied().unwrap_or(f64::NAN), y[k]))
            .collect::<Vec<_>>()
    });
    let mut worst = 0.0f64;
    for j in 0..probes.len() {
        let pairs: Vec<(f64, f64)> = samples.iter().map(|s| s[j]).collect();
        let r = correlation(&pairs);
        worst = if r.is_nan() {
            f64::NAN
        } else {
            worst.max(r.abs())
        };
    }
    suite.push(CheckResult::new(
        "innovation_orthogonality",
        worst,
        Bound::AtMost(4.0 / (samples.len() as f64).sqrt()),
        "max |corr(dw_k, y_{k-1})| over 5 probe times",
    ));
    Ok(())
}

// ---------------------------------------------------------------- reproducibility

fn determinism(suite: &mut Suite<'_>) -> Result<()> {
    let grid = TimeGrid::new(0.0, 1e-3, 300)?;
    let mut differing = 0usize;
    let mut replay_mismatch = 0usize;
    let mut total = 0usize;
    for detection in [Detection::Homodyne, Detection::Counting] {
        let model = preset_model(Preset::RabiDecay, PresetParams::default(), detection)?;
        let spec = SimulationSpec::new(model, grid, 300, 701, vec![])?;
        let dump =
            |t: &SimulatedTrajectory| (format_record(&t.record), format_trajectory(&t.filter));
        let parallel: Vec<_> = map_trajectories(&spec, ExecutionOptions::default(), dump);
        let serial: Vec<_> = map_trajectories(&spec, ExecutionOptions::serial(), dump);
        total += spec.n_traj;
        differing += parallel.iter().zip(&serial).filter(|(a, b)| a != b).count();
        let replays = map_trajectories(&spec, suite.options.execution, |t| {
            run_filter(&spec.model, &t.record, FilterKind::Normalized).is_ok_and(|f| f == t.filter)
        });
        replay_mismatch += replays.iter().filter(|r| !matches!(r, Ok(true))).count();
    }
    suite.push(CheckResult::new(
        "serial_parallel_identical",
        differing as f64,
        Bound::AtMost(0.0),
        format!("{total} trajectories compared byte for byte"),
    ));
    suite.push(CheckResult::new(
        "filter_replay_bitwise",
        replay_mismatch as f64,
        Bound::AtMost(0.0),
        "stored records replayed through the normalized filter",
    ));
    Ok(())
}

// ---------------------------------------------------------------- user scenario

fn scenario(suite: &mut Suite<'_>, cfg: &ScenarioConfig) -> Result<()> {
    let spec = cfg.simulation_spec()?;
    spec.validate()?;
    for (name, x) in &spec.observables {
        let (misses, worst, note) = compare_with_master(suite, &spec, x)?;
        suite.push(CheckResult::new(
            format!("scenario_unbiasedness_{name}_3sigma_misses"),
            misses as f64,
            Bound::AtMost(1.0),
            format!("{} trajectories", spec.n_traj),
        ));
        suite.push(CheckResult::new(
            format!("scenario_unbiasedness_{name}_max_z"),
            worst,
            Bound::AtMost(5.0),
            note,
        ));
    }
    match spec.model.detection() {
        Detection::Homodyne => {
            let mut sub = spec.clone();
            sub.n_traj = sub.n_traj.min(100);
            let d = zakai_max_distance(suite, &sub)
                .into_iter()
                .fold(0.0, f64::max);
            let dt = spec.grid.dt();
            suite.push(CheckResult::new(
                "scenario_zakai_max_trace_distance",
                d,
                Bound::AtMost(50.0 * dt),
                format!("{} records, bound 50 dt", sub.n_traj),
            ));
        }
        Detection::Counting => {
            let counts = jump_counts(suite, &spec);
            let d = Moments::of(counts.iter().map(|c| c.0 - c.1));
            let z = if d.stderr() > 0.0 {
                d.mean.abs() / d.stderr()
            } else {
                d.mean.abs()
            };
            suite.push(CheckResult::new(
                "scenario_jump_consistency_z",
                z,
                Bound::AtMost(4.0),
                "",
            ));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bound_semantics() {
        assert!(Bound::AtMost(1.0).admits(1.0));
        assert!(!Bound::AtMost(1.0).admits(1.5));
        assert!(Bound::Within(0.9, 1.1).admits(1.0));
        assert!(!Bound::Within(0.9, 1.1).admits(0.8));
        let nan = CheckResult::new("x", f64::NAN, Bound::AtMost(1.0), "");
        assert!(!nan.passed());
    }

    #[test]
    fn injected_sign_error_breaks_unitarity_and_names_the_term() {
        let options = CheckOptions::default().with_ito_sign_error();
        let mut suite = Suite {
            options: &options,
            summary: RunSummary::default(),
            progress: &mut |_| {},
        };
        ito_table(&mut suite);
        symbolic(&mut suite).unwrap();
        let s = suite.summary;
        assert!(!s.get("ito_table").unwrap().passed());
        assert!(s.get("ito_table").unwrap().note.contains("dA·dA†"));
        let u = s.get("unitarity").unwrap();
        assert!(!u.passed());
        assert!(u.note.starts_with("nonzero dt coefficient"), "{}", u.note);
        assert!(!s.get("lindblad_drift").unwrap().passed());
        assert!(s.get("generator_duality").unwrap().passed());
    }

    #[test]
    fn symbolic_checks_pass_with_standard_table() {
        let options = CheckOptions::default();
        let mut suite = Suite {
            options: &options,
            summary: RunSummary::default(),
            progress: &mut |_| {},
        };
        ito_table(&mut suite);
        symbolic(&mut suite).unwrap();
        master_accuracy(&mut suite).unwrap();
        for c in &suite.summary.checks {
            assert!(c.passed(), "{c:?}");
        }
    }

    #[test]
    fn summary_rendering() {
        let s = RunSummary {
            config: vec![],
            checks: vec![
                CheckResult::new("a", 0.0, Bound::AtMost(1e-12), ""),
                CheckResult::new("b", 2.0, Bound::Within(0.9, 1.1), "too \"big\""),
            ],
            diverged: 0,
        };
        let text = s.render();
        assert!(text.contains("[check.a]\nstatus = pass\nmeasured = 0.0\nbound = \"<= 1e-12\""));
        assert!(text.contains("note = \"too \\\"big\\\"\""));
        assert!(text.ends_with("[totals]\nchecks = 2\nfailed = 1\ndiverged = 0\n"));
        assert!(!s.all_passed());
        assert!(s.table().contains("FAIL"));
    }
}
