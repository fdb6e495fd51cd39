use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use qfilter::check::{run_checks, CheckOptions, Group};
use qfilter::config::{parse_config, ScenarioConfig};
use qfilter::filter::{normalize_linear, run_filter, FilterKind, FilterStates};
use qfilter::io::{
    format_ensemble, format_expectations, format_record, format_trajectory, parse_record,
    read_file, KeyValueDoc,
};
use qfilter::ito::{check_unitarity, flow_differential, hp_differential, vacuum_drift};
use qfilter::master::integrate_master;
use qfilter::operator::{trace_distance, Detection};
use qfilter::simulate::{run_ensemble, ExecutionOptions};
use qfilter::svg::{line_plot, Series};
use qfilter::{Error, FilterTrajectory, TimeGrid};

#[derive(Parser)]
#[command(
    name = "qfilter",
    version,
    about = "Quantum filtering: simulate, filter, check, and derive"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate an ensemble of trajectories and write records, trajectories, and ensemble statistics.
    Simulate(Common),
    /// Replay a stored record through the normalized and linear filters.
    Filter {
        #[command(flatten)]
        common: Common,
        /// Record CSV produced by `simulate`.
        #[arg(long)]
        record: PathBuf,
    },
    /// Run the verification suite (plus scenario checks when a config is given).
    Check {
        #[command(flatten)]
        common: Common,
        /// Run only these check groups (comma separated).
        #[arg(long, value_delimiter = ',')]
        only: Vec<Group>,
        #[arg(long, hide = true)]
        inject_ito_sign_error: bool,
    },
    /// Print the Itô-calculus derivations for the configured model.
    Symbolic(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, created if missing [default: out; `symbolic` writes nothing unless given].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the configured master seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    quiet: bool,
}

impl Common {
    fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }
}

const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Divergence { .. }
        | Error::TooManyDiverged { .. }
        | Error::NonPositiveTrace(_)
        | Error::ImpossibleJump { .. }
        | Error::RateTooLarge { .. }
        | Error::ZeroTrace => EXIT_DIVERGED,
        _ => EXIT_USAGE,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(c) => simulate(&c),
        Command::Filter { common, record } => filter(&common, &record),
        Command::Check {
            common,
            only,
            inject_ito_sign_error,
        } => check(&common, only, inject_ito_sign_error),
        Command::Symbolic(c) => symbolic(&c),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn load_config(c: &Common) -> Result<ScenarioConfig, Error> {
    let path = c
        .config
        .as_ref()
        .ok_or_else(|| Error::Config(vec!["--config: required for this command".into()]))?;
    let mut cfg = parse_config(&read_file(path)?)?;
    if let Some(seed) = c.seed {
        cfg.master_seed = seed;
    }
    Ok(cfg)
}

/// Writes every file only after all of them have been produced.
fn write_all(dir: &Path, files: &[(String, String)]) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    for (name, contents) in files {
        qfilter::io::write_file(&dir.join(name), contents)?;
    }
    Ok(())
}

fn expectation_columns(cfg: &ScenarioConfig, traj: &FilterTrajectory) -> Vec<(String, Vec<f64>)> {
    cfg.observables
        .iter()
        .map(|(name, x)| (name.clone(), traj.expectations(x)))
        .collect()
}

fn expectations_csv(grid: &TimeGrid, cols: &[(String, Vec<f64>)]) -> String {
    let refs: Vec<(&str, &[f64])> = cols
        .iter()
        .map(|(n, v)| (n.as_str(), v.as_slice()))
        .collect();
    format_expectations(grid, &refs)
}

fn simulate(c: &Common) -> Result<u8, Error> {
    let cfg = load_config(c)?;
    let spec = cfg.simulation_spec()?;
    let started = Instant::now();
    let ensemble = run_ensemble(&spec, cfg.output.records, ExecutionOptions::default())?;
    let master = integrate_master(&spec.model, &spec.grid, cfg.output.method)?;
    let master_curves: Vec<Vec<f64>> = spec
        .observables
        .iter()
        .map(|(_, x)| master.expectations(x))
        .collect();

    let mut files = vec![(
        "ensemble.csv".to_string(),
        format_ensemble(&ensemble, &master_curves),
    )];
    for t in &ensemble.records {
        let i = t.index;
        files.push((format!("record_{i}.csv"), format_record(&t.record)));
        files.push((format!("states_{i}.csv"), format_trajectory(&t.filter)));
        files.push((
            format!("trajectory_{i}.csv"),
            expectations_csv(&spec.grid, &expectation_columns(&cfg, &t.filter)),
        ));
    }
    if cfg.output.plots {
        let times: Vec<f64> = (0..=spec.grid.n_steps())
            .map(|k| spec.grid.time(k))
            .collect();
        for (series, reference) in ensemble.observables.iter().zip(&master_curves) {
            let svg = line_plot(
                &format!("<{}>", series.name),
                &times,
                &[
                    Series {
                        label: "ensemble mean ± stderr",
                        values: &series.mean,
                        colour: "steelblue",
                        band: Some(&series.stderr),
                    },
                    Series {
                        label: "master equation",
                        values: reference,
                        colour: "black",
                        band: None,
                    },
                ],
            );
            files.push((format!("plot_{}.svg", series.name), svg));
        }
    }
    let mut doc = KeyValueDoc::default();
    doc.section("config");
    for (k, v) in cfg.describe() {
        doc.entry(&k, v);
    }
    doc.section("run")
        .entry("trajectories_used", ensemble.n_used)
        .entry("diverged", ensemble.diverged.len());
    for d in &ensemble.diverged {
        doc.entry(
            &format!("diverged.{}", d.index),
            format!("step {}: {}", d.step, d.message),
        );
    }
    files.push(("summary.txt".to_string(), doc.render()));
    write_all(&c.out_dir(), &files)?;

    if !c.quiet {
        println!(
            "simulated {} trajectories ({} diverged) in {:.2} s; wrote {} files to {}",
            ensemble.n_used,
            ensemble.diverged.len(),
            started.elapsed().as_secs_f64(),
            files.len(),
            c.out_dir().display()
        );
    }
    Ok(0)
}

fn filter(c: &Common, record_path: &Path) -> Result<u8, Error> {
    let cfg = load_config(c)?;
    let record = parse_record(&read_file(record_path)?)?;
    let mut problems = Vec::new();
    if record.detection() != cfg.model.detection() {
        problems.push(
            Error::DetectionMismatch {
                model: cfg.model.detection(),
                record: record.detection(),
            }
            .to_string(),
        );
    }
    let (g, r) = (cfg.grid, *record.grid());
    if g != r {
        problems.push(format!(
            "grid mismatch: config has t0 = {}, dt = {}, n_steps = {}; record has t0 = {}, dt = {}, n_steps = {}",
            g.t0(),
            g.dt(),
            g.n_steps(),
            r.t0(),
            r.dt(),
            r.n_steps()
        ));
    }
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }

    let normalized = run_filter(&cfg.model, &record, FilterKind::Normalized)?;
    let mut files = vec![(
        "filtered_normalized.csv".to_string(),
        expectations_csv(&r, &expectation_columns(&cfg, &normalized)),
    )];
    let mut max_distance = None;
    if record.detection() == Detection::Homodyne {
        let linear = run_filter(&cfg.model, &record, FilterKind::Linear)?;
        let densities = normalized.densities().expect("normalized filter output");
        let FilterStates::Linear { states, norms } = linear.states else {
            unreachable!("linear filter output")
        };
        let normalized_linear = states
            .iter()
            .map(normalize_linear)
            .collect::<Result<Vec<_>, _>>()?;
        let distance: Vec<f64> = densities
            .iter()
            .zip(&normalized_linear)
            .map(|(a, b)| trace_distance(a.as_operator(), b.as_operator()))
            .collect();
        max_distance = Some(distance.iter().copied().fold(0.0, f64::max));
        let mut cols: Vec<(String, Vec<f64>)> = cfg
            .observables
            .iter()
            .map(|(name, x)| {
                let values = normalized_linear
                    .iter()
                    .map(|s| s.as_operator().trace_product(x).re)
                    .collect();
                (name.clone(), values)
            })
            .collect();
        cols.push(("norm".to_string(), norms));
        cols.push(("trace_distance".to_string(), distance));
        files.push((
            "filtered_linear.csv".to_string(),
            expectations_csv(&r, &cols),
        ));
    }
    write_all(&c.out_dir(), &files)?;
    if !c.quiet {
        match max_distance {
            Some(d) => println!(
                "filtered {} steps; max trace distance between normalized and linear filters {d:.3e}",
                r.n_steps()
            ),
            None => println!("filtered {} steps (linear filter skipped: counting record)", r.n_steps()),
        }
    }
    Ok(0)
}

fn check(c: &Common, only: Vec<Group>, inject: bool) -> Result<u8, Error> {
    let cfg = match &c.config {
        Some(_) => Some(load_config(c)?),
        None => None,
    };
    let mut options = CheckOptions {
        only: (!only.is_empty()).then_some(only),
        ..CheckOptions::default()
    };
    if inject {
        options = options.with_ito_sign_error();
    }
    let started = Instant::now();
    let quiet = c.quiet;
    let mut progress = |r: &qfilter::check::CheckResult| {
        if !quiet {
            eprintln!(
                "  {:<40} {}",
                r.name,
                if r.passed() { "pass" } else { "FAIL" }
            );
        }
    };
    let summary = run_checks(cfg.as_ref(), &options, &mut progress)?;
    write_all(
        &c.out_dir(),
        &[("check_summary.txt".to_string(), summary.render())],
    )?;
    if !quiet {
        print!("{}", summary.table());
        println!("wall time {:.1} s", started.elapsed().as_secs_f64());
    }
    Ok(if summary.all_passed() {
        0
    } else {
        EXIT_CHECK_FAILED
    })
}

fn symbolic(c: &Common) -> Result<u8, Error> {
    let cfg = load_config(c)?;
    let m = &cfg.model;
    let labels = [
        ("H", m.hamiltonian().clone()),
        ("L", m.coupling().clone()),
        ("L†", m.coupling_adjoint().clone()),
        ("L†L", m.decay_operator().clone()),
        ("0.5 L†L", m.decay_operator().scale_re(0.5)),
        ("(-0.5 L†L - iH)", vacuum_drift(&hp_differential(m))),
    ];
    let du = hp_differential(m);
    let mut text = format!("dU = ({})·U\n", du.render(&labels));
    if du.is_empty() {
        text = "dU = 0\n".to_string();
    }
    text.push_str(&format!(
        "d(U†U) = {}\n",
        check_unitarity(m).render(&labels)
    ));
    for (name, x) in &cfg.observables {
        let mut obs_labels = labels.to_vec();
        obs_labels.push((name.as_str(), x.clone()));
        text.push_str(&format!(
            "d j({name}) = {}\n",
            flow_differential(m, x)?.render(&obs_labels)
        ));
    }
    if let Some(dir) = &c.out {
        write_all(dir, &[("symbolic.txt".to_string(), text.clone())])?;
    }
    if !c.quiet {
        print!("{text}");
    }
    Ok(0)
}
