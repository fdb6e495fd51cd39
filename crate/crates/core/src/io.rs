//! Text formats for records, trajectories, ensemble series and summaries.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so every
//! emitted file parses back to bit-identical values. Record and trajectory
//! files start with `# key = value` header lines describing the grid.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::filter::{FilterStates, FilterTrajectory, ObservationRecord, SeedProvenance};
use crate::master::TimeGrid;
use crate::operator::{DensityMatrix, Detection, Operator};
use crate::simulate::EnsembleResult;

/// Shortest decimal that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

fn parse_f64(s: &str, line: usize) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| Error::Syntax {
        line,
        message: format!("`{s}` is not a number"),
    })
}

struct Parsed<'a> {
    header: BTreeMap<String, (usize, String)>,
    columns: Vec<&'a str>,
    rows: Vec<(usize, Vec<&'a str>)>,
}

fn parse_table(text: &str) -> Result<Parsed<'_>> {
    let mut header = BTreeMap::new();
    let mut columns = None;
    let mut rows = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some((k, v)) = rest.split_once('=') {
                header.insert(k.trim().to_string(), (line_no, v.trim().to_string()));
            }
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if columns.is_none() {
            columns = Some(cells);
        } else {
            rows.push((line_no, cells));
        }
    }
    Ok(Parsed {
        header,
        columns: columns.ok_or_else(|| Error::InvalidRecord("missing column header".into()))?,
        rows,
    })
}

impl Parsed<'_> {
    fn get(&self, key: &str) -> Result<(usize, &str)> {
        self.header
            .get(key)
            .map(|(l, v)| (*l, v.as_str()))
            .ok_or_else(|| Error::InvalidRecord(format!("header `{key}` missing")))
    }

    fn get_u64(&self, key: &str) -> Result<u64> {
        let (line, v) = self.get(key)?;
        v.parse().map_err(|_| Error::Syntax {
            line,
            message: format!("{key}: `{v}` is not an integer"),
        })
    }

    fn get_f64(&self, key: &str) -> Result<f64> {
        let (line, v) = self.get(key)?;
        parse_f64(v, line)
    }

    fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(
            self.get_f64("t0")?,
            self.get_f64("dt")?,
            self.get_u64("n_steps")? as usize,
        )
    }
}

fn grid_header(out: &mut String, grid: &TimeGrid) {
    let _ = writeln!(out, "# t0 = {}", fmt_f64(grid.t0()));
    let _ = writeln!(out, "# dt = {}", fmt_f64(grid.dt()));
    let _ = writeln!(out, "# n_steps = {}", grid.n_steps());
}

/// Record CSV: header block, then `k,dy` or `k,dN` rows.
pub fn format_record(record: &ObservationRecord) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# detection = {}", record.detection());
    grid_header(&mut out, record.grid());
    if let Some(p) = record.provenance() {
        let _ = writeln!(out, "# master_seed = {}", p.master_seed);
        let _ = writeln!(out, "# traj_index = {}", p.traj_index);
    }
    let col = match record.detection() {
        Detection::Homodyne => "dy",
        Detection::Counting => "dN",
    };
    let _ = writeln!(out, "k,{col}");
    for (k, v) in record.increments().iter().enumerate() {
        match record.detection() {
            Detection::Homodyne => {
                let _ = writeln!(out, "{k},{}", fmt_f64(*v));
            }
            Detection::Counting => {
                let _ = writeln!(out, "{k},{}", *v as u8);
            }
        }
    }
    out
}

pub fn parse_record(text: &str) -> Result<ObservationRecord> {
    let t = parse_table(text)?;
    let (line, det) = t.get("detection")?;
    let detection: Detection = det
        .parse()
        .map_err(|message| Error::Syntax { line, message })?;
    let grid = t.grid()?;
    let provenance = match (
        t.header.contains_key("master_seed"),
        t.header.contains_key("traj_index"),
    ) {
        (true, true) => Some(SeedProvenance {
            master_seed: t.get_u64("master_seed")?,
            traj_index: t.get_u64("traj_index")?,
        }),
        _ => None,
    };
    let expected_col = match detection {
        Detection::Homodyne => "dy",
        Detection::Counting => "dN",
    };
    if t.columns != ["k", expected_col] {
        return Err(Error::InvalidRecord(format!(
            "expected columns `k,{expected_col}`, found `{}`",
            t.columns.join(",")
        )));
    }
    if t.rows.len() != grid.n_steps() {
        return Err(Error::LengthMismatch {
            expected: grid.n_steps(),
            found: t.rows.len(),
        });
    }
    let mut increments = Vec::with_capacity(t.rows.len());
    for (k, (line, cells)) in t.rows.iter().enumerate() {
        if cells.len() != 2 || cells[0].parse::<usize>().ok() != Some(k) {
            return Err(Error::Syntax {
                line: *line,
                message: format!("expected row `{k},<value>`"),
            });
        }
        increments.push(parse_f64(cells[1], *line)?);
    }
    ObservationRecord::new(grid, detection, increments, provenance)
}

/// Full filter trajectory: `k,t[,norm],re_i_j,im_i_j,...` with row-major entries.
pub fn format_trajectory(traj: &FilterTrajectory) -> String {
    let (states, norms): (Vec<&Operator>, Option<&[f64]>) = match &traj.states {
        FilterStates::Normalized(s) => (s.iter().map(DensityMatrix::as_operator).collect(), None),
        FilterStates::Linear { states, norms } => (states.iter().collect(), Some(norms)),
    };
    let dim = states.first().map_or(0, |s| s.dim());
    let mut out = String::new();
    let kind = if norms.is_some() {
        "linear"
    } else {
        "normalized"
    };
    let _ = writeln!(out, "# kind = {kind}");
    let _ = writeln!(out, "# dim = {dim}");
    grid_header(&mut out, &traj.grid);
    out.push_str("k,t");
    if norms.is_some() {
        out.push_str(",norm");
    }
    for i in 0..dim {
        for j in 0..dim {
            let _ = write!(out, ",re_{i}_{j},im_{i}_{j}");
        }
    }
    out.push('\n');
    for (k, s) in states.iter().enumerate() {
        let _ = write!(out, "{k},{}", fmt_f64(traj.grid.time(k)));
        if let Some(n) = norms {
            let _ = write!(out, ",{}", fmt_f64(n[k]));
        }
        for z in s.entries() {
            let _ = write!(out, ",{},{}", fmt_f64(z.re), fmt_f64(z.im));
        }
        out.push('\n');
    }
    out
}

pub fn parse_trajectory(text: &str) -> Result<FilterTrajectory> {
    let t = parse_table(text)?;
    let (line, kind) = t.get("kind")?;
    let linear = match kind {
        "normalized" => false,
        "linear" => true,
        other => {
            return Err(Error::Syntax {
                line,
                message: format!("unknown trajectory kind `{other}`"),
            })
        }
    };
    let dim = t.get_u64("dim")? as usize;
    let grid = t.grid()?;
    let offset = if linear { 3 } else { 2 };
    let width = offset + 2 * dim * dim;
    if t.columns.len() != width {
        return Err(Error::InvalidRecord(format!(
            "expected {width} columns, found {}",
            t.columns.len()
        )));
    }
    if t.rows.len() != grid.n_steps() + 1 {
        return Err(Error::LengthMismatch {
            expected: grid.n_steps() + 1,
            found: t.rows.len(),
        });
    }
    let mut states = Vec::with_capacity(t.rows.len());
    let mut norms = Vec::new();
    for (line, cells) in &t.rows {
        if cells.len() != width {
            return Err(Error::Syntax {
                line: *line,
                message: format!("expected {width} cells, found {}", cells.len()),
            });
        }
        if linear {
            norms.push(parse_f64(cells[2], *line)?);
        }
        let entries = cells[offset..]
            .chunks(2)
            .map(|c| {
                Ok(Complex64::new(
                    parse_f64(c[0], *line)?,
                    parse_f64(c[1], *line)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        states.push(Operator::from_row_major(dim, entries)?);
    }
    let states = if linear {
        FilterStates::Linear { states, norms }
    } else {
        FilterStates::Normalized(
            states
                .into_iter()
                .map(DensityMatrix::new)
                .collect::<Result<_>>()?,
        )
    };
    Ok(FilterTrajectory { grid, states })
}

/// `t,<name>...` table of per-time values.
pub fn format_expectations(grid: &TimeGrid, columns: &[(&str, &[f64])]) -> String {
    let mut out = String::from("t");
    for (name, _) in columns {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for k in 0..=grid.n_steps() {
        out.push_str(&fmt_f64(grid.time(k)));
        for (_, values) in columns {
            out.push(',');
            out.push_str(&fmt_f64(values[k]));
        }
        out.push('\n');
    }
    out
}

/// Parses a `t,<name>...` table into column names and columns (including `t`).
pub fn parse_expectations(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let t = parse_table(text)?;
    let names: Vec<String> = t.columns.iter().map(|s| s.to_string()).collect();
    let mut cols = vec![Vec::with_capacity(t.rows.len()); names.len()];
    for (line, cells) in &t.rows {
        if cells.len() != names.len() {
            return Err(Error::Syntax {
                line: *line,
                message: format!("expected {} cells, found {}", names.len(), cells.len()),
            });
        }
        for (c, cell) in cols.iter_mut().zip(cells) {
            c.push(parse_f64(cell, *line)?);
        }
    }
    Ok((names, cols))
}

/// Ensemble series in long form: `t,obs_name,mean,stderr,master`.
pub fn format_ensemble(ensemble: &EnsembleResult, master: &[Vec<f64>]) -> String {
    let grid = ensemble.mean_states.grid;
    let mut out = String::from("t,obs_name,mean,stderr,master\n");
    for k in 0..=grid.n_steps() {
        let t = fmt_f64(grid.time(k));
        for (series, reference) in ensemble.observables.iter().zip(master) {
            let _ = writeln!(
                out,
                "{t},{},{},{},{}",
                series.name,
                fmt_f64(series.mean[k]),
                fmt_f64(series.stderr[k]),
                fmt_f64(reference[k])
            );
        }
    }
    out
}

/// Ordered `key = value` lines with sections (`[name]`).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KeyValueDoc {
    lines: Vec<String>,
}

impl KeyValueDoc {
    pub fn section(&mut self, name: &str) -> &mut Self {
        if !self.lines.is_empty() {
            self.lines.push(String::new());
        }
        self.lines.push(format!("[{name}]"));
        self
    }

    pub fn entry(&mut self, key: &str, value: impl std::fmt::Display) -> &mut Self {
        self.lines.push(format!("{key} = {value}"));
        self
    }

    pub fn render(&self) -> String {
        let mut s = self.lines.join("\n");
        s.push('\n');
        s
    }
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}
