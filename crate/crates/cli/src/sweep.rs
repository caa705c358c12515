//! Exhaustive parameter sweeps over the phantom suite.
//!
//! ```toml
//! anatomy = "airway"
//! mode = "modified"
//! scenarios = ["multi-scale"]
//! rng_seed = 1
//!
//! [tracker]
//! max_fits = 5000
//!
//! [[axis]]
//! param = "global_threshold"
//! values = [0.5, 0.6, 0.7, 0.8, 0.9]
//! ```
//!
//! Finished rows are appended to `<out>.partial` as they complete, so an
//! interrupted sweep picks up where it stopped. The final CSV is written in
//! grid order once every row exists.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use mhtrack::suite::{self, Prepared, SweepGrid, SweepParam};
use mhtrack::TrackerConfig;
use rayon::prelude::*;
use serde::Deserialize;
use toml::Table;

use crate::config::{read_toml, tracker_config};
use crate::error::{kind_of, CliError, CliResult};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepFile {
    anatomy: Option<String>,
    mode: Option<String>,
    scenarios: Option<Vec<String>>,
    rng_seed: Option<u64>,
    #[serde(default)]
    couple_global_to_local: bool,
    #[serde(default)]
    tracker: Table,
    #[serde(default)]
    axis: Vec<AxisFile>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AxisFile {
    param: String,
    values: Vec<f64>,
}

#[derive(Debug, Default, Clone)]
pub struct SweepOverrides {
    pub anatomy: Option<String>,
    pub mode: Option<String>,
    pub scenarios: Vec<String>,
    pub rng_seed: Option<u64>,
    pub axes: Vec<String>,
    pub set: Vec<String>,
}

pub struct SweepPlan {
    pub base: TrackerConfig,
    pub grid: SweepGrid,
    pub scenarios: Vec<String>,
    pub rng_seed: u64,
}

pub const DEFAULT_RNG_SEED: u64 = 1;

fn parse_axis(text: &str) -> CliResult<(SweepParam, Vec<f64>)> {
    let (name, values) = text
        .split_once('=')
        .ok_or_else(|| CliError::bad_input(format!("axis {text:?} is not name=v1,v2,...")))?;
    let param = SweepParam::parse(name.trim())?;
    let values = values
        .split(',')
        .map(|v| v.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| CliError::bad_input(format!("axis {text:?} has a non-numeric value")))?;
    Ok((param, values))
}

impl SweepPlan {
    pub fn load(file: Option<&Path>, o: SweepOverrides) -> CliResult<Self> {
        let f: SweepFile = match file {
            Some(p) => read_toml(p)?,
            None => SweepFile::default(),
        };
        let base = tracker_config(o.anatomy.or(f.anatomy).as_deref(), o.mode.or(f.mode).as_deref(), &f.tracker, &o.set)?;
        let axes = if o.axes.is_empty() {
            f.axis
                .into_iter()
                .map(|a| Ok((SweepParam::parse(&a.param)?, a.values)))
                .collect::<CliResult<Vec<_>>>()?
        } else {
            o.axes.iter().map(|a| parse_axis(a)).collect::<CliResult<Vec<_>>>()?
        };
        if axes.is_empty() || axes.iter().any(|(_, v)| v.is_empty() || v.iter().any(|x| !x.is_finite())) {
            return Err(CliError::bad_input("the sweep needs at least one axis with finite values"));
        }
        let grid = SweepGrid { axes, couple_global_to_local: f.couple_global_to_local };
        let scenarios = if !o.scenarios.is_empty() {
            o.scenarios
        } else {
            f.scenarios.unwrap_or_else(|| suite::default_suite(0).into_iter().map(|s| s.name).collect())
        };
        let rng_seed = o.rng_seed.or(f.rng_seed).unwrap_or(DEFAULT_RNG_SEED);
        for s in &scenarios {
            if suite::scenario_by_name(s, rng_seed).is_none() {
                return Err(CliError::bad_input(format!("unknown scenario {s:?}")));
            }
        }
        for i in 0..grid.len() {
            grid.config_at(&base, i).validate()?;
        }
        Ok(Self { base, grid, scenarios, rng_seed })
    }

    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["index".to_string(), "scenario".to_string()];
        h.extend(self.grid.axes.iter().map(|(p, _)| p.name().to_string()));
        h.extend(
            ["status", "d_err", "ov", "of", "ot", "coverage", "branches", "length_mm", "fits"]
                .iter()
                .map(|s| s.to_string()),
        );
        h
    }

    /// The leading columns that identify row `(index, scenario)`.
    fn key(&self, index: usize, scenario: &str) -> Vec<String> {
        let mut k = vec![index.to_string(), scenario.to_string()];
        k.extend(self.grid.point(index).iter().map(|(_, v)| v.to_string()));
        k
    }
}

fn partial_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".partial");
    out.with_file_name(name)
}

/// Rows of an earlier run that match this plan, keyed by (index, scenario).
fn load_rows(path: &Path, plan: &SweepPlan, rows: &mut BTreeMap<(usize, usize), Vec<String>>) -> CliResult<()> {
    if !path.exists() {
        return Ok(());
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_path(path).map_err(csv_error)?;
    let header: Vec<String> = rdr.headers().map_err(csv_error)?.iter().map(str::to_string).collect();
    if header != plan.header() {
        return Err(CliError::bad_input(format!("{} was written by a different sweep", path.display())));
    }
    let width = header.len();
    let key_width = 2 + plan.grid.axes.len();
    for rec in rdr.records() {
        // a torn last line from an interrupted run is simply redone
        let Ok(rec) = rec else { continue };
        if rec.len() != width {
            continue;
        }
        let fields: Vec<String> = rec.iter().map(str::to_string).collect();
        let (Ok(index), Some(s)) = (fields[0].parse::<usize>(), plan.scenarios.iter().position(|s| *s == fields[1])) else {
            continue;
        };
        if index < plan.grid.len() && fields[..key_width] == plan.key(index, &fields[1])[..] {
            rows.insert((index, s), fields);
        }
    }
    Ok(())
}

fn csv_error(e: csv::Error) -> CliError {
    CliError::bad_input(e.to_string())
}

fn write_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError { code: crate::error::EXIT_BAD_INPUT, kind: "io", message: format!("{}: {e}", path.display()) }
}

fn run_row(plan: &SweepPlan, prepared: &Prepared, index: usize) -> Vec<String> {
    let cfg = plan.grid.config_at(&plan.base, index);
    let mut row = plan.key(index, &prepared.scenario.name);
    match prepared.run(&cfg) {
        Ok((out, s)) => {
            let e = &s.evaluation;
            row.push("ok".into());
            for v in [e.d_err, e.overlap.ov, e.overlap.of, e.overlap.ot, s.coverage, s.branches as f64, s.length_mm + 0.0, out.stats.fits as f64] {
                row.push(v.to_string());
            }
        }
        Err(err) => {
            row.push(kind_of(&err).to_string());
            row.extend(std::iter::repeat_n(String::new(), 8));
        }
    }
    row
}

/// Runs every missing row and writes the ordered CSV. Returns (rows run, rows reused).
pub fn run_sweep(plan: &SweepPlan, out: &Path) -> CliResult<(usize, usize)> {
    let journal = partial_path(out);
    let mut done = BTreeMap::new();
    load_rows(out, plan, &mut done)?;
    load_rows(&journal, plan, &mut done)?;
    let reused = done.len();

    let pending: Vec<(usize, usize)> = (0..plan.grid.len())
        .flat_map(|i| (0..plan.scenarios.len()).map(move |s| (i, s)))
        .filter(|k| !done.contains_key(k))
        .collect();
    let mut needed: Vec<usize> = pending.iter().map(|&(_, s)| s).collect();
    needed.sort_unstable();
    needed.dedup();
    let prepared: BTreeMap<usize, Prepared> = needed
        .par_iter()
        .map(|&s| {
            let sc = suite::scenario_by_name(&plan.scenarios[s], plan.rng_seed).expect("scenario checked on load");
            sc.prepare().map(|p| (s, p))
        })
        .collect::<mhtrack::Result<_>>()?;

    if !pending.is_empty() {
        // restart the journal from the rows already known so a torn last line is dropped
        let file = File::create(&journal).map_err(write_err(&journal))?;
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        w.write_record(plan.header()).map_err(csv_error)?;
        for row in done.values() {
            w.write_record(row).map_err(csv_error)?;
        }
        w.flush().map_err(write_err(&journal))?;
        let w = Mutex::new(w);
        let rows: Vec<((usize, usize), Vec<String>)> = pending
            .par_iter()
            .map(|&(i, s)| {
                let row = run_row(plan, &prepared[&s], i);
                let mut w = w.lock().expect("journal lock");
                w.write_record(&row).map_err(csv_error)?;
                w.flush().map_err(write_err(&journal))?;
                Ok(((i, s), row))
            })
            .collect::<CliResult<_>>()?;
        done.extend(rows);
    }

    let tmp = out.with_extension("csv.tmp");
    {
        let mut w = csv::Writer::from_writer(File::create(&tmp).map_err(write_err(&tmp))?);
        w.write_record(plan.header()).map_err(csv_error)?;
        for row in done.values() {
            w.write_record(row).map_err(csv_error)?;
        }
        w.flush().map_err(write_err(&tmp))?;
        w.into_inner().map_err(|e| write_err(&tmp)(e.into_error()))?.sync_all().map_err(write_err(&tmp))?;
    }
    fs::rename(&tmp, out).map_err(write_err(out))?;
    if journal.exists() {
        fs::remove_file(&journal).map_err(write_err(&journal))?;
    }
    Ok((pending.len(), reused))
}

/// Writes a progress line for a finished sweep.
pub fn report(mut w: impl Write, out: &Path, ran: usize, reused: usize) -> std::io::Result<()> {
    writeln!(w, "sweep: {ran} rows run, {reused} reused, written to {}", out.display())
}
