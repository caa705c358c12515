//! Run configuration: a TOML file plus command-line overrides.
//!
//! ```toml
//! anatomy = "airway"          # or "coronary"
//! mode = "modified"           # or "original"
//! volume = "scan.mhd"
//! seed = [64.0, 64.0, 10.0]   # or "auto-max-fit"
//! output = "tree.json"
//! audit = "audit.jsonl"
//! threads = 4
//!
//! [tracker]
//! global_threshold = 0.8
//! bifurcation.enabled = true
//! ```
//!
//! The `[tracker]` table overrides fields of the preset chosen by `anatomy`
//! and `mode`. Relative paths are taken relative to the config file.

use std::path::{Path, PathBuf};

use mhtrack::{Point3, TrackerConfig};
use serde::Deserialize;
use toml::{Table, Value};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SeedSpec {
    Point(Point3),
    AutoMaxFit,
}

impl SeedSpec {
    pub fn parse(text: &str) -> CliResult<Self> {
        if text.trim() == "auto-max-fit" {
            return Ok(SeedSpec::AutoMaxFit);
        }
        let xs: Vec<f64> = text
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| CliError::bad_input(format!("seed {text:?} is neither x,y,z nor auto-max-fit")))?;
        match xs[..] {
            [x, y, z] if xs.iter().all(|v| v.is_finite()) => Ok(SeedSpec::Point(Point3::new(x, y, z))),
            _ => Err(CliError::bad_input(format!("seed {text:?} needs three finite coordinates"))),
        }
    }

    fn from_value(v: &Value) -> CliResult<Self> {
        match v {
            Value::String(s) => Self::parse(s),
            Value::Array(a) => {
                let xs: Option<Vec<f64>> = a
                    .iter()
                    .map(|x| x.as_float().or_else(|| x.as_integer().map(|i| i as f64)))
                    .collect();
                match xs.as_deref() {
                    Some(&[x, y, z]) => Ok(SeedSpec::Point(Point3::new(x, y, z))),
                    _ => Err(CliError::bad_input("seed array needs three numbers")),
                }
            }
            _ => Err(CliError::bad_input("seed must be [x, y, z] or \"auto-max-fit\"")),
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunFile {
    anatomy: Option<String>,
    mode: Option<String>,
    volume: Option<PathBuf>,
    seed: Option<Value>,
    output: Option<PathBuf>,
    audit: Option<PathBuf>,
    threads: Option<usize>,
    auto_grid: Option<usize>,
    #[serde(default)]
    tracker: Table,
}

/// Everything `track` needs.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub tracker: TrackerConfig,
    pub volume: PathBuf,
    pub seed: SeedSpec,
    pub output: PathBuf,
    pub audit: Option<PathBuf>,
    pub threads: Option<usize>,
    pub auto_grid: usize,
}

/// Values given on the command line; each one wins over the file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub anatomy: Option<String>,
    pub mode: Option<String>,
    pub volume: Option<PathBuf>,
    pub seed: Option<String>,
    pub output: Option<PathBuf>,
    pub audit: Option<PathBuf>,
    pub threads: Option<usize>,
    pub auto_grid: Option<usize>,
    pub set: Vec<String>,
}

pub const DEFAULT_AUTO_GRID: usize = 8;

pub fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    toml::from_str(&text).map_err(|e| CliError::bad_input(format!("{}: {e}", path.display())))
}

fn relative_to(base: Option<&Path>, p: PathBuf) -> PathBuf {
    match base {
        Some(dir) if p.is_relative() => dir.join(p),
        _ => p,
    }
}

impl RunConfig {
    pub fn load(file: Option<&Path>, o: Overrides) -> CliResult<Self> {
        let f: RunFile = match file {
            Some(p) => read_toml(p)?,
            None => RunFile::default(),
        };
        let base = file.and_then(Path::parent);
        let anatomy = o.anatomy.or(f.anatomy);
        let mode = o.mode.or(f.mode);
        let tracker = tracker_config(anatomy.as_deref(), mode.as_deref(), &f.tracker, &o.set)?;
        if let Some(t) = o.threads.or(f.threads) {
            if t == 0 {
                return Err(CliError::bad_input("threads must be positive"));
            }
        }
        let volume = o
            .volume
            .or_else(|| f.volume.map(|p| relative_to(base, p)))
            .ok_or_else(|| CliError::bad_input("no volume given"))?;
        let seed = match (o.seed, f.seed) {
            (Some(s), _) => SeedSpec::parse(&s)?,
            (None, Some(v)) => SeedSpec::from_value(&v)?,
            (None, None) => return Err(CliError::bad_input("no seed given")),
        };
        let output = o
            .output
            .or_else(|| f.output.map(|p| relative_to(base, p)))
            .ok_or_else(|| CliError::bad_input("no output path given"))?;
        let audit = o.audit.or_else(|| f.audit.map(|p| relative_to(base, p)));
        let auto_grid = o.auto_grid.or(f.auto_grid).unwrap_or(DEFAULT_AUTO_GRID);
        if auto_grid == 0 {
            return Err(CliError::bad_input("auto_grid must be positive"));
        }
        tracker.validate()?;
        Ok(Self { tracker, volume, seed, output, audit, threads: o.threads.or(f.threads), auto_grid })
    }
}

/// Preset for `anatomy` and `mode`, then the `[tracker]` table, then each
/// `key=value` assignment.
pub fn tracker_config(anatomy: Option<&str>, mode: Option<&str>, table: &Table, set: &[String]) -> CliResult<TrackerConfig> {
    let anatomy = anatomy.unwrap_or("airway");
    let mode = mode.unwrap_or("modified");
    let name = format!("{anatomy}-{mode}");
    let preset = TrackerConfig::preset(&name)
        .ok_or_else(|| CliError::bad_input(format!("no preset {name:?}; anatomy is airway|coronary, mode modified|original")))?;
    let mut merged = Table::try_from(preset).map_err(|e| CliError::bad_input(e.to_string()))?;
    merge(&mut merged, table);
    for assignment in set {
        let (key, value) = parse_assignment(assignment)?;
        let mut path: Vec<&str> = key.split('.').collect();
        let last = path.pop().expect("split yields one item");
        let mut t = &mut merged;
        for part in path {
            t = t
                .entry(part)
                .or_insert_with(|| Value::Table(Table::new()))
                .as_table_mut()
                .ok_or_else(|| CliError::bad_input(format!("{key}: {part} is not a table")))?;
        }
        t.insert(last.to_string(), value);
    }
    merged.try_into().map_err(|e: toml::de::Error| CliError::bad_input(format!("tracker settings: {}", e.message())))
}

fn merge(dst: &mut Table, src: &Table) {
    for (k, v) in src {
        match (dst.get_mut(k), v) {
            // a table naming its own variant replaces the old one outright
            (Some(Value::Table(d)), Value::Table(s)) if !s.contains_key("kind") => merge(d, s),
            _ => {
                dst.insert(k.clone(), v.clone());
            }
        }
    }
}

/// `key=value` with `value` in TOML syntax; bare words are strings.
pub fn parse_assignment(text: &str) -> CliResult<(String, Value)> {
    let (key, raw) = text
        .split_once('=')
        .ok_or_else(|| CliError::bad_input(format!("expected key=value, got {text:?}")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(CliError::bad_input(format!("empty key in {text:?}")));
    }
    let raw = raw.trim();
    let value = match toml::from_str::<Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => Value::String(raw.to_string()),
    };
    Ok((key.to_string(), value))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_and_overrides() {
        let c = tracker_config(None, None, &Table::new(), &[]).unwrap();
        assert_eq!(c, TrackerConfig::airway_modified());
        let c = tracker_config(Some("coronary"), Some("modified"), &Table::new(), &[]).unwrap();
        assert_eq!((c.search_depth, c.step_length_factor, c.search_angle, c.global_threshold), (4, 1.5, 60.0, 0.95));
        let table: Table = toml::from_str("global_threshold = 0.8\nsearch_depth = 3\n[bifurcation]\nenabled = false").unwrap();
        let c = tracker_config(None, None, &table, &["search_depth=5".into()]).unwrap();
        assert_eq!(c.global_threshold, 0.8);
        assert_eq!(c.search_depth, 5);
        assert!(!c.bifurcation.enabled);
        assert_eq!(c.bifurcation.min_separation, 2.0);
    }

    #[test]
    fn bad_keys_are_rejected() {
        assert!(tracker_config(None, None, &Table::new(), &["no_such_key=1".into()]).is_err());
        assert!(tracker_config(Some("liver"), None, &Table::new(), &[]).is_err());
        assert!(parse_assignment("novalue").is_err());
    }

    #[test]
    fn seeds() {
        assert_eq!(SeedSpec::parse("auto-max-fit").unwrap(), SeedSpec::AutoMaxFit);
        assert_eq!(SeedSpec::parse("1, 2.5,3").unwrap(), SeedSpec::Point(Point3::new(1.0, 2.5, 3.0)));
        assert!(SeedSpec::parse("1,2").is_err());
        assert!(SeedSpec::parse("a,b,c").is_err());
        let v: Table = toml::from_str("s = [1, 2.0, 3]").unwrap();
        assert_eq!(SeedSpec::from_value(&v["s"]).unwrap(), SeedSpec::Point(Point3::new(1.0, 2.0, 3.0)));
    }
}
