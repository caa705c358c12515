//! `mhtrack`: track centerlines, render phantoms, score results and sweep
//! parameters.
//!
//! Exit status is 0 on success, 1 when tracking fails and 2 on bad input.
//! Failures are reported on stderr as one JSON object.

mod config;
mod error;
mod seed;
mod sweep;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use mhtrack::metrics::{coverage, DEFAULT_SPACING};
use mhtrack::tracker::write_jsonl;
use mhtrack::volume::{read_volume, write_metaimage, ElementType};
use mhtrack::{evaluate, render, suite, track_tree, CenterlineTree, Evaluation, PhantomSpec, Point3};
use serde::Serialize;

use config::{Overrides, RunConfig, SeedSpec};
use error::{CliError, CliResult};
use sweep::{SweepOverrides, SweepPlan};

#[derive(Parser)]
#[command(name = "mhtrack", version, about = "Tree-structured tubular centerline extraction by multiple hypothesis tracking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Track a tree from a seed and write its centerline.
    Track(TrackArgs),
    /// Render a phantom volume and its ground-truth centerline.
    Phantom(PhantomArgs),
    /// Score a centerline against a reference.
    Eval(EvalArgs),
    /// Run a parameter grid over the phantom suite.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct TrackArgs {
    /// TOML run configuration.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Volume (.mhd, or .json sidecar).
    #[arg(long)]
    volume: Option<PathBuf>,
    /// Seed as x,y,z in mm, or auto-max-fit.
    #[arg(long, allow_hyphen_values = true)]
    seed: Option<String>,
    /// Centerline JSON to write.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Audit log (JSON lines) to write.
    #[arg(long)]
    audit: Option<PathBuf>,
    /// airway or coronary.
    #[arg(long)]
    anatomy: Option<String>,
    /// modified (rank scores) or original (raw scores).
    #[arg(long)]
    mode: Option<String>,
    /// Grid nodes per axis for auto-max-fit seeding.
    #[arg(long)]
    auto_grid: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
    /// Tracker setting as key=value, e.g. global_threshold=0.8 or bifurcation.enabled=false.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct PhantomArgs {
    /// Phantom description (JSON).
    #[arg(long, conflicts_with = "scenario", required_unless_present = "scenario")]
    spec: Option<PathBuf>,
    /// Built-in scenario: straight-r2, tapered, y-tree, multi-scale or gap.
    #[arg(long)]
    scenario: Option<String>,
    /// Output stem; writes <stem>.mhd, <stem>.raw and <stem>.truth.json.
    #[arg(short, long)]
    out: PathBuf,
    /// Noise seed, replacing the one in the spec.
    #[arg(long)]
    rng_seed: Option<u64>,
    /// Noise standard deviation, replacing the one in the spec.
    #[arg(long)]
    noise: Option<f64>,
    /// uint8, uint16, float32 or float64.
    #[arg(long, default_value = "float64")]
    element_type: String,
}

#[derive(Args)]
struct EvalArgs {
    /// Centerline to score.
    tracked: PathBuf,
    /// Reference centerline.
    reference: PathBuf,
    /// Weight of the tracked-to-reference term of the distance.
    #[arg(short, long, default_value_t = 0.5)]
    w: f64,
    /// Resampling spacing in mm.
    #[arg(long, default_value_t = DEFAULT_SPACING)]
    spacing: f64,
    /// Write the metrics here instead of stdout.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// TOML grid description.
    #[arg(short, long)]
    grid: Option<PathBuf>,
    /// CSV to write.
    #[arg(short, long)]
    out: PathBuf,
    /// Axis as name=v1,v2,...; replaces the axes of the grid file.
    #[arg(long = "axis", value_name = "NAME=VALUES")]
    axes: Vec<String>,
    /// Scenario to run; repeatable. Defaults to the whole suite.
    #[arg(long = "scenario")]
    scenarios: Vec<String>,
    #[arg(long)]
    anatomy: Option<String>,
    #[arg(long)]
    mode: Option<String>,
    /// Noise seed of the rendered scenarios.
    #[arg(long)]
    rng_seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn with_threads<T>(threads: Option<usize>, f: impl FnOnce() -> CliResult<T> + Send) -> CliResult<T>
where
    T: Send,
{
    match threads {
        None => f(),
        Some(0) => Err(CliError::bad_input("threads must be positive")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::bad_input(e.to_string()))?
            .install(f),
    }
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes()).and_then(|_| w.flush()).map_err(|e| CliError::io(path, e))
}

fn cmd_track(args: TrackArgs) -> CliResult<()> {
    let overrides = Overrides {
        anatomy: args.anatomy,
        mode: args.mode,
        volume: args.volume,
        seed: args.seed,
        output: args.output,
        audit: args.audit,
        threads: args.threads,
        auto_grid: args.auto_grid,
        set: args.set,
    };
    let run = RunConfig::load(args.config.as_deref(), overrides)?;
    let volume = read_volume(&run.volume)?;
    with_threads(run.threads, || {
        let t0 = Instant::now();
        let seed = match run.seed {
            SeedSpec::Point(p) => p,
            SeedSpec::AutoMaxFit => seed::auto_max_fit(&volume, &run.tracker, run.auto_grid)?,
        };
        let out = track_tree(&volume, &seed, &run.tracker)?;
        let seconds = t0.elapsed().as_secs_f64();
        write_text(&run.output, &(out.tree.to_json()? + "\n"))?;
        if let Some(path) = &run.audit {
            let mut w = create(path)?;
            write_jsonl(&out.audit, &mut w).and_then(|_| w.flush()).map_err(|e| CliError::io(path, e))?;
        }
        println!("seed: {:.3} {:.3} {:.3}", seed.x, seed.y, seed.z);
        println!("branches: {}", out.tree.branches.len());
        println!("total_length_mm: {:.3}", out.tree.total_length() + 0.0);
        println!("fits: {}", out.stats.fits);
        println!("wall_time_s: {seconds:.3}");
        if out.tree.branches.is_empty() {
            return Err(CliError { code: error::EXIT_TRACKING, kind: "empty_tree", message: "no centerline was tracked from the seed".into() });
        }
        Ok(())
    })
}

fn element_type(name: &str) -> CliResult<ElementType> {
    serde_json::from_value(serde_json::Value::String(name.to_ascii_lowercase()))
        .map_err(|_| CliError::bad_input(format!("unknown element type {name:?}")))
}

fn with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut name = stem.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    stem.with_file_name(name)
}

fn cmd_phantom(args: PhantomArgs) -> CliResult<()> {
    let ty = element_type(&args.element_type)?;
    let (mut spec, seed) = match (&args.spec, &args.scenario) {
        (Some(path), _) => (PhantomSpec::read(path)?, None),
        (None, Some(name)) => {
            let s = suite::scenario_by_name(name, args.rng_seed.unwrap_or(sweep::DEFAULT_RNG_SEED))
                .ok_or_else(|| CliError::bad_input(format!("unknown scenario {name:?}")))?;
            (s.spec, Some(Point3::from(s.seed)))
        }
        (None, None) => return Err(CliError::bad_input("give --spec or --scenario")),
    };
    if let Some(r) = args.rng_seed {
        spec.rng_seed = r;
    }
    if let Some(n) = args.noise {
        spec.noise_sigma = n;
    }
    let (volume, mut truth) = render(&spec)?;
    if let Some(s) = seed {
        truth.seed = s;
    }
    let mhd = with_suffix(&args.out, ".mhd");
    let truth_path = with_suffix(&args.out, ".truth.json");
    if let Some(dir) = mhd.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    write_metaimage(&volume, &mhd, ty)?;
    truth.write(&truth_path)?;
    println!("volume: {}", mhd.display());
    println!("truth: {}", truth_path.display());
    println!("seed: {} {} {}", truth.seed.x, truth.seed.y, truth.seed.z);
    Ok(())
}

#[derive(Serialize)]
struct EvalReport {
    #[serde(flatten)]
    evaluation: Evaluation,
    coverage: f64,
    spacing: f64,
}

fn cmd_eval(args: EvalArgs) -> CliResult<()> {
    if !(0.0..=1.0).contains(&args.w) {
        return Err(CliError::bad_input(format!("w = {} is outside [0, 1]", args.w)));
    }
    if !(args.spacing > 0.0 && args.spacing.is_finite()) {
        return Err(CliError::bad_input(format!("spacing = {} must be positive", args.spacing)));
    }
    let tracked = CenterlineTree::read(&args.tracked)?;
    let reference = CenterlineTree::read(&args.reference)?;
    let report = EvalReport {
        evaluation: evaluate(&tracked, &reference, args.w, args.spacing)?,
        coverage: coverage(&tracked, &reference, args.spacing)?,
        spacing: args.spacing,
    };
    let text = serde_json::to_string_pretty(&report).map_err(mhtrack::Error::from)? + "\n";
    match &args.out {
        Some(path) => write_text(path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_sweep(args: SweepArgs) -> CliResult<()> {
    let overrides = SweepOverrides {
        anatomy: args.anatomy,
        mode: args.mode,
        scenarios: args.scenarios,
        rng_seed: args.rng_seed,
        axes: args.axes,
        set: args.set,
    };
    let plan = SweepPlan::load(args.grid.as_deref(), overrides)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let (ran, reused) = with_threads(args.threads, || sweep::run_sweep(&plan, &args.out))?;
    sweep::report(std::io::stdout(), &args.out, ran, reused).map_err(|e| CliError::io(Path::new("stdout"), e))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(error::EXIT_BAD_INPUT);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    let result = match cli.command {
        Command::Track(a) => cmd_track(a),
        Command::Phantom(a) => cmd_phantom(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.code)
        }
    }
}
