use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand};

use mamodel_core::harness::{
    grid_u, parse_ray, parse_resolution, parse_suites, run_suites, trace_leaf, write_grid_csv, write_trace_csv,
    GridWindow, TraceGrid, DEFAULT_SEED,
};
use mamodel_core::{FinslerMetric, MAModel, MetricSpec, ModelConfig, ModelDescriptor, RunConfig, Suite};

/// File name used when a directory is given for a descriptor path.
const DESCRIPTOR_FILE: &str = "model.json";

#[derive(Parser)]
#[command(
    name = "mamodel",
    version,
    about = "Build and verify Monge-Ampere models of Finsler tori"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a model from a metric spec and write its descriptor.
    Build {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        radius: f64,
        /// Descriptor file, or a directory to hold `model.json`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run verification suites against a built model.
    Verify {
        #[arg(long)]
        model: PathBuf,
        /// Comma-separated suites, or `all`.
        #[arg(long, default_value = "all")]
        suite: String,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Write the JSON report here.
        #[arg(long)]
        json: Option<PathBuf>,
        /// Record wall-clock time per check.
        #[arg(long)]
        timings: bool,
        /// Tolerance override `name=value`; repeatable.
        #[arg(long = "tol", value_name = "NAME=VALUE")]
        tolerances: Vec<String>,
    },
    /// Sample the holomorphic leaf through a ray on an `s x r` grid.
    Trace {
        #[arg(long)]
        model: PathBuf,
        /// `x1,x2,phi` (or `x,phi` on the circle, phi in {0, pi}).
        #[arg(long, allow_hyphen_values = true)]
        ray: String,
        /// `NsxNr`.
        #[arg(long, default_value = "11x11")]
        grid: String,
        #[arg(long)]
        s_max: Option<f64>,
        #[arg(long)]
        r_max: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export `u` and the smallest eigenvalue of `H_C(u^2)` on a window.
    GridU {
        #[arg(long)]
        model: PathBuf,
        /// e.g. `x1=0,x2=0,y1=-0.3:0.3,y2=-0.3:0.3`.
        #[arg(long, allow_hyphen_values = true)]
        window: String,
        /// `N` or `NxM`, one entry per ranged coordinate.
        #[arg(long, default_value = "11x11")]
        res: String,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Failure class, mapped to the exit status.
enum Failure {
    Config(anyhow::Error),
    Checks,
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Config(e)
    }
}

fn descriptor_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(DESCRIPTOR_FILE)
    } else {
        path.to_path_buf()
    }
}

fn load_model(path: &Path) -> anyhow::Result<MAModel> {
    let path = descriptor_path(path);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let desc: ModelDescriptor =
        serde_json::from_str(&text).with_context(|| format!("parsing descriptor {}", path.display()))?;
    Ok(MAModel::from_descriptor(&desc)?)
}

fn create(path: &Path) -> anyhow::Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn parse_tolerances(entries: &[String]) -> anyhow::Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for entry in entries {
        let (name, value) = entry
            .split_once('=')
            .ok_or_else(|| anyhow!("tolerance `{entry}` is not name=value"))?;
        let value: f64 = value.trim().parse().with_context(|| format!("tolerance `{entry}`"))?;
        out.insert(name.trim().to_string(), value);
    }
    Ok(out)
}

fn build(spec: &Path, radius: f64, out: &Path) -> Result<(), Failure> {
    let text = fs::read_to_string(spec).with_context(|| format!("reading {}", spec.display()))?;
    let spec = MetricSpec::from_json(&text).map_err(anyhow::Error::from)?;
    let metric = FinslerMetric::from_spec(&spec).map_err(anyhow::Error::from)?;
    let model = MAModel::build(metric, radius, &ModelConfig::default()).map_err(anyhow::Error::from)?;
    let mut json = serde_json::to_string_pretty(&model.descriptor()).map_err(anyhow::Error::from)?;
    json.push('\n');
    if out.extension().is_none() && !out.exists() {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    }
    let path = descriptor_path(out);
    let mut file = create(&path)?;
    file.write_all(json.as_bytes()).map_err(anyhow::Error::from)?;
    file.flush().map_err(anyhow::Error::from)?;
    println!("model R = {} written to {}", model.radius(), path.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn verify(
    model: &Path,
    suite: &str,
    samples: Option<usize>,
    seed: u64,
    json: Option<&Path>,
    timings: bool,
    tolerances: &[String],
) -> Result<(), Failure> {
    let model = load_model(model)?;
    let suites: Vec<Suite> = parse_suites(suite).map_err(anyhow::Error::from)?;
    let cfg = RunConfig {
        radius: model.radius(),
        samples,
        seed,
        tolerances: parse_tolerances(tolerances)?,
        record_timings: timings,
        ..RunConfig::default()
    };
    cfg.validate().map_err(anyhow::Error::from)?;
    let report = run_suites(&model, &suites, &cfg).map_err(anyhow::Error::from)?;
    if let Some(path) = json {
        let mut file = create(path)?;
        file.write_all(report.to_json().as_bytes())
            .map_err(anyhow::Error::from)?;
        file.write_all(b"\n").map_err(anyhow::Error::from)?;
        file.flush().map_err(anyhow::Error::from)?;
    }
    let stdout = io::stdout();
    let mut lock = stdout.lock();
    lock.write_all(report.summary().as_bytes())
        .map_err(anyhow::Error::from)?;
    lock.flush().map_err(anyhow::Error::from)?;
    if report.pass {
        Ok(())
    } else {
        Err(Failure::Checks)
    }
}

fn trace(
    model: &Path,
    ray: &str,
    grid: &str,
    s_max: Option<f64>,
    r_max: Option<f64>,
    out: &Path,
) -> anyhow::Result<()> {
    let model = load_model(model)?;
    let p = parse_ray(ray, model.dim())?;
    let dims = parse_resolution(grid)?;
    let [ns, nr] = dims[..] else {
        bail!("trace grid must be NsxNr, got `{grid}`");
    };
    let mut tg = TraceGrid::new(ns, nr);
    if let Some(s) = s_max {
        tg.s_max = s;
    }
    tg.r_max = r_max;
    let rows = trace_leaf(&model, &p, &tg)?;
    let mut file = create(out)?;
    write_trace_csv(&rows, model.dim(), &mut file)?;
    file.flush()?;
    let marked = rows.iter().filter(|r| r.status != "ok").count();
    println!("{} rows written to {} ({marked} marked)", rows.len(), out.display());
    Ok(())
}

fn grid(model: &Path, window: &str, res: &str, out: &Path) -> anyhow::Result<()> {
    let model = load_model(model)?;
    let window = GridWindow::parse(window, model.dim())?;
    let resolution = parse_resolution(res)?;
    let rows = grid_u(&model, &window, &resolution)?;
    let mut file = create(out)?;
    write_grid_csv(&rows, model.dim(), &mut file)?;
    file.flush()?;
    let marked = rows.iter().filter(|r| r.status != "ok").count();
    println!("{} rows written to {} ({marked} marked)", rows.len(), out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Build { spec, radius, out } => build(&spec, radius, &out),
        Command::Verify {
            model,
            suite,
            samples,
            seed,
            json,
            timings,
            tolerances,
        } => verify(&model, &suite, samples, seed, json.as_deref(), timings, &tolerances),
        Command::Trace {
            model,
            ray,
            grid: g,
            s_max,
            r_max,
            out,
        } => Ok(trace(&model, &ray, &g, s_max, r_max, &out)?),
        Command::GridU {
            model,
            window,
            res,
            out,
        } => Ok(grid(&model, &window, &res, &out)?),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Checks) => ExitCode::from(1),
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
