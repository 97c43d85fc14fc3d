//! Command-line front end.
//!
//! `run` writes `manifest.json`, then `trajectory.csv` and `summary.json`.
//! `sweep` writes `manifest.json` and `sweep.csv`. Exit codes: 0 success,
//! 2 collision (`run` only), 1 error. On error no result files remain.
//!
//! `trajectory.csv` columns, one row per control step plus a final row:
//! `t, rs_x, rs_y, rs_z, vs_x, vs_y, vs_z, rd_x, rd_y, rd_z, vd_x, vd_y, vd_z,
//! u_x, u_y, u_z, distance, risk, feasible`. `risk` is the largest planned
//! per-step risk over the horizon. The final row has zero control and empty
//! `risk` and `feasible`; so do all rows when control is disabled.
//!
//! `sweep.csv` columns: `axis, value, propagator, runs, completed,
//! failed_seeds, mean_min_distance_km, std_min_distance_km,
//! mean_total_delta_v_kms, std_total_delta_v_kms, collisions`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::{read_config_document, ScenarioConfig};
use crate::error::{Error, Result};
use crate::mpc::{run_batch, run_episode, BatchRow, EpisodeRecord, Override};
use crate::uncertainty::PropagatorKind;

#[derive(Debug, Parser)]
#[command(name = "conjunction-mpc", version, about = "Chance-constrained collision avoidance episodes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PropagatorArg {
    Linear,
    Ut,
    Mc,
}

impl PropagatorArg {
    fn name(self) -> &'static str {
        match self {
            PropagatorArg::Linear => "linear",
            PropagatorArg::Ut => "ut",
            PropagatorArg::Mc => "mc",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    Epsilon,
    #[value(name = "q_scale")]
    QScale,
    Propagator,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one closed-loop episode.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        propagator: Option<PropagatorArg>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Coast without planning.
        #[arg(long)]
        no_control: bool,
    },
    /// Run seeded batches over one parameter axis.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        axis: Axis,
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        values: Vec<String>,
        #[arg(long, default_value_t = 10)]
        runs: usize,
        /// Propagators crossed with every value; defaults to the configured one.
        #[arg(long, value_enum, value_delimiter = ',', num_args = 1..)]
        propagators: Vec<PropagatorArg>,
        /// Master seed; episode i uses seed + i.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Check a config file and print its hash.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Debug, Serialize)]
pub struct Summary {
    pub min_distance_km: f64,
    pub total_delta_v_kms: f64,
    pub collision: bool,
    pub seeds: Vec<u64>,
    pub config_hash: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub config_hash: String,
    pub master_seed: u64,
    pub version: String,
    pub timestamp: String,
    pub outputs: Vec<String>,
}

fn load_document(config: Option<&Path>) -> Result<ScenarioConfig> {
    match config {
        Some(p) => read_config_document(p),
        None => Ok(ScenarioConfig::default()),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| Error::Serialize(e.to_string()))
}

fn write_manifest(out: &Path, doc: &ScenarioConfig, master_seed: u64, outputs: &[&str]) -> Result<PathBuf> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let manifest = Manifest {
        config_hash: doc.hash()?,
        master_seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        outputs: outputs.iter().map(|o| out.join(o).display().to_string()).collect(),
    };
    let path = out.join("manifest.json");
    write_file(&path, &to_json(&manifest)?)?;
    Ok(path)
}

/// Runs `body` after writing the manifest; removes the manifest if `body` fails.
fn with_manifest<T>(manifest: PathBuf, body: impl FnOnce() -> Result<T>) -> Result<T> {
    let result = body();
    if result.is_err() {
        let _ = fs::remove_file(&manifest);
    }
    result
}

/// Trajectory table for an episode.
pub fn trajectory_csv(ep: &EpisodeRecord) -> String {
    let mut s = String::from(
        "t,rs_x,rs_y,rs_z,vs_x,vs_y,vs_z,rd_x,rd_y,rd_z,vd_x,vd_y,vd_z,u_x,u_y,u_z,distance,risk,feasible\n",
    );
    let mut row = |t: f64, sat: &crate::dynamics::StateVector, deb: &crate::dynamics::StateVector, u: [f64; 3], risk: Option<f64>, feasible: Option<bool>| {
        let _ = write!(s, "{t}");
        for c in sat.r.iter().chain(sat.v.iter()).chain(deb.r.iter()).chain(deb.v.iter()).chain(u.iter()) {
            let _ = write!(s, ",{c}");
        }
        let _ = write!(s, ",{}", (sat.r - deb.r).norm());
        match risk {
            Some(r) => {
                let _ = write!(s, ",{r}");
            }
            None => s.push(','),
        }
        match feasible {
            Some(f) => {
                let _ = writeln!(s, ",{f}");
            }
            None => s.push_str(",\n"),
        }
    };
    for r in &ep.steps {
        let risk = r
            .step_risks
            .as_ref()
            .map(|v| v.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        row(r.time, &r.satellite, &r.debris, [r.control.x, r.control.y, r.control.z], risk, r.feasible);
    }
    row(ep.final_time, &ep.final_satellite, &ep.final_debris, [0.0; 3], None, None);
    s
}

/// Outcome of `run`.
#[derive(Debug)]
pub struct RunOutcome {
    pub episode: EpisodeRecord,
    pub summary: Summary,
}

pub fn cmd_run(
    config: Option<&Path>,
    seed: Option<u64>,
    propagator: Option<PropagatorArg>,
    epsilon: Option<f64>,
    no_control: bool,
    out: &Path,
) -> Result<RunOutcome> {
    let mut doc = load_document(config)?;
    if let Some(s) = seed {
        doc.seed = s;
    }
    if let Some(p) = propagator {
        doc.propagator = p.name().to_string();
    }
    if let Some(e) = epsilon {
        doc.risk.epsilon = e;
    }
    if no_control {
        doc.control.enabled = false;
    }
    let scenario = doc.to_scenario()?;
    let hash = doc.hash()?;
    let manifest = write_manifest(out, &doc, scenario.seed, &["trajectory.csv", "summary.json"])?;
    with_manifest(manifest, || {
        let episode = run_episode(&scenario, scenario.seed)?;
        let summary = Summary {
            min_distance_km: episode.min_distance,
            total_delta_v_kms: episode.total_delta_v,
            collision: episode.collision,
            seeds: vec![scenario.seed],
            config_hash: hash,
        };
        let csv = trajectory_csv(&episode);
        let json = to_json(&summary)?;
        let csv_path = out.join("trajectory.csv");
        write_file(&csv_path, &csv)?;
        if let Err(e) = write_file(&out.join("summary.json"), &json) {
            let _ = fs::remove_file(&csv_path);
            return Err(e);
        }
        Ok(RunOutcome { episode, summary })
    })
}

fn parse_value(axis: Axis, raw: &str) -> Result<Override> {
    let number = || {
        raw.trim()
            .parse::<f64>()
            .map_err(|_| Error::validation("values", format!("not a number: {raw:?}")))
    };
    match axis {
        Axis::Epsilon => Ok(Override::Epsilon(number()?)),
        Axis::QScale => Ok(Override::QScale(number()?)),
        Axis::Propagator => {
            let arg = PropagatorArg::from_str(raw.trim(), true)
                .map_err(|_| Error::validation("values", format!("unknown propagator {raw:?}")))?;
            Ok(Override::Propagator(propagator_kind(arg, 0)))
        }
    }
}

fn propagator_kind(arg: PropagatorArg, samples: usize) -> PropagatorKind {
    match arg {
        PropagatorArg::Linear => PropagatorKind::LinearGaussian,
        PropagatorArg::Ut => PropagatorKind::UnscentedTransform,
        PropagatorArg::Mc => PropagatorKind::MonteCarlo { samples },
    }
}

/// Sweep table.
pub fn sweep_csv(axis: Axis, values: &[String], rows: &[BatchRow]) -> String {
    let axis_name = match axis {
        Axis::Epsilon => "epsilon",
        Axis::QScale => "q_scale",
        Axis::Propagator => "propagator",
    };
    let mut s = String::from(
        "axis,value,propagator,runs,completed,failed_seeds,mean_min_distance_km,std_min_distance_km,\
         mean_total_delta_v_kms,std_total_delta_v_kms,collisions\n",
    );
    let per_value = rows.len() / values.len().max(1);
    for (i, r) in rows.iter().enumerate() {
        let value = values[i / per_value.max(1)].trim();
        let failed: Vec<String> = r.failed_seeds.iter().map(|s| s.to_string()).collect();
        let _ = writeln!(
            s,
            "{axis_name},{value},{},{},{},{},{},{},{},{},{}",
            r.scenario.propagator.name(),
            r.seeds.len(),
            r.min_distances.len(),
            failed.join(" "),
            r.mean_min_distance,
            r.std_min_distance,
            r.mean_delta_v,
            r.std_delta_v,
            r.collisions
        );
    }
    s
}

pub fn cmd_sweep(
    config: Option<&Path>,
    axis: Axis,
    values: &[String],
    runs: usize,
    propagators: &[PropagatorArg],
    seed: Option<u64>,
    out: &Path,
) -> Result<Vec<BatchRow>> {
    if values.is_empty() {
        return Err(Error::validation("values", "at least one value is required"));
    }
    if runs == 0 {
        return Err(Error::validation("runs", "must be at least 1"));
    }
    let mut doc = load_document(config)?;
    if let Some(s) = seed {
        doc.seed = s;
    }
    let scenario = doc.to_scenario()?;
    let samples = doc.mc_samples;
    let crossed: Vec<Option<PropagatorKind>> = if axis == Axis::Propagator || propagators.is_empty() {
        vec![None]
    } else {
        propagators.iter().map(|p| Some(propagator_kind(*p, samples))).collect()
    };
    let mut points = Vec::new();
    for raw in values {
        let mut o = parse_value(axis, raw)?;
        if let Override::Propagator(PropagatorKind::MonteCarlo { .. }) = o {
            o = Override::Propagator(PropagatorKind::MonteCarlo { samples });
        }
        for p in &crossed {
            let mut point = vec![o];
            if let Some(kind) = p {
                point.push(Override::Propagator(*kind));
            }
            points.push(point);
        }
    }
    let manifest = write_manifest(out, &doc, scenario.seed, &["sweep.csv"])?;
    with_manifest(manifest, || {
        let rows = run_batch(&scenario, runs, &points, scenario.seed)?;
        write_file(&out.join("sweep.csv"), &sweep_csv(axis, values, &rows))?;
        Ok(rows)
    })
}

pub fn cmd_validate(config: &Path) -> Result<String> {
    let doc = read_config_document(config)?;
    doc.to_scenario()?;
    doc.hash()
}

/// Parses `args` (including the program name) and runs the command. Returns
/// the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Run {
            config,
            seed,
            propagator,
            epsilon,
            out,
            no_control,
        } => cmd_run(config.as_deref(), seed, propagator, epsilon, no_control, &out).map(|o| {
            println!(
                "min_distance_km={} total_delta_v_kms={} collision={}",
                o.summary.min_distance_km, o.summary.total_delta_v_kms, o.summary.collision
            );
            if o.summary.collision {
                2
            } else {
                0
            }
        }),
        Command::Sweep {
            config,
            axis,
            values,
            runs,
            propagators,
            seed,
            out,
        } => cmd_sweep(config.as_deref(), axis, &values, runs, &propagators, seed, &out).map(|rows| {
            print!("{}", sweep_csv(axis, &values, &rows));
            0
        }),
        Command::Validate { config } => cmd_validate(&config).map(|hash| {
            println!("ok {hash}");
            0
        }),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
