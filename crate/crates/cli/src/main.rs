use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use planereg::classify::ClassConfig;
use planereg::detect::{detect_planes, DetectConfig};
use planereg::eval::{aggregate_with, correspondence_error, PairResult, VALID_CORR_ERROR};
use planereg::io::{
    read_correspondences, read_json, read_manifest, read_ply, read_transform, resolve_up, write_json,
    write_transform, MatchesFile, PlaneRecord, PlanesFile, PointCloud, TransformFile, UpSpec,
};
use planereg::pair_match::{match_views, NoMotion, ValidationConfig};
use planereg::par::configure_threads;
use planereg::toy_bench::{run_benchmark, write_csv, DEFAULT_LEVELS};
use planereg::tracking::{refine_motion, track_planes, TrackConfig};
use planereg::{Error, Plane, RigidMotion};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "planereg", version, about = "Plane-based registration of two indoor 3D views")]
struct Cli {
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Detect planes in a point cloud.
    Detect {
        cloud: PathBuf,
        /// Detection settings as JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Planes JSON; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate the motion taking view a onto view b.
    Register {
        a: PathBuf,
        b: PathBuf,
        /// "from-planes", "x,y,z" or "file:<path>".
        #[arg(long, default_value = "from-planes")]
        up_a: UpSpec,
        #[arg(long, default_value = "from-planes")]
        up_b: UpSpec,
        /// Transform JSON used as a prior; switches to plane tracking.
        #[arg(long)]
        prior: Option<PathBuf>,
        /// Detection settings as JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Support band for tracking (meters).
        #[arg(long)]
        support_dist: Option<f64>,
        /// Transform JSON; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        matches: Option<PathBuf>,
    },
    /// Run the synthetic noise benchmark and emit CSV rows.
    ToyBench {
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_LEVELS)]
        levels: Vec<f64>,
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score an estimated transform against ground-truth correspondences.
    Eval {
        #[arg(required_unless_present = "manifest")]
        transform: Option<PathBuf>,
        #[arg(required_unless_present = "manifest")]
        correspondences: Option<PathBuf>,
        /// Batch mode: JSON list of pairs; prints the aggregate report.
        #[arg(long, conflicts_with_all = ["transform", "correspondences"])]
        manifest: Option<PathBuf>,
        #[arg(long, default_value_t = VALID_CORR_ERROR)]
        threshold: f64,
    },
}

enum Failure {
    Error(Error),
    NoMotion(NoMotion),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Underconstrained(d) => Failure::NoMotion(NoMotion::Underconstrained(d)),
            e => Failure::Error(e),
        }
    }
}

type CliResult = Result<(), Failure>;

fn io_error(path: &Path, e: io::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source: e }
}

fn emit_json<T: Serialize>(out: Option<&Path>, value: &T) -> Result<(), Error> {
    match out {
        Some(path) => write_json(path, value),
        None => {
            println!("{}", serde_json::to_string_pretty(value)?);
            Ok(())
        }
    }
}

fn load_config<T: Default + serde::de::DeserializeOwned>(path: Option<&Path>) -> Result<T, Error> {
    path.map_or_else(|| Ok(T::default()), read_json)
}

fn detect(cloud: &PointCloud, cfg: &DetectConfig) -> Result<Vec<Plane>, Error> {
    detect_planes(&cloud.points, cloud.colors.as_deref(), cfg)
}

fn cmd_detect(cloud: &Path, config: Option<&Path>, out: Option<&Path>) -> CliResult {
    let cfg: DetectConfig = load_config(config)?;
    let planes = detect(&read_ply(cloud)?, &cfg)?;
    Ok(emit_json(out, &PlanesFile::new(&planes))?)
}

#[derive(Serialize)]
struct TrackedRecord {
    index: usize,
    support_ratio: f64,
    refined: PlaneRecord,
}

#[derive(Serialize)]
struct TrackedFile {
    tracked: Vec<TrackedRecord>,
}

struct RegisterArgs<'a> {
    a: &'a Path,
    b: &'a Path,
    up_a: &'a UpSpec,
    up_b: &'a UpSpec,
    prior: Option<&'a Path>,
    config: Option<&'a Path>,
    support_dist: Option<f64>,
    out: Option<&'a Path>,
    matches: Option<&'a Path>,
}

fn cmd_register(args: RegisterArgs) -> CliResult {
    let cfg: DetectConfig = load_config(args.config)?;
    let ccfg = ClassConfig::default();
    let cloud_a = read_ply(args.a)?;
    let cloud_b = read_ply(args.b)?;
    let planes_a = detect(&cloud_a, &cfg)?;
    let planes_b = detect(&cloud_b, &cfg)?;
    let up_a = resolve_up(args.up_a, &planes_a)?;
    let up_b = resolve_up(args.up_b, &planes_b)?;

    let motion = match args.prior {
        Some(prior) => {
            let prior = read_transform(prior)?;
            let mut tcfg = TrackConfig::default();
            if let Some(d) = args.support_dist {
                tcfg.support_dist = d;
            }
            let tracked = track_planes(&planes_a, &cloud_b.points, cloud_b.colors.as_deref(), &prior, &tcfg)?;
            if let Some(path) = args.matches {
                let file = TrackedFile {
                    tracked: tracked
                        .iter()
                        .map(|t| TrackedRecord {
                            index: t.index,
                            support_ratio: t.support_ratio,
                            refined: PlaneRecord::from(&t.refined),
                        })
                        .collect(),
                };
                write_json(path, &file)?;
            }
            if tracked.is_empty() {
                return Err(Failure::NoMotion(NoMotion::NoMatches));
            }
            refine_motion(&planes_a, &tracked, &up_a, &up_b, &prior, &ccfg)?.motion
        }
        None => {
            let reg = match_views(&planes_a, &planes_b, &up_a, &up_b, &ccfg, &ValidationConfig::default());
            if let Some(path) = args.matches {
                write_json(path, &MatchesFile::new(reg.matches.clone(), &reg.outcome))?;
            }
            reg.outcome.map_err(Failure::NoMotion)?.motion
        }
    };
    Ok(emit_transform(args.out, &motion)?)
}

fn emit_transform(out: Option<&Path>, m: &RigidMotion) -> Result<(), Error> {
    match out {
        Some(path) => write_transform(path, m),
        None => emit_json(None, &TransformFile::from_motion(m)),
    }
}

fn cmd_toy_bench(levels: &[f64], trials: usize, seed: u64, out: Option<&Path>) -> CliResult {
    let rows = run_benchmark(levels, trials, seed)?;
    match out {
        Some(path) => {
            let file = File::create(path).map_err(|e| io_error(path, e))?;
            write_csv(&rows, BufWriter::new(file))?;
        }
        None => write_csv(&rows, io::stdout().lock())?,
    }
    Ok(())
}

#[derive(Serialize)]
struct SingleEval {
    corr_error: f64,
    valid: bool,
}

fn cmd_eval(transform: Option<&Path>, corr: Option<&Path>, manifest: Option<&Path>, threshold: f64) -> CliResult {
    if !(threshold > 0.0 && threshold.is_finite()) {
        return Err(Error::InvalidThreshold(format!("eval threshold must be positive, got {threshold}")).into());
    }
    if let Some(manifest) = manifest {
        let m = read_manifest(manifest)?;
        let results = m
            .pairs
            .iter()
            .map(|entry| {
                let corr = read_correspondences(&entry.correspondences)?;
                let corr_error = match &entry.transform {
                    Some(t) => Some(correspondence_error(&read_transform(t)?, &corr)?),
                    None => None,
                };
                Ok(PairResult { registered: corr_error.is_some(), corr_error, elapsed_ms: entry.elapsed_ms })
            })
            .collect::<Result<Vec<_>, Error>>()?;
        return Ok(emit_json(None, &aggregate_with(&results, threshold))?);
    }
    let (Some(transform), Some(corr)) = (transform, corr) else {
        return Err(Error::InvalidConfig("eval needs a transform and a correspondence file".into()).into());
    };
    let e = correspondence_error(&read_transform(transform)?, &read_correspondences(corr)?)?;
    Ok(emit_json(None, &SingleEval { corr_error: e, valid: e < threshold })?)
}

fn run(cli: Cli) -> CliResult {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::InvalidConfig("--threads must be at least 1".into()).into());
        }
        configure_threads(n);
    }
    match &cli.command {
        Command::Detect { cloud, config, out } => cmd_detect(cloud, config.as_deref(), out.as_deref()),
        Command::Register { a, b, up_a, up_b, prior, config, support_dist, out, matches } => {
            cmd_register(RegisterArgs {
                a,
                b,
                up_a,
                up_b,
                prior: prior.as_deref(),
                config: config.as_deref(),
                support_dist: *support_dist,
                out: out.as_deref(),
                matches: matches.as_deref(),
            })
        }
        Command::ToyBench { levels, trials, seed, out } => cmd_toy_bench(levels, *trials, *seed, out.as_deref()),
        Command::Eval { transform, correspondences, manifest, threshold } => cmd_eval(
            transform.as_deref(),
            correspondences.as_deref(),
            manifest.as_deref(),
            *threshold,
        ),
    }
}

fn report(value: serde_json::Value) {
    let mut err = io::stderr().lock();
    let _ = writeln!(err, "{value}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report(serde_json::json!({ "error": "usage", "message": e.to_string() }));
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Error(e)) => {
            report(serde_json::json!({ "error": e.kind(), "message": e.to_string() }));
            ExitCode::from(1)
        }
        Err(Failure::NoMotion(n)) => {
            let missing = match &n {
                NoMotion::Underconstrained(d) => serde_json::to_value(d).unwrap_or_default(),
                _ => serde_json::Value::Null,
            };
            report(serde_json::json!({ "error": "no_motion", "reason": n.to_string(), "missing": missing }));
            ExitCode::from(2)
        }
    }
}
