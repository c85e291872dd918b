use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use linksched::checkpoint::Checkpoint;
use linksched::experiment::presets::describe;
use linksched::experiment::sweep::{self, default_sigma_grid, Learned, SweepPoint};
use linksched::experiment::{parse_sigma_grid, preset, resolve_scenario, run_sweep, PolicyName, ScenarioConfig, PRESET_NAMES};
use linksched::training::pretrained_policies;
use linksched::{Error, Result};

/// Decentralized link scheduling with collaboratively trained per-TX networks.
#[derive(Parser)]
#[command(name = "linksched", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List built-in scenarios, or print one as a TOML config.
    Presets {
        /// Print this preset's full config instead of the listing.
        #[arg(long, value_name = "NAME")]
        dump: Option<String>,
    },
    /// Supervised pretraining towards naive decisions at one σ point.
    Pretrain(PointArgs),
    /// Pretrain (or resume from `--init`) and jointly train at one σ point.
    Train {
        #[command(flatten)]
        point: PointArgs,
        /// Start joint training from this checkpoint instead of pretraining.
        #[arg(long, value_name = "FILE")]
        init: Option<PathBuf>,
    },
    /// Evaluate every scenario policy at one σ point; learned policies are
    /// loaded from the checkpoint directory.
    Eval {
        #[command(flatten)]
        point: PointArgs,
        #[arg(long, value_name = "CSV")]
        out: Option<PathBuf>,
    },
    /// Train and evaluate over a σ grid and write the CSV.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// `a:b:step`, a comma list, or a single value.
        #[arg(long, value_name = "GRID", default_value = "0:1:0.1")]
        sigma_grid: String,
        #[arg(long, value_name = "CSV")]
        out: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        checkpoint_dir: Option<PathBuf>,
    },
}

#[derive(Args)]
struct CommonArgs {
    /// Config file path or preset name.
    #[arg(long, value_name = "PATH|PRESET")]
    scenario: String,
    /// Root seed; defaults to the scenario's `train.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, default_value_t = default_jobs())]
    jobs: usize,
}

#[derive(Args)]
struct PointArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// CSI quality parameter in [0, 1].
    #[arg(long)]
    sigma: f64,
    #[arg(long, value_name = "DIR")]
    checkpoint_dir: Option<PathBuf>,
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

struct Loaded {
    scenario: ScenarioConfig,
    seed: u64,
}

fn load(common: &CommonArgs) -> Result<Loaded> {
    let scenario = resolve_scenario(&common.scenario)?;
    scenario.validate()?;
    let seed = common.seed.unwrap_or(scenario.train.seed);
    Ok(Loaded { scenario, seed })
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&sigma) {
        return Err(Error::InvalidArgument { what: "sigma", reason: format!("{sigma} is outside [0, 1]") });
    }
    Ok(())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })
}

fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument { what: "jobs", reason: e.to_string() })?;
    pool.install(f)
}

fn require_dir(dir: &Option<PathBuf>, command: &str) -> Result<PathBuf> {
    dir.clone().ok_or_else(|| Error::InvalidArgument {
        what: "checkpoint-dir",
        reason: format!("`{command}` needs --checkpoint-dir"),
    })
}

fn presets(dump: Option<String>) -> Result<()> {
    match dump {
        Some(name) => {
            let s = preset(&name).ok_or_else(|| Error::InvalidArgument {
                what: "preset",
                reason: format!("unknown preset `{name}` (available: {})", PRESET_NAMES.join(", ")),
            })?;
            print!("{}", s.to_toml());
        }
        None => {
            for name in PRESET_NAMES {
                println!("{name:<20} {}", describe(name));
            }
        }
    }
    Ok(())
}

fn pretrain(args: PointArgs) -> Result<()> {
    check_sigma(args.sigma)?;
    let dir = require_dir(&args.checkpoint_dir, "pretrain")?;
    let Loaded { scenario, seed } = load(&args.common)?;
    let point = SweepPoint { scenario: &scenario, sigma: args.sigma, root_seed: seed };
    let policies = with_pool(args.common.jobs, || {
        pretrained_policies(&point.train_set()?, &point.train_config(), point.rate_params())
    })?;
    ensure_dir(&dir)?;
    let path = dir.join("pretrained.json");
    Checkpoint::Cdnn { policies, seed: point.seed() }.save(&path)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn train(args: PointArgs, init: Option<PathBuf>) -> Result<()> {
    check_sigma(args.sigma)?;
    let dir = require_dir(&args.checkpoint_dir, "train")?;
    let Loaded { scenario, seed } = load(&args.common)?;
    let initial = match init {
        Some(path) => match Checkpoint::load(&path)? {
            Checkpoint::Cdnn { policies, .. } => Some(policies),
            Checkpoint::LocallyRobust { .. } => {
                return Err(Error::Checkpoint(format!("{}: --init needs a cdnn checkpoint", path.display())))
            }
        },
        None => None,
    };
    let point = SweepPoint { scenario: &scenario, sigma: args.sigma, root_seed: seed };
    ensure_dir(&dir)?;
    with_pool(args.common.jobs, || {
        let train_set = point.train_set()?;
        if scenario.policies.contains(&PolicyName::Cdnn) {
            point.train_cdnn(&train_set, initial, Some(&dir))?;
        }
        if scenario.policies.contains(&PolicyName::LocallyRobust) {
            point.train_locally_robust(&train_set, Some(&dir))?;
        }
        Ok(())
    })?;
    eprintln!("wrote checkpoints to {}", dir.display());
    Ok(())
}

fn load_learned(dir: Option<&Path>, scenario: &ScenarioConfig) -> Learned {
    let load_file = |name: &str| -> Option<Result<Checkpoint>> {
        let dir = dir?;
        let path = dir.join(name);
        Some(Checkpoint::load(&path))
    };
    let mut learned = Learned::default();
    if scenario.policies.contains(&PolicyName::Cdnn) {
        learned.cdnn = load_file("cdnn.json").map(|r| match r? {
            Checkpoint::Cdnn { policies, .. } => Ok(policies),
            _ => Err(Error::Checkpoint("cdnn.json holds a locally_robust checkpoint".into())),
        });
    }
    if scenario.policies.contains(&PolicyName::LocallyRobust) {
        learned.locally_robust = load_file("locally_robust.json").map(|r| match r? {
            Checkpoint::LocallyRobust { set, .. } => Ok(set),
            _ => Err(Error::Checkpoint("locally_robust.json holds a cdnn checkpoint".into())),
        });
    }
    learned
}

fn eval(args: PointArgs, out: Option<PathBuf>) -> Result<()> {
    check_sigma(args.sigma)?;
    let Loaded { scenario, seed } = load(&args.common)?;
    let point = SweepPoint { scenario: &scenario, sigma: args.sigma, root_seed: seed };
    let learned = load_learned(args.checkpoint_dir.as_deref(), &scenario);
    for (name, err) in [
        ("cdnn", learned.cdnn.as_ref().and_then(|r| r.as_ref().err())),
        ("locally_robust", learned.locally_robust.as_ref().and_then(|r| r.as_ref().err())),
    ] {
        if let Some(e) = err {
            eprintln!("warning: {name}: {e}");
        }
    }
    let rows = with_pool(args.common.jobs, || point.evaluate(&point.eval_set()?, &learned))?;
    match out {
        Some(path) => sweep::write_csv(&path, &rows)?,
        None => print!("{}", sweep::to_csv(&rows)),
    }
    Ok(())
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::Presets { dump } => presets(dump),
        Command::Pretrain(args) => pretrain(args),
        Command::Train { point, init } => train(point, init),
        Command::Eval { point, out } => eval(point, out),
        Command::Sweep { common, sigma_grid, out, checkpoint_dir } => {
            let Loaded { scenario, seed } = load(&common)?;
            let grid = if sigma_grid.is_empty() { default_sigma_grid() } else { parse_sigma_grid(&sigma_grid)? };
            let rows = run_sweep(&scenario, &grid, seed, out.as_deref(), checkpoint_dir.as_deref(), common.jobs)?;
            if out.is_none() {
                print!("{}", sweep::to_csv(&rows));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
