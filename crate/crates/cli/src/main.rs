use std::path::PathBuf;
use std::process::ExitCode;

use articulate::config::{RosterItem, RunConfig};
use articulate::eval::report_csv;
use articulate::kinematics::Category;
use articulate::pipeline::{cmd_eval, cmd_gen_data, cmd_infer, cmd_train, rounds_summary};
use articulate::{Error, Result};
use clap::{Args, Parser, Subcommand};

/// Discover interaction modes of articulated objects from depth.
#[derive(Parser)]
#[command(name = "articulate", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads for data generation and evaluation.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain the depth encoder and collect an interaction dataset.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Overrides the number of collection rounds.
        #[arg(long)]
        rounds: Option<usize>,
        /// Overrides the episodes per entry and round.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Train the interaction model (and goal selector) on a dataset.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset written by `gen-data`.
        #[arg(long)]
        data: PathBuf,
        /// Overrides the number of training steps.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Evaluate the random policy and, given a checkpoint, the learned ones.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Overrides the trials per (tier, category, policy).
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Propose one action for an object and execute it in simulation.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// `category:instance:fraction[,fraction...]`, e.g. `cabinet-prismatic:0:0.3`.
        #[arg(long)]
        object: String,
        /// Goal depth image (16-bit PGM, millimeters) from the first camera.
        #[arg(long)]
        goal: Option<PathBuf>,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn parse_object(spec: &str) -> Result<RosterItem> {
    let bad = || Error::Config(format!("object `{spec}` is not `category:instance:fractions`"));
    let mut parts = spec.split(':');
    let (Some(cat), Some(inst), Some(fr), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
        return Err(bad());
    };
    let category: Category = cat.parse().map_err(|e: Error| Error::Config(e.to_string()))?;
    let instance = inst.parse().map_err(|_| bad())?;
    let fractions = fr.split(',').map(|v| v.trim().parse::<f64>().map_err(|_| bad())).collect::<Result<Vec<_>>>()?;
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(Error::Config("object state fractions must lie in [0, 1]".into()));
    }
    if fractions.len() != 1 && fractions.len() != category.joint_count() {
        return Err(Error::Config(format!("{category} takes 1 or {} state fractions", category.joint_count())));
    }
    Ok(RosterItem { category, instance, fractions })
}

fn echo(cfg: &RunConfig) -> Result<()> {
    println!("# resolved configuration (seed {})\n{}", cfg.seed, cfg.to_toml()?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { common, rounds, episodes } => {
            let mut cfg = load_config(&common)?;
            if let Some(r) = rounds {
                cfg.data.rounds = r;
            }
            if let Some(m) = episodes {
                cfg.data.episodes_per_round = m;
            }
            cfg.validate()?;
            echo(&cfg)?;
            let data = cmd_gen_data(&cfg, &common.out, common.jobs)?;
            print!("{}", rounds_summary(&data.manifest));
            println!("wrote {} records to {}", data.records.len(), common.out.display());
        }
        Command::Train { common, data, steps } => {
            let mut cfg = load_config(&common)?;
            if let Some(s) = steps {
                cfg.train.steps = s;
            }
            cfg.validate()?;
            echo(&cfg)?;
            let t = cmd_train(&cfg, &data, &common.out)?;
            if let (Some(first), Some(last)) = (t.curve.first(), t.curve.last()) {
                println!("total loss {:.4} -> {:.4} over {} steps", first.total, last.total, t.curve.len());
            }
            if let (Some(first), Some(last)) = (t.goal_curve.first(), t.goal_curve.last()) {
                println!("goal loss {:.4} -> {:.4} over {} steps", first.total, last.total, t.goal_curve.len());
            }
            println!("wrote checkpoint to {}", common.out.display());
        }
        Command::Eval { common, checkpoint, trials } => {
            let mut cfg = load_config(&common)?;
            if let Some(n) = trials {
                cfg.eval.trials = n;
            }
            cfg.validate()?;
            echo(&cfg)?;
            let ev = cmd_eval(&cfg, checkpoint.as_deref(), &common.out, common.jobs)?;
            print!("{}", report_csv(&ev.rows));
        }
        Command::Infer { common, checkpoint, object, goal } => {
            let cfg = load_config(&common)?;
            cfg.validate()?;
            echo(&cfg)?;
            let item = parse_object(&object)?;
            let res = cmd_infer(&cfg, &checkpoint, &item, goal.as_deref(), Some(&common.out))?;
            print!("{}", res.describe());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
