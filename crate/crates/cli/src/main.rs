use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::anyhow;
use clap::{Parser, Subcommand};

use scmcts::checkpoint::load_checkpoint;
use scmcts::commands::{ablate, search_debug, Session};
use scmcts::config::{dump_config, load_config};
use scmcts_core::pipeline::{AblationVariant, RunConfig};

#[derive(Parser)]
#[command(name = "scmcts", version, about = "Self-correcting step-level search on synthetic arithmetic")]
struct Cli {
    /// TOML config; defaults are used for anything it leaves out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Training seed (ablate: benchmark seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, env = "SCMCTS_OUT", default_value = "scmcts-out")]
    out: PathBuf,
    /// baseline, isc-only, mcts-dpo-only or ours.
    #[arg(long, global = true)]
    variant: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the benchmark to tasks.jsonl.
    GenTasks,
    /// Stage I from the initial policy.
    Stage1,
    /// Stage II from stage1.ckpt (or the initial policy).
    Stage2 {
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Greedy accuracy of the latest checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// All four variants over the configured seeds.
    Ablate,
    /// Dump one search tree.
    SearchDebug {
        #[arg(long)]
        difficulty: Option<usize>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// gen-tasks, stage1, stage2, eval.
    Run,
    /// Print the effective config.
    DumpConfig,
}

fn parse_variant(name: &str) -> anyhow::Result<AblationVariant> {
    AblationVariant::from_name(name).ok_or_else(|| {
        let known: Vec<&str> = AblationVariant::ALL.iter().map(|v| v.name()).collect();
        anyhow!("unknown variant `{name}` (expected one of: {})", known.join(", "))
    })
}

fn load(path: &Path) -> anyhow::Result<scmcts_core::policy::PolicyParams> {
    Ok(load_checkpoint(path)?)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut config = match &cli.config {
        Some(path) => load_config(path)?,
        None => RunConfig::default(),
    };
    let variant = cli.variant.as_deref().map(parse_variant).transpose()?;
    if let (Some(v), false) = (variant, matches!(cli.command, Command::Ablate)) {
        config = v.apply(&config);
    }
    let seed = cli.seed.unwrap_or(match cli.command {
        Command::Ablate => config.pipeline.benchmark_seed,
        _ => config.pipeline.seeds[0],
    });

    match cli.command {
        Command::DumpConfig => {
            config.validate()?;
            print!("{}", dump_config(&config));
        }
        Command::GenTasks => {
            let session = Session::open(config, seed, &cli.out)?;
            let tasks = session.gen_tasks()?;
            println!("{} tasks -> {}", tasks.len(), session.paths.tasks().display());
        }
        Command::Stage1 => {
            let mut session = Session::open(config, seed, &cli.out)?;
            session.write_manifest("stage1", variant)?;
            let initial = session.initial()?;
            session.stage1(&initial)?;
            println!("stage1 -> {}", session.paths.checkpoint("stage1").display());
        }
        Command::Stage2 { init } => {
            let mut session = Session::open(config, seed, &cli.out)?;
            session.write_manifest("stage2", variant)?;
            let stage1 = session.paths.checkpoint("stage1");
            let start = match init {
                Some(path) => load(&path)?,
                None if session.config.pipeline.stage1 && stage1.exists() => load(&stage1)?,
                None => session.initial()?,
            };
            let benchmark = session.benchmark()?;
            session.stage2(&start, &benchmark)?;
            println!("stage2 -> {}", session.paths.checkpoint("stage2").display());
        }
        Command::Eval { checkpoint } => {
            let mut session = Session::open(config, seed, &cli.out)?;
            let params = match checkpoint {
                Some(path) => load(&path)?,
                None => session.latest_checkpoint()?,
            };
            let benchmark = session.benchmark()?;
            let accuracy = session.eval(&params, &benchmark)?;
            println!("accuracy {accuracy:.4} on {} tasks", benchmark.len());
        }
        Command::Ablate => {
            let variants = match variant {
                Some(v) => vec![v],
                None => AblationVariant::ALL.to_vec(),
            };
            for report in ablate(&config, &variants, seed, &cli.out)? {
                let accs: Vec<String> = report.accuracies().iter().map(|a| format!("{a:.3}")).collect();
                print!("{:<14} median {:.3}  per-seed [{}]", report.variant.name(), report.median_accuracy, accs.join(", "));
                match report.median_turn2_accuracy {
                    Some(t) => println!("  turn-2 median {t:.3}"),
                    None => println!(),
                }
            }
        }
        Command::SearchDebug { difficulty, checkpoint } => {
            let difficulty = difficulty.unwrap_or(config.env.max_difficulty);
            let session = Session::open(config, seed, &cli.out)?;
            let params = match checkpoint {
                Some(path) => load(&path)?,
                None => session.latest_checkpoint()?,
            };
            let path = search_debug(&session, &params, difficulty)?;
            println!("tree -> {}", path.display());
        }
        Command::Run => {
            let mut session = Session::open(config, seed, &cli.out)?;
            let accuracy = session.run_full(variant)?;
            println!("accuracy {accuracy:.4}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
