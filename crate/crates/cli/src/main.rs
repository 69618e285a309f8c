//! `navgym` command-line front end: train agents, evaluate them on fixed
//! start-goal couples, validate worlds and rebuild reports from stored traces.
//!
//! Exit status is 0 on success, 1 on a usage error and 2 on a runtime error.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use navgym::bench::{aggregate_report, compute_metrics, read_traces, run_evaluation, write_traces, BenchmarkReport};
use navgym::config::Parameters;
use navgym::drl::{write_training_log, PolicyFile, Trainer};
use navgym::World;

#[derive(Debug, Parser)]
#[command(name = "navgym", version, about = "Train and benchmark robot navigation agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train an agent and write its log and checkpoints.
    Train {
        /// Parameters file.
        #[arg(long)]
        config: PathBuf,
        /// Overrides both the training and the episode seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the `test` couples and write a benchmark report.
    Test {
        #[arg(long)]
        config: PathBuf,
        /// Agent checkpoint or scripted policy file.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Report CSV; the text table goes next to it with a `.txt` extension.
        #[arg(long, default_value = "report.csv")]
        report: PathBuf,
        /// Trace directory; defaults to `traces` beside the report.
        #[arg(long)]
        traces: Option<PathBuf>,
    },
    /// Load a world file and report the first invalid field.
    ValidateWorld { file: PathBuf },
    /// Recompute metrics and the report from a trace directory.
    Report {
        #[arg(long)]
        traces: PathBuf,
        /// World used for obstacle distances; defaults to the one in the manifest.
        #[arg(long)]
        world: Option<PathBuf>,
        /// Also write the report as CSV.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train { config, seed, out } => train(&config, seed, &out),
        Command::Test {
            config,
            checkpoint,
            report,
            traces,
        } => test(&config, &checkpoint, &report, traces),
        Command::ValidateWorld { file } => {
            let world = World::load(&file).with_context(|| format!("invalid world {}", file.display()))?;
            println!(
                "{}: ok ({} obstacles, {} spawn regions, {} goal regions)",
                file.display(),
                world.obstacles.len(),
                world.spawn_regions.len(),
                world.goal_regions.len()
            );
            Ok(())
        }
        Command::Report { traces, world, report } => rebuild_report(&traces, world, report.as_deref()),
    }
}

fn train(config: &Path, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut params = Parameters::load(config).with_context(|| format!("loading {}", config.display()))?;
    if let Some(s) = seed {
        params.training.seed = s;
        params.episode.seed = s;
    }
    let mut env = params.build_env()?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let every = params.training.checkpoint_every;
    if every.is_some() {
        fs::create_dir_all(out.join("checkpoints"))?;
    }
    let total = params.training.episodes;
    let mut trainer = Trainer::new(&env, params.training.clone())?;
    let mut log = Vec::new();
    // wall time is kept out of the training log so the log stays reproducible
    let mut timing = String::from("episode,wall_time_s\n");
    let t0 = Instant::now();
    while !trainer.is_finished() {
        let r = trainer.run_episode(&mut env)?;
        let elapsed = t0.elapsed().as_secs_f64();
        println!(
            "episode {}/{total}  steps {}  return {:.2}  {}  eps {:.3}  {elapsed:.1} s",
            r.episode + 1,
            r.steps,
            r.episode_return,
            r.outcome.as_str(),
            r.epsilon
        );
        let _ = writeln!(timing, "{},{elapsed}", r.episode);
        if every.is_some_and(|n| trainer.episode() % n == 0) {
            let path = out.join("checkpoints").join(format!("episode_{:05}.json", trainer.episode()));
            PolicyFile::Agent(Box::new(trainer.checkpoint())).save(&path)?;
        }
        log.push(r);
    }
    write_training_log(out.join("training_log.csv"), &log)?;
    fs::write(out.join("timing.csv"), timing)?;
    PolicyFile::Agent(Box::new(trainer.checkpoint())).save(out.join("checkpoint.json"))?;
    println!(
        "trained {} episodes, {} steps, {} updates; wrote {}",
        log.len(),
        trainer.total_steps(),
        trainer.updates(),
        out.display()
    );
    Ok(())
}

fn test(config: &Path, checkpoint: &Path, report: &Path, traces: Option<PathBuf>) -> Result<()> {
    let params = Parameters::load(config).with_context(|| format!("loading {}", config.display()))?;
    let mut env = params.build_env()?;
    let spec = params.benchmark(&env)?.clone();
    let policy = PolicyFile::load(checkpoint)?.into_policy(env.observation_dim(), &env.action_limits())?;
    let recorded = run_evaluation(&mut env, policy.as_ref(), &spec)?;

    let trace_dir = traces.unwrap_or_else(|| report.parent().unwrap_or(Path::new("")).join("traces"));
    let world_path = fs::canonicalize(&params.world).unwrap_or_else(|_| params.world.clone());
    write_traces(&trace_dir, &spec.label, Some(&world_path), &recorded)?;

    let rows = recorded
        .iter()
        .map(|t| compute_metrics(t, env.world()))
        .collect::<navgym::Result<Vec<_>>>()?;
    let summary = aggregate_report(rows.iter().map(|r| (spec.label.as_str(), r)));
    write_report(&summary, report)?;
    print!("{}", summary.to_text());
    Ok(())
}

fn write_report(summary: &BenchmarkReport, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, summary.to_csv()?).with_context(|| format!("writing {}", path.display()))?;
    let text = path.with_extension("txt");
    fs::write(&text, summary.to_text()).with_context(|| format!("writing {}", text.display()))?;
    Ok(())
}

fn rebuild_report(dir: &Path, world: Option<PathBuf>, report: Option<&Path>) -> Result<()> {
    let (manifest, traces) = read_traces(dir)?;
    let Some(world_path) = world.or(manifest.world.clone()) else {
        bail!("the manifest names no world; pass --world");
    };
    let world = World::load(&world_path)?;
    let rows = traces
        .iter()
        .map(|t| compute_metrics(t, &world))
        .collect::<navgym::Result<Vec<_>>>()?;
    let summary = aggregate_report(rows.iter().map(|r| (manifest.label.as_str(), r)));
    if let Some(path) = report {
        write_report(&summary, path)?;
    }
    print!("{}", summary.to_text());
    Ok(())
}
