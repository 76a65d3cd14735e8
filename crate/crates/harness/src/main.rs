use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fgl_core::graph::save_graph;
use fgl_harness::config::SweepAxes;
use fgl_harness::experiment::build_graph;
use fgl_harness::{emit_results, run_experiment, ExperimentConfig, Result};

/// Federated graph learning simulator with label-distribution inference.
#[derive(Parser)]
#[command(name = "fgl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Federated training without the attack.
    Train(RunArgs),
    /// Attacked run of the base configuration (sweep axes ignored).
    Attack(RunArgs),
    /// Every arm of the sweep grid.
    Sweep(RunArgs),
    /// Write the configured synthetic graph as nodes.csv / edges.csv.
    GenData(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Run this single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated substrings selecting arms by name.
    #[arg(long)]
    arms: Option<String>,
}

fn load(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(filter) = &args.arms {
        cfg.arms = Some(filter.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let (args, cfg) = match cli.command {
        Command::Train(a) => {
            let mut cfg = load(&a)?;
            cfg.attack.enabled = false;
            cfg.sweep.attack_enabled.clear();
            (a, cfg)
        }
        Command::Attack(a) => {
            let mut cfg = load(&a)?;
            cfg.attack.enabled = true;
            cfg.sweep = SweepAxes::default();
            cfg.arms = None;
            (a, cfg)
        }
        Command::Sweep(a) => {
            let cfg = load(&a)?;
            (a, cfg)
        }
        Command::GenData(a) => {
            let cfg = load(&a)?;
            let seed = cfg.seeds[0];
            let g = build_graph(&cfg, seed)?;
            save_graph(&g, &a.out)?;
            eprintln!(
                "wrote {} nodes, {} edges to {}",
                g.num_nodes(),
                g.edges().len(),
                a.out.display()
            );
            return Ok(());
        }
    };
    let table = run_experiment(&cfg)?;
    let summary = emit_results(&table, &cfg, &args.out)?;
    for arm in &summary.arms {
        let line: Vec<String> = ["cos_sim", "js_div", "test_accuracy"]
            .iter()
            .filter_map(|m| arm.metrics.get(*m).map(|s| format!("{m}={:.4}", s.mean)))
            .collect();
        println!("{}: {}", arm.arm, line.join(" "));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
