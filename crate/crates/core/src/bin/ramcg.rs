use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ramcg::commands::{cmd_eval, cmd_report, cmd_run, cmd_sweep, cmd_synth};
use ramcg::config::ExperimentConfig;
use ramcg::metrics::{acc_at, bwf_at};
use ramcg::{Error, Result};

/// Relation-aware continual node classification on graph streams.
#[derive(Parser)]
#[command(name = "ramcg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic task stream into --out.
    Synth(Common),
    /// Train and evaluate one learner, writing a run directory to --out.
    Run(Common),
    /// Re-evaluate one task from a run directory's checkpoint.
    Eval {
        run_dir: PathBuf,
        /// 1-based task index.
        #[arg(long)]
        task: usize,
    },
    /// Run the sweep.channels × sweep.ratios grid into --out.
    Sweep(Common),
    /// Summarise finished run directories.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Also write the table to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Seed for both training and stream generation.
    #[arg(long)]
    seed: Option<u64>,
    /// ramcg, retrained or joint.
    #[arg(long)]
    baseline: Option<String>,
    /// none, no_encoder or plain_gcn.
    #[arg(long)]
    ablation: Option<String>,
    /// Task-sequence directory to train on instead of a generated stream.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long, default_value_t = true, num_args = 0..=1, default_missing_value = "true")]
    deterministic: bool,
    /// Replace a non-empty output directory.
    #[arg(long)]
    force: bool,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.plan.seed = seed;
            cfg.synth.seed = seed;
        }
        if let Some(b) = &self.baseline {
            cfg.set("baseline", b)?;
        }
        if let Some(a) = &self.ablation {
            cfg.set("ablation", a)?;
        }
        if let Some(d) = &self.dataset {
            cfg.dataset = Some(d.clone());
        }
        cfg.plan.deterministic = self.deterministic;
        for kv in &self.sets {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Synth(c) => {
            let seq = cmd_synth(&c.resolve()?, &c.out, c.force)?;
            println!("wrote {} tasks to {}", seq.len(), c.out.display());
        }
        Command::Run(c) => {
            let r = cmd_run(&c.resolve()?, &c.out, c.force)?;
            let t = r.steps();
            print!("tasks {t}  acc {:.6}", acc_at(&r, t)?);
            if t >= 2 {
                print!("  bwf {:.6}", bwf_at(&r, t)?);
            }
            println!("  -> {}", c.out.display());
        }
        Command::Eval { run_dir, task } => {
            println!("{:.6}", cmd_eval(&run_dir, task)?);
        }
        Command::Sweep(c) => {
            let rows = cmd_sweep(&c.resolve()?, &c.out, c.force)?;
            println!("{} cells -> {}", rows.len(), c.out.join(ramcg::commands::SWEEP_FILE).display());
        }
        Command::Report { runs, out } => {
            let table = cmd_report(&runs)?;
            print!("{table}");
            if let Some(path) = out {
                std::fs::write(&path, &table).map_err(|e| Error::Io { path, source: e })?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
