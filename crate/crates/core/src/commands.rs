//! The operations behind the `ramcg` binary: generate a stream, run an
//! experiment into a run directory, re-evaluate a checkpoint, sweep the
//! channels × ratio grid, and summarise finished runs.
//!
//! A run directory holds:
//!
//! ```text
//! config.txt    every resolved config key
//! rmatrix.tsv   accuracy matrix
//! metrics.tsv   ACC / BWF per step
//! run.log       per-task training summary
//! checkpoint/   parameters and committed masks
//! eval.tsv      appended by `eval`
//! ```

use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::baselines::{joint_rmatrix, run_retrained};
use crate::checkpoint::{load_gcn, load_ramcg, read_meta, save_gcn, save_ramcg};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::graph::{synth_stream, write_sequence, TaskSequence};
use crate::metrics::{acc_at, bwf_at, emit_report, parse_rmatrix, RMatrix, RMATRIX_FILE};
use crate::model::Baseline;
use crate::trainer::{evaluate_task, ContinualTrainer, TaskSource};

pub const CONFIG_FILE: &str = "config.txt";
pub const LOG_FILE: &str = "run.log";
pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const EVAL_FILE: &str = "eval.tsv";
pub const SWEEP_FILE: &str = "sweep.tsv";

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Creates `dir`, refusing to reuse a non-empty one unless `force` is set,
/// in which case its contents are removed first.
pub fn prepare_out_dir(dir: &Path, force: bool) -> Result<()> {
    let non_empty = fs::read_dir(dir).map(|mut d| d.next().is_some()).unwrap_or(false);
    if non_empty {
        if !force {
            return Err(Error::Config(format!(
                "output directory {} is not empty (use --force to overwrite)",
                dir.display()
            )));
        }
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes the configured synthetic stream plus its config into `out`.
pub fn cmd_synth(cfg: &ExperimentConfig, out: &Path, force: bool) -> Result<TaskSequence> {
    cfg.validate()?;
    let stream = synth_stream(&cfg.synth)?;
    prepare_out_dir(out, force)?;
    write_sequence(&stream.sequence, out, &stream.warnings)?;
    write(&out.join(CONFIG_FILE), &cfg.to_text())?;
    Ok(stream.sequence)
}

/// Makes a relative dataset path absolute so the saved config works from anywhere.
fn resolve_dataset(cfg: &ExperimentConfig) -> Result<ExperimentConfig> {
    let mut cfg = cfg.clone();
    if let Some(dir) = &cfg.dataset {
        cfg.dataset = Some(fs::canonicalize(dir).map_err(|e| Error::io(dir, e))?);
    }
    Ok(cfg)
}

/// Runs the configured learner end to end and writes a run directory.
pub fn cmd_run(cfg: &ExperimentConfig, out: &Path, force: bool) -> Result<RMatrix> {
    cfg.validate()?;
    let cfg = resolve_dataset(cfg)?;
    let seq = cfg.load_sequence(Path::new(""))?;
    prepare_out_dir(out, force)?;
    write(&out.join(CONFIG_FILE), &cfg.to_text())?;
    let plan = &cfg.plan;
    let ckpt = out.join(CHECKPOINT_DIR);
    let mut log = format!(
        "baseline\t{}\nablation\t{}\ntasks\t{}\n",
        plan.baseline,
        plan.ablation,
        seq.len()
    );
    let rmatrix = match plan.baseline {
        Baseline::RamCg => {
            let mut trainer = ContinualTrainer::new(plan, seq.feature_dim(), seq.max_classes())?;
            trainer.run(&seq)?;
            for rep in trainer.reports() {
                writeln!(
                    log,
                    "task\t{}\tkept_after\t{}\tfirst_loss\t{:.6}\tlast_loss\t{:.6}\tselected\t{}\tnewly_claimed\t{}",
                    rep.task + 1,
                    rep.kept_after,
                    rep.losses.first().copied().unwrap_or(f64::NAN),
                    rep.losses.last().copied().unwrap_or(f64::NAN),
                    rep.selected,
                    rep.newly_claimed
                )
                .unwrap();
            }
            save_ramcg(&trainer.model, seq.feature_dim(), &ckpt)?;
            trainer.rmatrix().clone()
        }
        Baseline::Retrained | Baseline::Joint => {
            let outcome = if plan.baseline == Baseline::Retrained {
                run_retrained(&seq, plan)?
            } else {
                joint_rmatrix(&seq, plan)?
            };
            save_gcn(&outcome.model, plan.baseline, seq.feature_dim(), seq.len(), &ckpt)?;
            outcome.rmatrix
        }
    };
    emit_report(&rmatrix, out)?;
    let t = rmatrix.steps();
    write!(log, "final_acc\t{:.6}\n", acc_at(&rmatrix, t)?).unwrap();
    if t >= 2 {
        write!(log, "final_bwf\t{:.6}\n", bwf_at(&rmatrix, t)?).unwrap();
    }
    write(&out.join(LOG_FILE), &log)?;
    Ok(rmatrix)
}

/// Recomputes the accuracy on task `task` (1-based) from a run's checkpoint
/// and appends it to the run's `eval.tsv`.
pub fn cmd_eval(run_dir: &Path, task: usize) -> Result<f64> {
    let cfg = ExperimentConfig::from_file(&run_dir.join(CONFIG_FILE))?;
    let ckpt = run_dir.join(CHECKPOINT_DIR);
    let meta = read_meta(&ckpt)?;
    if task == 0 || task > meta.tasks {
        return Err(Error::Protocol(format!(
            "task {task} has no committed state in this checkpoint ({} tasks trained)",
            meta.tasks
        )));
    }
    let seq = cfg.load_sequence(run_dir)?;
    let t = task - 1;
    let graph = TaskSource::task(&seq, t)?;
    let acc = match meta.kind {
        Baseline::RamCg => {
            let model = load_ramcg(&cfg.plan, &ckpt)?;
            let h = model.encode(&graph.features, &graph.csr)?;
            evaluate_task(&model, &h, graph, t)?
        }
        _ => load_gcn(&cfg.plan, &ckpt)?.0.test_accuracy(graph)?,
    };
    let path = run_dir.join(EVAL_FILE);
    let fresh = !path.exists();
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    let mut line = String::new();
    if fresh {
        line.push_str("task\tacc\n");
    }
    writeln!(line, "{task}\t{acc:.6}").unwrap();
    f.write_all(line.as_bytes()).map_err(|e| Error::io(&path, e))?;
    Ok(acc)
}

/// One cell of a channels × ratio grid.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub channels: usize,
    pub ratio: f64,
    pub acc: f64,
    pub bwf: Option<f64>,
    pub dir: PathBuf,
}

pub fn sweep_cell_name(channels: usize, ratio: f64) -> String {
    format!("ch{channels}_r{ratio}")
}

/// Runs every (channels, ratio) cell into `out/<cell>/` and writes `sweep.tsv`.
/// A cell whose directory already holds a finished run with the identical
/// config is reused; a cell with a different config needs `force`.
pub fn cmd_sweep(cfg: &ExperimentConfig, out: &Path, force: bool) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let cfg = resolve_dataset(cfg)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut rows = Vec::new();
    for &channels in &cfg.sweep_channels {
        for &ratio in &cfg.sweep_ratios {
            let mut cell = cfg.clone();
            cell.plan.channels = channels;
            cell.plan.select_pct = 100.0 * ratio;
            let dir = out.join(sweep_cell_name(channels, ratio));
            let saved = fs::read_to_string(dir.join(CONFIG_FILE)).ok();
            let rmatrix = if saved.as_deref() == Some(cell.to_text().as_str()) && dir.join(RMATRIX_FILE).exists() {
                parse_rmatrix(&dir.join(RMATRIX_FILE))?
            } else {
                cmd_run(&cell, &dir, force)?
            };
            let t = rmatrix.steps();
            rows.push(SweepRow {
                channels,
                ratio,
                acc: acc_at(&rmatrix, t)?,
                bwf: if t >= 2 { Some(bwf_at(&rmatrix, t)?) } else { None },
                dir,
            });
        }
    }
    let mut text = String::from("channels\tratio\tacc\tbwf\n");
    for r in &rows {
        let bwf = r.bwf.map_or(String::new(), |b| format!("{b:.6}"));
        writeln!(text, "{}\t{}\t{:.6}\t{bwf}", r.channels, r.ratio, r.acc).unwrap();
    }
    write(&out.join(SWEEP_FILE), &text)?;
    Ok(rows)
}

/// Table of final ACC and BWF (in percent) per run directory, plus each
/// run's ACC curve.
pub fn cmd_report(runs: &[PathBuf]) -> Result<String> {
    if runs.is_empty() {
        return Err(Error::Config("report needs at least one run directory".into()));
    }
    let mut table = String::from("run\tsteps\tacc_pct\tbwf_pct\tacc_curve_pct\n");
    for dir in runs {
        let r = parse_rmatrix(&dir.join(RMATRIX_FILE))?;
        let t = r.steps();
        if t == 0 {
            return Err(Error::data(dir.join(RMATRIX_FILE), 0, "empty accuracy matrix"));
        }
        let bwf = if t >= 2 { format!("{:.2}", 100.0 * bwf_at(&r, t)?) } else { String::new() };
        let curve = (1..=t)
            .map(|i| acc_at(&r, i).map(|a| format!("{:.2}", 100.0 * a)))
            .collect::<Result<Vec<_>>>()?
            .join(",");
        writeln!(
            table,
            "{}\t{t}\t{:.2}\t{bwf}\t{curve}",
            dir.display(),
            100.0 * acc_at(&r, t)?
        )
        .unwrap();
    }
    Ok(table)
}
