//! Full continual run on the default synthetic stream: accuracy matrix,
//! ACC/BWF curve and the per-task early-keep epoch.
//!
//! cargo run --release --example continual_run -- [seed]

use ramcg::graph::{synth_stream, SynthStreamConfig};
use ramcg::metrics::{format_metrics, format_rmatrix};
use ramcg::model::TrainPlan;
use ramcg::trainer::run_continual;

fn main() -> ramcg::Result<()> {
    let seed = std::env::args().nth(1).map_or(0, |s| s.parse().expect("seed must be an integer"));
    let seq = synth_stream(&SynthStreamConfig {
        seed,
        ..Default::default()
    })?
    .sequence;
    let tr = run_continual(&seq, &TrainPlan { seed, ..Default::default() })?;
    for rep in tr.reports() {
        println!(
            "task {}: kept epoch {}, best val loss {}, loss {:.4} -> {:.4}",
            rep.task + 1,
            rep.kept_after,
            rep.best_val_loss.map_or("-".into(), |l| format!("{l:.4}")),
            rep.losses[0],
            rep.losses[rep.losses.len() - 1]
        );
    }
    println!("\naccuracy matrix\n{}", format_rmatrix(tr.rmatrix()));
    print!("{}", format_metrics(tr.rmatrix())?);
    Ok(())
}
