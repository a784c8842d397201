//! Saves a trained model, loads it back, and re-evaluates every task.
//!
//! cargo run --release --example checkpoint_roundtrip

use ramcg::checkpoint::{load_ramcg, save_ramcg};
use ramcg::graph::{synth_stream, SynthStreamConfig};
use ramcg::model::TrainPlan;
use ramcg::trainer::{evaluate_task, run_continual};

fn main() -> ramcg::Result<()> {
    let seq = synth_stream(&SynthStreamConfig {
        num_tasks: 3,
        nodes_per_task: 150,
        ..Default::default()
    })?
    .sequence;
    let plan = TrainPlan {
        epochs_per_task: 60,
        ..Default::default()
    };
    let tr = run_continual(&seq, &plan)?;
    let dir = std::env::temp_dir().join(format!("ramcg-checkpoint-{}", std::process::id()));
    save_ramcg(&tr.model, seq.feature_dim(), &dir)?;
    let loaded = load_ramcg(&plan, &dir)?;
    let last = tr.rmatrix().row(seq.len()).expect("every task evaluated");
    for (t, task) in seq.tasks().iter().enumerate() {
        let h = loaded.encode(&task.features, &task.csr)?;
        let acc = evaluate_task(&loaded, &h, task, t)?;
        println!("task {}: trained {:.4}  reloaded {:.4}", t + 1, last[t], acc);
    }
    std::fs::remove_dir_all(&dir).ok();
    Ok(())
}
