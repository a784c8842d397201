//! Trains a short stream and shows how each task's top-c mask claims
//! backbone weights, and how many it shares with earlier tasks.
//!
//! cargo run --release --example subnetwork_masks

use ramcg::graph::{synth_stream, SynthStreamConfig};
use ramcg::model::TrainPlan;
use ramcg::trainer::ContinualTrainer;

fn main() -> ramcg::Result<()> {
    let seq = synth_stream(&SynthStreamConfig {
        num_tasks: 5,
        nodes_per_task: 150,
        ..Default::default()
    })?
    .sequence;
    let plan = TrainPlan {
        epochs_per_task: 60,
        select_pct: 50.0,
        ..Default::default()
    };
    let mut tr = ContinualTrainer::new(&plan, seq.feature_dim(), seq.max_classes())?;
    tr.run(&seq)?;
    let n = tr.model.backbone.num_weights();
    println!("backbone weights: {n}, selected per task: {}", tr.reports()[0].selected);
    println!("task  reused  fresh  claimed_total  free");
    for (t, rep) in tr.reports().iter().enumerate() {
        let union = tr.model.registry.union_after(t)?.count();
        println!(
            "{:>4}  {:>6}  {:>5}  {:>13}  {:>4}",
            t + 1,
            rep.selected - rep.newly_claimed,
            rep.newly_claimed,
            union,
            n - union
        );
    }
    Ok(())
}
