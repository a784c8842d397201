//! Sequential retraining and joint training next to the continual learner
//! on one stream.
//!
//! cargo run --release --example baselines

use ramcg::baselines::{run_joint, run_retrained};
use ramcg::graph::{synth_stream, SynthStreamConfig};
use ramcg::metrics::{acc_at, bwf_at};
use ramcg::model::TrainPlan;
use ramcg::trainer::run_continual;

fn main() -> ramcg::Result<()> {
    let seq = synth_stream(&SynthStreamConfig::default())?.sequence;
    let plan = TrainPlan::default();
    let t = seq.len();

    let ramcg = run_continual(&seq, &plan)?;
    let retrained = run_retrained(&seq, &plan)?.rmatrix;
    let joint = run_joint(&seq, &plan)?;

    println!("learner    ACC     BWF");
    for (name, r) in [("ramcg", ramcg.rmatrix()), ("retrained", &retrained)] {
        println!("{name:<9} {:>6.2}  {:>6.2}", 100.0 * acc_at(r, t)?, 100.0 * bwf_at(r, t)?);
    }
    println!("{:<9} {:>6.2}       -", "joint", 100.0 * joint.iter().sum::<f64>() / t as f64);
    Ok(())
}
