//! Generates a synthetic task stream and prints per-task statistics.
//!
//! cargo run --example synth_stream -- [output-dir]

use ramcg::graph::{synth_stream, write_sequence, SynthStreamConfig};

fn main() -> ramcg::Result<()> {
    let cfg = SynthStreamConfig {
        num_tasks: 4,
        ..Default::default()
    };
    let stream = synth_stream(&cfg)?;
    println!("task  nodes  edges  mean_degree  class_shares");
    for (t, task) in stream.sequence.tasks().iter().enumerate() {
        let n = task.num_nodes();
        let mut counts = vec![0usize; task.num_classes];
        for y in task.labels.iter().flatten() {
            counts[*y] += 1;
        }
        let shares: Vec<String> = counts.iter().map(|c| format!("{:.2}", *c as f64 / n as f64)).collect();
        println!(
            "{:>4}  {n:>5}  {:>5}  {:>11.2}  {}",
            t + 1,
            task.edges.len(),
            2.0 * task.edges.len() as f64 / n as f64,
            shares.join(" ")
        );
    }
    for w in &stream.warnings {
        println!("warning: {w}");
    }
    if let Some(dir) = std::env::args().nth(1) {
        write_sequence(&stream.sequence, dir.as_ref(), &stream.warnings)?;
        println!("wrote {dir}");
    }
    Ok(())
}
