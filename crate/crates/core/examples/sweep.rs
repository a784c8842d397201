//! A small channels × selection-ratio grid, written under the system temp
//! directory. Cells already present with the same config are reused.
//!
//! cargo run --release --example sweep

use ramcg::commands::cmd_sweep;
use ramcg::config::ExperimentConfig;

fn main() -> ramcg::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.apply_text(
        "synth.num_tasks = 4\nsynth.nodes_per_task = 150\nepochs = 80\nsweep.channels = 2,6\nsweep.ratios = 0.5,0.9\n",
        std::path::Path::new("example"),
    )?;
    let out = std::env::temp_dir().join("ramcg-sweep-example");
    let rows = cmd_sweep(&cfg, &out, true)?;
    println!("channels  ratio  ACC     BWF");
    for r in rows {
        println!("{:>8}  {:>5}  {:>6.2}  {:>6.2}", r.channels, r.ratio, 100.0 * r.acc, 100.0 * r.bwf.unwrap_or(0.0));
    }
    println!("grid written to {}", out.display());
    Ok(())
}
