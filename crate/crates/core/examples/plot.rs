//! Render a sweep CSV to SVG.

use nandsim::harness::{emit_plots, run_rber_sweep, Experiment, ExperimentConfig};

fn main() -> nandsim::Result<()> {
    let dir = std::env::temp_dir().join("nandsim_plots");
    std::fs::create_dir_all(&dir)?;
    let csv = dir.join("sweep.csv");
    run_rber_sweep(&Experiment::new(&ExperimentConfig::with_seed(2))?)?.write(&csv)?;
    for p in emit_plots(&csv, &dir)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}
