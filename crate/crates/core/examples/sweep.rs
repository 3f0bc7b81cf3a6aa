//! RBER of every read policy across wear, written as CSV.

use nandsim::harness::{run_rber_sweep, Experiment, ExperimentConfig, PecGrid};

fn main() -> nandsim::Result<()> {
    let mut cfg = ExperimentConfig::with_seed(7);
    cfg.pec_grid = PecGrid::List(vec![0, 2500, 5000, 7500, 10_000]);
    let r = run_rber_sweep(&Experiment::new(&cfg)?)?;
    for row in &r.rows {
        println!("{:>6} {:<12} avg {:.3e} worst {:.3e}", row.pec, row.policy.name(), row.avg_rber, row.worst_rber);
    }
    let path = std::env::temp_dir().join("nandsim_sweep.csv");
    r.write(&path)?;
    println!("wrote {}", path.display());
    Ok(())
}
