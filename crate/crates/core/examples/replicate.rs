//! Regenerate characterization data in Monte Carlo mode and refit the model.

use nandsim::harness::{run_characterization_replication, Experiment, ExperimentConfig, ModeName};

fn main() -> nandsim::Result<()> {
    let mut cfg = ExperimentConfig::with_seed(3);
    cfg.mode = ModeName::MonteCarlo;
    cfg.replication.cells = 2048;
    cfg.replication.gamma_blocks = 4;
    let r = run_characterization_replication(&Experiment::new(&cfg)?)?;
    for row in &r.rows {
        println!(
            "{:<9} {:?}  adj R2 {:.3}  max rel err {:.3} ({})",
            row.variable.name(),
            row.fit.coeffs.as_array().map(|x| format!("{x:.3e}")),
            row.fit.adj_r2,
            row.max_rel_error(),
            row.reference_kind
        );
    }
    for g in &r.gamma {
        println!("gamma over {} pages ({}): shape {:.2}, KL {:.3} nats", g.pages, g.pages_of, g.fit.shape, g.kl.nats);
    }
    Ok(())
}
