//! Endurance of each controller stack and the ECC parity it needs.

use nandsim::harness::{run_fcr, run_lifetime, Experiment, ExperimentConfig};

fn main() -> nandsim::Result<()> {
    let exp = Experiment::new(&ExperimentConfig::with_seed(1))?;
    let l = run_lifetime(&exp)?;
    for (i, s) in l.stacks.iter().enumerate() {
        println!(
            "{:<9} endurance {:>6}  x{:.2}  ECC overhead {:>5.2}%  reduction {:>5.1}%",
            s.name(),
            l.endurance[i],
            l.improvement(*s).unwrap_or(f64::NAN),
            100.0 * l.ecc_overhead[i],
            100.0 * l.ecc_reduction[i]
        );
    }
    let f = run_fcr(&exp)?;
    println!("refresh every 3 days: {} vs {} without", f.endurance_refresh, f.endurance_none);
    Ok(())
}
