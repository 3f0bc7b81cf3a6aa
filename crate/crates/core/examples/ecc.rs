//! Parity needed to reach the codeword failure target at a given RBER.

use nandsim::controller::{correctable_t, ecc_required_overhead, ecc_required_t, EccConfig};

fn main() -> nandsim::Result<()> {
    let ecc = EccConfig::default();
    println!("k={} m={} target={:e}", ecc.k, ecc.m, ecc.target);
    println!("correctable t at the RBER limit: {}", correctable_t(&ecc)?);
    for r in [1e-4, 3e-4, 1e-3, 2e-3, 3e-3, 5e-3] {
        println!("rber {r:>7.0e}: t = {:>4}, overhead {:>6.2}%", ecc_required_t(r, &ecc)?, 100.0 * ecc_required_overhead(r, &ecc)?);
    }
    Ok(())
}
