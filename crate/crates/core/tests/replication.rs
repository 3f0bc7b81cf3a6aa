use nandsim::harness::{run_characterization_replication, Experiment, ExperimentConfig, ModeName, RECOVERY_FLOOR};

#[test]
fn monte_carlo_replication_recovers_rows_and_gamma() {
    let mut c = ExperimentConfig::with_seed(1);
    c.mode = ModeName::MonteCarlo;
    let r = run_characterization_replication(&Experiment::new(&c).unwrap()).unwrap();
    assert_eq!(r.rows.len(), 13);
    let mut bad = Vec::new();
    for row in &r.rows {
        let got = row.fit.coeffs.as_array();
        for (j, (g, want)) in got.iter().zip(row.reference.as_array()).enumerate() {
            if want.abs() <= RECOVERY_FLOOR {
                continue;
            }
            let rel = ((g - want) / want).abs();
            println!("{:<9} p{j} {:>13.6e} vs {:>13.6e} ({}) rel {:.3}", row.variable.name(), g, want, row.reference_kind, rel);
            if rel > 0.10 {
                bad.push(format!("{} p{j} rel {rel:.3}", row.variable.name()));
            }
        }
    }
    assert!(bad.is_empty(), "parameters off by more than 10%: {bad:?}");
    let g = r.pooled_gamma().unwrap();
    println!("gamma all: shape {:.3} scale {:.3e} KL {:.4}", g.fit.shape, g.fit.scale, g.kl.nats);
    assert!(g.kl.nats < 0.1, "KL {}", g.kl.nats);
}
