//! Train the retention-aware Vopt model online and compare its reads with a
//! retention-agnostic controller.

use nandsim::controller::{policy_state_of_the_art, BlockMetadata, Remar, T_REF_S};
use nandsim::models::{ErrorModels, DAY_S};
use nandsim::sim::{BlockAddress, ChipGeometry, FlashSim, Mode};

fn main() -> nandsim::Result<()> {
    let g = ChipGeometry {
        n_chips: 1,
        blocks_per_chip: 6,
        wordlines_per_block: 32,
        cells_per_wordline: 4096,
    };
    let mut sim = FlashSim::new(g, Mode::Analytic, ErrorModels::calibrated(32), 5)?;
    let mut remar = Remar::new();
    for (b, pec) in [0, 2000, 4000, 6000, 8000, 10_000].into_iter().enumerate() {
        let a = BlockAddress { chip: 0, block: b };
        sim.set_pec(a, pec)?;
        sim.program_block_random(a)?;
    }
    // sample every block at several ages
    for dt in [420.0, 3000.0, 80_000.0, 6.0 * DAY_S, 17.0 * DAY_S] {
        sim.advance_clock(dt)?;
        for b in 0..6 {
            remar.observe_block(&sim, BlockAddress { chip: 0, block: b })?;
        }
    }
    println!("{} samples, fits: {:?}", remar.samples().len(), remar.fits().map(|f| f.vb.coeffs));

    let now = sim.clock_s();
    println!("{:>6} {:>12} {:>12}", "pec", "agnostic", "remar");
    for b in 0..6 {
        let a = BlockAddress { chip: 0, block: b };
        let meta = BlockMetadata::from_sim(&sim, a)?;
        let sota = policy_state_of_the_art(&sim.models.wear, &meta, T_REF_S)?;
        let v = remar.predict(&meta, now)?;
        let r = |vr| -> nandsim::Result<f64> {
            let p = sim.measure_block_rber(a, &|_| Ok(vr))?;
            Ok(p.iter().map(|x| x.rber).sum::<f64>() / p.len() as f64)
        };
        println!("{:>6} {:>12.3e} {:>12.3e}", meta.pec, r(sota)?, r(v)?);
    }
    Ok(())
}
