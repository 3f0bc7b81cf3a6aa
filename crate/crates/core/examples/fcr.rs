//! Periodic refresh keeps retention age bounded at the cost of P/E cycles.

use nandsim::controller::fcr_refresh;
use nandsim::models::{ErrorModels, DAY_S};
use nandsim::sim::{BlockAddress, ChipGeometry, FlashSim, Mode};

fn main() -> nandsim::Result<()> {
    let g = ChipGeometry {
        n_chips: 1,
        blocks_per_chip: 2,
        wordlines_per_block: 8,
        cells_per_wordline: 1024,
    };
    let mut sim = FlashSim::new(g, Mode::MonteCarlo, ErrorModels::calibrated(8), 2)?;
    let a = BlockAddress { chip: 0, block: 0 };
    sim.set_pec(a, 5000)?;
    sim.program_block_random(a)?;
    let mut fcr = fcr_refresh(&sim, 3.0 * DAY_S)?;
    for day in [1.0, 2.5, 4.0, 10.0, 24.0] {
        let dt = day * DAY_S - sim.clock_s();
        let n = fcr.advance(&mut sim, dt)?;
        println!(
            "day {day:>4}: {n} rewrites, pec {}, retention {:.1} d",
            sim.block(a)?.pec,
            sim.retention_s(a)? / DAY_S
        );
    }
    Ok(())
}
