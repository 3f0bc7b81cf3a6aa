//! Neighbor-aware re-read on a block with strong retention interference.

use nandsim::controller::{block_empirical_vopt, renac_reread};
use nandsim::models::{ErrorModels, RetentionInterferenceModel, DAY_S};
use nandsim::sim::{BlockAddress, ChipGeometry, FlashSim, Mode, PageAddress, PageType};

fn main() -> nandsim::Result<()> {
    let ri = RetentionInterferenceModel::symmetric(10.0);
    let mut models = ErrorModels::flat(4);
    models.retention_interference = ri;
    let g = ChipGeometry {
        n_chips: 1,
        blocks_per_chip: 1,
        wordlines_per_block: 4,
        cells_per_wordline: 50_000,
    };
    let mut sim = FlashSim::new(g, Mode::MonteCarlo, models, 11)?;
    let a = BlockAddress { chip: 0, block: 0 };
    sim.set_pec(a, 10_000)?;
    sim.program_block_random(a)?;
    let t = 24.0 * DAY_S;
    sim.advance_clock(t)?;
    let v = block_empirical_vopt(&sim, a)?;
    for pt in [PageType::Msb, PageType::Lsb] {
        let addr = PageAddress {
            chip: 0,
            block: 0,
            wordline: 1,
            page_type: pt,
        };
        let plain = sim.read_page(addr, &v)?.raw_errors;
        let reread = renac_reread(&mut sim, addr, &v, &ri, t)?.raw_errors;
        println!("{}: {plain} errors -> {reread} after re-read", pt.name());
    }
    Ok(())
}
