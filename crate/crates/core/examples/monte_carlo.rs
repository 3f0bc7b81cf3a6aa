//! Program a block in Monte Carlo mode and compare measured page RBER with
//! the analytic expectation at the same read voltages.

use nandsim::controller::block_empirical_vopt;
use nandsim::models::{ErrorModels, DAY_S};
use nandsim::sim::{BlockAddress, ChipGeometry, FlashSim, Mode};

fn main() -> nandsim::Result<()> {
    let g = ChipGeometry {
        n_chips: 1,
        blocks_per_chip: 1,
        wordlines_per_block: 32,
        cells_per_wordline: 16_384,
    };
    let a = BlockAddress { chip: 0, block: 0 };
    let mut out = Vec::new();
    let mut vrefs = None;
    for mode in [Mode::Analytic, Mode::MonteCarlo] {
        let mut sim = FlashSim::new(g, mode, ErrorModels::calibrated(32), 42)?;
        sim.set_pec(a, 8000)?;
        sim.program_block_random(a)?;
        sim.advance_clock(7.0 * DAY_S)?;
        let found = block_empirical_vopt(&sim, a)?;
        println!("{mode:?}: block Vopt ({:.1}, {:.1}, {:.1})", found.va(), found.vb(), found.vc());
        let v = *vrefs.get_or_insert(found);
        out.push(sim.measure_block_rber(a, &|_| Ok(v))?);
    }
    println!("{:>5} {:>4} {:>10} {:>10}", "layer", "page", "mc", "analytic");
    for (e, m) in out[0].iter().zip(&out[1]).step_by(8) {
        println!("{:>5} {:>4} {:>10.3e} {:>10.3e}", m.layer, m.page_type.name(), m.rber, e.rber);
    }
    Ok(())
}
