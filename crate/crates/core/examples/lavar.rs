//! Learn per-layer read offsets on one block and apply them to another.

use nandsim::controller::{block_empirical_vopt, lavar_learn, lavar_read_vrefs};
use nandsim::models::{ErrorModels, DAY_S};
use nandsim::sim::{BlockAddress, ChipGeometry, FlashSim, Mode, PageType};

fn avg(p: &[nandsim::sim::PageRber]) -> f64 {
    p.iter().map(|x| x.rber).sum::<f64>() / p.len() as f64
}

fn main() -> nandsim::Result<()> {
    let g = ChipGeometry {
        n_chips: 1,
        blocks_per_chip: 2,
        wordlines_per_block: 32,
        cells_per_wordline: 4096,
    };
    let mut sim = FlashSim::new(g, Mode::Analytic, ErrorModels::calibrated(32), 1)?;
    let (train, test) = (BlockAddress { chip: 0, block: 0 }, BlockAddress { chip: 0, block: 1 });
    for a in [train, test] {
        sim.set_pec(a, 10_000)?;
        sim.program_block_random(a)?;
    }
    sim.advance_clock(3000.0)?;
    let table = lavar_learn(&sim, train)?;
    println!("layer offsets (a, b):");
    for l in (0..32).step_by(4) {
        println!("  layer {l:>2}: {:?}", table.offset(l)?);
    }

    sim.advance_clock(2.0 * DAY_S)?;
    let base = block_empirical_vopt(&sim, test)?;
    let plain = sim.measure_block_rber(test, &|_| Ok(base))?;
    let tuned = sim.measure_block_rber(test, &|l| lavar_read_vrefs(&base, &table, l))?;
    println!("average RBER {:.3e} -> {:.3e}", avg(&plain), avg(&tuned));
    let worst = |p: &[nandsim::sim::PageRber]| {
        p.iter().filter(|x| x.page_type == PageType::Msb).map(|x| x.rber).fold(0.0, f64::max)
    };
    println!("worst MSB page {:.3e} -> {:.3e}", worst(&plain), worst(&tuned));
    Ok(())
}
