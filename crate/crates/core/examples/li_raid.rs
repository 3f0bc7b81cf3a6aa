//! Layer-interleaved RAID: layout, a full group write, recovery of a lost
//! page, and the worst-group RBER against the conventional layout.

use nandsim::controller::block_empirical_vopt;
use nandsim::models::ErrorModels;
use nandsim::raid::{group_worst_case_rber, layout_conventional, layout_li_raid, raid_recover, RaidGeometry, RaidWriter};
use nandsim::sim::{BlockAddress, ChipGeometry, FlashSim, Mode, PageAddress};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> nandsim::Result<()> {
    let li = layout_li_raid(RaidGeometry::new(4, 4)?)?;
    print!("{}", li.render_table());
    println!("blank overhead, 128 chips x 128 wordlines: {:.2}%", 100.0 * layout_li_raid(RaidGeometry::new(128, 128)?)?.blank_fraction());
    // wider strides leave n/m blank wordlines per chip
    println!("blank overhead, 4 chips x 32 wordlines: {:.2}%", 100.0 * layout_li_raid(RaidGeometry::new(4, 32)?)?.blank_fraction());

    let g = ChipGeometry {
        n_chips: 4,
        blocks_per_chip: 1,
        wordlines_per_block: 32,
        cells_per_wordline: 512,
    };
    let mut sim = FlashSim::new(g, Mode::MonteCarlo, ErrorModels::calibrated(32), 9)?;
    let layout = layout_li_raid(RaidGeometry::new(4, 32)?)?;
    let mut w = RaidWriter::new(&mut sim, layout.clone(), 0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut written = Vec::new();
    for grp in 0..layout.n_groups() {
        let data: Vec<Vec<bool>> = (0..3).map(|_| (0..512).map(|_| rng.random()).collect()).collect();
        w.raid_write(&mut sim, grp, &data)?;
        written.push(data);
    }
    println!("all wordlines programmed: {}", w.is_complete());

    // lose member 0 of group 5 and rebuild it from the rest
    let members = layout.members(5)?.to_vec();
    let survivors: Vec<Vec<bool>> = members[1..]
        .iter()
        .map(|m| {
            sim.programmed_bits(PageAddress {
                chip: m.chip,
                block: 0,
                wordline: m.wordline,
                page_type: m.page_type,
            })
        })
        .collect::<nandsim::Result<_>>()?;
    let rebuilt = raid_recover(&layout, 5, &[0], &survivors)?;
    let lost = sim.programmed_bits(PageAddress {
        chip: members[0].chip,
        block: 0,
        wordline: members[0].wordline,
        page_type: members[0].page_type,
    })?;
    println!("group 5 member 0 rebuilt exactly: {}", rebuilt == lost);

    // worst group when every layer is read at the block optimum
    let models = ErrorModels::calibrated(32);
    let mut an = FlashSim::new(ChipGeometry { n_chips: 1, blocks_per_chip: 1, ..g }, Mode::Analytic, models, 0)?;
    let a = BlockAddress { chip: 0, block: 0 };
    an.set_pec(a, 10_000)?;
    an.program_block_random(a)?;
    an.advance_clock(24.0 * 86_400.0)?;
    let v = block_empirical_vopt(&an, a)?;
    let pages = an.measure_block_rber(a, &|_| Ok(v))?;
    let rber = |_chip: usize, wl: usize, pt| pages.iter().find(|p| p.layer == wl && p.page_type == pt).map_or(0.0, |p| p.rber);
    let conv = group_worst_case_rber(&layout_conventional(RaidGeometry::new(4, 32)?), &rber).worst_group_mean();
    let inter = group_worst_case_rber(&layout, &rber).worst_group_mean();
    println!("worst group RBER: conventional {conv:.3e}, interleaved {inter:.3e}");
    Ok(())
}
