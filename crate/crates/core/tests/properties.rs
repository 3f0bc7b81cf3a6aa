use nandsim::controller::{
    block_empirical_vopt, lavar_learn, lavar_read_vrefs, model_vopt, policy_fixed_default, policy_state_of_the_art, remar_predict,
    BlockMetadata, RemarFits, T_REF_S,
};
use nandsim::fit::{gamma_fit, kl_divergence, Histogram};
use nandsim::models::{ErrorModels, RetentionWearModel, DAY_S};
use nandsim::raid::{layout_conventional, layout_li_raid, raid_recover, RaidGeometry, RaidWriter};
use nandsim::sim::{BlockAddress, ChipGeometry, FlashSim, Mode, PageAddress, PageType};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mean(p: &[nandsim::sim::PageRber]) -> f64 {
    p.iter().map(|x| x.rber).sum::<f64>() / p.len() as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn kl_is_nonnegative(x in proptest::collection::vec(1e-5f64..1e-2, 20..200), bins in 2usize..40) {
        prop_assume!(x.iter().any(|v| (v - x[0]).abs() > 1e-12));
        let f = gamma_fit(&x).unwrap();
        let kl = kl_divergence(&Histogram::from_samples(&x, bins).unwrap(), &|r| f.pdf(r)).unwrap();
        prop_assert!(kl.infinite || kl.nats >= 0.0);
    }

    #[test]
    fn li_layout_writes_in_order_and_recovers(m in 2usize..6, k in 1usize..4, seed in any::<u64>()) {
        let n = m * k;
        let geom = RaidGeometry::new(m, n).unwrap();
        let layout = layout_li_raid(geom).unwrap();
        let conv = layout_conventional(geom);
        // capacity differs by exactly 2*s pages per chip
        prop_assert_eq!(conv.n_groups() * m - layout.n_groups() * m, 2 * k * m);
        for c in 0..m {
            prop_assert_eq!(layout.blank_wordlines(c).len(), k);
        }

        let g = ChipGeometry { n_chips: m, blocks_per_chip: 1, wordlines_per_block: n, cells_per_wordline: 16 };
        let mut sim = FlashSim::new(g, Mode::MonteCarlo, ErrorModels::flat(n), seed).unwrap();
        let mut w = RaidWriter::new(&mut sim, layout.clone(), 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for grp in 0..layout.n_groups() {
            let data: Vec<Vec<bool>> = (0..m - 1).map(|_| (0..16).map(|_| rng.random()).collect()).collect();
            w.raid_write(&mut sim, grp, &data).unwrap();
        }
        prop_assert!(w.is_complete());

        let grp = rng.random_range(0..layout.n_groups());
        let lost = rng.random_range(0..m);
        let bits = |mb: &nandsim::raid::Member| sim.programmed_bits(PageAddress {
            chip: mb.chip, block: 0, wordline: mb.wordline, page_type: mb.page_type,
        }).unwrap();
        let members = layout.members(grp).unwrap();
        let survivors: Vec<Vec<bool>> = members.iter().enumerate().filter(|(i, _)| *i != lost).map(|(_, mb)| bits(mb)).collect();
        prop_assert_eq!(raid_recover(&layout, grp, &[lost], &survivors).unwrap(), bits(&members[lost]));
    }

    #[test]
    fn same_seed_same_reads(seed in any::<u64>(), pec in 0u32..15_000, days in 0.1f64..60.0) {
        let g = ChipGeometry { n_chips: 1, blocks_per_chip: 1, wordlines_per_block: 4, cells_per_wordline: 256 };
        let a = BlockAddress { chip: 0, block: 0 };
        let run = || {
            let mut sim = FlashSim::new(g, Mode::MonteCarlo, ErrorModels::calibrated(4), seed).unwrap();
            sim.set_pec(a, pec).unwrap();
            sim.program_block_random(a).unwrap();
            sim.advance_clock(days * DAY_S).unwrap();
            let v = block_empirical_vopt(&sim, a).unwrap();
            let p = PageAddress { chip: 0, block: 0, wordline: 2, page_type: PageType::Lsb };
            (v, sim.read_page(p, &v).unwrap())
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn lavar_never_worse_than_block_optimum(pec in 0u32..12_000, days in 0.05f64..30.0) {
        let g = ChipGeometry { n_chips: 1, blocks_per_chip: 1, wordlines_per_block: 32, cells_per_wordline: 4096 };
        let a = BlockAddress { chip: 0, block: 0 };
        let mut sim = FlashSim::new(g, Mode::Analytic, ErrorModels::calibrated(32), 0).unwrap();
        sim.set_pec(a, pec).unwrap();
        sim.program_block_random(a).unwrap();
        sim.advance_clock(days * DAY_S).unwrap();
        let base = block_empirical_vopt(&sim, a).unwrap();
        let table = lavar_learn(&sim, a).unwrap();
        let plain = mean(&sim.measure_block_rber(a, &|_| Ok(base)).unwrap());
        let tuned = mean(&sim.measure_block_rber(a, &|l| lavar_read_vrefs(&base, &table, l)).unwrap());
        prop_assert!(tuned <= plain * (1.0 + 1e-12), "{tuned} > {plain}");
    }

    #[test]
    fn policies_give_ordered_vrefs(pec in 0u32..20_000, epoch in 0u32..1_000_000, age in 60.0f64..5e6) {
        let m = RetentionWearModel::fitted();
        let meta = BlockMetadata::new(pec, epoch);
        let now = epoch as f64 + age;
        let fits = RemarFits::from_model(&m);
        for v in [
            policy_fixed_default(&m).unwrap(),
            policy_state_of_the_art(&m, &meta, T_REF_S).unwrap(),
            model_vopt(&m, pec, age).unwrap(),
            remar_predict(Some(&fits), &meta, now, 60.0).unwrap(),
        ] {
            prop_assert!(v.va() < v.vb() && v.vb() < v.vc());
        }
    }
}
