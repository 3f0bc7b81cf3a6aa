//! RAID group layouts across chips (conventional and layer-interleaved),
//! XOR parity, recovery and per-group RBER accounting.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::sim::{BlockAddress, FlashSim, PageType, WordlineData};

/// `m` chips per group, `n` wordlines per block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RaidGeometry {
    pub m: usize,
    pub n: usize,
}

impl RaidGeometry {
    pub fn new(m: usize, n: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::Layout(format!("need at least 2 chips per group, got {m}")));
        }
        if n < 1 {
            return Err(Error::Layout("need at least one wordline".into()));
        }
        Ok(RaidGeometry { m, n })
    }

    /// Wordline stride between consecutive chips in an LI group.
    pub fn stride(&self) -> Result<usize> {
        if self.n % self.m != 0 {
            return Err(Error::Layout(format!("{} chips do not divide {} wordlines", self.m, self.n)));
        }
        Ok(self.n / self.m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Conventional,
    LayerInterleaved,
}

/// One page slot of a group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Member {
    pub chip: usize,
    pub wordline: usize,
    pub page_type: PageType,
}

/// Assignment of every (chip, wordline, page) to a group or to blank.
#[derive(Debug, Clone, PartialEq)]
pub struct RaidLayout {
    pub geom: RaidGeometry,
    pub scheme: Scheme,
    // [chip][wordline][msb=0 / lsb=1]
    cells: Vec<Vec<[Option<usize>; 2]>>,
    groups: Vec<Vec<Member>>,
}

fn pt_index(pt: PageType) -> usize {
    match pt {
        PageType::Msb => 0,
        PageType::Lsb => 1,
    }
}

impl RaidLayout {
    fn build(geom: RaidGeometry, scheme: Scheme, groups: Vec<Vec<Member>>) -> Self {
        let mut cells = vec![vec![[None; 2]; geom.n]; geom.m];
        for (g, members) in groups.iter().enumerate() {
            for mb in members {
                cells[mb.chip][mb.wordline][pt_index(mb.page_type)] = Some(g);
            }
        }
        RaidLayout {
            geom,
            scheme,
            cells,
            groups,
        }
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    /// Group of a page, or `None` for a blank.
    pub fn group_of(&self, chip: usize, wl: usize, pt: PageType) -> Result<Option<usize>> {
        self.cells
            .get(chip)
            .and_then(|c| c.get(wl))
            .map(|c| c[pt_index(pt)])
            .ok_or_else(|| Error::Address(format!("chip {chip} wordline {wl}")))
    }

    /// Members of a group ordered by chip.
    pub fn members(&self, g: usize) -> Result<&[Member]> {
        self.groups
            .get(g)
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::Layout(format!("group {g} of {}", self.groups.len())))
    }

    /// Whether a whole wordline carries no group on a chip.
    pub fn is_blank(&self, chip: usize, wl: usize) -> bool {
        self.cells[chip][wl] == [None, None]
    }

    pub fn blank_wordlines(&self, chip: usize) -> Vec<usize> {
        (0..self.geom.n).filter(|&w| self.is_blank(chip, w)).collect()
    }

    /// Fraction of page slots left blank.
    pub fn blank_fraction(&self) -> f64 {
        let blanks: usize = (0..self.geom.m).map(|c| self.blank_wordlines(c).len()).sum();
        blanks as f64 / (self.geom.m * self.geom.n) as f64
    }

    /// Member holding the group's parity.
    pub fn parity_member(&self, g: usize) -> Result<Member> {
        let m = self.members(g)?;
        Ok(m[g % m.len()])
    }

    /// Assignment table: one row per (wordline, page), one column per chip.
    pub fn render_table(&self) -> String {
        let mut s = String::new();
        let mut header = vec!["Wordline".to_string(), "Layer".into(), "Page".into()];
        header.extend((0..self.geom.m).map(|c| format!("Chip {c}")));
        let mut rows = vec![header];
        for wl in 0..self.geom.n {
            for pt in [PageType::Msb, PageType::Lsb] {
                let mut r = vec![wl.to_string(), wl.to_string(), pt.name().to_uppercase()];
                for c in 0..self.geom.m {
                    r.push(match self.cells[c][wl][pt_index(pt)] {
                        Some(g) => format!("Group {g}"),
                        None => "Blank".into(),
                    });
                }
                rows.push(r);
            }
        }
        let cols = rows[0].len();
        let widths: Vec<usize> = (0..cols).map(|j| rows.iter().map(|r| r[j].len()).max().unwrap_or(0)).collect();
        for r in rows {
            let line: Vec<String> = r.iter().zip(&widths).map(|(x, w)| format!("{x:<w$}")).collect();
            let _ = writeln!(s, "{}", line.join("  ").trim_end());
        }
        s
    }
}

/// Groups of same-type pages on the same wordline across all chips.
pub fn layout_conventional(geom: RaidGeometry) -> RaidLayout {
    let mut groups = Vec::with_capacity(2 * geom.n);
    for wl in 0..geom.n {
        for pt in [PageType::Msb, PageType::Lsb] {
            groups.push(
                (0..geom.m)
                    .map(|chip| Member {
                        chip,
                        wordline: wl,
                        page_type: pt,
                    })
                    .collect(),
            );
        }
    }
    RaidLayout::build(geom, Scheme::Conventional, groups)
}

/// Layer-interleaved groups: chip `c` of group `g` holds wordline
/// `(g/2 + c*s) mod n`, MSB when `c + g` is even.
///
/// With `n == m` (stride 1) each chip has one blank wordline. Larger strides
/// leave `s` blank wordlines per chip; that mode is experimental.
pub fn layout_li_raid(geom: RaidGeometry) -> Result<RaidLayout> {
    let s = geom.stride()?;
    let (m, n) = (geom.m, geom.n);
    let groups = (0..2 * (n - s))
        .map(|g| {
            let w = g / 2;
            (0..m)
                .map(|c| Member {
                    chip: c,
                    wordline: (w + c * s) % n,
                    page_type: if (c + g) % 2 == 0 { PageType::Msb } else { PageType::Lsb },
                })
                .collect()
        })
        .collect();
    Ok(RaidLayout::build(geom, Scheme::LayerInterleaved, groups))
}

fn xor_into(acc: &mut [bool], page: &[bool]) -> Result<()> {
    if acc.len() != page.len() {
        return Err(Error::InvalidArgument(format!("page lengths {} and {} differ", acc.len(), page.len())));
    }
    for (a, b) in acc.iter_mut().zip(page) {
        *a ^= *b;
    }
    Ok(())
}

/// Bitwise XOR of equally long pages.
pub fn xor_pages(pages: &[&[bool]]) -> Result<Vec<bool>> {
    let first = pages.first().ok_or_else(|| Error::InvalidArgument("no pages to combine".into()))?;
    let mut acc = vec![false; first.len()];
    for p in pages {
        xor_into(&mut acc, p)?;
    }
    Ok(acc)
}

/// Rebuild one member from the other `m - 1` pages of its group (data and
/// parity alike). `failed` lists every member that could not be read.
pub fn raid_recover(layout: &RaidLayout, g: usize, failed: &[usize], survivors: &[Vec<bool>]) -> Result<Vec<bool>> {
    let m = layout.members(g)?.len();
    if failed.len() > 1 {
        return Err(Error::Unrecoverable(failed.len()));
    }
    if failed.first().is_some_and(|&f| f >= m) {
        return Err(Error::Layout(format!("member {} of {m}", failed[0])));
    }
    if survivors.len() != m - 1 {
        return Err(Error::InvalidArgument(format!("{} survivors for a {m}-member group", survivors.len())));
    }
    let refs: Vec<&[bool]> = survivors.iter().map(|v| v.as_slice()).collect();
    xor_pages(&refs)
}

/// Buffers group writes into one block per chip and programs each wordline
/// once both of its pages are known and every earlier wordline is done.
#[derive(Debug, Clone)]
pub struct RaidWriter {
    layout: RaidLayout,
    block: usize,
    cells: usize,
    pending: HashMap<(usize, usize), [Option<Vec<bool>>; 2]>,
    next_wl: Vec<usize>,
}

impl RaidWriter {
    /// Prepare block `block` on chips `0..m`: each must be erased; blank
    /// wordlines are marked from the layout.
    pub fn new(sim: &mut FlashSim, layout: RaidLayout, block: usize) -> Result<Self> {
        let g = *sim.geometry();
        if g.n_chips < layout.geom.m || g.wordlines_per_block != layout.geom.n {
            return Err(Error::Layout(format!(
                "layout {}x{} does not fit {} chips of {} wordlines",
                layout.geom.m, layout.geom.n, g.n_chips, g.wordlines_per_block
            )));
        }
        for chip in 0..layout.geom.m {
            sim.set_blank_wordlines(BlockAddress { chip, block }, &layout.blank_wordlines(chip))?;
        }
        let m = layout.geom.m;
        Ok(RaidWriter {
            layout,
            block,
            cells: g.cells_per_wordline,
            pending: HashMap::new(),
            next_wl: vec![0; m],
        })
    }

    pub fn layout(&self) -> &RaidLayout {
        &self.layout
    }

    /// Write `m - 1` data pages of group `g` plus their parity.
    pub fn raid_write(&mut self, sim: &mut FlashSim, g: usize, data: &[Vec<bool>]) -> Result<()> {
        let members = self.layout.members(g)?.to_vec();
        if data.len() + 1 != members.len() {
            return Err(Error::Layout(format!("{} data pages for a {}-member group", data.len(), members.len())));
        }
        if data.iter().any(|d| d.len() != self.cells) {
            return Err(Error::Layout(format!("data pages must hold {} bits", self.cells)));
        }
        let refs: Vec<&[bool]> = data.iter().map(|v| v.as_slice()).collect();
        let parity = xor_pages(&refs)?;
        let p = self.layout.parity_member(g)?;
        let mut it = data.iter();
        for mb in &members {
            let page = if *mb == p { parity.clone() } else { it.next().expect("sized above").clone() };
            let slot = self.pending.entry((mb.chip, mb.wordline)).or_default();
            slot[pt_index(mb.page_type)] = Some(page);
        }
        self.flush(sim)
    }

    fn flush(&mut self, sim: &mut FlashSim) -> Result<()> {
        for chip in 0..self.layout.geom.m {
            loop {
                let wl = self.next_wl[chip];
                if wl >= self.layout.geom.n {
                    break;
                }
                if self.layout.is_blank(chip, wl) {
                    self.next_wl[chip] += 1;
                    continue;
                }
                let ready = matches!(self.pending.get(&(chip, wl)), Some([Some(_), Some(_)]));
                if !ready {
                    break;
                }
                let [msb, lsb] = self.pending.remove(&(chip, wl)).expect("checked");
                let data = WordlineData {
                    msb: msb.expect("checked"),
                    lsb: lsb.expect("checked"),
                };
                sim.program_wordline(BlockAddress { chip, block: self.block }, wl, &data)?;
                self.next_wl[chip] += 1;
            }
        }
        Ok(())
    }

    /// Whether every non-blank wordline has been programmed.
    pub fn is_complete(&self) -> bool {
        self.next_wl.iter().all(|&w| w >= self.layout.geom.n)
    }
}

/// Per-group statistics of member page RBERs.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupRber {
    pub max: Vec<f64>,
    pub mean: Vec<f64>,
}

impl GroupRber {
    /// Highest single page RBER in any group.
    pub fn overall_max(&self) -> f64 {
        self.max.iter().copied().fold(0.0, f64::max)
    }

    /// RBER of the worst group, each group taken as the average of its members.
    pub fn worst_group_mean(&self) -> f64 {
        self.mean.iter().copied().fold(0.0, f64::max)
    }
}

/// Evaluate `rber(chip, wordline, page)` over every group member.
pub fn group_worst_case_rber(layout: &RaidLayout, rber: &dyn Fn(usize, usize, PageType) -> f64) -> GroupRber {
    let mut out = GroupRber {
        max: Vec::with_capacity(layout.n_groups()),
        mean: Vec::with_capacity(layout.n_groups()),
    };
    for members in &layout.groups {
        let v: Vec<f64> = members.iter().map(|m| rber(m.chip, m.wordline, m.page_type)).collect();
        out.max.push(v.iter().copied().fold(0.0, f64::max));
        out.mean.push(v.iter().sum::<f64>() / v.len() as f64);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ErrorModels;
    use crate::sim::{ChipGeometry, Mode, PageAddress};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const FIG11: &str = "\
Wordline  Layer  Page  Chip 0   Chip 1   Chip 2   Chip 3
0         0      MSB   Group 0  Blank    Group 4  Group 3
0         0      LSB   Group 1  Blank    Group 5  Group 2
1         1      MSB   Group 2  Group 1  Blank    Group 5
1         1      LSB   Group 3  Group 0  Blank    Group 4
2         2      MSB   Group 4  Group 3  Group 0  Blank
2         2      LSB   Group 5  Group 2  Group 1  Blank
3         3      MSB   Blank    Group 5  Group 2  Group 1
3         3      LSB   Blank    Group 4  Group 3  Group 0
";

    #[test]
    fn li_layout_matches_reference_table() {
        let l = layout_li_raid(RaidGeometry::new(4, 4).unwrap()).unwrap();
        assert_eq!(l.render_table(), FIG11);
        assert_eq!(l.n_groups(), 6);
    }

    #[test]
    fn conventional_layout_shape() {
        let l = layout_conventional(RaidGeometry::new(4, 4).unwrap());
        assert_eq!(l.n_groups(), 8);
        assert_eq!(l.blank_fraction(), 0.0);
        for g in 0..8 {
            let m = l.members(g).unwrap();
            assert!(m.iter().all(|x| x.wordline == m[0].wordline && x.page_type == m[0].page_type));
        }
    }

    #[test]
    fn blank_overhead_at_128_wordlines() {
        let l = layout_li_raid(RaidGeometry::new(128, 128).unwrap()).unwrap();
        let f = l.blank_fraction();
        assert!((f - 2.0 / 256.0).abs() < 1e-12);
        assert!((f * 100.0 - 0.78).abs() < 0.005);
    }

    #[test]
    fn non_dividing_geometry_errors() {
        assert!(layout_li_raid(RaidGeometry::new(3, 4).unwrap()).is_err());
        assert!(RaidGeometry::new(1, 4).is_err());
    }

    #[test]
    fn li_groups_spread_over_wordlines_and_alternate() {
        for (m, n) in [(4, 4), (4, 8), (2, 6), (8, 32)] {
            let l = layout_li_raid(RaidGeometry::new(m, n).unwrap()).unwrap();
            let s = n / m;
            assert_eq!(l.n_groups(), 2 * (n - s));
            for g in 0..l.n_groups() {
                let mem = l.members(g).unwrap();
                let mut wls: Vec<usize> = mem.iter().map(|x| x.wordline).collect();
                wls.sort();
                wls.dedup();
                assert_eq!(wls.len(), m);
                for w in mem.windows(2) {
                    assert_ne!(w[0].page_type, w[1].page_type);
                }
            }
            for c in 0..m {
                assert_eq!(l.blank_wordlines(c).len(), s);
            }
        }
    }

    #[test]
    fn hot_layer_conventional_vs_li() {
        let g = RaidGeometry::new(4, 4).unwrap();
        let rber = |_c: usize, wl: usize, pt: PageType| {
            let base = if pt == PageType::Msb { 1e-4 } else { 2e-4 };
            if wl == 2 {
                base * 10.0
            } else {
                base
            }
        };
        let conv = group_worst_case_rber(&layout_conventional(g), &rber);
        let li = group_worst_case_rber(&layout_li_raid(g).unwrap(), &rber);
        assert_eq!(conv.overall_max(), 2e-3);
        assert!(li.worst_group_mean() < conv.worst_group_mean());
        let uni = group_worst_case_rber(&layout_li_raid(g).unwrap(), &|_, _, _| 3e-4);
        assert!(uni.max.iter().all(|x| *x == 3e-4));
    }

    #[test]
    fn recover_errors() {
        let l = layout_li_raid(RaidGeometry::new(4, 4).unwrap()).unwrap();
        let p = vec![vec![true; 8]; 3];
        assert_eq!(raid_recover(&l, 0, &[0, 1], &p[..2]), Err(Error::Unrecoverable(2)));
        assert!(raid_recover(&l, 0, &[0], &p[..2]).is_err());
        let x = xor_pages(&[&p[0], &p[0]]).unwrap();
        assert!(x.iter().all(|b| !b));
    }

    fn sim(m: usize, n: usize, cells: usize) -> FlashSim {
        let geom = ChipGeometry {
            n_chips: m,
            blocks_per_chip: 1,
            wordlines_per_block: n,
            cells_per_wordline: cells,
        };
        FlashSim::new(geom, Mode::MonteCarlo, ErrorModels::flat(n), 3).unwrap()
    }

    #[test]
    fn write_then_recover_every_member() {
        for scheme in [Scheme::Conventional, Scheme::LayerInterleaved] {
            let (m, n, cells) = (4, 8, 64);
            let geom = RaidGeometry::new(m, n).unwrap();
            let layout = match scheme {
                Scheme::Conventional => layout_conventional(geom),
                Scheme::LayerInterleaved => layout_li_raid(geom).unwrap(),
            };
            let mut s = sim(m, n, cells);
            let mut w = RaidWriter::new(&mut s, layout.clone(), 0).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            for g in 0..layout.n_groups() {
                let data: Vec<Vec<bool>> = (0..m - 1).map(|_| (0..cells).map(|_| rng.random()).collect()).collect();
                w.raid_write(&mut s, g, &data).unwrap();
            }
            assert!(w.is_complete());
            for g in 0..layout.n_groups() {
                let pages: Vec<Vec<bool>> = layout
                    .members(g)
                    .unwrap()
                    .iter()
                    .map(|mb| {
                        s.programmed_bits(PageAddress {
                            chip: mb.chip,
                            block: 0,
                            wordline: mb.wordline,
                            page_type: mb.page_type,
                        })
                        .unwrap()
                    })
                    .collect();
                for f in 0..m {
                    let surv: Vec<Vec<bool>> = (0..m).filter(|&i| i != f).map(|i| pages[i].clone()).collect();
                    assert_eq!(raid_recover(&layout, g, &[f], &surv).unwrap(), pages[f]);
                }
            }
        }
    }

    #[test]
    fn li_write_disturbs_each_page_at_most_once() {
        // every programmed wordline sees at most one later-programmed neighbor
        let (m, n) = (4, 8);
        let layout = layout_li_raid(RaidGeometry::new(m, n).unwrap()).unwrap();
        let mut s = sim(m, n, 16);
        let mut w = RaidWriter::new(&mut s, layout.clone(), 0).unwrap();
        for g in 0..layout.n_groups() {
            w.raid_write(&mut s, g, &vec![vec![false; 16]; m - 1]).unwrap();
        }
        for chip in 0..m {
            let b = s.block(BlockAddress { chip, block: 0 }).unwrap();
            for wl in 0..n {
                if b.is_programmed(wl) {
                    let nb = b.neighbors(wl);
                    assert!(!(nb.next_programmed_later && nb.prev_programmed_later));
                }
            }
        }
    }

    proptest! {
        #[test]
        fn xor_recovery_identity(bits in proptest::collection::vec(proptest::collection::vec(any::<bool>(), 32), 2..8), f in 0usize..8) {
            let m = bits.len() + 1;
            let layout = layout_conventional(RaidGeometry::new(m, 2).unwrap());
            let refs: Vec<&[bool]> = bits.iter().map(|v| v.as_slice()).collect();
            let parity = xor_pages(&refs).unwrap();
            let mut all = bits.clone();
            all.push(parity);
            let f = f % m;
            let surv: Vec<Vec<bool>> = (0..m).filter(|&i| i != f).map(|i| all[i].clone()).collect();
            prop_assert_eq!(raid_recover(&layout, 0, &[f], &surv).unwrap(), all[f].clone());
        }
    }
}
