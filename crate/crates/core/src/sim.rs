//! Multi-chip 3D NAND simulator with Monte Carlo and analytic modes.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::SweepData;
use crate::models::{
    program_interference_shift, read_error_probability, CellContext, ErrorModels, Relation,
};
use crate::voltage::{
    expected_rber_mixture, gray_encode, RberBreakdown, State, StateDistribution, StateMixture,
    VoltageWindow, VrefTriple, UNIFORM_PRIORS,
};

/// Dwell time between P/E cycles, recorded in experiment metadata only.
pub const DWELL_S: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChipGeometry {
    pub n_chips: usize,
    pub blocks_per_chip: usize,
    pub wordlines_per_block: usize,
    pub cells_per_wordline: usize,
}

impl Default for ChipGeometry {
    fn default() -> Self {
        ChipGeometry {
            n_chips: 4,
            blocks_per_chip: 8,
            wordlines_per_block: 32,
            cells_per_wordline: 4096,
        }
    }
}

impl ChipGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.n_chips == 0 || self.blocks_per_chip == 0 || self.wordlines_per_block == 0 || self.cells_per_wordline == 0 {
            return Err(Error::Config(format!("geometry counts must be >= 1: {self:?}")));
        }
        Ok(())
    }

    pub fn n_blocks(&self) -> usize {
        self.n_chips * self.blocks_per_chip
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    MonteCarlo,
    Analytic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PageType {
    Msb,
    Lsb,
}

impl PageType {
    pub fn name(self) -> &'static str {
        match self {
            PageType::Msb => "MSB",
            PageType::Lsb => "LSB",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BlockAddress {
    pub chip: usize,
    pub block: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PageAddress {
    pub chip: usize,
    pub block: usize,
    pub wordline: usize,
    pub page_type: PageType,
}

impl PageAddress {
    pub fn block_addr(&self) -> BlockAddress {
        BlockAddress {
            chip: self.chip,
            block: self.block,
        }
    }
}

/// MSB and LSB bits of one wordline.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordlineData {
    pub msb: Vec<bool>,
    pub lsb: Vec<bool>,
}

impl WordlineData {
    pub fn random(rng: &mut impl Rng, cells: usize) -> Self {
        WordlineData {
            msb: (0..cells).map(|_| rng.random()).collect(),
            lsb: (0..cells).map(|_| rng.random()).collect(),
        }
    }

    pub fn uniform(state: State, cells: usize) -> Self {
        let (m, l) = gray_encode(state);
        WordlineData {
            msb: vec![m; cells],
            lsb: vec![l; cells],
        }
    }

    pub fn page(&self, pt: PageType) -> &[bool] {
        match pt {
            PageType::Msb => &self.msb,
            PageType::Lsb => &self.lsb,
        }
    }
}

#[derive(Debug, Clone)]
struct Cells {
    states: Vec<State>,
    z: Vec<f32>,
    pi_shift: Vec<f32>,
}

#[derive(Debug, Clone, Default)]
struct Wordline {
    /// Program sequence number within the block, if programmed.
    order: Option<u32>,
    blank: bool,
    cells: Option<Cells>,
}

/// Per-block state.
#[derive(Debug, Clone)]
pub struct BlockState {
    pub pec: u32,
    pub program_epoch_s: f64,
    pub read_disturbs: Vec<u64>,
    erase_pending: bool,
    next_order: u32,
    generation: u64,
    wordlines: Vec<Wordline>,
}

impl BlockState {
    fn new(n_wl: usize) -> Self {
        BlockState {
            pec: 0,
            program_epoch_s: 0.0,
            read_disturbs: vec![0; n_wl],
            erase_pending: false,
            next_order: 0,
            generation: 0,
            wordlines: vec![Wordline::default(); n_wl],
        }
    }

    pub fn is_programmed(&self, wl: usize) -> bool {
        self.wordlines.get(wl).is_some_and(|w| w.order.is_some())
    }

    pub fn is_blank(&self, wl: usize) -> bool {
        self.wordlines.get(wl).is_some_and(|w| w.blank)
    }

    pub fn is_erased(&self) -> bool {
        self.wordlines.iter().all(|w| w.order.is_none())
    }

    fn order(&self, wl: usize) -> Option<u32> {
        self.wordlines.get(wl).and_then(|w| w.order)
    }

    /// Interference exposure of a wordline from its programmed neighbors.
    pub fn neighbors(&self, wl: usize) -> Neighbors {
        let me = self.order(wl);
        let next = if wl + 1 < self.wordlines.len() { self.order(wl + 1) } else { None };
        let prev = if wl > 0 { self.order(wl - 1) } else { None };
        Neighbors {
            next_programmed: next.is_some(),
            next_programmed_later: matches!((me, next), (Some(a), Some(b)) if b > a),
            prev_programmed_later: matches!((me, prev), (Some(a), Some(b)) if b > a),
        }
    }
}

/// Which neighbors of a wordline hold data and when they were programmed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Neighbors {
    pub next_programmed: bool,
    pub next_programmed_later: bool,
    pub prev_programmed_later: bool,
}

impl Neighbors {
    /// Every wordline of a sequentially programmed block except the last.
    pub fn sequential() -> Self {
        Neighbors {
            next_programmed: true,
            next_programmed_later: true,
            prev_programmed_later: false,
        }
    }
}

/// State mixtures of a wordline including interference from random data on
/// its neighbors, when the corresponding models are enabled.
pub fn wordline_mixtures(models: &ErrorModels, ctx: &CellContext, nb: Neighbors) -> Result<[StateMixture; 4]> {
    let base = models.distributions(ctx)?;
    let pi = &models.program_interference;
    let ri = &models.retention_interference;
    let use_next = nb.next_programmed && (ri.enabled || (pi.enabled && nb.next_programmed_later));
    let use_prev = pi.enabled && nb.prev_programmed_later;
    if !use_next && !use_prev {
        return Ok(base.map(StateMixture::single));
    }
    let birth = models.distributions(&CellContext {
        retention_s: models.wear.domain.t_min_s,
        read_disturbs: 0,
        ..*ctx
    })?;
    let delta = |a: State| {
        if a == State::Er {
            (0.0, 0.0)
        } else {
            let d = birth[a.index()];
            (d.mean() - birth[0].mean(), d.stdev())
        }
    };
    let next_states: &[Option<State>] = if use_next {
        &[Some(State::Er), Some(State::P1), Some(State::P2), Some(State::P3)]
    } else {
        &[None]
    };
    let prev_states: &[Option<State>] = if use_prev {
        &[Some(State::Er), Some(State::P1), Some(State::P2), Some(State::P3)]
    } else {
        &[None]
    };
    let w = 1.0 / (next_states.len() * prev_states.len()) as f64;
    let mut out = base.map(StateMixture::single);
    for victim in State::ALL {
        let v = base[victim.index()];
        let mut comps = Vec::with_capacity(16);
        for ns in next_states {
            for ps in prev_states {
                let mut dm = 0.0;
                let mut var = v.stdev() * v.stdev();
                if let Some(n) = ns {
                    dm += ri.adjustment(victim, *n, ctx.retention_s);
                    if pi.enabled && nb.next_programmed_later {
                        let (m, s) = delta(*n);
                        let c = program_interference_shift(pi, victim, 1.0, Relation::NextWl);
                        dm += c * m;
                        var += c * c * s * s;
                    }
                }
                if let Some(p) = ps {
                    let (m, s) = delta(*p);
                    let c = program_interference_shift(pi, victim, 1.0, Relation::PrevWl);
                    dm += c * m;
                    var += c * c * s * s;
                }
                comps.push((w, StateDistribution::new(v.mean() + dm, var.sqrt())?));
            }
        }
        out[victim.index()] = StateMixture::new(comps)?;
    }
    Ok(out)
}

/// Expected page error rates of one wordline at `vrefs`.
pub fn analytic_wordline_rber(models: &ErrorModels, ctx: &CellContext, nb: Neighbors, vrefs: &VrefTriple) -> Result<RberBreakdown> {
    let mix = wordline_mixtures(models, ctx, nb)?;
    expected_rber_mixture(&mix, &UNIFORM_PRIORS, vrefs)
}

/// Expected sweep counts of a whole block with random data programmed
/// sequentially on every wordline.
pub fn analytic_block_sweep(models: &ErrorModels, pec: u32, retention_s: f64, n_layers: usize, cells: f64, window: &VoltageWindow) -> Result<SweepData> {
    let (lo, hi) = (window.min.floor() as i32, window.max.ceil() as i32);
    let mut total = SweepData::empty(lo, hi);
    for l in 0..n_layers {
        let nb = if l + 1 < n_layers { Neighbors::sequential() } else { Neighbors::default() };
        let mix = wordline_mixtures(models, &CellContext::new(pec, retention_s, l), nb)?;
        total.add(&SweepData::from_mixtures(&mix, &UNIFORM_PRIORS, cells, lo, hi))?;
    }
    Ok(total)
}

/// Expected sweep counts of a single wordline.
pub fn analytic_wordline_sweep(models: &ErrorModels, ctx: &CellContext, nb: Neighbors, cells: f64, window: &VoltageWindow) -> Result<SweepData> {
    let mix = wordline_mixtures(models, ctx, nb)?;
    Ok(SweepData::from_mixtures(&mix, &UNIFORM_PRIORS, cells, window.min.floor() as i32, window.max.ceil() as i32))
}

/// Result of reading one page.
#[derive(Debug, Clone, PartialEq)]
pub struct PageRead {
    /// Bits read; `None` in analytic mode.
    pub bits: Option<Vec<bool>>,
    /// Observed (MC) or expected (analytic) raw bit errors.
    pub raw_errors: f64,
    pub cells: usize,
}

impl PageRead {
    pub fn rber(&self) -> f64 {
        self.raw_errors / self.cells as f64
    }
}

/// RBER of one page with its position labels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PageRber {
    pub layer: usize,
    pub page_type: PageType,
    pub rber: f64,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic sub-seed derived from a master seed and a stream of labels.
pub fn sub_seed(seed: u64, labels: &[u64]) -> u64 {
    labels.iter().fold(splitmix64(seed), |acc, l| splitmix64(acc ^ splitmix64(*l)))
}

/// A simulated flash subsystem.
#[derive(Debug, Clone)]
pub struct FlashSim {
    geom: ChipGeometry,
    mode: Mode,
    pub models: ErrorModels,
    pub window: VoltageWindow,
    seed: u64,
    clock_s: f64,
    reads: u64,
    blocks: Vec<BlockState>,
}

impl FlashSim {
    pub fn new(geom: ChipGeometry, mode: Mode, models: ErrorModels, seed: u64) -> Result<Self> {
        geom.validate()?;
        if models.profile.n_layers() < geom.wordlines_per_block {
            return Err(Error::Config(format!(
                "layer profile covers {} layers, block has {} wordlines",
                models.profile.n_layers(),
                geom.wordlines_per_block
            )));
        }
        Ok(FlashSim {
            geom,
            mode,
            models,
            window: VoltageWindow::default(),
            seed,
            clock_s: 0.0,
            reads: 0,
            blocks: (0..geom.n_blocks()).map(|_| BlockState::new(geom.wordlines_per_block)).collect(),
        })
    }

    pub fn geometry(&self) -> &ChipGeometry {
        &self.geom
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn clock_s(&self) -> f64 {
        self.clock_s
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn index(&self, a: BlockAddress) -> Result<usize> {
        if a.chip >= self.geom.n_chips || a.block >= self.geom.blocks_per_chip {
            return Err(Error::Address(format!("chip {} block {}", a.chip, a.block)));
        }
        Ok(a.chip * self.geom.blocks_per_chip + a.block)
    }

    pub fn block(&self, a: BlockAddress) -> Result<&BlockState> {
        Ok(&self.blocks[self.index(a)?])
    }

    fn check_wl(&self, wl: usize) -> Result<()> {
        if wl >= self.geom.wordlines_per_block {
            return Err(Error::Address(format!("wordline {wl} of {}", self.geom.wordlines_per_block)));
        }
        Ok(())
    }

    /// Layer of a wordline; one wordline per layer.
    pub fn layer_of(&self, wl: usize) -> usize {
        wl
    }

    pub fn erase_block(&mut self, a: BlockAddress) -> Result<()> {
        let i = self.index(a)?;
        let n = self.geom.wordlines_per_block;
        let b = &mut self.blocks[i];
        b.wordlines = vec![Wordline::default(); n];
        b.read_disturbs = vec![0; n];
        b.erase_pending = true;
        b.next_order = 0;
        Ok(())
    }

    /// Set the wear of a block directly, for experiments that start from an
    /// already-cycled block.
    pub fn set_pec(&mut self, a: BlockAddress, pec: u32) -> Result<()> {
        let i = self.index(a)?;
        self.blocks[i].pec = pec;
        Ok(())
    }

    /// Mark wordlines that an erased block will leave unprogrammed.
    pub fn set_blank_wordlines(&mut self, a: BlockAddress, wls: &[usize]) -> Result<()> {
        for &w in wls {
            self.check_wl(w)?;
        }
        let i = self.index(a)?;
        let b = &mut self.blocks[i];
        if !b.is_erased() {
            return Err(Error::ProgramOrder("blank wordlines must be set on an erased block".into()));
        }
        for w in b.wordlines.iter_mut() {
            w.blank = false;
        }
        for &w in wls {
            b.wordlines[w].blank = true;
        }
        Ok(())
    }

    /// Program one wordline. Wordlines go in order, except that a wordline
    /// whose predecessor is marked blank may be programmed at any time.
    pub fn program_wordline(&mut self, a: BlockAddress, wl: usize, data: &WordlineData) -> Result<()> {
        self.check_wl(wl)?;
        let cells = self.geom.cells_per_wordline;
        if data.msb.len() != cells || data.lsb.len() != cells {
            return Err(Error::InvalidArgument(format!(
                "page data has {}/{} bits, wordline has {cells} cells",
                data.msb.len(),
                data.lsb.len()
            )));
        }
        let i = self.index(a)?;
        {
            let b = &self.blocks[i];
            if b.wordlines[wl].blank {
                return Err(Error::ProgramOrder(format!("wordline {wl} is marked blank")));
            }
            if b.wordlines[wl].order.is_some() {
                return Err(Error::ProgramOrder(format!("wordline {wl} already programmed; erase first")));
            }
            if wl > 0 && !b.is_programmed(wl - 1) && !b.is_blank(wl - 1) {
                return Err(Error::ProgramOrder(format!(
                    "wordline {wl} programmed before wordline {}",
                    wl - 1
                )));
            }
        }
        let clock = self.clock_s;
        let mode = self.mode;
        let seed = self.seed;
        let models = self.models.clone();
        let b = &mut self.blocks[i];
        if b.is_erased() {
            if b.erase_pending {
                b.pec += 1;
                b.erase_pending = false;
            }
            b.program_epoch_s = clock;
            b.generation += 1;
        }
        let order = b.next_order;
        b.next_order += 1;
        b.wordlines[wl].order = Some(order);
        if mode == Mode::Analytic {
            return Ok(());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, &[1, i as u64, b.generation, wl as u64]));
        let states: Vec<State> = data.msb.iter().zip(&data.lsb).map(|(m, l)| State::from_bits(*m, *l)).collect();
        let z: Vec<f32> = (0..cells).map(|_| rng.sample::<f64, _>(StandardNormal) as f32).collect();
        b.wordlines[wl].cells = Some(Cells {
            states,
            z,
            pi_shift: vec![0.0; cells],
        });
        let pi = models.program_interference;
        if pi.enabled {
            let layer = wl;
            let birth = models.distributions(&CellContext::new(b.pec, models.wear.domain.t_min_s, layer))?;
            let aggr = b.wordlines[wl].cells.as_ref().expect("just set");
            let deltas: Vec<f64> = aggr
                .states
                .iter()
                .zip(&aggr.z)
                .map(|(s, z)| {
                    if *s == State::Er {
                        0.0
                    } else {
                        let d = birth[s.index()];
                        (d.mean() + d.stdev() * *z as f64 - birth[0].mean()).max(0.0)
                    }
                })
                .collect();
            for (victim, rel) in [(wl.wrapping_sub(1), Relation::NextWl), (wl + 1, Relation::PrevWl)] {
                if victim >= b.wordlines.len() {
                    continue;
                }
                if let Some(vc) = b.wordlines[victim].cells.as_mut() {
                    for k in 0..cells {
                        vc.pi_shift[k] += program_interference_shift(&pi, vc.states[k], deltas[k], rel) as f32;
                    }
                }
            }
        }
        Ok(())
    }

    /// Erase if needed, then program every wordline in order. `None` entries
    /// are left blank.
    pub fn program_block(&mut self, a: BlockAddress, data: &[Option<WordlineData>]) -> Result<()> {
        if data.len() != self.geom.wordlines_per_block {
            return Err(Error::InvalidArgument(format!(
                "{} wordlines of data for a {}-wordline block",
                data.len(),
                self.geom.wordlines_per_block
            )));
        }
        if !self.block(a)?.is_erased() {
            return Err(Error::ProgramOrder("block must be erased before programming".into()));
        }
        let blanks: Vec<usize> = data.iter().enumerate().filter(|(_, d)| d.is_none()).map(|(i, _)| i).collect();
        self.set_blank_wordlines(a, &blanks)?;
        for (wl, d) in data.iter().enumerate() {
            if let Some(d) = d {
                self.program_wordline(a, wl, d)?;
            }
        }
        Ok(())
    }

    /// Program every wordline of a block with random data from the
    /// simulator's seed.
    pub fn program_block_random(&mut self, a: BlockAddress) -> Result<()> {
        let i = self.index(a)?;
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(self.seed, &[2, i as u64, self.blocks[i].generation]));
        let cells = self.geom.cells_per_wordline;
        let data: Vec<Option<WordlineData>> = (0..self.geom.wordlines_per_block)
            .map(|_| Some(WordlineData::random(&mut rng, cells)))
            .collect();
        self.program_block(a, &data)
    }

    pub fn advance_clock(&mut self, dt_s: f64) -> Result<()> {
        if !(dt_s >= 0.0) {
            return Err(Error::InvalidArgument(format!("clock advance {dt_s} must be >= 0")));
        }
        self.clock_s += dt_s;
        Ok(())
    }

    /// Retention time of a block, floored at the model's minimum.
    pub fn retention_s(&self, a: BlockAddress) -> Result<f64> {
        let b = self.block(a)?;
        Ok((self.clock_s - b.program_epoch_s).max(self.models.wear.domain.t_min_s))
    }

    fn context(&self, i: usize, wl: usize, neighbor: Option<State>) -> CellContext {
        let b = &self.blocks[i];
        CellContext {
            pec: b.pec,
            retention_s: (self.clock_s - b.program_epoch_s).max(self.models.wear.domain.t_min_s),
            layer: self.layer_of(wl),
            read_disturbs: b.read_disturbs[wl],
            neighbor_state: neighbor,
        }
    }

    // Current threshold voltages of every cell on a programmed wordline.
    fn cell_vth(&self, i: usize, wl: usize) -> Result<Vec<f64>> {
        let b = &self.blocks[i];
        let cells = b.wordlines[wl]
            .cells
            .as_ref()
            .ok_or_else(|| Error::NotProgrammed(format!("wordline {wl} has no cell data")))?;
        let next = b.wordlines.get(wl + 1).and_then(|w| w.cells.as_ref());
        let ri = self.models.retention_interference.enabled;
        // distributions for (state, neighbor) pairs; index 4 = no neighbor
        let mut table = [[None::<StateDistribution>; 5]; 4];
        for s in State::ALL {
            table[s.index()][4] = Some(self.models.distribution(&self.context(i, wl, None), s)?);
            if ri && next.is_some() {
                for n in State::ALL {
                    table[s.index()][n.index()] = Some(self.models.distribution(&self.context(i, wl, Some(n)), s)?);
                }
            }
        }
        Ok((0..cells.states.len())
            .map(|k| {
                let s = cells.states[k];
                let col = match (ri, next) {
                    (true, Some(nc)) => nc.states[k].index(),
                    _ => 4,
                };
                let d = table[s.index()][col].expect("filled above");
                d.mean() + d.stdev() * cells.z[k] as f64 + cells.pi_shift[k] as f64
            })
            .collect())
    }

    fn check_readable(&self, i: usize, wl: usize) -> Result<()> {
        let b = &self.blocks[i];
        if b.wordlines[wl].blank {
            return Err(Error::NotProgrammed(format!("wordline {wl} is blank")));
        }
        if b.wordlines[wl].order.is_none() {
            return Err(Error::NotProgrammed(format!("wordline {wl} is erased")));
        }
        Ok(())
    }

    fn expected_page(&self, i: usize, wl: usize, pt: PageType, vrefs: &VrefTriple) -> Result<f64> {
        let ctx = self.context(i, wl, None);
        let r = analytic_wordline_rber(&self.models, &ctx, self.blocks[i].neighbors(wl), vrefs)?;
        Ok(match pt {
            PageType::Msb => r.msb,
            PageType::Lsb => r.lsb,
        })
    }

    fn sense_page(&self, i: usize, wl: usize, pt: PageType, vrefs: &VrefTriple, read_no: u64) -> Result<(Vec<bool>, f64)> {
        let vth = self.cell_vth(i, wl)?;
        let cells = self.blocks[i].wordlines[wl].cells.as_ref().expect("checked");
        let re = self.models.read_error;
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(self.seed, &[3, i as u64, wl as u64, read_no]));
        let mut sense = |v: f64, r: f64| -> bool {
            let on = v >= r;
            if re.enabled && rng.random::<f64>() < read_error_probability(&re, r - v) {
                !on
            } else {
                on
            }
        };
        let mut errors = 0.0;
        let bits: Vec<bool> = vth
            .iter()
            .zip(&cells.states)
            .map(|(&v, s)| {
                let (em, el) = gray_encode(*s);
                let (bit, expect) = match pt {
                    PageType::Msb => {
                        let a = sense(v, vrefs.va());
                        let c = sense(v, vrefs.vc());
                        (!a || c, em)
                    }
                    PageType::Lsb => (!sense(v, vrefs.vb()), el),
                };
                if bit != expect {
                    errors += 1.0;
                }
                bit
            })
            .collect();
        Ok((bits, errors))
    }

    /// Read a page. Every other wordline of the block accrues one read disturb.
    pub fn read_page(&mut self, addr: PageAddress, vrefs: &VrefTriple) -> Result<PageRead> {
        let i = self.index(addr.block_addr())?;
        self.check_wl(addr.wordline)?;
        self.check_readable(i, addr.wordline)?;
        let cells = self.geom.cells_per_wordline;
        self.reads += 1;
        let out = match self.mode {
            Mode::Analytic => PageRead {
                bits: None,
                raw_errors: self.expected_page(i, addr.wordline, addr.page_type, vrefs)? * cells as f64,
                cells,
            },
            Mode::MonteCarlo => {
                let (bits, e) = self.sense_page(i, addr.wordline, addr.page_type, vrefs, self.reads)?;
                PageRead {
                    bits: Some(bits),
                    raw_errors: e,
                    cells,
                }
            }
        };
        let b = &mut self.blocks[i];
        for (w, c) in b.read_disturbs.iter_mut().enumerate() {
            if w != addr.wordline {
                *c += 1;
            }
        }
        Ok(out)
    }

    /// Add `n` read disturbs to every wordline of a block except `except`,
    /// as `n` reads of that wordline would.
    pub fn apply_reads(&mut self, a: BlockAddress, except: usize, n: u64) -> Result<()> {
        self.check_wl(except)?;
        let i = self.index(a)?;
        for (w, c) in self.blocks[i].read_disturbs.iter_mut().enumerate() {
            if w != except {
                *c += n;
            }
        }
        Ok(())
    }

    /// Read a page with per-cell read reference voltages (used by re-read
    /// schemes); counts as one read.
    pub fn read_page_per_cell(&mut self, addr: PageAddress, vrefs_of: &dyn Fn(usize) -> VrefTriple) -> Result<PageRead> {
        if self.mode != Mode::MonteCarlo {
            return Err(Error::InvalidArgument("per-cell reads need Monte Carlo mode".into()));
        }
        let i = self.index(addr.block_addr())?;
        self.check_wl(addr.wordline)?;
        self.check_readable(i, addr.wordline)?;
        self.reads += 1;
        let vth = self.cell_vth(i, addr.wordline)?;
        let cells = self.blocks[i].wordlines[addr.wordline].cells.as_ref().expect("checked");
        let re = self.models.read_error;
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(self.seed, &[3, i as u64, addr.wordline as u64, self.reads]));
        let mut sense = |v: f64, r: f64| -> bool {
            let on = v >= r;
            if re.enabled && rng.random::<f64>() < read_error_probability(&re, r - v) {
                !on
            } else {
                on
            }
        };
        let mut errors = 0.0;
        let bits: Vec<bool> = vth
            .iter()
            .enumerate()
            .map(|(k, &v)| {
                let vr = vrefs_of(k);
                let (em, el) = gray_encode(cells.states[k]);
                let (bit, expect) = match addr.page_type {
                    PageType::Msb => (!sense(v, vr.va()) || sense(v, vr.vc()), em),
                    PageType::Lsb => (!sense(v, vr.vb()), el),
                };
                if bit != expect {
                    errors += 1.0;
                }
                bit
            })
            .collect();
        let n = bits.len();
        for (w, c) in self.blocks[i].read_disturbs.iter_mut().enumerate() {
            if w != addr.wordline {
                *c += 1;
            }
        }
        Ok(PageRead {
            bits: Some(bits),
            raw_errors: errors,
            cells: n,
        })
    }

    /// Programmed bits of a page.
    pub fn programmed_bits(&self, addr: PageAddress) -> Result<Vec<bool>> {
        let i = self.index(addr.block_addr())?;
        self.check_wl(addr.wordline)?;
        self.check_readable(i, addr.wordline)?;
        let cells = self.blocks[i].wordlines[addr.wordline]
            .cells
            .as_ref()
            .ok_or_else(|| Error::NotProgrammed("no cell data in analytic mode".into()))?;
        Ok(cells
            .states
            .iter()
            .map(|s| {
                let (m, l) = gray_encode(*s);
                if addr.page_type == PageType::Msb {
                    m
                } else {
                    l
                }
            })
            .collect())
    }

    /// Programmed states of a wordline (Monte Carlo mode).
    pub fn programmed_states(&self, a: BlockAddress, wl: usize) -> Result<Vec<State>> {
        let i = self.index(a)?;
        self.check_wl(wl)?;
        self.check_readable(i, wl)?;
        self.blocks[i].wordlines[wl]
            .cells
            .as_ref()
            .map(|c| c.states.clone())
            .ok_or_else(|| Error::NotProgrammed("no cell data in analytic mode".into()))
    }

    /// Threshold voltage of each cell from an integer-step sweep, to within
    /// half a step. Does not disturb the block.
    pub fn sweep_read(&self, a: BlockAddress, wl: usize) -> Result<Vec<f64>> {
        let i = self.index(a)?;
        self.check_wl(wl)?;
        self.check_readable(i, wl)?;
        if self.mode != Mode::MonteCarlo {
            return Err(Error::InvalidArgument("sweep_read needs Monte Carlo mode".into()));
        }
        let vth = self.cell_vth(i, wl)?;
        let lo = self.window.min.floor();
        let hi = self.window.max.ceil();
        let re = self.models.read_error;
        if !re.enabled {
            // the cell conducts at every step v <= vth
            return Ok(vth.iter().map(|v| v.floor().clamp(lo - 1.0, hi) + 0.5).collect());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(self.seed, &[4, i as u64, wl as u64, self.reads]));
        Ok(vth
            .iter()
            .map(|&v| {
                let mut on = 0.0;
                let mut r = lo;
                while r <= hi {
                    let mut s = v >= r;
                    if rng.random::<f64>() < read_error_probability(&re, r - v) {
                        s = !s;
                    }
                    if s {
                        on += 1.0;
                    }
                    r += 1.0;
                }
                lo - 1.0 + on + 0.5
            })
            .collect())
    }

    /// Misread counts against the integer voltage grid for one wordline.
    pub fn sweep_data(&self, a: BlockAddress, wl: usize) -> Result<SweepData> {
        let i = self.index(a)?;
        self.check_wl(wl)?;
        self.check_readable(i, wl)?;
        match self.mode {
            Mode::MonteCarlo => {
                let vth = self.sweep_read(a, wl)?;
                let states = self.programmed_states(a, wl)?;
                Ok(SweepData::from_cells(&states, &vth, self.window.min.floor() as i32, self.window.max.ceil() as i32))
            }
            Mode::Analytic => {
                let ctx = self.context(i, wl, None);
                analytic_wordline_sweep(&self.models, &ctx, self.blocks[i].neighbors(wl), self.geom.cells_per_wordline as f64, &self.window)
            }
        }
    }

    /// Sweep counts accumulated over every programmed wordline of a block.
    pub fn block_sweep_data(&self, a: BlockAddress) -> Result<SweepData> {
        let mut total = SweepData::empty(self.window.min.floor() as i32, self.window.max.ceil() as i32);
        let b = self.block(a)?;
        for wl in 0..self.geom.wordlines_per_block {
            if b.is_programmed(wl) {
                total.add(&self.sweep_data(a, wl)?)?;
            }
        }
        Ok(total)
    }

    /// Per-page RBER of a block at the vrefs chosen by `policy(layer)`.
    /// Characterization reads; disturb counters are unchanged.
    pub fn measure_block_rber(&self, a: BlockAddress, policy: &dyn Fn(usize) -> Result<VrefTriple>) -> Result<Vec<PageRber>> {
        let i = self.index(a)?;
        let mut out = Vec::new();
        for wl in 0..self.geom.wordlines_per_block {
            if !self.blocks[i].is_programmed(wl) {
                continue;
            }
            let layer = self.layer_of(wl);
            let v = policy(layer)?;
            for pt in [PageType::Msb, PageType::Lsb] {
                let rber = match self.mode {
                    Mode::Analytic => self.expected_page(i, wl, pt, &v)?,
                    Mode::MonteCarlo => {
                        let (_, e) = self.sense_page(i, wl, pt, &v, u64::MAX - wl as u64)?;
                        e / self.geom.cells_per_wordline as f64
                    }
                };
                out.push(PageRber {
                    layer,
                    page_type: pt,
                    rber,
                });
            }
        }
        Ok(out)
    }

    /// Plain-text dump of the simulator state.
    pub fn snapshot(&self) -> String {
        let mut s = String::new();
        let g = &self.geom;
        let _ = writeln!(s, "nandsim snapshot v1");
        let _ = writeln!(s, "mode {:?}", self.mode);
        let _ = writeln!(s, "geometry chips={} blocks={} wordlines={} cells={}", g.n_chips, g.blocks_per_chip, g.wordlines_per_block, g.cells_per_wordline);
        let _ = writeln!(s, "seed {}", self.seed);
        let _ = writeln!(s, "clock_s {}", self.clock_s);
        let _ = writeln!(s, "reads {}", self.reads);
        let _ = writeln!(s, "dwell_s {DWELL_S}");
        for (i, b) in self.blocks.iter().enumerate() {
            let wl: String = b
                .wordlines
                .iter()
                .map(|w| match (w.blank, w.order) {
                    (true, _) => 'B',
                    (false, Some(_)) => 'P',
                    (false, None) => 'E',
                })
                .collect();
            let _ = writeln!(
                s,
                "block chip={} block={} pec={} epoch_s={} wordlines={} max_disturb={}",
                i / g.blocks_per_chip,
                i % g.blocks_per_chip,
                b.pec,
                b.program_epoch_s,
                wl,
                b.read_disturbs.iter().max().copied().unwrap_or(0)
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::empirical_vopt;
    use crate::models::{LayerVariationProfile, RetentionWearModel};

    const B0: BlockAddress = BlockAddress { chip: 0, block: 0 };

    fn small(mode: Mode, cells: usize, wls: usize) -> FlashSim {
        let geom = ChipGeometry {
            n_chips: 1,
            blocks_per_chip: 2,
            wordlines_per_block: wls,
            cells_per_wordline: cells,
        };
        FlashSim::new(geom, mode, ErrorModels::flat(wls), 7).unwrap()
    }

    fn page(wl: usize, pt: PageType) -> PageAddress {
        PageAddress {
            chip: 0,
            block: 0,
            wordline: wl,
            page_type: pt,
        }
    }

    fn default_vrefs(sim: &FlashSim) -> VrefTriple {
        crate::models::eval_vopt(&sim.models.wear, &sim.models.profile, &CellContext::new(0, 86_400.0, 0)).unwrap()
    }

    #[test]
    fn all_er_reads_clean_at_birth() {
        let mut sim = small(Mode::MonteCarlo, 4096, 4);
        let data: Vec<_> = (0..4).map(|_| Some(WordlineData::uniform(State::Er, 4096))).collect();
        sim.program_block(B0, &data).unwrap();
        let v = default_vrefs(&sim);
        let mut errors = 0.0;
        for wl in 0..4 {
            for pt in [PageType::Msb, PageType::Lsb] {
                errors += sim.read_page(page(wl, pt), &v).unwrap().raw_errors;
            }
        }
        assert!(errors / (8.0 * 4096.0) < 1e-6);
    }

    #[test]
    fn program_order_rules() {
        let mut sim = small(Mode::MonteCarlo, 16, 4);
        let d = WordlineData::uniform(State::P2, 16);
        assert!(matches!(sim.program_wordline(B0, 1, &d), Err(Error::ProgramOrder(_))));
        sim.set_blank_wordlines(B0, &[1]).unwrap();
        sim.program_wordline(B0, 2, &d).unwrap();
        sim.program_wordline(B0, 3, &d).unwrap();
        sim.program_wordline(B0, 0, &d).unwrap();
        assert!(matches!(sim.program_wordline(B0, 1, &d), Err(Error::ProgramOrder(_))));
        assert!(matches!(sim.read_page(page(1, PageType::Msb), &default_vrefs(&sim)), Err(Error::NotProgrammed(_))));
        assert!(sim.block(B0).unwrap().neighbors(0) == Neighbors::default());
    }

    #[test]
    fn pec_counts_erase_program_pairs() {
        let mut sim = small(Mode::Analytic, 8, 2);
        sim.program_block_random(B0).unwrap();
        assert_eq!(sim.block(B0).unwrap().pec, 0);
        for k in 1..=3 {
            sim.erase_block(B0).unwrap();
            assert_eq!(sim.block(B0).unwrap().pec, k - 1);
            sim.program_block_random(B0).unwrap();
            assert_eq!(sim.block(B0).unwrap().pec, k);
        }
    }

    #[test]
    fn next_wordline_interference() {
        let mut sim = small(Mode::MonteCarlo, 2000, 2);
        sim.models.program_interference.enabled = true;
        let victim = WordlineData::uniform(State::P1, 2000);
        sim.set_blank_wordlines(B0, &[]).unwrap();
        sim.program_wordline(B0, 0, &victim).unwrap();
        let before = sim.cell_vth(0, 0).unwrap();
        sim.program_wordline(B0, 1, &WordlineData::uniform(State::P3, 2000)).unwrap();
        let after = sim.cell_vth(0, 0).unwrap();
        let birth = sim.models.distributions(&CellContext::new(0, 60.0, 1)).unwrap();
        let agg = (0..2000)
            .map(|k| {
                let z = sim.blocks[0].wordlines[1].cells.as_ref().unwrap().z[k] as f64;
                birth[3].mean() + birth[3].stdev() * z - birth[0].mean()
            })
            .collect::<Vec<_>>();
        for k in 0..2000 {
            assert!((after[k] - before[k] - 0.027 * agg[k]).abs() < 1e-4);
        }
    }

    #[test]
    fn blank_wordline_contributes_no_interference() {
        let mut sim = small(Mode::MonteCarlo, 500, 3);
        sim.models.program_interference.enabled = true;
        let d = WordlineData::uniform(State::P2, 500);
        sim.program_block(B0, &[Some(d.clone()), None, Some(d)]).unwrap();
        let pi = &sim.blocks[0].wordlines[0].cells.as_ref().unwrap().pi_shift;
        assert!(pi.iter().all(|s| *s == 0.0));
    }

    #[test]
    fn read_errors_make_reads_nondeterministic() {
        let mut sim = small(Mode::MonteCarlo, 4096, 2);
        sim.program_block_random(B0).unwrap();
        sim.advance_clock(1e6).unwrap();
        let v = default_vrefs(&sim);
        let a = sim.read_page(page(0, PageType::Msb), &v).unwrap();
        let b = sim.read_page(page(0, PageType::Msb), &v).unwrap();
        assert_eq!(a.bits, b.bits);
        sim.models.read_error.enabled = true;
        sim.models.read_error.amplitude = 0.3;
        let c = sim.read_page(page(0, PageType::Msb), &v).unwrap();
        let d = sim.read_page(page(0, PageType::Msb), &v).unwrap();
        assert_ne!(c.bits, d.bits);
    }

    #[test]
    fn read_disturb_shifts_er_by_eight() {
        let mut sim = small(Mode::MonteCarlo, 4096, 2);
        sim.models.read_disturb.enabled = true;
        let data: Vec<_> = (0..2).map(|_| Some(WordlineData::uniform(State::Er, 4096))).collect();
        sim.program_block(B0, &data).unwrap();
        let before = sim.sweep_read(B0, 1).unwrap();
        sim.apply_reads(B0, 0, 900_000).unwrap();
        let after = sim.sweep_read(B0, 1).unwrap();
        let shift = after.iter().zip(&before).map(|(a, b)| a - b).sum::<f64>() / 4096.0;
        assert!((shift - 8.0).abs() < 0.3, "{shift}");
    }

    #[test]
    fn shifted_vrefs_increase_rber() {
        let mut sim = small(Mode::MonteCarlo, 16_384, 2);
        sim.program_block_random(B0).unwrap();
        sim.advance_clock(1e5).unwrap();
        let d = sim.models.distributions(&CellContext::new(0, 1e5, 0)).unwrap();
        let opt = crate::voltage::optimal_vrefs(&d).unwrap();
        let hi = opt.offset(30.0, 30.0, 30.0).unwrap();
        for pt in [PageType::Msb, PageType::Lsb] {
            let a = sim.read_page(page(0, pt), &opt).unwrap().raw_errors;
            let b = sim.read_page(page(0, pt), &hi).unwrap().raw_errors;
            assert!(b > a);
        }
    }

    #[test]
    fn sweep_read_within_half_step() {
        let mut sim = small(Mode::MonteCarlo, 1000, 2);
        sim.program_block_random(B0).unwrap();
        let truth = sim.cell_vth(0, 0).unwrap();
        let est = sim.sweep_read(B0, 0).unwrap();
        for (t, e) in truth.iter().zip(&est) {
            if *t >= sim.window.min && *t < sim.window.max {
                assert!((t - e).abs() <= 0.5 + 1e-12);
            }
        }
        let disturbs = sim.block(B0).unwrap().read_disturbs.clone();
        assert!(disturbs.iter().all(|d| *d == 0));
    }

    #[test]
    fn retention_isolation() {
        let mut sim = small(Mode::MonteCarlo, 40_000, 2);
        sim.program_block_random(B0).unwrap();
        let states = sim.programmed_states(B0, 0).unwrap();
        let mean_of = |v: &[f64], s: State| {
            let xs: Vec<f64> = v.iter().zip(&states).filter(|(_, x)| **x == s).map(|(v, _)| *v).collect();
            xs.iter().sum::<f64>() / xs.len() as f64
        };
        let v0 = sim.cell_vth(0, 0).unwrap();
        sim.advance_clock(1e6).unwrap();
        let v1 = sim.cell_vth(0, 0).unwrap();
        for s in State::ALL {
            let a = sim.models.distribution(&CellContext::new(0, 60.0, 0), s).unwrap();
            let b = sim.models.distribution(&CellContext::new(0, 1e6, 0), s).unwrap();
            let model = b.mean() - a.mean();
            let measured = mean_of(&v1, s) - mean_of(&v0, s);
            // drift is functional, so the z-term change is (sigma1 - sigma0) * mean(z)
            assert!((measured - model).abs() < 0.1, "{s}: {measured} vs {model}");
        }
    }

    #[test]
    fn determinism() {
        let run = || {
            let mut sim = small(Mode::MonteCarlo, 2048, 4);
            sim.models.read_error.enabled = true;
            sim.program_block_random(B0).unwrap();
            sim.advance_clock(5e5).unwrap();
            let v = default_vrefs(&sim);
            (0..4).map(|wl| sim.read_page(page(wl, PageType::Lsb), &v).unwrap().bits).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn analytic_block_optimum_is_near_closed_form_for_flat_profile() {
        let m = ErrorModels::flat(8);
        let sd = analytic_block_sweep(&m, 5000, 1e5, 8, 4096.0, &VoltageWindow::default()).unwrap();
        let e = empirical_vopt(&sd);
        let d = m.distributions(&CellContext::new(5000, 1e5, 0)).unwrap();
        let c = crate::voltage::optimal_vrefs(&d).unwrap().to_array();
        for b in 0..3 {
            assert!((e.values[b] - c[b]).abs() <= 1.0);
        }
    }

    #[test]
    fn profile_must_cover_geometry() {
        let w = RetentionWearModel::fitted();
        let m = ErrorModels::with_profile(w, LayerVariationProfile::flat(4));
        assert!(FlashSim::new(ChipGeometry::default(), Mode::Analytic, m, 1).is_err());
    }

    #[test]
    fn snapshot_lists_blocks() {
        let mut sim = small(Mode::Analytic, 8, 3);
        sim.program_block(B0, &[Some(WordlineData::uniform(State::P1, 8)), None, Some(WordlineData::uniform(State::P1, 8))]).unwrap();
        let s = sim.snapshot();
        assert!(s.contains("wordlines=PBP"));
        assert_eq!(s.lines().filter(|l| l.starts_with("block ")).count(), 2);
    }
}
