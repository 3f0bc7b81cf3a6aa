//! Read-reference-voltage policies and mitigation mechanisms: fixed and
//! PEC-only baselines, LaVAR layer offsets, ReMAR retention-aware Vopt,
//! ReNAC neighbor-keyed re-reads, FCR periodic refresh, and ECC sizing.

use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;

use crate::error::{Error, Result};
use crate::fit::{empirical_vopt, ols_fit, ols_fit_va, OlsFit};
use crate::models::{eval_vopt, CellContext, LayerVariationProfile, RetentionInterferenceModel, RetentionWearModel, Variable, DAY_S};
use crate::sim::{BlockAddress, FlashSim, Mode, PageAddress, PageRead, PageType, WordlineData};
use crate::voltage::{State, VrefTriple};

/// Reference retention of the PEC-only policy (50 minutes).
pub const T_REF_S: f64 = 3_000.0;
/// Condition defining the factory default read voltages.
pub const FIXED_DEFAULT_PEC: u32 = 0;
pub const FIXED_DEFAULT_T_S: f64 = DAY_S;

/// Controller-side metadata of one block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockMetadata {
    pub pec: u32,
    /// Program time in whole epoch seconds.
    pub program_epoch_s: u32,
}

impl BlockMetadata {
    pub fn new(pec: u32, program_epoch_s: u32) -> Self {
        BlockMetadata { pec, program_epoch_s }
    }

    pub fn from_sim(sim: &FlashSim, a: BlockAddress) -> Result<Self> {
        let b = sim.block(a)?;
        let e = b.program_epoch_s.floor();
        if !(0.0..=u32::MAX as f64).contains(&e) {
            return Err(Error::InvalidArgument(format!("program epoch {e} does not fit in 32 bits")));
        }
        Ok(BlockMetadata {
            pec: b.pec,
            program_epoch_s: e as u32,
        })
    }
}

/// Block-level Vopt predicted by the model rows, without layer offsets.
pub fn model_vopt(model: &RetentionWearModel, pec: u32, t_s: f64) -> Result<VrefTriple> {
    eval_vopt(model, &LayerVariationProfile::flat(1), &CellContext::new(pec, t_s, 0))
}

/// Fixed read voltages taken from the model at a given condition.
pub fn policy_fixed(model: &RetentionWearModel, pec: u32, t_s: f64) -> Result<VrefTriple> {
    model_vopt(model, pec, t_s)
}

/// Factory default: model Vopt of a fresh block after one day.
pub fn policy_fixed_default(model: &RetentionWearModel) -> Result<VrefTriple> {
    policy_fixed(model, FIXED_DEFAULT_PEC, FIXED_DEFAULT_T_S)
}

/// PEC-only Vopt at a fixed reference retention.
pub fn policy_state_of_the_art(model: &RetentionWearModel, meta: &BlockMetadata, t_ref_s: f64) -> Result<VrefTriple> {
    model_vopt(model, meta.pec, t_ref_s)
}

/// Per-layer Va/Vb offsets, one signed byte each.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerOffsetTable {
    // [va0, vb0, va1, vb1, ...]
    entries: Vec<i8>,
}

impl LayerOffsetTable {
    pub fn zeros(n_layers: usize) -> Self {
        LayerOffsetTable {
            entries: vec![0; 2 * n_layers],
        }
    }

    /// Offsets are rounded and must lie in [-127, 127].
    pub fn from_offsets(offsets: &[(f64, f64)]) -> Result<Self> {
        let conv = |x: f64| -> Result<i8> {
            let r = x.round();
            if !(-127.0..=127.0).contains(&r) {
                return Err(Error::InvalidArgument(format!("offset {x} outside [-127, 127]")));
            }
            Ok(r as i8)
        };
        let mut entries = Vec::with_capacity(2 * offsets.len());
        for &(a, b) in offsets {
            entries.push(conv(a)?);
            entries.push(conv(b)?);
        }
        Ok(LayerOffsetTable { entries })
    }

    pub fn n_layers(&self) -> usize {
        self.entries.len() / 2
    }

    /// Raw table bytes; length is twice the layer count.
    pub fn entries(&self) -> &[i8] {
        &self.entries
    }

    pub fn offset(&self, layer: usize) -> Result<(i8, i8)> {
        if layer >= self.n_layers() {
            return Err(Error::Address(format!("layer {layer} of {}", self.n_layers())));
        }
        Ok((self.entries[2 * layer], self.entries[2 * layer + 1]))
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(|e| *e == 0)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["layer", "va_offset", "vb_offset"])?;
        for l in 0..self.n_layers() {
            let (a, b) = self.offset(l)?;
            out.write_record([l.to_string(), a.to_string(), b.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Learn a LaVAR table from a programmed sample block: per-wordline
/// empirical Vopt minus `base`, the block's variation-agnostic Vopt.
pub fn lavar_learn_with_base(sim: &FlashSim, a: BlockAddress, base: &VrefTriple) -> Result<LayerOffsetTable> {
    let n = sim.models.profile.n_layers().min(sim.geometry().wordlines_per_block);
    let mut sums = vec![(0.0, 0.0, 0usize); n];
    let b = sim.block(a)?;
    for wl in 0..sim.geometry().wordlines_per_block {
        if !b.is_programmed(wl) {
            continue;
        }
        let layer = sim.layer_of(wl);
        if layer >= n {
            continue;
        }
        let e = empirical_vopt(&sim.sweep_data(a, wl)?);
        let s = &mut sums[layer];
        if !e.degenerate[0] {
            s.0 += e.values[0] - base.va();
        }
        if !e.degenerate[1] {
            s.1 += e.values[1] - base.vb();
        }
        s.2 += 1;
    }
    let offs: Vec<(f64, f64)> = sums
        .iter()
        .map(|&(a, b, k)| if k == 0 { (0.0, 0.0) } else { (a / k as f64, b / k as f64) })
        .collect();
    LayerOffsetTable::from_offsets(&offs)
}

/// Learn a LaVAR table relative to the sample block's measured
/// variation-agnostic Vopt.
pub fn lavar_learn(sim: &FlashSim, a: BlockAddress) -> Result<LayerOffsetTable> {
    let base = block_empirical_vopt(sim, a)?;
    lavar_learn_with_base(sim, a, &base)
}

/// Learn a LaVAR table relative to the model-predicted block Vopt at the
/// sample block's wear and retention, so that read-time offsets are added
/// to the same predictor.
pub fn lavar_learn_model_base(sim: &FlashSim, a: BlockAddress) -> Result<LayerOffsetTable> {
    let pec = sim.block(a)?.pec;
    let base = model_vopt(&sim.models.wear, pec, sim.retention_s(a)?)?;
    lavar_learn_with_base(sim, a, &base)
}

/// Variation-agnostic block Vopt measured by sweeping every wordline.
pub fn block_empirical_vopt(sim: &FlashSim, a: BlockAddress) -> Result<VrefTriple> {
    empirical_vopt(&sim.block_sweep_data(a)?).vrefs()
}

/// Apply a layer's offsets to a per-block Vopt.
pub fn lavar_read_vrefs(base: &VrefTriple, table: &LayerOffsetTable, layer: usize) -> Result<VrefTriple> {
    let (a, b) = table.offset(layer)?;
    base.offset(a as f64, b as f64, 0.0)
}

/// ReMAR's fitted Vopt models: Va on PEC only, Vb and Vc on the full form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RemarFits {
    pub va: OlsFit,
    pub vb: OlsFit,
    pub vc: OlsFit,
}

impl RemarFits {
    /// Fits equal to the model's own Vopt rows.
    pub fn from_model(model: &RetentionWearModel) -> Self {
        let f = |v: Variable| OlsFit {
            coeffs: model.row(v),
            std_errors: [0.0; 4],
            residual_variance: 0.0,
            adj_r2: 1.0,
            n: 0,
        };
        let mut va = f(Variable::VoptA);
        va.coeffs.alpha = 0.0;
        va.coeffs.beta = 0.0;
        RemarFits {
            va,
            vb: f(Variable::VoptB),
            vc: f(Variable::VoptC),
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["variable", "alpha", "beta", "gamma", "delta", "adj_r2", "n"])?;
        for (name, f) in [("vopt_a", &self.va), ("vopt_b", &self.vb), ("vopt_c", &self.vc)] {
            let c = f.coeffs;
            out.write_record([
                name.to_string(),
                c.alpha.to_string(),
                c.beta.to_string(),
                c.gamma.to_string(),
                c.delta.to_string(),
                f.adj_r2.to_string(),
                f.n.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Retention-aware Vopt for a read at `now_s`.
pub fn remar_predict(fits: Option<&RemarFits>, meta: &BlockMetadata, now_s: f64, t_min_s: f64) -> Result<VrefTriple> {
    let f = fits.ok_or(Error::ModelNotTrained)?;
    let epoch = meta.program_epoch_s as f64;
    if now_s < epoch {
        return Err(Error::InvalidArgument(format!("read time {now_s} precedes program time {epoch}")));
    }
    let t = (now_s - epoch).max(t_min_s);
    let pec = meta.pec as f64;
    let va = f.va.coeffs.gamma * pec + f.va.coeffs.delta;
    VrefTriple::new(va, f.vb.predict(pec, t), f.vc.predict(pec, t))
}

/// One observed (PEC, retention, Vopt) sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RemarSample {
    pub pec: f64,
    pub t_s: f64,
    pub vopt: [f64; 3],
}

/// Online ReMAR state: the sample log and the latest fits.
#[derive(Debug, Clone)]
pub struct Remar {
    samples: Vec<RemarSample>,
    fits: Option<Arc<RemarFits>>,
    pub t_min_s: f64,
    pub min_samples: usize,
}

impl Default for Remar {
    fn default() -> Self {
        Remar {
            samples: Vec::new(),
            fits: None,
            t_min_s: crate::models::T_MIN_S,
            min_samples: 8,
        }
    }
}

impl Remar {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_fits(fits: RemarFits) -> Self {
        Remar {
            fits: Some(Arc::new(fits)),
            ..Self::default()
        }
    }

    pub fn samples(&self) -> &[RemarSample] {
        &self.samples
    }

    /// Current snapshot of the fits.
    pub fn fits(&self) -> Option<Arc<RemarFits>> {
        self.fits.clone()
    }

    pub fn predict(&self, meta: &BlockMetadata, now_s: f64) -> Result<VrefTriple> {
        remar_predict(self.fits.as_deref(), meta, now_s, self.t_min_s)
    }

    fn ready(&self) -> bool {
        let distinct = |f: &dyn Fn(&RemarSample) -> f64| {
            let mut v: Vec<f64> = self.samples.iter().map(f).collect();
            v.sort_by(|a, b| a.total_cmp(b));
            v.dedup();
            v.len()
        };
        self.samples.len() >= self.min_samples && distinct(&|s| s.pec) >= 2 && distinct(&|s| s.t_s) >= 2
    }

    /// Record a sample; refit when the sample set is diverse enough.
    /// Returns whether the fits were replaced. A degenerate design (for
    /// example a single sample at a new PEC) keeps the previous fits.
    pub fn observe_sample(&mut self, s: RemarSample) -> Result<bool> {
        self.samples.push(s);
        if !self.ready() {
            return Ok(false);
        }
        let refit = || -> Result<RemarFits> {
            let va = ols_fit_va(&self.samples.iter().map(|s| (s.pec, s.vopt[0])).collect::<Vec<_>>())?;
            let full = |i: usize| ols_fit(&self.samples.iter().map(|s| (s.pec, s.t_s, s.vopt[i])).collect::<Vec<_>>());
            Ok(RemarFits {
                va,
                vb: full(1)?,
                vc: full(2)?,
            })
        };
        match refit() {
            Ok(f) => {
                self.fits = Some(Arc::new(f));
                Ok(true)
            }
            Err(Error::InsufficientSampleDiversity(_)) => Ok(false),
            Err(e) => Err(e),
        }
    }

    /// Measure the empirical block Vopt of one block and record it.
    pub fn observe_block(&mut self, sim: &FlashSim, a: BlockAddress) -> Result<bool> {
        let pec = sim.block(a)?.pec as f64;
        let t = sim.retention_s(a)?;
        let v = block_empirical_vopt(sim, a)?;
        self.observe_sample(RemarSample {
            pec,
            t_s: t,
            vopt: v.to_array(),
        })
    }

    /// Observe a randomly chosen programmed block.
    pub fn observe(&mut self, sim: &FlashSim, rng: &mut impl Rng) -> Result<bool> {
        let g = sim.geometry();
        let mut live = Vec::new();
        for chip in 0..g.n_chips {
            for block in 0..g.blocks_per_chip {
                let a = BlockAddress { chip, block };
                if !sim.block(a)?.is_erased() {
                    live.push(a);
                }
            }
        }
        if live.is_empty() {
            return Err(Error::NotProgrammed("no programmed block to observe".into()));
        }
        let a = live[rng.random_range(0..live.len())];
        self.observe_block(sim, a)
    }
}

/// Shift of boundary `b` for victims next to a neighbor in state `n`.
pub fn renac_boundary_shift(model: &RetentionInterferenceModel, b: usize, n: State, retention_s: f64) -> f64 {
    let lo = State::from_index(b).expect("boundary index < 3");
    let hi = State::from_index(b + 1).expect("boundary index < 3");
    0.5 * (model.adjustment(lo, n, retention_s) + model.adjustment(hi, n, retention_s))
}

/// Re-read a page after an ECC failure with vrefs keyed by the state of the
/// vertically adjacent cell on the next wordline. The neighbor read and one
/// re-read per neighbor-state group count as block reads.
pub fn renac_reread(
    sim: &mut FlashSim,
    addr: PageAddress,
    vrefs: &VrefTriple,
    model: &RetentionInterferenceModel,
    retention_s: f64,
) -> Result<PageRead> {
    let a = addr.block_addr();
    let next = addr.wordline + 1;
    if next >= sim.geometry().wordlines_per_block {
        return Err(Error::NoNeighbor);
    }
    let blk = sim.block(a)?;
    if !blk.is_programmed(next) || blk.is_blank(next) {
        return Err(Error::NoNeighbor);
    }
    let page = |pt| PageAddress {
        wordline: next,
        page_type: pt,
        ..addr
    };
    let msb = sim.read_page(page(PageType::Msb), vrefs)?;
    let lsb = sim.read_page(page(PageType::Lsb), vrefs)?;
    let (Some(mb), Some(lb)) = (msb.bits, lsb.bits) else {
        return Err(Error::InvalidArgument("ReNAC needs Monte Carlo mode".into()));
    };
    let neighbor: Vec<State> = mb.iter().zip(&lb).map(|(m, l)| State::from_bits(*m, *l)).collect();
    let mut per_state = [*vrefs; 4];
    for n in State::ALL {
        let d: Vec<f64> = (0..3).map(|b| renac_boundary_shift(model, b, n, retention_s)).collect();
        per_state[n.index()] = vrefs.offset(d[0], d[1], d[2])?;
    }
    let groups = State::ALL.iter().filter(|s| neighbor.contains(s)).count() as u64;
    let out = sim.read_page_per_cell(addr, &|k| per_state[neighbor[k].index()])?;
    if groups > 1 {
        sim.apply_reads(a, addr.wordline, groups - 1)?;
    }
    Ok(out)
}

/// Periodic refresh: every period, each live block is erased and
/// reprogrammed with its data, consuming one P/E cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct FcrScheduler {
    pub period_s: f64,
    next_due_s: f64,
    pub refreshes: u64,
}

/// Install a refresh schedule starting at the simulator's current time.
pub fn fcr_refresh(sim: &FlashSim, period_s: f64) -> Result<FcrScheduler> {
    if !(period_s > 0.0) {
        return Err(Error::InvalidArgument(format!("refresh period {period_s} must be > 0")));
    }
    Ok(FcrScheduler {
        period_s,
        next_due_s: sim.clock_s() + period_s,
        refreshes: 0,
    })
}

impl FcrScheduler {
    pub fn next_due_s(&self) -> f64 {
        self.next_due_s
    }

    /// Advance the clock by `dt_s`, refreshing at each due time on the way.
    /// Returns the number of block rewrites.
    pub fn advance(&mut self, sim: &mut FlashSim, dt_s: f64) -> Result<usize> {
        if !(dt_s >= 0.0) {
            return Err(Error::InvalidArgument(format!("clock advance {dt_s} must be >= 0")));
        }
        let end = sim.clock_s() + dt_s;
        let mut n = 0;
        while self.next_due_s <= end {
            sim.advance_clock(self.next_due_s - sim.clock_s())?;
            n += refresh_all(sim)?;
            self.refreshes += 1;
            self.next_due_s += self.period_s;
        }
        sim.advance_clock(end - sim.clock_s())?;
        Ok(n)
    }
}

fn refresh_all(sim: &mut FlashSim) -> Result<usize> {
    let g = *sim.geometry();
    let mut n = 0;
    for chip in 0..g.n_chips {
        for block in 0..g.blocks_per_chip {
            let a = BlockAddress { chip, block };
            if sim.block(a)?.is_erased() {
                continue;
            }
            let mut data = Vec::with_capacity(g.wordlines_per_block);
            for wl in 0..g.wordlines_per_block {
                if !sim.block(a)?.is_programmed(wl) {
                    data.push(None);
                    continue;
                }
                let d = match sim.mode() {
                    Mode::MonteCarlo => {
                        let p = |pt| PageAddress {
                            chip,
                            block,
                            wordline: wl,
                            page_type: pt,
                        };
                        WordlineData {
                            msb: sim.programmed_bits(p(PageType::Msb))?,
                            lsb: sim.programmed_bits(p(PageType::Lsb))?,
                        }
                    }
                    Mode::Analytic => WordlineData::uniform(State::Er, g.cells_per_wordline),
                };
                data.push(Some(d));
            }
            sim.erase_block(a)?;
            sim.program_block(a, &data)?;
            n += 1;
        }
    }
    Ok(n)
}

/// Codeword parameters for ECC sizing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EccConfig {
    /// Data bits per codeword.
    pub k: u32,
    /// Parity bits per correctable error.
    pub m: u32,
    /// Target probability that a codeword has more than `t` errors.
    pub target: f64,
    pub rber_limit: f64,
}

/// Calibrated so that sizing at RBER 3e-3 gives a 12.8% overhead.
pub const ECC_CALIBRATED_TARGET: f64 = 3.3e-14;

impl Default for EccConfig {
    fn default() -> Self {
        EccConfig {
            k: 8192,
            m: 14,
            target: ECC_CALIBRATED_TARGET,
            rber_limit: 3e-3,
        }
    }
}

impl EccConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 || self.m < 1 {
            return Err(Error::Config(format!("ecc k={} and m={} must be >= 1", self.k, self.m)));
        }
        if !(self.rber_limit > 0.0 && self.rber_limit < 0.5) {
            return Err(Error::Config(format!("ecc rber_limit {} must be in (0, 0.5)", self.rber_limit)));
        }
        if !(self.target > 0.0 && self.target < 1.0) {
            return Err(Error::Config(format!("ecc target {} must be in (0, 1)", self.target)));
        }
        Ok(())
    }
}

/// ln P(X > t) for X ~ Binomial(n, p), summed term by term in log space.
pub fn ln_binomial_sf(n: u64, p: f64, t: u64) -> f64 {
    if t >= n || p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return 0.0;
    }
    let (lp, lq) = (p.ln(), (-p).ln_1p());
    let term = |j: u64| ln_binomial(n, j) + j as f64 * lp + (n - j) as f64 * lq;
    let mode = ((n + 1) as f64 * p).floor() as u64;
    let mut max = f64::NEG_INFINITY;
    let mut terms = Vec::new();
    for j in (t + 1)..=n {
        let x = term(j);
        terms.push(x);
        max = max.max(x);
        if j > mode && x < max - 60.0 {
            break;
        }
    }
    max + terms.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Smallest number of correctable errors meeting the target at `rber`.
pub fn ecc_required_t(rber: f64, ecc: &EccConfig) -> Result<u32> {
    if !(rber >= 0.0 && rber < 0.5) {
        return Err(Error::InvalidArgument(format!("rber {rber} outside [0, 0.5)")));
    }
    let lt = ecc.target.ln();
    for t in 0..=(ecc.k / ecc.m) {
        let n = ecc.k as u64 + t as u64 * ecc.m as u64;
        if ln_binomial_sf(n, rber, t as u64) <= lt {
            return Ok(t);
        }
    }
    Err(Error::RberBeyondCodeFamily)
}

/// Parity fraction `t*m/k` needed at `rber`.
pub fn ecc_required_overhead(rber: f64, ecc: &EccConfig) -> Result<f64> {
    Ok(ecc_required_t(rber, ecc)? as f64 * ecc.m as f64 / ecc.k as f64)
}

/// Correctable errors per codeword of the code sized for `rber_limit`.
pub fn correctable_t(ecc: &EccConfig) -> Result<u32> {
    ecc_required_t(ecc.rber_limit, ecc)
}

pub fn ecc_page_fails(raw_errors: u64, ecc: &EccConfig) -> Result<bool> {
    Ok(raw_errors > correctable_t(ecc)? as u64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ErrorModels, LayerOffsets};
    use crate::sim::ChipGeometry;
    use proptest::prelude::*;

    const B0: BlockAddress = BlockAddress { chip: 0, block: 0 };

    fn sim(mode: Mode, models: ErrorModels, wls: usize, cells: usize) -> FlashSim {
        let geom = ChipGeometry {
            n_chips: 1,
            blocks_per_chip: 2,
            wordlines_per_block: wls,
            cells_per_wordline: cells,
        };
        FlashSim::new(geom, mode, models, 11).unwrap()
    }

    #[test]
    fn fixed_default_is_model_vopt_at_one_day() {
        let m = RetentionWearModel::fitted();
        let v = policy_fixed_default(&m).unwrap();
        let l = DAY_S.ln();
        assert!((v.va() - 60.52).abs() < 1e-12);
        assert!((v.vb() - (-0.57 * l + 150.56)).abs() < 1e-9);
        assert!((v.vc() - (-1.06 * l + 227.24)).abs() < 1e-9);
    }

    #[test]
    fn state_of_the_art_ignores_epoch() {
        let m = RetentionWearModel::fitted();
        let a = policy_state_of_the_art(&m, &BlockMetadata::new(5000, 0), T_REF_S).unwrap();
        let b = policy_state_of_the_art(&m, &BlockMetadata::new(5000, 999_999), T_REF_S).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, model_vopt(&m, 5000, 3000.0).unwrap());
    }

    #[test]
    fn offset_table_shape_and_range() {
        let t = LayerOffsetTable::zeros(32);
        assert_eq!(t.entries().len(), 64);
        assert!(LayerOffsetTable::from_offsets(&[(127.4, -127.0)]).is_ok());
        assert!(LayerOffsetTable::from_offsets(&[(128.0, 0.0)]).is_err());
        assert!(t.offset(32).is_err());
    }

    #[test]
    fn read_vrefs_apply_offsets() {
        let base = VrefTriple::new(60.0, 140.0, 220.0).unwrap();
        let z = LayerOffsetTable::zeros(4);
        assert_eq!(lavar_read_vrefs(&base, &z, 2).unwrap(), base);
        let t = LayerOffsetTable::from_offsets(&[(0.0, 0.0), (7.0, -3.0)]).unwrap();
        let v = lavar_read_vrefs(&base, &t, 1).unwrap();
        assert_eq!(v.to_array(), [67.0, 137.0, 220.0]);
        let bad = LayerOffsetTable::from_offsets(&[(90.0, 0.0)]).unwrap();
        assert!(lavar_read_vrefs(&base, &bad, 0).is_err());
    }

    #[test]
    fn flat_profile_learns_zero_table() {
        let mut s = sim(Mode::Analytic, ErrorModels::flat(8), 8, 4096);
        s.set_pec(B0, 3000).unwrap();
        s.program_block_random(B0).unwrap();
        s.advance_clock(3000.0).unwrap();
        let base = block_empirical_vopt(&s, B0).unwrap();
        let t = lavar_learn_with_base(&s, B0, &base).unwrap();
        assert!(t.is_zero(), "{:?}", t);
    }

    #[test]
    fn planted_layer_offset_is_recovered() {
        let wear = RetentionWearModel::fitted();
        let mut layers = vec![LayerOffsets::default(); 32];
        // shift ER and P1 together so the Va optimum moves by the same amount
        layers[5].mean[0] = 10.0;
        layers[5].mean[1] = 10.0;
        let profile = LayerVariationProfile::from_layers(layers).unwrap();
        let mut s = sim(Mode::Analytic, ErrorModels::with_profile(wear, profile), 32, 4096);
        s.set_pec(B0, 5000).unwrap();
        s.program_block_random(B0).unwrap();
        s.advance_clock(3000.0).unwrap();
        let t = lavar_learn(&s, B0).unwrap();
        let (a, _) = t.offset(5).unwrap();
        assert!((a as i32 - 10).abs() <= 1, "{a}");
        assert!(t.offset(0).unwrap().0.abs() <= 1);
    }

    #[test]
    fn remar_untrained_then_trained() {
        let m = RetentionWearModel::fitted();
        let mut r = Remar::new();
        let meta = BlockMetadata::new(1000, 0);
        assert_eq!(r.predict(&meta, 1e5), Err(Error::ModelNotTrained));
        for p in [0.0, 4000.0, 8000.0, 12_000.0] {
            for t in [600.0, 1e4, 1e5, 1e6] {
                let v = model_vopt(&m, p as u32, t).unwrap();
                r.observe_sample(RemarSample {
                    pec: p,
                    t_s: t,
                    vopt: v.to_array(),
                })
                .unwrap();
            }
        }
        let v = r.predict(&meta, 1e5).unwrap();
        let g = model_vopt(&m, 1000, 1e5).unwrap();
        for i in 0..3 {
            assert!((v.to_array()[i] - g.to_array()[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn remar_needs_diversity() {
        let mut r = Remar::new();
        for i in 0..10 {
            let fit = r
                .observe_sample(RemarSample {
                    pec: 1000.0,
                    t_s: 100.0 * (i + 1) as f64,
                    vopt: [60.0, 150.0, 220.0],
                })
                .unwrap();
            assert!(!fit);
        }
        assert!(r.fits().is_none());
    }

    #[test]
    fn remar_ground_truth_fits_match_model() {
        let m = RetentionWearModel::fitted();
        let f = RemarFits::from_model(&m);
        let meta = BlockMetadata::new(7000, 1000);
        let v = remar_predict(Some(&f), &meta, 1000.0 + 5e5, 60.0).unwrap();
        assert_eq!(v, model_vopt(&m, 7000, 5e5).unwrap());
        // clamp below t_min
        let c = remar_predict(Some(&f), &meta, 1001.0, 60.0).unwrap();
        assert_eq!(c, model_vopt(&m, 7000, 60.0).unwrap());
        assert!(remar_predict(Some(&f), &meta, 10.0, 60.0).is_err());
    }

    #[test]
    fn renac_needs_neighbor() {
        let mut s = sim(Mode::MonteCarlo, ErrorModels::flat(4), 4, 256);
        s.program_block_random(B0).unwrap();
        let v = policy_fixed_default(&s.models.wear).unwrap();
        let last = PageAddress {
            chip: 0,
            block: 0,
            wordline: 3,
            page_type: PageType::Msb,
        };
        let ri = RetentionInterferenceModel::symmetric(2.0);
        assert_eq!(renac_reread(&mut s, last, &v, &ri, 1e5), Err(Error::NoNeighbor));
        let mut s2 = sim(Mode::MonteCarlo, ErrorModels::flat(4), 4, 256);
        let mut rng = rand::rng();
        let data = vec![
            Some(WordlineData::random(&mut rng, 256)),
            Some(WordlineData::random(&mut rng, 256)),
            None,
            None,
        ];
        s2.program_block(B0, &data).unwrap();
        let p = PageAddress { wordline: 1, ..last };
        assert_eq!(renac_reread(&mut s2, p, &v, &ri, 1e5), Err(Error::NoNeighbor));
    }

    #[test]
    fn renac_zero_model_matches_plain_read() {
        let mut s = sim(Mode::MonteCarlo, ErrorModels::flat(4), 4, 2048);
        s.set_pec(B0, 8000).unwrap();
        s.program_block_random(B0).unwrap();
        s.advance_clock(1e6).unwrap();
        let v = policy_fixed_default(&s.models.wear).unwrap();
        let p = PageAddress {
            chip: 0,
            block: 0,
            wordline: 1,
            page_type: PageType::Lsb,
        };
        let plain = s.read_page(p, &v).unwrap();
        let re = renac_reread(&mut s, p, &v, &RetentionInterferenceModel::default(), 1e6).unwrap();
        assert_eq!(plain.bits, re.bits);
    }

    #[test]
    fn fcr_caps_retention_and_costs_one_cycle_per_period() {
        let mut s = sim(Mode::MonteCarlo, ErrorModels::flat(4), 4, 64);
        s.program_block_random(B0).unwrap();
        let bits = s
            .programmed_bits(PageAddress {
                chip: 0,
                block: 0,
                wordline: 2,
                page_type: PageType::Msb,
            })
            .unwrap();
        let pec0 = s.block(B0).unwrap().pec;
        let period = 3.0 * DAY_S;
        let mut f = fcr_refresh(&s, period).unwrap();
        for _ in 0..20 {
            f.advance(&mut s, DAY_S).unwrap();
            assert!(s.retention_s(B0).unwrap() <= period);
        }
        // 20 days: refreshes at 3, 6, ..., 18
        assert_eq!(s.block(B0).unwrap().pec - pec0, 6);
        assert_eq!(f.refreshes, 6);
        let after = s
            .programmed_bits(PageAddress {
                chip: 0,
                block: 0,
                wordline: 2,
                page_type: PageType::Msb,
            })
            .unwrap();
        assert_eq!(bits, after);
        // the erased block stays untouched
        assert_eq!(s.block(BlockAddress { chip: 0, block: 1 }).unwrap().pec, 0);
    }

    #[test]
    fn ecc_anchor_and_capability() {
        let e = EccConfig::default();
        let oh = ecc_required_overhead(3e-3, &e).unwrap();
        assert!((oh - 0.128).abs() <= 0.02, "{oh}");
        assert_eq!(correctable_t(&e).unwrap(), 75);
        assert!(!ecc_page_fails(0, &e).unwrap());
        assert!(!ecc_page_fails(75, &e).unwrap());
        assert!(ecc_page_fails(76, &e).unwrap());
        assert_eq!(ecc_required_overhead(0.0, &e).unwrap(), 0.0);
        assert_eq!(ecc_required_overhead(0.2, &e), Err(Error::RberBeyondCodeFamily));
    }

    #[test]
    fn binomial_tail_matches_direct_sum() {
        // n = 20, p = 0.1, P(X > 3)
        let mut direct = 0.0;
        for j in 4..=20u64 {
            direct += ln_binomial(20, j).exp() * 0.1f64.powi(j as i32) * 0.9f64.powi(20 - j as i32);
        }
        assert!((ln_binomial_sf(20, 0.1, 3).exp() - direct).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn overhead_monotone(r1 in 1e-6f64..0.02, r2 in 1e-6f64..0.02) {
            let e = EccConfig::default();
            let (lo, hi) = if r1 < r2 { (r1, r2) } else { (r2, r1) };
            prop_assert!(ecc_required_overhead(hi, &e).unwrap() >= ecc_required_overhead(lo, &e).unwrap());
        }

        #[test]
        fn remar_va_invariant_to_time(pec in 0u32..20_000, dt in 0.0f64..1e7) {
            let f = RemarFits::from_model(&RetentionWearModel::fitted());
            let m = BlockMetadata::new(pec, 0);
            let a = remar_predict(Some(&f), &m, 60.0, 60.0).unwrap();
            let b = remar_predict(Some(&f), &m, 60.0 + dt, 60.0).unwrap();
            prop_assert_eq!(a.va(), b.va());
        }
    }
}
