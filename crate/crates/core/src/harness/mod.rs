//! Experiment harness: configuration, policy evaluation on simulated blocks,
//! RBER sweeps, lifetime and refresh studies, characterization replication,
//! CSV/SVG output and the acceptance suite.

mod accept;
mod config;
mod lifetime;
mod plot;
mod replicate;
mod sweep;

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;

pub use accept::{layer_rber_ratio, run_acceptance, AcceptanceReport, Criterion};
pub use config::{
    ExperimentConfig, FcrConfig, GeometryConfig, InterferenceConfig, LavarConfig, ModeName, PecGrid, PolicyConfig,
    PolicyName, ProfileConfig, RaidConfig, RberScale, RemarConfig, ReplicationConfig,
};
pub use lifetime::{endurance, raid_comparison, run_fcr, run_lifetime, worst_curve, FcrResult, LifetimeResult, RaidComparison, Stack};
pub use plot::{emit_plots, svg_bar_chart, svg_line_chart, Series};
pub use replicate::{run_characterization_replication, GammaReport, ReplicationReport, RowFit, RECOVERY_FLOOR};
pub use sweep::{run_rber_sweep, SweepResult, SweepRow};

use crate::controller::{
    block_empirical_vopt, lavar_learn_with_base, lavar_read_vrefs, model_vopt, policy_fixed, BlockMetadata, LayerOffsetTable, Remar,
};
use crate::error::{Error, Result};
use crate::models::{base_distributions, ErrorModels, RetentionWearModel, Variable};
use crate::raid::RaidLayout;
use crate::sim::{sub_seed, BlockAddress, ChipGeometry, FlashSim, Mode, PageRber, PageType};
use crate::voltage::{expected_rber, optimal_vrefs, VrefTriple, UNIFORM_PRIORS};

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Schema(_) | Error::Io(_) => 2,
        _ => 3,
    }
}

/// Exit code when acceptance bands are missed.
pub const EXIT_ACCEPTANCE: i32 = 4;

/// Write a CSV with a provenance comment line ahead of the header.
pub fn write_csv<W: Write>(w: W, config_hash: &str, seed: u64, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = w;
    writeln!(w, "# config_hash={config_hash} seed={seed}")?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(header)?;
    for r in rows {
        out.write_record(r)?;
    }
    out.flush()?;
    Ok(())
}

/// Read a CSV written by [`write_csv`]: header and records.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let header = r.headers()?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec?.iter().map(String::from).collect());
    }
    Ok((header, rows))
}

pub(crate) fn fmt_f(x: f64) -> String {
    format!("{x:.6e}")
}

/// Multipliers that map the reference layer's Gaussian RBER at its own
/// optimal vrefs onto the fitted RBER rows, per page type.
pub fn fitted_anchor(wear: &RetentionWearModel, pec: u32, t_s: f64) -> Result<[f64; 2]> {
    let d = base_distributions(wear, pec as f64, t_s)?;
    let v = optimal_vrefs(&d)?;
    let g = expected_rber(&d, &UNIFORM_PRIORS, &v)?;
    let msb = wear.eval(Variable::RberMsb, pec as f64, t_s)?.exp();
    let lsb = wear.eval(Variable::RberLsb, pec as f64, t_s)?.exp();
    if !(g.msb > 0.0 && g.lsb > 0.0) {
        return Err(Error::InvalidArgument(format!("zero reference RBER at PEC={pec}, t={t_s}")));
    }
    Ok([msb / g.msb, lsb / g.lsb])
}

/// Controller state learned before an evaluation.
#[derive(Debug, Clone)]
pub struct Trained {
    pub remar: Remar,
    /// LaVAR offsets relative to the PEC-only Vopt.
    pub lavar_sota: LayerOffsetTable,
    // LaVAR offsets relative to the ReMAR Vopt, per evaluation retention
    lavar_remar: HashMap<u64, LayerOffsetTable>,
}

/// A configured experiment: ground-truth models plus evaluation helpers.
#[derive(Debug)]
pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub models: ErrorModels,
    trained: Mutex<Option<Trained>>,
}

impl Experiment {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Experiment {
            cfg: cfg.clone(),
            models: cfg.error_models()?,
            trained: Mutex::new(None),
        })
    }

    pub fn mode(&self) -> Mode {
        self.cfg.mode.into()
    }

    /// One block per chip on `chips` chips, programmed with random data at
    /// `pec`, read `t_s` seconds later. `layout` marks blank wordlines.
    pub fn block_sim(&self, chips: usize, pec: u32, t_s: f64, seed: u64, layout: Option<&RaidLayout>) -> Result<FlashSim> {
        let g = ChipGeometry {
            n_chips: chips,
            blocks_per_chip: 1,
            wordlines_per_block: self.cfg.geometry.wordlines,
            cells_per_wordline: self.cfg.geometry.cells,
        };
        let mut sim = FlashSim::new(g, self.mode(), self.models.clone(), seed)?;
        for chip in 0..chips {
            let a = BlockAddress { chip, block: 0 };
            sim.set_pec(a, pec)?;
            match layout {
                None => sim.program_block_random(a)?,
                Some(l) => {
                    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(sub_seed(seed, &[7, chip as u64]));
                    let data: Vec<_> = (0..g.wordlines_per_block)
                        .map(|wl| {
                            let d = crate::sim::WordlineData::random(&mut rng, g.cells_per_wordline);
                            if l.is_blank(chip, wl) {
                                None
                            } else {
                                Some(d)
                            }
                        })
                        .collect();
                    sim.program_block(a, &data)?;
                }
            }
        }
        sim.advance_clock(t_s)?;
        Ok(sim)
    }

    /// Train ReMAR on blocks observed over the configured (PEC, t) grid and
    /// learn the LaVAR table for the PEC-only base.
    pub fn trained(&self) -> Result<Trained> {
        let mut guard = self.trained.lock().expect("training lock");
        if let Some(t) = guard.as_ref() {
            return Ok(t.clone());
        }
        let seed = self.cfg.seed;
        let mut remar = Remar::new();
        for (i, &pec) in self.cfg.remar.pecs.iter().enumerate() {
            let mut sim = self.block_sim(1, pec, 0.0, sub_seed(seed, &[20, i as u64]), None)?;
            let a = BlockAddress { chip: 0, block: 0 };
            for &t in &self.cfg.remar.retention_s {
                sim.advance_clock(t - sim.clock_s())?;
                remar.observe_block(&sim, a)?;
            }
        }
        let l = self.cfg.lavar;
        let t_ref = self.cfg.policy.t_ref_s;
        let lavar_sota = self.learn_lavar(l.sample_pec, l.sample_t_s, 0, &|pec, _| model_vopt(&self.models.wear, pec, t_ref))?;
        let t = Trained {
            remar,
            lavar_sota,
            lavar_remar: HashMap::new(),
        };
        *guard = Some(t.clone());
        Ok(t)
    }

    /// LaVAR table learned on a sample block relative to `base(pec, t)`.
    pub fn learn_lavar(&self, pec: u32, t_s: f64, label: u64, base: &dyn Fn(u32, f64) -> Result<VrefTriple>) -> Result<LayerOffsetTable> {
        let sim = self.block_sim(1, pec, t_s, sub_seed(self.cfg.seed, &[21, label]), None)?;
        lavar_learn_with_base(&sim, BlockAddress { chip: 0, block: 0 }, &base(pec, t_s)?)
    }

    fn lavar_remar(&self, t_s: f64) -> Result<LayerOffsetTable> {
        let key = t_s.to_bits();
        let trained = self.trained()?;
        if let Some(t) = trained.lavar_remar.get(&key) {
            return Ok(t.clone());
        }
        let remar = trained.remar.clone();
        let table = self.learn_lavar(self.cfg.lavar.sample_pec, t_s, 1, &|pec, t| {
            remar.predict(&BlockMetadata::new(pec, 0), t)
        })?;
        let mut guard = self.trained.lock().expect("training lock");
        if let Some(tr) = guard.as_mut() {
            tr.lavar_remar.insert(key, table.clone());
        }
        Ok(table)
    }

    /// Per-layer vrefs a policy uses for a block of the given simulator.
    pub fn policy_vrefs(&self, policy: PolicyName, sim: &FlashSim, a: BlockAddress) -> Result<Vec<VrefTriple>> {
        let n = self.cfg.geometry.wordlines;
        let meta = BlockMetadata::from_sim(sim, a)?;
        let wear = &self.models.wear;
        let now = sim.clock_s();
        let t_ref = self.cfg.policy.t_ref_s;
        let same = |v: VrefTriple| Ok(vec![v; n]);
        match policy {
            PolicyName::Fixed => same(policy_fixed(wear, self.cfg.policy.fixed_pec, self.cfg.policy.fixed_t_s)?),
            PolicyName::Sota => same(model_vopt(wear, meta.pec, t_ref)?),
            PolicyName::Lavar => {
                let base = model_vopt(wear, meta.pec, t_ref)?;
                let table = self.trained()?.lavar_sota;
                (0..n).map(|l| lavar_read_vrefs(&base, &table, l)).collect()
            }
            PolicyName::Remar => same(self.trained()?.remar.predict(&meta, now)?),
            PolicyName::RemarLavar => {
                let base = self.trained()?.remar.predict(&meta, now)?;
                let table = self.lavar_remar(sim.retention_s(a)?)?;
                (0..n).map(|l| lavar_read_vrefs(&base, &table, l)).collect()
            }
            PolicyName::BlockOptimal => same(block_empirical_vopt(sim, a)?),
        }
    }

    /// Per-page RBER of one block under a policy.
    pub fn page_rbers(&self, policy: PolicyName, sim: &FlashSim, a: BlockAddress) -> Result<Vec<PageRber>> {
        let v = self.policy_vrefs(policy, sim, a)?;
        sim.measure_block_rber(a, &|l| {
            v.get(l).copied().ok_or_else(|| Error::Address(format!("layer {l}")))
        })
    }

    /// Apply the configured RBER scale to page RBERs.
    pub fn scaled(&self, pages: &[PageRber], pec: u32, t_s: f64) -> Result<Vec<PageRber>> {
        match self.cfg.rber_scale {
            RberScale::Gaussian => Ok(pages.to_vec()),
            RberScale::Fitted => {
                let f = fitted_anchor(&self.models.wear, pec, t_s)?;
                Ok(pages
                    .iter()
                    .map(|p| PageRber {
                        rber: p.rber
                            * match p.page_type {
                                PageType::Msb => f[0],
                                PageType::Lsb => f[1],
                            },
                        ..*p
                    })
                    .collect())
            }
        }
    }
}

pub(crate) fn avg_and_worst(pages: &[PageRber]) -> (f64, f64) {
    let n = pages.len().max(1) as f64;
    let avg = pages.iter().map(|p| p.rber).sum::<f64>() / n;
    let worst = pages.iter().map(|p| p.rber).fold(0.0, f64::max);
    (avg, worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anchor_maps_reference_layer_onto_rows() {
        let wear = RetentionWearModel::fitted();
        let f = fitted_anchor(&wear, 10_000, 24.0 * 86_400.0).unwrap();
        assert!(f[0] > 0.0 && f[1] > 0.0);
        let d = base_distributions(&wear, 10_000.0, 24.0 * 86_400.0).unwrap();
        let g = expected_rber(&d, &UNIFORM_PRIORS, &optimal_vrefs(&d).unwrap()).unwrap();
        let row = wear.eval(Variable::RberMsb, 10_000.0, 24.0 * 86_400.0).unwrap().exp();
        assert!((g.msb * f[0] - row).abs() < 1e-15);
    }

    #[test]
    fn csv_round_trip_with_provenance() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        let rows = vec![vec!["1".to_string(), "a".into()]];
        write_csv(std::fs::File::create(&p).unwrap(), "abcd", 9, &["n", "s"], &rows).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("# config_hash=abcd seed=9\n"));
        let (h, r) = read_csv(&p).unwrap();
        assert_eq!(h, vec!["n", "s"]);
        assert_eq!(r, rows);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::Extrapolation("x".into())), 3);
    }
}
