use std::path::Path;

use rayon::prelude::*;

use super::{fmt_f, write_csv, Experiment};
use crate::controller::block_empirical_vopt;
use crate::error::{Error, Result};
use crate::fit::{gamma_fit, kl_divergence, ols_fit, ols_fit_va, GammaFit, Histogram, KlDivergence, OlsFit};
use crate::models::{CellContext, Coeffs, ErrorModels, LayerVariationProfile, Variable};
use crate::sim::{sub_seed, BlockAddress, ChipGeometry, FlashSim, Mode, PageRber, PageType};
use crate::voltage::{State, VoltageWindow};

/// Parameters smaller than this are not compared.
pub const RECOVERY_FLOOR: f64 = 1e-4;

/// One refitted model row next to the row it should recover.
#[derive(Debug, Clone, PartialEq)]
pub struct RowFit {
    pub variable: Variable,
    pub fit: OlsFit,
    pub reference: Coeffs,
    /// `fitted` for generator rows; `noiseless` for rows derived from the
    /// distributions, whose reference is the same pipeline on analytic data.
    pub reference_kind: &'static str,
}

impl RowFit {
    /// Largest relative deviation over parameters above the floor.
    pub fn max_rel_error(&self) -> f64 {
        let got = self.fit.coeffs.as_array();
        self.reference
            .as_array()
            .iter()
            .zip(got)
            .filter(|(r, _)| r.abs() > RECOVERY_FLOOR)
            .map(|(r, g)| ((g - r) / r).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammaReport {
    /// `msb`, `lsb`, or `all` for every page of the block.
    pub pages_of: &'static str,
    pub fit: GammaFit,
    pub kl: KlDivergence,
    pub pages: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationReport {
    pub config_hash: String,
    pub seed: u64,
    pub mode: Mode,
    pub rows: Vec<RowFit>,
    pub gamma: Vec<GammaReport>,
}

pub const REPLICATION_HEADER: [&str; 14] = [
    "variable",
    "alpha",
    "beta",
    "gamma",
    "delta",
    "adj_r2",
    "ref_alpha",
    "ref_beta",
    "ref_gamma",
    "ref_delta",
    "reference",
    "max_rel_err",
    "samples",
    "seed",
];
pub const GAMMA_HEADER: [&str; 6] = ["page", "shape", "scale", "kl_nats", "pages", "seed"];

impl ReplicationReport {
    pub fn row(&self, v: Variable) -> Option<&RowFit> {
        self.rows.iter().find(|r| r.variable == v)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.rows.iter().map(RowFit::max_rel_error).fold(0.0, f64::max)
    }

    /// The fit over every page.
    pub fn pooled_gamma(&self) -> Option<&GammaReport> {
        self.gamma.iter().find(|g| g.pages_of == "all")
    }

    pub fn rows_csv(&self) -> Result<String> {
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                let c = r.fit.coeffs.as_array();
                let g = r.reference.as_array();
                let mut v = vec![r.variable.name().to_string()];
                v.extend(c.iter().map(|x| fmt_f(*x)));
                v.push(format!("{:.6}", r.fit.adj_r2));
                v.extend(g.iter().map(|x| fmt_f(*x)));
                v.push(r.reference_kind.into());
                v.push(fmt_f(r.max_rel_error()));
                v.push(r.fit.n.to_string());
                v.push(self.seed.to_string());
                v
            })
            .collect();
        let mut buf = Vec::new();
        write_csv(&mut buf, &self.config_hash, self.seed, &REPLICATION_HEADER, &rows)?;
        Ok(String::from_utf8(buf).expect("csv is utf-8"))
    }

    pub fn gamma_csv(&self) -> Result<String> {
        let rows: Vec<Vec<String>> = self
            .gamma
            .iter()
            .map(|g| {
                vec![
                    g.pages_of.to_string(),
                    fmt_f(g.fit.shape),
                    fmt_f(g.fit.scale),
                    fmt_f(g.kl.nats),
                    g.pages.to_string(),
                    self.seed.to_string(),
                ]
            })
            .collect();
        let mut buf = Vec::new();
        write_csv(&mut buf, &self.config_hash, self.seed, &GAMMA_HEADER, &rows)?;
        Ok(String::from_utf8(buf).expect("csv is utf-8"))
    }

    /// Writes `replication.csv` and `replication_gamma.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("replication.csv"), self.rows_csv()?)?;
        std::fs::write(dir.join("replication_gamma.csv"), self.gamma_csv()?)?;
        Ok(())
    }
}

// (pec, t, value of each variable in Variable::ALL order)
type Sample = (f64, f64, [f64; 13]);

fn flat_models(exp: &Experiment) -> ErrorModels {
    ErrorModels::with_profile(exp.models.wear.clone(), LayerVariationProfile::flat(exp.cfg.geometry.wordlines))
}

fn mean_rber(pages: &[PageRber], pt: PageType) -> f64 {
    let v: Vec<f64> = pages.iter().filter(|p| p.page_type == pt).map(|p| p.rber).collect();
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Observe one block at every retention point of the grid.
fn observe_block(exp: &Experiment, mode: Mode, pec: u32) -> Result<Vec<Sample>> {
    let rep = &exp.cfg.replication;
    let g = ChipGeometry {
        n_chips: 1,
        blocks_per_chip: 1,
        wordlines_per_block: exp.cfg.geometry.wordlines,
        cells_per_wordline: rep.cells,
    };
    let mut sim = FlashSim::new(g, mode, flat_models(exp), sub_seed(exp.cfg.seed, &[50, pec as u64]))?;
    sim.window = VoltageWindow::new(rep.window.0, rep.window.1)?;
    let a = BlockAddress { chip: 0, block: 0 };
    sim.set_pec(a, pec)?;
    sim.program_block_random(a)?;
    let bits = (g.wordlines_per_block * g.cells_per_wordline) as f64;
    let mut times = rep.retention_s.clone();
    times.sort_by(f64::total_cmp);
    let mut out = Vec::new();
    for t in times {
        sim.advance_clock(t - sim.clock_s())?;
        let mut v = [0.0; 13];
        match mode {
            Mode::MonteCarlo => {
                let mut by_state: [Vec<f64>; 4] = Default::default();
                for wl in 0..g.wordlines_per_block {
                    let vth = sim.sweep_read(a, wl)?;
                    for (s, x) in sim.programmed_states(a, wl)?.iter().zip(vth) {
                        by_state[s.index()].push(x);
                    }
                }
                for s in State::ALL {
                    let d = crate::fit::gaussian_fit(&by_state[s.index()])?;
                    v[Variable::mean_of(s).index()] = d.mean();
                    v[Variable::stdev_of(s).index()] = d.stdev();
                }
            }
            Mode::Analytic => {
                let d = sim.models.distributions(&CellContext::new(pec, t, 0))?;
                for s in State::ALL {
                    v[Variable::mean_of(s).index()] = d[s.index()].mean();
                    v[Variable::stdev_of(s).index()] = d[s.index()].stdev();
                }
            }
        }
        let vopt = block_empirical_vopt(&sim, a)?;
        v[Variable::VoptA.index()] = vopt.va();
        v[Variable::VoptB.index()] = vopt.vb();
        v[Variable::VoptC.index()] = vopt.vc();
        let pages = sim.measure_block_rber(a, &|_| Ok(vopt))?;
        // half an error keeps the logarithm finite on an error-free block
        let floor = 0.5 / bits;
        v[Variable::RberMsb.index()] = mean_rber(&pages, PageType::Msb).max(floor).ln();
        v[Variable::RberLsb.index()] = mean_rber(&pages, PageType::Lsb).max(floor).ln();
        out.push((pec as f64, t, v));
    }
    Ok(out)
}

fn collect(exp: &Experiment, mode: Mode) -> Result<Vec<Sample>> {
    let per: Vec<Result<Vec<Sample>>> = exp.cfg.replication.pecs.par_iter().map(|&p| observe_block(exp, mode, p)).collect();
    let mut all = Vec::new();
    for r in per {
        all.extend(r?);
    }
    Ok(all)
}

fn fit_rows(samples: &[Sample]) -> Result<Vec<OlsFit>> {
    Variable::ALL
        .iter()
        .map(|var| {
            let i = var.index();
            if var.is_pec_only() {
                ols_fit_va(&samples.iter().map(|s| (s.0, s.2[i])).collect::<Vec<_>>())
            } else {
                ols_fit(&samples.iter().map(|s| (s.0, s.1, s.2[i])).collect::<Vec<_>>())
            }
        })
        .collect()
}

fn is_generator_row(v: Variable) -> bool {
    !matches!(v, Variable::VoptA | Variable::VoptB | Variable::VoptC | Variable::RberMsb | Variable::RberLsb)
}

/// Per-page RBER of many blocks at one wear and the configured retention,
/// read at each block's measured optimum, fitted with a gamma distribution
/// per page type and over all pages.
fn gamma_study(exp: &Experiment) -> Result<Vec<GammaReport>> {
    let rep = &exp.cfg.replication;
    let g = ChipGeometry {
        n_chips: 1,
        blocks_per_chip: 1,
        wordlines_per_block: exp.cfg.geometry.wordlines,
        cells_per_wordline: rep.gamma_cells,
    };
    let per: Vec<Result<Vec<PageRber>>> = (0..rep.gamma_blocks)
        .into_par_iter()
        .map(|b| {
            let mut sim = FlashSim::new(g, exp.mode(), exp.models.clone(), sub_seed(exp.cfg.seed, &[51, b as u64]))?;
            let a = BlockAddress { chip: 0, block: 0 };
            sim.set_pec(a, rep.gamma_pec)?;
            sim.program_block_random(a)?;
            sim.advance_clock(exp.cfg.retention_s)?;
            let v = block_empirical_vopt(&sim, a)?;
            sim.measure_block_rber(a, &|_| Ok(v))
        })
        .collect();
    let mut pages = Vec::new();
    for p in per {
        pages.extend(p?);
    }
    [("msb", Some(PageType::Msb)), ("lsb", Some(PageType::Lsb)), ("all", None)]
        .into_iter()
        .map(|(label, pt)| {
            let x: Vec<f64> = pages.iter().filter(|p| pt.is_none_or(|t| p.page_type == t)).map(|p| p.rber).collect();
            if x.iter().any(|r| *r <= 0.0) {
                return Err(Error::InvalidArgument(format!("{label} page with zero errors; raise gamma_cells")));
            }
            let fit = gamma_fit(&x)?;
            let hist = Histogram::from_samples(&x, rep.gamma_bins)?;
            let kl = kl_divergence(&hist, &|r| fit.pdf(r))?;
            Ok(GammaReport {
                pages_of: label,
                fit,
                kl,
                pages: x.len(),
            })
        })
        .collect()
}

/// Regenerate the characterization data set on the simulator and refit every
/// model row; fit per-page RBER with a gamma distribution.
pub fn run_characterization_replication(exp: &Experiment) -> Result<ReplicationReport> {
    let mode = exp.mode();
    let fits = fit_rows(&collect(exp, mode)?)?;
    let noiseless = if mode == Mode::Analytic {
        fits.clone()
    } else {
        fit_rows(&collect(exp, Mode::Analytic)?)?
    };
    let rows = Variable::ALL
        .iter()
        .enumerate()
        .map(|(i, &var)| {
            let gen = is_generator_row(var);
            RowFit {
                variable: var,
                fit: fits[i],
                reference: if gen { exp.models.wear.row(var) } else { noiseless[i].coeffs },
                reference_kind: if gen { "fitted" } else { "noiseless" },
            }
        })
        .collect();
    Ok(ReplicationReport {
        config_hash: exp.cfg.hash(),
        seed: exp.cfg.seed,
        mode,
        rows,
        gamma: gamma_study(exp)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::ExperimentConfig;

    #[test]
    fn analytic_replication_recovers_generator_rows() {
        let mut c = ExperimentConfig::with_seed(1);
        c.geometry.wordlines = 4;
        c.replication.cells = 256;
        c.replication.gamma_blocks = 2;
        c.replication.gamma_cells = 4096;
        let exp = Experiment::new(&c).unwrap();
        let r = run_characterization_replication(&exp).unwrap();
        for row in &r.rows {
            if row.reference_kind == "fitted" {
                assert!(row.max_rel_error() < 1e-6, "{:?} {}", row.variable, row.max_rel_error());
            }
        }
        assert_eq!(r.gamma.len(), 3);
        assert_eq!(r.pooled_gamma().unwrap().pages, 2 * 2 * 4);
    }
}
