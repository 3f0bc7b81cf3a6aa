use std::path::Path;

use rayon::prelude::*;

use super::{fmt_f, write_csv, Experiment, PolicyName};
use crate::controller::ecc_required_overhead;
use crate::error::{Error, Result};
use crate::raid::{group_worst_case_rber, layout_conventional, layout_li_raid, RaidGeometry, RaidLayout};
use crate::sim::{sub_seed, BlockAddress, FlashSim, PageRber, PageType};

/// Controller configurations compared in lifetime studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stack {
    Baseline,
    Sota,
    Lavar,
    LavarLi,
    Full,
}

impl Stack {
    pub const ALL: [Stack; 5] = [Stack::Baseline, Stack::Sota, Stack::Lavar, Stack::LavarLi, Stack::Full];

    pub fn name(self) -> &'static str {
        match self {
            Stack::Baseline => "baseline",
            Stack::Sota => "sota",
            Stack::Lavar => "lavar",
            Stack::LavarLi => "lavar+li",
            Stack::Full => "full",
        }
    }

    pub fn policy(self) -> PolicyName {
        match self {
            Stack::Baseline => PolicyName::Fixed,
            Stack::Sota => PolicyName::Sota,
            Stack::Lavar | Stack::LavarLi => PolicyName::Lavar,
            Stack::Full => PolicyName::RemarLavar,
        }
    }

    /// Whether data is protected by the layer-interleaved layout.
    pub fn interleaved(self) -> bool {
        matches!(self, Stack::LavarLi | Stack::Full)
    }
}

fn raid_geom(exp: &Experiment) -> Result<RaidGeometry> {
    RaidGeometry::new(exp.cfg.raid.chips_per_group, exp.cfg.geometry.wordlines)
}

/// Worst RBER over a group of chips, each holding one block. Conventional
/// data is as bad as its worst page; interleaved data as its worst group
/// average.
fn worst_of(layout: &RaidLayout, pages: &[Vec<PageRber>]) -> f64 {
    // one wordline per layer
    let lookup = |chip: usize, wl: usize, pt: PageType| -> f64 {
        pages[chip]
            .iter()
            .find(|p| p.layer == wl && p.page_type == pt)
            .map_or(0.0, |p| p.rber)
    };
    group_worst_case_rber(layout, &lookup).worst_group_mean()
}

fn chip_pages(exp: &Experiment, policy: PolicyName, sim: &FlashSim, chips: usize, scale: Option<(u32, f64)>) -> Result<Vec<Vec<PageRber>>> {
    (0..chips)
        .map(|chip| {
            let p = exp.page_rbers(policy, sim, BlockAddress { chip, block: 0 })?;
            match scale {
                Some((pec, t)) => exp.scaled(&p, pec, t),
                None => Ok(p),
            }
        })
        .collect()
}

/// Worst RBER of a stack over PEC values at retention `t_s`, with the
/// configured RBER scale.
pub fn worst_curve(exp: &Experiment, stack: Stack, pecs: &[u32], t_s: f64) -> Result<Vec<f64>> {
    let g = raid_geom(exp)?;
    let layout = if stack.interleaved() { layout_li_raid(g)? } else { layout_conventional(g) };
    if matches!(stack.policy(), PolicyName::Lavar | PolicyName::RemarLavar) {
        exp.trained()?;
    }
    let seed = exp.cfg.seed;
    pecs.par_iter()
        .map(|&pec| {
            let blanks = stack.interleaved().then_some(&layout);
            let sim = exp.block_sim(g.m, pec, t_s, sub_seed(seed, &[30, pec as u64]), blanks)?;
            let pages = chip_pages(exp, stack.policy(), &sim, g.m, Some((pec, t_s)))?;
            Ok(worst_of(&layout, &pages))
        })
        .collect()
}

/// Last grid PEC before the first value above the limit; `None` when the
/// first point already fails. The flag is set when no point fails.
pub fn endurance(pecs: &[u32], worst: &[f64], limit: f64) -> (Option<u32>, bool) {
    let mut e = None;
    for (p, w) in pecs.iter().zip(worst) {
        if *w > limit {
            return (e, false);
        }
        e = Some(*p);
    }
    (e, true)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LifetimeResult {
    pub config_hash: String,
    pub seed: u64,
    pub retention_s: f64,
    pub pecs: Vec<u32>,
    pub stacks: Vec<Stack>,
    /// `worst[s][i]`: worst RBER of stack `s` at `pecs[i]`.
    pub worst: Vec<Vec<f64>>,
    pub endurance: Vec<u32>,
    /// Stack never exceeded the limit on the grid.
    pub censored: Vec<bool>,
    pub baseline_eol: u32,
    /// Worst RBER of each stack at the baseline's end of life.
    pub worst_at_baseline_eol: Vec<f64>,
    /// ECC parity overhead each stack needs at the baseline's end of life.
    pub ecc_overhead: Vec<f64>,
    /// Reduction relative to the overhead sized for the RBER limit.
    pub ecc_reduction: Vec<f64>,
}

pub const LIFETIME_HEADER: [&str; 8] = [
    "stack",
    "endurance",
    "censored",
    "improvement",
    "worst_rber_at_baseline_eol",
    "ecc_overhead",
    "ecc_reduction",
    "seed",
];
pub const CURVE_HEADER: [&str; 4] = ["pec", "stack", "worst_rber", "seed"];

impl LifetimeResult {
    fn index(&self, s: Stack) -> Option<usize> {
        self.stacks.iter().position(|x| *x == s)
    }

    pub fn endurance_of(&self, s: Stack) -> Option<u32> {
        self.index(s).map(|i| self.endurance[i])
    }

    /// Endurance relative to the baseline.
    pub fn improvement(&self, s: Stack) -> Option<f64> {
        self.endurance_of(s).map(|e| e as f64 / self.baseline_eol as f64)
    }

    pub fn ecc_reduction_of(&self, s: Stack) -> Option<f64> {
        self.index(s).map(|i| self.ecc_reduction[i])
    }

    pub fn summary_rows(&self) -> Vec<Vec<String>> {
        self.stacks
            .iter()
            .enumerate()
            .map(|(i, s)| {
                vec![
                    s.name().into(),
                    self.endurance[i].to_string(),
                    self.censored[i].to_string(),
                    format!("{:.4}", self.endurance[i] as f64 / self.baseline_eol as f64),
                    fmt_f(self.worst_at_baseline_eol[i]),
                    fmt_f(self.ecc_overhead[i]),
                    fmt_f(self.ecc_reduction[i]),
                    self.seed.to_string(),
                ]
            })
            .collect()
    }

    pub fn curve_rows(&self) -> Vec<Vec<String>> {
        let mut rows = Vec::new();
        for (i, pec) in self.pecs.iter().enumerate() {
            for (s, stack) in self.stacks.iter().enumerate() {
                rows.push(vec![pec.to_string(), stack.name().into(), fmt_f(self.worst[s][i]), self.seed.to_string()]);
            }
        }
        rows
    }

    pub fn summary_csv(&self) -> Result<String> {
        let mut buf = Vec::new();
        write_csv(&mut buf, &self.config_hash, self.seed, &LIFETIME_HEADER, &self.summary_rows())?;
        Ok(String::from_utf8(buf).expect("csv is utf-8"))
    }

    pub fn curve_csv(&self) -> Result<String> {
        let mut buf = Vec::new();
        write_csv(&mut buf, &self.config_hash, self.seed, &CURVE_HEADER, &self.curve_rows())?;
        Ok(String::from_utf8(buf).expect("csv is utf-8"))
    }

    /// Writes `lifetime.csv` and `lifetime_curve.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("lifetime.csv"), self.summary_csv()?)?;
        std::fs::write(dir.join("lifetime_curve.csv"), self.curve_csv()?)?;
        Ok(())
    }
}

/// Endurance of every stack at the configured retention, plus the ECC
/// overhead each needs at the baseline's end of life.
pub fn run_lifetime(exp: &Experiment) -> Result<LifetimeResult> {
    let pecs = exp.cfg.pec_grid.values();
    let t = exp.cfg.retention_s;
    let limit = exp.cfg.ecc.rber_limit;
    let stacks = Stack::ALL.to_vec();
    let worst: Vec<Vec<f64>> = stacks.iter().map(|&s| worst_curve(exp, s, &pecs, t)).collect::<Result<_>>()?;
    let mut endur = Vec::new();
    let mut censored = Vec::new();
    for (s, w) in stacks.iter().zip(&worst) {
        let (e, c) = endurance(&pecs, w, limit);
        if *s == Stack::Baseline {
            if c {
                return Err(Error::ExtendPecGrid(format!("baseline never exceeds RBER {limit} up to PEC {}", pecs[pecs.len() - 1])));
            }
            if e.is_none() {
                return Err(Error::Config(format!("baseline exceeds RBER {limit} at the first grid PEC {}", pecs[0])));
            }
        }
        endur.push(e.unwrap_or(0));
        censored.push(c);
    }
    let baseline_eol = endur[0];
    let bi = pecs.iter().position(|p| *p == baseline_eol).expect("endurance is a grid point");
    let limit_oh = ecc_required_overhead(limit, &exp.cfg.ecc)?;
    let worst_at: Vec<f64> = worst.iter().map(|w| w[bi]).collect();
    let ecc_overhead: Vec<f64> = worst_at.iter().map(|r| ecc_required_overhead(*r, &exp.cfg.ecc)).collect::<Result<_>>()?;
    let ecc_reduction = ecc_overhead.iter().map(|o| 1.0 - o / limit_oh).collect();
    Ok(LifetimeResult {
        config_hash: exp.cfg.hash(),
        seed: exp.cfg.seed,
        retention_s: t,
        pecs,
        stacks,
        worst,
        endurance: endur,
        censored,
        baseline_eol,
        worst_at_baseline_eol: worst_at,
        ecc_overhead,
        ecc_reduction,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FcrResult {
    pub period_s: f64,
    pub retention_s: f64,
    /// Endurance with periodic refresh (retention bounded by the period).
    pub endurance_refresh: u32,
    /// Endurance without refresh at the full retention.
    pub endurance_none: u32,
    /// Endurance counted in host writes: every refresh also costs a P/E cycle.
    pub host_write_endurance: f64,
    pub censored: bool,
}

pub const FCR_HEADER: [&str; 8] = [
    "period_s",
    "retention_s",
    "endurance_refresh",
    "endurance_none",
    "ratio",
    "host_write_endurance",
    "censored",
    "seed",
];

impl FcrResult {
    pub fn ratio(&self) -> f64 {
        self.endurance_refresh as f64 / self.endurance_none.max(1) as f64
    }

    pub fn to_csv_string(&self, config_hash: &str, seed: u64) -> Result<String> {
        let row = vec![
            format!("{}", self.period_s),
            format!("{}", self.retention_s),
            self.endurance_refresh.to_string(),
            self.endurance_none.to_string(),
            format!("{:.4}", self.ratio()),
            format!("{:.1}", self.host_write_endurance),
            self.censored.to_string(),
            seed.to_string(),
        ];
        let mut buf = Vec::new();
        write_csv(&mut buf, config_hash, seed, &FCR_HEADER, &[row])?;
        Ok(String::from_utf8(buf).expect("csv is utf-8"))
    }
}

/// Lifetime of the PEC-only policy with and without periodic refresh.
pub fn run_fcr(exp: &Experiment) -> Result<FcrResult> {
    let pecs = exp.cfg.pec_grid.values();
    let limit = exp.cfg.ecc.rber_limit;
    let period = exp.cfg.fcr.period_s;
    let t = exp.cfg.retention_s;
    let w_ref = worst_curve(exp, Stack::Sota, &pecs, period.min(t))?;
    let w_none = worst_curve(exp, Stack::Sota, &pecs, t)?;
    let (er, cr) = endurance(&pecs, &w_ref, limit);
    let (en, _) = endurance(&pecs, &w_none, limit);
    let refreshes_per_retention = (t / period).max(1.0);
    Ok(FcrResult {
        period_s: period,
        retention_s: t,
        endurance_refresh: er.unwrap_or(0),
        endurance_none: en.unwrap_or(0),
        host_write_endurance: er.unwrap_or(0) as f64 / refreshes_per_retention,
        censored: cr,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RaidComparison {
    pub conventional: f64,
    pub interleaved: f64,
}

impl RaidComparison {
    pub fn reduction(&self) -> f64 {
        1.0 - self.interleaved / self.conventional
    }
}

/// Worst group RBER of conventional and layer-interleaved layouts on the
/// same chips, read at the measured per-block optimum, raw RBER.
pub fn raid_comparison(exp: &Experiment, pec: u32, t_s: f64) -> Result<RaidComparison> {
    let g = raid_geom(exp)?;
    let conv = layout_conventional(g);
    let li = layout_li_raid(g)?;
    let seed = sub_seed(exp.cfg.seed, &[40, pec as u64]);
    let sim_c = exp.block_sim(g.m, pec, t_s, seed, None)?;
    let sim_l = exp.block_sim(g.m, pec, t_s, seed, Some(&li))?;
    let pc = chip_pages(exp, PolicyName::BlockOptimal, &sim_c, g.m, None)?;
    let pl = chip_pages(exp, PolicyName::BlockOptimal, &sim_l, g.m, None)?;
    Ok(RaidComparison {
        conventional: worst_of(&conv, &pc),
        interleaved: worst_of(&li, &pl),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endurance_scan() {
        let p = [0, 1000, 2000, 3000];
        assert_eq!(endurance(&p, &[1e-4, 2e-3, 4e-3, 1e-4], 3e-3), (Some(1000), false));
        assert_eq!(endurance(&p, &[1e-2, 0.0, 0.0, 0.0], 3e-3), (None, false));
        assert_eq!(endurance(&p, &[0.0; 4], 3e-3), (Some(3000), true));
    }

    #[test]
    fn stack_policies() {
        assert_eq!(Stack::Full.policy(), PolicyName::RemarLavar);
        assert!(Stack::LavarLi.interleaved() && !Stack::Lavar.interleaved());
    }
}
