use std::path::Path;

use rayon::prelude::*;

use super::{avg_and_worst, fmt_f, write_csv, Experiment, PolicyName};
use crate::error::Result;
use crate::sim::{sub_seed, BlockAddress};

pub const SWEEP_HEADER: [&str; 5] = ["pec", "policy", "avg_rber", "worst_rber", "seed"];

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub pec: u32,
    pub policy: PolicyName,
    pub avg_rber: f64,
    pub worst_rber: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub config_hash: String,
    pub seed: u64,
    pub retention_s: f64,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    /// Rows of one policy in PEC order.
    pub fn policy(&self, p: PolicyName) -> Vec<&SweepRow> {
        self.rows.iter().filter(|r| r.policy == p).collect()
    }

    pub fn csv_rows(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| vec![r.pec.to_string(), r.policy.name().into(), fmt_f(r.avg_rber), fmt_f(r.worst_rber), self.seed.to_string()])
            .collect()
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        write_csv(&mut buf, &self.config_hash, self.seed, &SWEEP_HEADER, &self.csv_rows())?;
        Ok(String::from_utf8(buf).expect("csv is utf-8"))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()?)?;
        Ok(())
    }
}

/// Average and worst page RBER of one block per PEC value for every
/// configured policy, at the configured retention. RBER is the simulator's
/// raw value.
pub fn run_rber_sweep(exp: &Experiment) -> Result<SweepResult> {
    sweep_at(exp, exp.cfg.retention_s, &exp.cfg.pec_grid.values(), &exp.cfg.policies)
}

pub(crate) fn sweep_at(exp: &Experiment, t_s: f64, pecs: &[u32], policies: &[PolicyName]) -> Result<SweepResult> {
    let needs_training = policies
        .iter()
        .any(|p| matches!(p, PolicyName::Lavar | PolicyName::Remar | PolicyName::RemarLavar));
    if needs_training {
        exp.trained()?;
    }
    let seed = exp.cfg.seed;
    let per_pec: Vec<Result<Vec<SweepRow>>> = pecs
        .par_iter()
        .map(|&pec| {
            let sim = exp.block_sim(1, pec, t_s, sub_seed(seed, &[10, pec as u64]), None)?;
            let a = BlockAddress { chip: 0, block: 0 };
            policies
                .iter()
                .map(|&policy| {
                    let pages = exp.page_rbers(policy, &sim, a)?;
                    let (avg_rber, worst_rber) = avg_and_worst(&pages);
                    Ok(SweepRow {
                        pec,
                        policy,
                        avg_rber,
                        worst_rber,
                    })
                })
                .collect()
        })
        .collect();
    let mut rows = Vec::new();
    for r in per_pec {
        rows.extend(r?);
    }
    Ok(SweepResult {
        config_hash: exp.cfg.hash(),
        seed,
        retention_s: t_s,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{ExperimentConfig, PecGrid};

    fn small() -> ExperimentConfig {
        let mut c = ExperimentConfig::with_seed(3);
        c.pec_grid = PecGrid::List(vec![0, 5000, 10_000]);
        c.geometry.wordlines = 8;
        c.geometry.cells = 512;
        c.policies = vec![PolicyName::Fixed, PolicyName::Sota, PolicyName::BlockOptimal];
        c
    }

    #[test]
    fn sweep_shape_and_ordering() {
        let exp = Experiment::new(&small()).unwrap();
        let r = run_rber_sweep(&exp).unwrap();
        assert_eq!(r.rows.len(), 9);
        for row in &r.rows {
            assert!(row.avg_rber > 0.0 && row.worst_rber >= row.avg_rber);
        }
        let fixed = r.policy(PolicyName::Fixed);
        assert!(fixed[2].avg_rber > fixed[0].avg_rber);
    }

    #[test]
    fn csv_is_deterministic() {
        let a = run_rber_sweep(&Experiment::new(&small()).unwrap()).unwrap().to_csv_string().unwrap();
        let b = run_rber_sweep(&Experiment::new(&small()).unwrap()).unwrap().to_csv_string().unwrap();
        assert_eq!(a, b);
        assert!(a.lines().nth(1).unwrap() == SWEEP_HEADER.join(","));
    }
}
