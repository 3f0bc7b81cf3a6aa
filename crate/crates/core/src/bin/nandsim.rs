use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nandsim::harness::{
    emit_plots, exit_code, run_acceptance, run_characterization_replication, run_fcr, run_lifetime, run_rber_sweep, Experiment,
    ExperimentConfig, EXIT_ACCEPTANCE,
};
use nandsim::raid::{layout_conventional, layout_li_raid, RaidGeometry};
use nandsim::{Error, Result};

#[derive(Parser)]
#[command(name = "nandsim", version, about = "3D NAND flash reliability simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML). Without it, defaults are used and --seed is required.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's output directory.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Average and worst page RBER per PEC for each policy.
    Sweep(Common),
    /// Endurance of each controller stack, ECC savings and the refresh study.
    Lifetime(Common),
    /// Regenerate characterization data and refit the model rows.
    Replicate(Common),
    /// Print a RAID group layout.
    LiraidLayout {
        /// Chips per RAID group.
        #[arg(long, short, default_value_t = 4)]
        chips: usize,
        /// Wordlines per block.
        #[arg(long, short, default_value_t = 4)]
        wordlines: usize,
        /// Conventional layout instead of layer-interleaved.
        #[arg(long)]
        conventional: bool,
    },
    /// Render SVG charts for a CSV produced by another subcommand.
    Plot {
        csv: PathBuf,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Run the acceptance criteria; exit status 4 if any fails.
    Accept(Common),
}

fn load(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match (&c.config, c.seed) {
        (Some(p), _) => ExperimentConfig::load(p)?,
        (None, Some(s)) => ExperimentConfig::with_seed(s),
        (None, None) => return Err(Error::Config("either --config or --seed is required".into())),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.output_dir = o.clone();
    }
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    Ok(cfg)
}

fn wrote(p: &Path) {
    println!("wrote {}", p.display());
}

fn run(cli: Cli) -> Result<i32> {
    match cli.cmd {
        Cmd::Sweep(c) => {
            let cfg = load(&c)?;
            let r = run_rber_sweep(&Experiment::new(&cfg)?)?;
            let p = cfg.output_dir.join("sweep.csv");
            r.write(&p)?;
            wrote(&p);
        }
        Cmd::Lifetime(c) => {
            let cfg = load(&c)?;
            let exp = Experiment::new(&cfg)?;
            let l = run_lifetime(&exp)?;
            l.write(&cfg.output_dir)?;
            let f = run_fcr(&exp)?;
            let p = cfg.output_dir.join("fcr.csv");
            std::fs::write(&p, f.to_csv_string(&cfg.hash(), cfg.seed)?)?;
            for (i, s) in l.stacks.iter().enumerate() {
                println!(
                    "{:<10} endurance {:>6}  x{:.2}  ECC reduction {:>5.1}%",
                    s.name(),
                    l.endurance[i],
                    l.endurance[i] as f64 / l.baseline_eol as f64,
                    100.0 * l.ecc_reduction[i]
                );
            }
            println!("refresh: {} vs {} without (x{:.2})", f.endurance_refresh, f.endurance_none, f.ratio());
            wrote(&cfg.output_dir.join("lifetime.csv"));
            wrote(&cfg.output_dir.join("lifetime_curve.csv"));
            wrote(&p);
        }
        Cmd::Replicate(c) => {
            let cfg = load(&c)?;
            let r = run_characterization_replication(&Experiment::new(&cfg)?)?;
            r.write(&cfg.output_dir)?;
            for row in &r.rows {
                println!(
                    "{:<9} adj R2 {:.4}  max rel err vs {} {:.3}",
                    row.variable.name(),
                    row.fit.adj_r2,
                    row.reference_kind,
                    row.max_rel_error()
                );
            }
            for g in &r.gamma {
                println!("gamma {}: shape {:.3} scale {:.3e} KL {:.4} nats", g.pages_of, g.fit.shape, g.fit.scale, g.kl.nats);
            }
            wrote(&cfg.output_dir.join("replication.csv"));
            wrote(&cfg.output_dir.join("replication_gamma.csv"));
        }
        Cmd::LiraidLayout {
            chips,
            wordlines,
            conventional,
        } => {
            let g = RaidGeometry::new(chips, wordlines)?;
            let l = if conventional { layout_conventional(g) } else { layout_li_raid(g)? };
            print!("{}", l.render_table());
            println!("blank overhead {:.2}%", 100.0 * l.blank_fraction());
        }
        Cmd::Plot { csv, out } => {
            let dir = out.unwrap_or_else(|| csv.parent().map(Path::to_path_buf).unwrap_or_default());
            for p in emit_plots(&csv, &dir)? {
                wrote(&p);
            }
        }
        Cmd::Accept(c) => {
            let cfg = load(&c)?;
            let r = run_acceptance(&cfg)?;
            for c in &r.criteria {
                println!("{}", c.line());
            }
            let p = cfg.output_dir.join("acceptance.csv");
            r.write(&p)?;
            wrote(&p);
            if !r.all_pass() {
                return Ok(EXIT_ACCEPTANCE);
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
