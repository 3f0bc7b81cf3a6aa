//! Evaluate the retention/wear model at a few operating points.

use nandsim::models::{eval_rber, eval_vopt, CellContext, ErrorModels, Variable, DAY_S};
use nandsim::voltage::{expected_rber, optimal_vrefs, State, UNIFORM_PRIORS};

fn main() -> nandsim::Result<()> {
    let models = ErrorModels::calibrated(32);
    println!("{:>6} {:>10} {:>9} {:>9} {:>22} {:>10}", "pec", "days", "rber_msb", "rber_lsb", "vopt (a, b, c)", "gauss_rber");
    for pec in [0, 3000, 10_000] {
        for days in [1.0, 7.0, 24.0] {
            let ctx = CellContext::new(pec, days * DAY_S, 0);
            let (msb, lsb) = eval_rber(&models.wear, &ctx)?;
            let v = eval_vopt(&models.wear, &models.profile, &ctx)?;
            // RBER implied by the distribution rows at their own optimum
            let d = models.distributions(&ctx)?;
            let g = expected_rber(&d, &UNIFORM_PRIORS, &optimal_vrefs(&d)?)?;
            println!(
                "{pec:>6} {days:>10} {msb:>9.2e} {lsb:>9.2e} {:>22} {:>10.2e}",
                format!("({:.1}, {:.1}, {:.1})", v.va(), v.vb(), v.vc()),
                g.mean()
            );
        }
    }

    let ctx = CellContext::new(10_000, 24.0 * DAY_S, 0);
    for s in State::ALL {
        let d = models.distribution(&ctx, s)?;
        println!("{:<3} mean {:7.2} stdev {:5.2}", s.name(), d.mean(), d.stdev());
    }
    let row = models.wear.row(Variable::VoptB);
    println!("vopt_b row: {:?}", row);
    Ok(())
}
