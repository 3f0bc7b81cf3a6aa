//! Refit a model row from noisy samples, and fit a gamma distribution to
//! synthetic per-page RBER.

use nandsim::fit::{gamma_fit, kl_divergence, ols_fit, Histogram};
use nandsim::models::{RetentionWearModel, Variable};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};

fn main() -> nandsim::Result<()> {
    let truth = RetentionWearModel::fitted().row(Variable::MeanP2);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let noise = Normal::new(0.0, 0.3).unwrap();
    let mut samples = Vec::new();
    for pec in (0..=10).map(|i| i as f64 * 1000.0) {
        for t in [420.0, 3600.0, 86_400.0, 604_800.0, 2_073_600.0] {
            samples.push((pec, t, truth.eval(pec, t) + noise.sample(&mut rng)));
        }
    }
    let f = ols_fit(&samples)?;
    println!("truth  {:?}", truth.as_array());
    println!("fitted {:?}", f.coeffs.as_array());
    println!("stderr {:?}  adj R2 {:.4}", f.std_errors, f.adj_r2);

    let g = Gamma::new(4.0, 2e-4).unwrap();
    let x: Vec<f64> = (0..20_000).map(|_| g.sample(&mut rng)).collect();
    let fit = gamma_fit(&x)?;
    let kl = kl_divergence(&Histogram::from_samples(&x, 50)?, &|r| fit.pdf(r))?;
    println!("gamma shape {:.3} scale {:.3e}, KL {:.4} nats", fit.shape, fit.scale, kl.nats);
    Ok(())
}
