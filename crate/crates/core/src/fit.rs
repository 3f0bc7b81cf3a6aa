//! Least squares, Gaussian and gamma fitting, KL divergence, and empirical
//! optimal read voltages from sweep data.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{regressors, Coeffs};
use crate::voltage::{State, StateDistribution, StateMixture, VrefTriple};

/// Result of an ordinary least squares fit of the retention/wear form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    pub coeffs: Coeffs,
    pub std_errors: [f64; 4],
    pub residual_variance: f64,
    pub adj_r2: f64,
    pub n: usize,
}

impl OlsFit {
    pub fn predict(&self, pec: f64, t_s: f64) -> f64 {
        self.coeffs.eval(pec, t_s)
    }
}

fn distinct(values: impl Iterator<Item = f64>) -> usize {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(|a, b| a.total_cmp(b));
    v.dedup();
    v.len()
}

// Least squares on column-scaled regressors through an SVD; returns
// (coefficients, standard errors, residual variance, adjusted R^2).
fn solve(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<(Vec<f64>, Vec<f64>, f64, f64)> {
    let (n, p) = x.shape();
    if n < p {
        return Err(Error::InsufficientSampleDiversity(format!("{n} samples for {p} coefficients")));
    }
    let mut xs = x.clone();
    let mut scale = vec![1.0; p];
    for j in 0..p {
        let norm = xs.column(j).norm();
        if norm == 0.0 {
            return Err(Error::InsufficientSampleDiversity(format!("regressor {j} is identically zero")));
        }
        scale[j] = norm;
        xs.column_mut(j).scale_mut(1.0 / norm);
    }
    let svd = xs.clone().svd(true, true);
    let sv = &svd.singular_values;
    let smax = sv.max();
    let smin = sv.min();
    if smin <= smax * 1e-10 {
        return Err(Error::InsufficientSampleDiversity(format!(
            "design matrix is rank deficient (condition {:.3e})",
            smax / smin.max(f64::MIN_POSITIVE)
        )));
    }
    let b = svd.solve(y, 0.0).map_err(|e| Error::InsufficientSampleDiversity(e.to_string()))?;
    let resid = y - &xs * &b;
    let ssr = resid.norm_squared();
    let mean = y.mean();
    let sst: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    let dof = n - p;
    let sigma2 = if dof > 0 { ssr / dof as f64 } else { 0.0 };
    let tiny = 1e-24 * (1.0 + y.norm_squared());
    let adj_r2 = if ssr <= tiny {
        1.0
    } else if dof == 0 || sst == 0.0 {
        f64::NAN
    } else {
        1.0 - (ssr / dof as f64) / (sst / (n - 1) as f64)
    };
    // Cov(b_scaled) = sigma^2 V S^-2 V^T
    let v_t = svd.v_t.as_ref().expect("requested V^T");
    let mut se = vec![0.0; p];
    for j in 0..p {
        let mut acc = 0.0;
        for k in 0..p {
            let vjk = v_t[(k, j)];
            acc += vjk * vjk / (sv[k] * sv[k]);
        }
        se[j] = (sigma2 * acc).sqrt() / scale[j];
    }
    let coef: Vec<f64> = (0..p).map(|j| b[j] / scale[j]).collect();
    Ok((coef, se, sigma2, adj_r2))
}

/// Fit `(alpha*PEC + beta)*ln(t) + gamma*PEC + delta` to `(pec, t_s, value)` samples.
pub fn ols_fit(samples: &[(f64, f64, f64)]) -> Result<OlsFit> {
    if samples.len() < 4 {
        return Err(Error::InsufficientSampleDiversity(format!("{} samples, need 4", samples.len())));
    }
    if distinct(samples.iter().map(|s| s.0)) < 2 || distinct(samples.iter().map(|s| s.1)) < 2 {
        return Err(Error::InsufficientSampleDiversity(
            "need at least two distinct PEC and two distinct retention times".into(),
        ));
    }
    let n = samples.len();
    let x = DMatrix::from_fn(n, 4, |i, j| regressors(samples[i].0, samples[i].1)[j]);
    let y = DVector::from_iterator(n, samples.iter().map(|s| s.2));
    let (c, se, s2, adj) = solve(&x, &y)?;
    Ok(OlsFit {
        coeffs: Coeffs::new(c[0], c[1], c[2], c[3]),
        std_errors: [se[0], se[1], se[2], se[3]],
        residual_variance: s2,
        adj_r2: adj,
        n,
    })
}

/// Fit `gamma*PEC + delta` to `(pec, value)` samples.
pub fn ols_fit_va(samples: &[(f64, f64)]) -> Result<OlsFit> {
    if distinct(samples.iter().map(|s| s.0)) < 2 {
        return Err(Error::InsufficientSampleDiversity("need at least two distinct PEC".into()));
    }
    let n = samples.len();
    let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { samples[i].0 } else { 1.0 });
    let y = DVector::from_iterator(n, samples.iter().map(|s| s.1));
    let (c, se, s2, adj) = solve(&x, &y)?;
    Ok(OlsFit {
        coeffs: Coeffs::new(0.0, 0.0, c[0], c[1]),
        std_errors: [0.0, 0.0, se[0], se[1]],
        residual_variance: s2,
        adj_r2: adj,
        n,
    })
}

/// Sample mean and unbiased sample standard deviation.
pub fn gaussian_fit(samples: &[f64]) -> Result<StateDistribution> {
    if samples.len() < 2 {
        return Err(Error::InvalidArgument(format!("{} samples, need 2", samples.len())));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    if var <= 0.0 {
        return Err(Error::ZeroVariance);
    }
    StateDistribution::new(mean, var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FitMethod {
    MethodOfMoments,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaFit {
    pub shape: f64,
    pub scale: f64,
    pub method: FitMethod,
}

impl GammaFit {
    pub fn pdf(&self, x: f64) -> f64 {
        crate::models::gamma_rber_pdf(self.shape, self.scale, x).unwrap_or(0.0)
    }
}

/// Method-of-moments gamma fit.
pub fn gamma_fit(samples: &[f64]) -> Result<GammaFit> {
    if let Some(bad) = samples.iter().find(|x| !(**x > 0.0)) {
        return Err(Error::InvalidArgument(format!("gamma samples must be > 0, got {bad}")));
    }
    if samples.len() < 2 {
        return Err(Error::InvalidArgument("need at least two samples".into()));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    if var <= 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok(GammaFit {
        shape: mean * mean / var,
        scale: var / mean,
        method: FitMethod::MethodOfMoments,
    })
}

/// Fixed-width histogram.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<f64>,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if bins < 1 || !(hi > lo) {
            return Err(Error::InvalidArgument(format!("histogram [{lo}, {hi}) with {bins} bins")));
        }
        let w = (hi - lo) / bins as f64;
        Ok(Histogram {
            edges: (0..=bins).map(|i| lo + w * i as f64).collect(),
            counts: vec![0.0; bins],
        })
    }

    /// Histogram spanning the samples' range.
    pub fn from_samples(samples: &[f64], bins: usize) -> Result<Self> {
        let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let pad = (hi - lo).abs().max(1e-300) * 1e-9;
        let mut h = Histogram::new(lo, hi + pad, bins)?;
        for &x in samples {
            h.add(x);
        }
        Ok(h)
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn add(&mut self, x: f64) {
        let lo = self.edges[0];
        let hi = self.edges[self.edges.len() - 1];
        if x < lo || x >= hi {
            return;
        }
        let n = self.bins();
        let i = ((x - lo) / (hi - lo) * n as f64) as usize;
        self.counts[i.min(n - 1)] += 1.0;
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }
}

/// KL divergence in nats, with a flag for an infinite value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlDivergence {
    pub nats: f64,
    pub infinite: bool,
}

/// `sum p_i ln(p_i / q_i)` where `q_i` is the model pdf integrated over each
/// bin and renormalized over the histogram's range.
pub fn kl_divergence(hist: &Histogram, pdf: &dyn Fn(f64) -> f64) -> Result<KlDivergence> {
    let total = hist.total();
    if hist.bins() < 2 || !(total > 0.0) {
        return Err(Error::InvalidArgument("histogram needs mass and at least two bins".into()));
    }
    const SUB: usize = 64;
    let q: Vec<f64> = (0..hist.bins())
        .map(|i| {
            let (a, b) = (hist.edges[i], hist.edges[i + 1]);
            let h = (b - a) / SUB as f64;
            let mut s = pdf(a) + pdf(b);
            for k in 1..SUB {
                s += pdf(a + h * k as f64) * if k % 2 == 1 { 4.0 } else { 2.0 };
            }
            (s * h / 3.0).max(0.0)
        })
        .collect();
    let qsum: f64 = q.iter().sum();
    let mut kl = 0.0;
    for (i, &c) in hist.counts.iter().enumerate() {
        if c <= 0.0 {
            continue;
        }
        let p = c / total;
        if q[i] <= 0.0 || qsum <= 0.0 {
            return Ok(KlDivergence {
                nats: f64::INFINITY,
                infinite: true,
            });
        }
        kl += p * (p / (q[i] / qsum)).ln();
    }
    Ok(KlDivergence {
        nats: kl.max(0.0),
        infinite: false,
    })
}

/// Misread counts per integer read voltage for each of the three boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepData {
    pub v_min: i32,
    /// `errors[b][i]`: misreads across boundary `b` when reading at `v_min + i`.
    pub errors: [Vec<f64>; 3],
    /// Cells per state.
    pub populations: [f64; 4],
}

impl SweepData {
    pub fn empty(v_min: i32, v_max: i32) -> Self {
        let len = (v_max - v_min + 1).max(1) as usize;
        SweepData {
            v_min,
            errors: [vec![0.0; len], vec![0.0; len], vec![0.0; len]],
            populations: [0.0; 4],
        }
    }

    pub fn len(&self) -> usize {
        self.errors[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.populations.iter().all(|p| *p == 0.0)
    }

    pub fn v_max(&self) -> i32 {
        self.v_min + self.len() as i32 - 1
    }

    /// Count misreads from programmed states and measured threshold voltages.
    pub fn from_cells(states: &[State], vth: &[f64], v_min: i32, v_max: i32) -> Self {
        let mut sd = SweepData::empty(v_min, v_max);
        let len = sd.len();
        // at_least[s][i]: cells of state s with floor(vth) >= v_min + i
        let mut hist = vec![[0.0f64; 4]; len + 1];
        for (s, v) in states.iter().zip(vth) {
            sd.populations[s.index()] += 1.0;
            let k = (v.floor() as i64 - v_min as i64).clamp(-1, len as i64 - 1);
            if k >= 0 {
                hist[k as usize][s.index()] += 1.0;
            }
        }
        let mut ge = vec![[0.0f64; 4]; len + 1];
        for i in (0..len).rev() {
            for s in 0..4 {
                ge[i][s] = ge[i + 1][s] + hist[i][s];
            }
        }
        for b in 0..3 {
            for i in 0..len {
                let above_low = ge[i][b];
                let below_high = sd.populations[b + 1] - ge[i][b + 1];
                sd.errors[b][i] = above_low + below_high;
            }
        }
        sd
    }

    /// Expected misread counts for `cells` cells drawn from the state mixtures.
    pub fn from_mixtures(states: &[StateMixture; 4], priors: &[f64; 4], cells: f64, v_min: i32, v_max: i32) -> Self {
        let mut sd = SweepData::empty(v_min, v_max);
        for s in 0..4 {
            sd.populations[s] = cells * priors[s];
        }
        for b in 0..3 {
            for i in 0..sd.len() {
                let v = (v_min + i as i32) as f64;
                sd.errors[b][i] = sd.populations[b] * states[b].mass(v, f64::INFINITY)
                    + sd.populations[b + 1] * states[b + 1].mass(f64::NEG_INFINITY, v);
            }
        }
        sd
    }

    /// Accumulate another sweep over the same grid.
    pub fn add(&mut self, other: &SweepData) -> Result<()> {
        if other.v_min != self.v_min || other.len() != self.len() {
            return Err(Error::InvalidArgument("sweep grids differ".into()));
        }
        for b in 0..3 {
            for (a, o) in self.errors[b].iter_mut().zip(&other.errors[b]) {
                *a += o;
            }
        }
        for s in 0..4 {
            self.populations[s] += other.populations[s];
        }
        Ok(())
    }
}

/// Per-boundary empirical optimum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmpiricalVopt {
    pub values: [f64; 3],
    /// Boundary had an empty state on one side; value is the grid midpoint.
    pub degenerate: [bool; 3],
}

impl EmpiricalVopt {
    pub fn vrefs(&self) -> Result<VrefTriple> {
        VrefTriple::from_array(self.values)
    }

    pub fn any_degenerate(&self) -> bool {
        self.degenerate.iter().any(|d| *d)
    }
}

/// Integer-step argmin of misreads per boundary; ties resolve to the middle
/// of the contiguous plateau.
pub fn empirical_vopt(sweep: &SweepData) -> EmpiricalVopt {
    let mid = 0.5 * (sweep.v_min + sweep.v_max()) as f64;
    let mut out = EmpiricalVopt {
        values: [mid; 3],
        degenerate: [false; 3],
    };
    for b in 0..3 {
        if sweep.populations[b] == 0.0 || sweep.populations[b + 1] == 0.0 {
            out.degenerate[b] = true;
            continue;
        }
        let e = &sweep.errors[b];
        let min = e.iter().copied().fold(f64::INFINITY, f64::min);
        let tol = 1e-9 * min.abs().max(1e-12);
        let first = e.iter().position(|x| *x <= min + tol).unwrap_or(0);
        let mut last = first;
        while last + 1 < e.len() && e[last + 1] <= min + tol {
            last += 1;
        }
        out.values[b] = sweep.v_min as f64 + 0.5 * (first + last) as f64;
    }
    out
}
