//! Voltage-domain primitives for MLC cells.
//!
//! All voltages are expressed in normalized read-retry steps (`1.0` is one
//! step). A cell stores one of four states; its two bits are split across the
//! MSB page (read with `Va` and `Vc`) and the LSB page (read with `Vb`).

use std::fmt;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Default lower edge of the simulated voltage window, in steps.
pub const DEFAULT_V_MIN: f64 = -50.0;
/// Default upper edge of the simulated voltage window, in steps.
pub const DEFAULT_V_MAX: f64 = 350.0;

/// Bounded voltage grid used by read sweeps. Sweeps probe integer steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoltageWindow {
    pub min: f64,
    pub max: f64,
}

impl Default for VoltageWindow {
    fn default() -> Self {
        VoltageWindow {
            min: DEFAULT_V_MIN,
            max: DEFAULT_V_MAX,
        }
    }
}

impl VoltageWindow {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite() && min < max) {
            return Err(Error::InvalidArgument(format!(
                "voltage window [{min}, {max}] is empty or not finite"
            )));
        }
        Ok(VoltageWindow { min, max })
    }

    /// Integer read-retry steps covered by the window.
    pub fn steps(&self) -> impl Iterator<Item = i32> {
        (self.min.ceil() as i32)..=(self.max.floor() as i32)
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.min + self.max)
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.min, self.max)
    }
}

/// The four MLC threshold-voltage states, ordered by nominal voltage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum State {
    Er,
    P1,
    P2,
    P3,
}

impl State {
    pub const ALL: [State; 4] = [State::Er, State::P1, State::P2, State::P3];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<State> {
        State::ALL.get(i).copied()
    }

    /// Decode a state from its (msb, lsb) pair under the fixed Gray mapping.
    pub fn from_bits(msb: bool, lsb: bool) -> State {
        match (msb, lsb) {
            (true, true) => State::Er,
            (false, true) => State::P1,
            (false, false) => State::P2,
            (true, false) => State::P3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            State::Er => "ER",
            State::P1 => "P1",
            State::P2 => "P2",
            State::P3 => "P3",
        }
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Gray code of a state as `(msb, lsb)`: ER=11, P1=01, P2=00, P3=10.
///
/// Adjacent states differ in one bit. ER/P1 and P2/P3 transitions flip the
/// MSB; P1/P2 flips the LSB.
pub fn gray_encode(state: State) -> (bool, bool) {
    match state {
        State::Er => (true, true),
        State::P1 => (false, true),
        State::P2 => (false, false),
        State::P3 => (true, false),
    }
}

/// Read references `(Va, Vb, Vc)`, strictly increasing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VrefTriple {
    va: f64,
    vb: f64,
    vc: f64,
}

impl VrefTriple {
    pub fn new(va: f64, vb: f64, vc: f64) -> Result<Self> {
        if !(va.is_finite() && vb.is_finite() && vc.is_finite()) {
            return Err(Error::InvalidArgument("read reference voltage is not finite".into()));
        }
        if !(va < vb && vb < vc) {
            return Err(Error::InvalidArgument(format!(
                "read references must satisfy va < vb < vc, got ({va}, {vb}, {vc})"
            )));
        }
        Ok(VrefTriple { va, vb, vc })
    }

    pub fn from_array(v: [f64; 3]) -> Result<Self> {
        Self::new(v[0], v[1], v[2])
    }

    pub fn va(&self) -> f64 {
        self.va
    }

    pub fn vb(&self) -> f64 {
        self.vb
    }

    pub fn vc(&self) -> f64 {
        self.vc
    }

    pub fn to_array(&self) -> [f64; 3] {
        [self.va, self.vb, self.vc]
    }

    /// Add per-boundary offsets, revalidating the ordering.
    pub fn offset(&self, da: f64, db: f64, dc: f64) -> Result<Self> {
        Self::new(self.va + da, self.vb + db, self.vc + dc)
    }

    /// Boundary `i` (0 = Va between ER/P1, 1 = Vb, 2 = Vc).
    pub fn boundary(&self, i: usize) -> f64 {
        self.to_array()[i]
    }
}

/// Classify a threshold voltage into the state window it falls in.
pub fn classify(vth: f64, vrefs: &VrefTriple) -> State {
    if vth < vrefs.va {
        State::Er
    } else if vth < vrefs.vb {
        State::P1
    } else if vth < vrefs.vc {
        State::P2
    } else {
        State::P3
    }
}

/// Sense a cell against the three references. A cell conducts (reads 1) when
/// its threshold voltage is below the applied reference.
pub fn read_cell(vth: f64, vrefs: &VrefTriple) -> (bool, bool) {
    let lsb = vth < vrefs.vb;
    let msb = vth < vrefs.va || vth >= vrefs.vc;
    (msb, lsb)
}

/// Standard normal CDF with accurate tails.
pub fn phi(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Standard normal upper tail `Q(z) = 1 - phi(z)`.
pub fn q_tail(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// Gaussian threshold-voltage distribution of one state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateDistribution {
    mean: f64,
    stdev: f64,
}

impl StateDistribution {
    pub fn new(mean: f64, stdev: f64) -> Result<Self> {
        if !mean.is_finite() || !stdev.is_finite() {
            return Err(Error::InvalidArgument("distribution parameter is not finite".into()));
        }
        if stdev <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "standard deviation must be positive, got {stdev}"
            )));
        }
        Ok(StateDistribution { mean, stdev })
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn stdev(&self) -> f64 {
        self.stdev
    }

    pub fn pdf(&self, x: f64) -> f64 {
        let z = (x - self.mean) / self.stdev;
        (-0.5 * z * z).exp() / (self.stdev * (2.0 * std::f64::consts::PI).sqrt())
    }

    pub fn cdf(&self, x: f64) -> f64 {
        phi((x - self.mean) / self.stdev)
    }

    /// Upper tail `P(V >= x)`.
    pub fn sf(&self, x: f64) -> f64 {
        q_tail((x - self.mean) / self.stdev)
    }

    /// Probability mass in `[lo, hi)`.
    pub fn mass(&self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return 0.0;
        }
        // Subtract on the side with the smaller tail to keep precision.
        if lo >= self.mean {
            (self.sf(lo) - self.sf(hi)).max(0.0)
        } else if hi <= self.mean {
            (self.cdf(hi) - self.cdf(lo)).max(0.0)
        } else {
            (1.0 - self.cdf(lo) - self.sf(hi)).max(0.0)
        }
    }

    pub fn shifted(&self, dmean: f64, dstdev: f64) -> Result<Self> {
        Self::new(self.mean + dmean, self.stdev + dstdev)
    }
}

/// Weighted Gaussian mixture describing one programmed state, used when a
/// state's cells split into sub-populations (e.g. by neighbor state).
#[derive(Debug, Clone, PartialEq)]
pub struct StateMixture {
    components: Vec<(f64, StateDistribution)>,
}

impl StateMixture {
    pub fn new(components: Vec<(f64, StateDistribution)>) -> Result<Self> {
        let total: f64 = components.iter().map(|(w, _)| *w).sum();
        if components.is_empty() || components.iter().any(|(w, _)| *w < 0.0) {
            return Err(Error::InvalidArgument("mixture weights must be non-negative".into()));
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "mixture weights sum to {total}, expected 1"
            )));
        }
        Ok(StateMixture { components })
    }

    pub fn single(d: StateDistribution) -> Self {
        StateMixture {
            components: vec![(1.0, d)],
        }
    }

    pub fn components(&self) -> &[(f64, StateDistribution)] {
        &self.components
    }

    pub fn mass(&self, lo: f64, hi: f64) -> f64 {
        self.components.iter().map(|(w, d)| w * d.mass(lo, hi)).sum()
    }
}

/// Pdf-equality point between two adjacent state distributions: the read
/// reference that minimizes equal-prior misclassification mass.
pub fn optimal_boundary(left: &StateDistribution, right: &StateDistribution) -> Result<f64> {
    let (m1, s1, m2, s2) = (left.mean, left.stdev, right.mean, right.stdev);
    if m1 == m2 && s1 == s2 {
        return Err(Error::IndistinguishableDistributions);
    }
    if m1 >= m2 {
        return Err(Error::InvalidArgument(format!(
            "left mean {m1} must be below right mean {m2}"
        )));
    }
    // log N(x; m1, s1) - log N(x; m2, s2) = 0  =>  a x^2 + b x + c = 0
    let (v1, v2) = (s1 * s1, s2 * s2);
    let a = 0.5 / v2 - 0.5 / v1;
    let b = m1 / v1 - m2 / v2;
    let c = -0.5 * m1 * m1 / v1 + 0.5 * m2 * m2 / v2 + (s2 / s1).ln();

    let scale = b.abs().max(c.abs()).max(1.0);
    if a.abs() <= 1e-14 * scale {
        return Ok(-c / b);
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return Ok(0.5 * (m1 + m2));
    }
    let sq = disc.sqrt();
    let q = -0.5 * (b + b.signum() * sq);
    let mut roots = [q / a, if q != 0.0 { c / q } else { q / a }];
    roots.sort_by(|x, y| x.total_cmp(y));
    if let Some(r) = roots.iter().find(|r| **r > m1 && **r < m2) {
        return Ok(*r);
    }
    let mid = 0.5 * (m1 + m2);
    Ok(*roots
        .iter()
        .min_by(|x, y| (*x - mid).abs().total_cmp(&(*y - mid).abs()))
        .expect("two roots"))
}

/// Optimal references for four ordered state distributions.
pub fn optimal_vrefs(dists: &[StateDistribution; 4]) -> Result<VrefTriple> {
    VrefTriple::new(
        optimal_boundary(&dists[0], &dists[1])?,
        optimal_boundary(&dists[1], &dists[2])?,
        optimal_boundary(&dists[2], &dists[3])?,
    )
}

/// Error probabilities of one page read, split by bit and by transition.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RberBreakdown {
    pub msb: f64,
    pub lsb: f64,
    /// ER<->P1 misreads (either direction), per cell.
    pub er_p1: f64,
    /// P1<->P2 misreads, per cell.
    pub p1_p2: f64,
    /// P2<->P3 misreads, per cell.
    pub p2_p3: f64,
    /// Misreads between non-adjacent states, per cell.
    pub multi: f64,
}

impl RberBreakdown {
    /// Mean of the MSB and LSB page error rates.
    pub fn mean(&self) -> f64 {
        0.5 * (self.msb + self.lsb)
    }
}

/// Equal state priors for random data.
pub const UNIFORM_PRIORS: [f64; 4] = [0.25; 4];

/// Expected raw bit error rates for pages read at `vrefs`, computed from
/// Gaussian tail integrals.
pub fn expected_rber(
    dists: &[StateDistribution; 4],
    priors: &[f64; 4],
    vrefs: &VrefTriple,
) -> Result<RberBreakdown> {
    let mixtures = [
        StateMixture::single(dists[0]),
        StateMixture::single(dists[1]),
        StateMixture::single(dists[2]),
        StateMixture::single(dists[3]),
    ];
    expected_rber_mixture(&mixtures, priors, vrefs)
}

/// [`expected_rber`] for states described by Gaussian mixtures.
pub fn expected_rber_mixture(
    states: &[StateMixture; 4],
    priors: &[f64; 4],
    vrefs: &VrefTriple,
) -> Result<RberBreakdown> {
    let psum: f64 = priors.iter().sum();
    if (psum - 1.0).abs() > 1e-9 || priors.iter().any(|p| *p < 0.0) {
        return Err(Error::InvalidArgument(format!("priors sum to {psum}, expected 1")));
    }
    let edges = [
        f64::NEG_INFINITY,
        vrefs.va,
        vrefs.vb,
        vrefs.vc,
        f64::INFINITY,
    ];
    let mut out = RberBreakdown::default();
    for (from, mixture) in states.iter().enumerate() {
        let (fm, fl) = gray_encode(State::ALL[from]);
        for to in 0..4 {
            if to == from {
                continue;
            }
            let p = priors[from] * mixture.mass(edges[to], edges[to + 1]);
            if p == 0.0 {
                continue;
            }
            let (tm, tl) = gray_encode(State::ALL[to]);
            if fm != tm {
                out.msb += p;
            }
            if fl != tl {
                out.lsb += p;
            }
            match (from.min(to), from.max(to)) {
                (0, 1) => out.er_p1 += p,
                (1, 2) => out.p1_p2 += p,
                (2, 3) => out.p2_p3 += p,
                _ => out.multi += p,
            }
        }
    }
    Ok(out)
}
