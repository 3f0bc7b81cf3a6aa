//! Parametric error models evaluated from a [`CellContext`].

use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::voltage::{State, StateDistribution, VrefTriple};

/// Shortest retention time the models accept, in seconds.
pub const T_MIN_S: f64 = 60.0;
/// Longest retention time inside the fitted domain, in seconds.
pub const T_MAX_S: f64 = 1.0e7;
/// Largest P/E cycle count inside the fitted domain.
pub const PEC_MAX: f64 = 20_000.0;
/// One day in seconds.
pub const DAY_S: f64 = 86_400.0;
/// Reference retention at which retention-interference adjustments are quoted.
pub const RI_REFERENCE_S: f64 = 24.0 * DAY_S;

/// Everything that drives model evaluation for one cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellContext {
    pub pec: u32,
    pub retention_s: f64,
    pub layer: usize,
    pub read_disturbs: u64,
    /// State of the cell on the next wordline of the same bitline, if known.
    pub neighbor_state: Option<State>,
}

impl CellContext {
    pub fn new(pec: u32, retention_s: f64, layer: usize) -> Self {
        CellContext {
            pec,
            retention_s,
            layer,
            read_disturbs: 0,
            neighbor_state: None,
        }
    }
}

/// The thirteen fitted variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variable {
    RberMsb,
    RberLsb,
    MeanEr,
    MeanP1,
    MeanP2,
    MeanP3,
    StdevEr,
    StdevP1,
    StdevP2,
    StdevP3,
    VoptA,
    VoptB,
    VoptC,
}

impl Variable {
    pub const ALL: [Variable; 13] = [
        Variable::RberMsb,
        Variable::RberLsb,
        Variable::MeanEr,
        Variable::MeanP1,
        Variable::MeanP2,
        Variable::MeanP3,
        Variable::StdevEr,
        Variable::StdevP1,
        Variable::StdevP2,
        Variable::StdevP3,
        Variable::VoptA,
        Variable::VoptB,
        Variable::VoptC,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Variable::RberMsb => "rber_msb",
            Variable::RberLsb => "rber_lsb",
            Variable::MeanEr => "mean_er",
            Variable::MeanP1 => "mean_p1",
            Variable::MeanP2 => "mean_p2",
            Variable::MeanP3 => "mean_p3",
            Variable::StdevEr => "stdev_er",
            Variable::StdevP1 => "stdev_p1",
            Variable::StdevP2 => "stdev_p2",
            Variable::StdevP3 => "stdev_p3",
            Variable::VoptA => "vopt_a",
            Variable::VoptB => "vopt_b",
            Variable::VoptC => "vopt_c",
        }
    }

    pub fn from_name(name: &str) -> Option<Variable> {
        Variable::ALL.iter().copied().find(|v| v.name() == name)
    }

    pub fn mean_of(state: State) -> Variable {
        Variable::ALL[2 + state.index()]
    }

    pub fn stdev_of(state: State) -> Variable {
        Variable::ALL[6 + state.index()]
    }

    /// RBER rows are fitted in log space.
    pub fn is_log(self) -> bool {
        matches!(self, Variable::RberMsb | Variable::RberLsb)
    }

    /// Rows without a retention dependence.
    pub fn is_pec_only(self) -> bool {
        self == Variable::VoptA
    }
}

/// Coefficients of `(alpha*PEC + beta)*ln(t) + gamma*PEC + delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coeffs {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
}

impl Coeffs {
    pub const fn new(alpha: f64, beta: f64, gamma: f64, delta: f64) -> Self {
        Coeffs {
            alpha,
            beta,
            gamma,
            delta,
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.alpha, self.beta, self.gamma, self.delta]
    }

    pub fn from_array(c: [f64; 4]) -> Self {
        Coeffs::new(c[0], c[1], c[2], c[3])
    }

    pub fn eval(&self, pec: f64, t_s: f64) -> f64 {
        let lt = t_s.ln();
        (self.alpha * pec + self.beta) * lt + self.gamma * pec + self.delta
    }
}

/// Regressor vector `[PEC*ln t, ln t, PEC, 1]`.
pub fn regressors(pec: f64, t_s: f64) -> [f64; 4] {
    let lt = t_s.ln();
    [pec * lt, lt, pec, 1.0]
}

const FITTED_ROWS: [Coeffs; 13] = [
    Coeffs::new(5.49e-6, 0.16, 1.33e-4, -13.11),
    Coeffs::new(7.92e-6, 0.25, 3.28e-5, -12.72),
    Coeffs::new(1.01e-4, 0.74, 1.52e-3, -27.27),
    Coeffs::new(-1.94e-5, -0.40, 3.51e-4, 114.47),
    Coeffs::new(-4.71e-5, -0.70, 3.23e-4, 189.58),
    Coeffs::new(-7.37e-5, -1.20, 5.75e-4, 264.85),
    Coeffs::new(1.20e-5, -0.10, 1.63e-6, 17.01),
    Coeffs::new(-1.34e-6, 9.83e-3, 7.55e-5, 10.20),
    Coeffs::new(-2.12e-6, 9.85e-3, 6.69e-5, 10.65),
    Coeffs::new(2.87e-6, 1.40e-2, 3.30e-5, 10.83),
    Coeffs::new(0.0, 0.0, 1.20e-3, 60.52),
    Coeffs::new(-3.72e-5, -0.57, 4.20e-4, 150.56),
    Coeffs::new(-6.51e-5, -1.06, 4.81e-4, 227.24),
];

/// Adjusted R² (percent) published alongside each default row.
pub const FITTED_ADJ_R2: [f64; 13] = [
    97.17, 90.05, 96.86, 95.88, 98.50, 98.29, 56.33, 93.20, 89.02, 93.00, 71.20, 94.27, 97.72,
];

/// Text of the shipped default parameter file.
pub const DEFAULT_PARAMS_TOML: &str = include_str!("../config/retention_wear.toml");

/// Supported (PEC, t) evaluation domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub pec_max: f64,
    pub t_min_s: f64,
    pub t_max_s: f64,
}

impl Default for Domain {
    fn default() -> Self {
        Domain {
            pec_max: PEC_MAX,
            t_min_s: T_MIN_S,
            t_max_s: T_MAX_S,
        }
    }
}

impl Domain {
    pub fn contains(&self, pec: f64, t_s: f64) -> bool {
        pec >= 0.0 && pec <= self.pec_max && t_s >= self.t_min_s && t_s <= self.t_max_s
    }

    pub fn check(&self, pec: f64, t_s: f64) -> Result<()> {
        if self.contains(pec, t_s) {
            Ok(())
        } else {
            Err(Error::Extrapolation(format!(
                "PEC={pec}, t={t_s} s outside [0, {}] x [{}, {}]",
                self.pec_max, self.t_min_s, self.t_max_s
            )))
        }
    }
}

/// The 13-row retention/wear model.
#[derive(Debug, Clone, PartialEq)]
pub struct RetentionWearModel {
    rows: [Coeffs; 13],
    pub domain: Domain,
    /// Evaluate outside the domain instead of failing.
    pub permissive: bool,
}

impl Default for RetentionWearModel {
    fn default() -> Self {
        RetentionWearModel::fitted()
    }
}

#[derive(Serialize, Deserialize)]
struct ParamsFile {
    #[serde(default)]
    domain: Option<Domain>,
    rows: std::collections::BTreeMap<String, Coeffs>,
}

impl RetentionWearModel {
    pub fn fitted() -> Self {
        RetentionWearModel {
            rows: FITTED_ROWS,
            domain: Domain::default(),
            permissive: false,
        }
    }

    pub fn from_rows(rows: [Coeffs; 13]) -> Self {
        RetentionWearModel {
            rows,
            domain: Domain::default(),
            permissive: false,
        }
    }

    pub fn row(&self, var: Variable) -> Coeffs {
        self.rows[var.index()]
    }

    pub fn set_row(&mut self, var: Variable, c: Coeffs) {
        self.rows[var.index()] = c;
    }

    pub fn rows(&self) -> &[Coeffs; 13] {
        &self.rows
    }

    pub fn check(&self, pec: f64, t_s: f64) -> Result<()> {
        if self.permissive {
            Ok(())
        } else {
            self.domain.check(pec, t_s)
        }
    }

    /// Raw row value; log RBER for the two RBER rows.
    pub fn eval(&self, var: Variable, pec: f64, t_s: f64) -> Result<f64> {
        self.check(pec, t_s)?;
        Ok(self.rows[var.index()].eval(pec, t_s))
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: ParamsFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut rows = FITTED_ROWS;
        let mut seen = [false; 13];
        for (name, c) in &file.rows {
            let v = Variable::from_name(name)
                .ok_or_else(|| Error::Config(format!("unknown model row '{name}'")))?;
            rows[v.index()] = *c;
            seen[v.index()] = true;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::Config(format!(
                "missing model row '{}'",
                Variable::ALL[i].name()
            )));
        }
        Ok(RetentionWearModel {
            rows,
            domain: file.domain.unwrap_or_default(),
            permissive: false,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        let file = ParamsFile {
            domain: Some(self.domain),
            rows: Variable::ALL
                .iter()
                .map(|v| (v.name().to_string(), self.rows[v.index()]))
                .collect(),
        };
        toml::to_string(&file).expect("model rows serialize")
    }
}

/// Per-layer additive offsets relative to the reference layer 0.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LayerOffsets {
    pub mean: [f64; 4],
    pub stdev: [f64; 4],
    pub va: f64,
    pub vb: f64,
}

/// Knot description of a layer profile over normalized layer position 0..100.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileKnots {
    pub knots: Vec<f64>,
    pub mean_er: Vec<f64>,
    pub stdev_er: Vec<f64>,
    pub stdev_p1: Vec<f64>,
    #[serde(default)]
    pub mean_p1: Vec<f64>,
}

impl ProfileKnots {
    /// Calibrated default shape.
    pub fn calibrated() -> Self {
        ProfileKnots {
            knots: vec![0.0, 25.0, 50.0, 75.0, 100.0],
            mean_er: vec![0.0, 1.19, 25.0, 15.0, 4.17],
            stdev_er: vec![0.0, 6.36, 7.0, 5.29, 3.25],
            stdev_p1: vec![0.0, 0.65, 0.0, 3.45, 0.82],
            mean_p1: vec![0.0, -6.0, -1.43, 0.0, 1.18],
        }
    }

    fn validate(&self) -> Result<()> {
        let n = self.knots.len();
        if n < 2 {
            return Err(Error::Config("layer profile needs at least two knots".into()));
        }
        if self.knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("layer profile knots must ascend".into()));
        }
        for (name, v) in [
            ("mean_er", &self.mean_er),
            ("stdev_er", &self.stdev_er),
            ("stdev_p1", &self.stdev_p1),
        ] {
            if v.len() != n {
                return Err(Error::Config(format!("{name} has {} values, expected {n}", v.len())));
            }
        }
        if !self.mean_p1.is_empty() && self.mean_p1.len() != n {
            return Err(Error::Config(format!(
                "mean_p1 has {} values, expected {n}",
                self.mean_p1.len()
            )));
        }
        Ok(())
    }
}

fn interp(knots: &[f64], values: &[f64], x: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    if x <= knots[0] {
        return values[0];
    }
    for i in 1..knots.len() {
        if x <= knots[i] {
            let f = (x - knots[i - 1]) / (knots[i] - knots[i - 1]);
            return values[i - 1] + f * (values[i] - values[i - 1]);
        }
    }
    values[values.len() - 1]
}

/// Per-layer offsets of the state distributions and of the optimal Va/Vb.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerVariationProfile {
    layers: Vec<LayerOffsets>,
}

/// Condition at which per-layer Vopt offsets are derived.
pub const PROFILE_VOPT_PEC: u32 = 10_000;
pub const PROFILE_VOPT_T_S: f64 = 3_000.0;

impl LayerVariationProfile {
    /// Zero offsets everywhere.
    pub fn flat(n_layers: usize) -> Self {
        LayerVariationProfile {
            layers: vec![LayerOffsets::default(); n_layers.max(1)],
        }
    }

    /// Explicit per-layer offsets; layer 0 must be zero.
    pub fn from_layers(layers: Vec<LayerOffsets>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("profile needs at least one layer".into()));
        }
        if layers[0] != LayerOffsets::default() {
            return Err(Error::InvalidArgument("reference layer 0 must have zero offsets".into()));
        }
        Ok(LayerVariationProfile { layers })
    }

    /// Sample a knot description at `n_layers` evenly spaced positions and
    /// derive the Va/Vb offsets from the shifted distributions.
    pub fn from_knots(n_layers: usize, k: &ProfileKnots, model: &RetentionWearModel) -> Result<Self> {
        k.validate()?;
        let n = n_layers.max(1);
        let mut layers = Vec::with_capacity(n);
        for l in 0..n {
            let x = if n == 1 { 0.0 } else { 100.0 * l as f64 / (n - 1) as f64 };
            let mut o = LayerOffsets::default();
            o.mean[0] = interp(&k.knots, &k.mean_er, x);
            o.stdev[0] = interp(&k.knots, &k.stdev_er, x);
            o.stdev[1] = interp(&k.knots, &k.stdev_p1, x);
            o.mean[1] = interp(&k.knots, &k.mean_p1, x);
            layers.push(o);
        }
        layers[0] = LayerOffsets::default();
        let mut p = LayerVariationProfile { layers };
        p.derive_vopt_offsets(model, PROFILE_VOPT_PEC, PROFILE_VOPT_T_S)?;
        Ok(p)
    }

    /// Default calibrated profile.
    pub fn calibrated(n_layers: usize, model: &RetentionWearModel) -> Self {
        Self::from_knots(n_layers, &ProfileKnots::calibrated(), model)
            .expect("calibrated profile is valid")
    }

    /// Set the Va/Vb offsets of every layer to the shift of its optimal
    /// boundaries relative to layer 0 at (pec, t).
    pub fn derive_vopt_offsets(&mut self, model: &RetentionWearModel, pec: u32, t_s: f64) -> Result<()> {
        let base = base_distributions(model, pec as f64, t_s)?;
        let v0 = crate::voltage::optimal_vrefs(&base)?;
        for o in self.layers.iter_mut().skip(1) {
            let mut d = base;
            for s in 0..4 {
                d[s] = StateDistribution::new(base[s].mean() + o.mean[s], base[s].stdev() + o.stdev[s])?;
            }
            let v = crate::voltage::optimal_vrefs(&d)?;
            o.va = v.va() - v0.va();
            o.vb = v.vb() - v0.vb();
        }
        Ok(())
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer(&self, l: usize) -> Result<&LayerOffsets> {
        self.layers
            .get(l)
            .ok_or_else(|| Error::Address(format!("layer {l} of {}", self.layers.len())))
    }

    pub fn layers(&self) -> &[LayerOffsets] {
        &self.layers
    }

    pub fn is_flat(&self) -> bool {
        self.layers.iter().all(|o| *o == LayerOffsets::default())
    }
}

/// Coupling from newly programmed neighbor wordlines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProgramInterferenceModel {
    pub enabled: bool,
    pub coupling_next_wl: f64,
    pub coupling_prev_wl: f64,
}

impl Default for ProgramInterferenceModel {
    fn default() -> Self {
        ProgramInterferenceModel {
            enabled: false,
            coupling_next_wl: 0.027,
            coupling_prev_wl: 0.0008,
        }
    }
}

/// Which side of the victim the aggressor wordline sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    NextWl,
    PrevWl,
}

/// Victim shift caused by an aggressor that moved `aggressor_delta` steps.
pub fn program_interference_shift(
    pi: &ProgramInterferenceModel,
    victim_state: State,
    aggressor_delta: f64,
    relation: Relation,
) -> f64 {
    let d = aggressor_delta.max(0.0);
    match relation {
        Relation::NextWl => pi.coupling_next_wl * d,
        Relation::PrevWl if victim_state == State::Er => pi.coupling_prev_wl * d,
        Relation::PrevWl => 0.0,
    }
}

/// Linear threshold-voltage drift per read of another wordline in the block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReadDisturbModel {
    pub enabled: bool,
    pub mean_slope: [f64; 4],
    pub stdev_slope: [f64; 4],
}

const PER_900K: f64 = 1.0 / 900_000.0;

impl Default for ReadDisturbModel {
    fn default() -> Self {
        ReadDisturbModel {
            enabled: false,
            mean_slope: [8.0 * PER_900K, 2.5 * PER_900K, 1.5 * PER_900K, -0.5 * PER_900K],
            stdev_slope: [-0.15 * PER_900K; 4],
        }
    }
}

/// Transient misread probability near a read reference voltage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReadErrorModel {
    pub enabled: bool,
    pub amplitude: f64,
    pub decay: f64,
}

impl Default for ReadErrorModel {
    fn default() -> Self {
        ReadErrorModel {
            enabled: false,
            amplitude: 0.05,
            decay: 1.5,
        }
    }
}

pub fn read_error_probability(re: &ReadErrorModel, offset: f64) -> f64 {
    (re.amplitude * (-re.decay * offset.abs()).exp()).clamp(0.0, 0.5)
}

/// Neighbor-state dependent adjustment of retention drift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetentionInterferenceModel {
    pub enabled: bool,
    /// `shift_adjust[victim][neighbor]` in steps at the reference retention.
    pub shift_adjust: [[f64; 4]; 4],
}

impl Default for RetentionInterferenceModel {
    fn default() -> Self {
        let row = [-1.0, -1.0 / 3.0, 1.0 / 3.0, 1.0];
        RetentionInterferenceModel {
            enabled: false,
            shift_adjust: [[0.0; 4], row, row, row],
        }
    }
}

impl RetentionInterferenceModel {
    /// Uniform table with adjustments `-a, -a/3, a/3, a` for programmed victims.
    pub fn symmetric(a: f64) -> Self {
        let row = [-a, -a / 3.0, a / 3.0, a];
        RetentionInterferenceModel {
            enabled: true,
            shift_adjust: [[0.0; 4], row, row, row],
        }
    }

    pub fn scale(t_s: f64) -> f64 {
        (t_s.max(1.0).ln() / RI_REFERENCE_S.ln()).max(0.0)
    }

    pub fn adjustment(&self, victim: State, neighbor: State, t_s: f64) -> f64 {
        if !self.enabled {
            return 0.0;
        }
        self.shift_adjust[victim.index()][neighbor.index()] * Self::scale(t_s)
    }
}

/// Gamma density `x^(a-1) e^(-x/s) / (Gamma(a) s^a)`.
pub fn gamma_rber_pdf(a: f64, s: f64, x: f64) -> Result<f64> {
    if a <= 0.0 || s <= 0.0 || !a.is_finite() || !s.is_finite() {
        return Err(Error::InvalidArgument(format!("gamma shape {a} and scale {s} must be > 0")));
    }
    if x < 0.0 {
        return Ok(0.0);
    }
    if x == 0.0 {
        return Ok(if a < 1.0 {
            f64::INFINITY
        } else if a == 1.0 {
            1.0 / s
        } else {
            0.0
        });
    }
    let ln = (a - 1.0) * x.ln() - x / s - ln_gamma(a) - a * s.ln();
    Ok(ln.exp())
}

/// All error models used as simulation ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorModels {
    pub wear: RetentionWearModel,
    pub profile: LayerVariationProfile,
    pub program_interference: ProgramInterferenceModel,
    pub read_disturb: ReadDisturbModel,
    pub read_error: ReadErrorModel,
    pub retention_interference: RetentionInterferenceModel,
}

impl ErrorModels {
    /// Fitted rows with the calibrated layer profile.
    pub fn calibrated(n_layers: usize) -> Self {
        let wear = RetentionWearModel::fitted();
        let profile = LayerVariationProfile::calibrated(n_layers, &wear);
        Self::with_profile(wear, profile)
    }

    /// Fitted rows with no layer variation.
    pub fn flat(n_layers: usize) -> Self {
        Self::with_profile(RetentionWearModel::fitted(), LayerVariationProfile::flat(n_layers))
    }

    pub fn with_profile(wear: RetentionWearModel, profile: LayerVariationProfile) -> Self {
        ErrorModels {
            wear,
            profile,
            program_interference: ProgramInterferenceModel::default(),
            read_disturb: ReadDisturbModel::default(),
            read_error: ReadErrorModel::default(),
            retention_interference: RetentionInterferenceModel::default(),
        }
    }

    pub fn distribution(&self, ctx: &CellContext, state: State) -> Result<StateDistribution> {
        eval_distribution(self, ctx, state)
    }

    /// Distributions of all four states for a context (neighbor ignored).
    pub fn distributions(&self, ctx: &CellContext) -> Result<[StateDistribution; 4]> {
        let c = CellContext {
            neighbor_state: None,
            ..*ctx
        };
        Ok([
            eval_distribution(self, &c, State::Er)?,
            eval_distribution(self, &c, State::P1)?,
            eval_distribution(self, &c, State::P2)?,
            eval_distribution(self, &c, State::P3)?,
        ])
    }
}

/// Distribution of one state under a context.
pub fn eval_distribution(models: &ErrorModels, ctx: &CellContext, state: State) -> Result<StateDistribution> {
    let pec = ctx.pec as f64;
    let t = ctx.retention_s;
    models.wear.check(pec, t)?;
    let off = models.profile.layer(ctx.layer)?;
    let i = state.index();
    let mut mean = models.wear.row(Variable::mean_of(state)).eval(pec, t) + off.mean[i];
    let mut stdev = models.wear.row(Variable::stdev_of(state)).eval(pec, t) + off.stdev[i];
    if models.read_disturb.enabled {
        let n = ctx.read_disturbs as f64;
        mean += models.read_disturb.mean_slope[i] * n;
        stdev += models.read_disturb.stdev_slope[i] * n;
    }
    if let Some(nb) = ctx.neighbor_state {
        mean += models.retention_interference.adjustment(state, nb, t);
    }
    if !(stdev > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "stdev {stdev} of {state} not positive at PEC={pec}, t={t}"
        )));
    }
    StateDistribution::new(mean, stdev)
}

/// Reference-layer distributions straight from the wear model.
pub fn base_distributions(model: &RetentionWearModel, pec: f64, t_s: f64) -> Result<[StateDistribution; 4]> {
    model.check(pec, t_s)?;
    let d = |s: State| {
        StateDistribution::new(
            model.row(Variable::mean_of(s)).eval(pec, t_s),
            model.row(Variable::stdev_of(s)).eval(pec, t_s),
        )
    };
    Ok([d(State::Er)?, d(State::P1)?, d(State::P2)?, d(State::P3)?])
}

/// MSB and LSB RBER rows.
pub fn eval_rber(model: &RetentionWearModel, ctx: &CellContext) -> Result<(f64, f64)> {
    let pec = ctx.pec as f64;
    Ok((
        model.eval(Variable::RberMsb, pec, ctx.retention_s)?.exp(),
        model.eval(Variable::RberLsb, pec, ctx.retention_s)?.exp(),
    ))
}

/// Optimal read reference voltages predicted by the model rows.
pub fn eval_vopt(model: &RetentionWearModel, profile: &LayerVariationProfile, ctx: &CellContext) -> Result<VrefTriple> {
    let pec = ctx.pec as f64;
    let t = ctx.retention_s;
    model.check(pec, t)?;
    let off = profile.layer(ctx.layer)?;
    let a = model.row(Variable::VoptA);
    let va = a.gamma * pec + a.delta + off.va;
    let vb = model.row(Variable::VoptB).eval(pec, t) + off.vb;
    let vc = model.row(Variable::VoptC).eval(pec, t);
    VrefTriple::new(va, vb, vc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn hand(row: [f64; 4], pec: f64, t: f64) -> f64 {
        let l = t.ln();
        row[0] * pec * l + row[1] * l + row[2] * pec + row[3]
    }

    #[test]
    fn p3_mean_example() {
        let m = ErrorModels::flat(4);
        let d = m.distribution(&CellContext::new(10_000, 1e6, 0), State::P3).unwrap();
        assert!((d.mean() - 243.8).abs() < 0.05, "{}", d.mean());
    }

    #[test]
    fn layer_offset_is_additive() {
        let wear = RetentionWearModel::fitted();
        let mut layers = vec![LayerOffsets::default(); 3];
        layers[1].mean[0] = 25.0;
        let m = ErrorModels::with_profile(wear, LayerVariationProfile::from_layers(layers).unwrap());
        let a = m.distribution(&CellContext::new(3000, 1e5, 0), State::Er).unwrap();
        let b = m.distribution(&CellContext::new(3000, 1e5, 1), State::Er).unwrap();
        assert_relative_eq!(b.mean() - a.mean(), 25.0, epsilon = 1e-12);
    }

    #[test]
    fn domain_guard() {
        let m = ErrorModels::flat(1);
        let e = m.distribution(&CellContext::new(0, 1.0, 0), State::Er).unwrap_err();
        assert!(matches!(e, Error::Extrapolation(_)));
        let mut p = m.clone();
        p.wear.permissive = true;
        assert!(p.distribution(&CellContext::new(0, 1.0, 0), State::Er).is_ok());
    }

    #[test]
    fn rber_examples() {
        let w = RetentionWearModel::fitted();
        let (m4, _) = eval_rber(&w, &CellContext::new(10_000, 1e4, 0)).unwrap();
        assert_relative_eq!(m4, 5.54e-5, max_relative = 0.01);
        let (m6, _) = eval_rber(&w, &CellContext::new(10_000, 1e6, 0)).unwrap();
        assert_relative_eq!(m6 / m4, (0.2149f64 * 100f64.ln()).exp(), max_relative = 1e-9);
        assert!((m6 / m4 - 2.69).abs() < 0.02);
    }

    #[test]
    fn vopt_examples() {
        let w = RetentionWearModel::fitted();
        let p = LayerVariationProfile::flat(1);
        let a = eval_vopt(&w, &p, &CellContext::new(10_000, 1e3, 0)).unwrap();
        let b = eval_vopt(&w, &p, &CellContext::new(10_000, 1e6, 0)).unwrap();
        assert_relative_eq!(a.va(), 72.52, epsilon = 1e-9);
        assert_eq!(a.va(), b.va());
        assert!((b.vc() - 208.4).abs() < 0.05, "{}", b.vc());
        assert!(b.vb() < a.vb());
    }

    #[test]
    fn rows_match_hand_oracle() {
        let w = RetentionWearModel::fitted();
        let expect: [[f64; 4]; 13] = [
            [5.49e-6, 0.16, 1.33e-4, -13.11],
            [7.92e-6, 0.25, 3.28e-5, -12.72],
            [1.01e-4, 0.74, 1.52e-3, -27.27],
            [-1.94e-5, -0.40, 3.51e-4, 114.47],
            [-4.71e-5, -0.70, 3.23e-4, 189.58],
            [-7.37e-5, -1.20, 5.75e-4, 264.85],
            [1.20e-5, -0.10, 1.63e-6, 17.01],
            [-1.34e-6, 9.83e-3, 7.55e-5, 10.20],
            [-2.12e-6, 9.85e-3, 6.69e-5, 10.65],
            [2.87e-6, 1.40e-2, 3.30e-5, 10.83],
            [0.0, 0.0, 1.20e-3, 60.52],
            [-3.72e-5, -0.57, 4.20e-4, 150.56],
            [-6.51e-5, -1.06, 4.81e-4, 227.24],
        ];
        for (pec, t) in [(0.0, 60.0), (7_500.0, 3.3e4), (20_000.0, 1e7)] {
            for v in Variable::ALL {
                let got = w.eval(v, pec, t).unwrap();
                let want = hand(expect[v.index()], pec, t);
                assert_relative_eq!(got, want, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn stdev_rows_positive_on_domain() {
        let w = RetentionWearModel::fitted();
        for pec in (0..=20_000).step_by(500) {
            for t in [60.0, 600.0, 1e4, 1e5, 1e6, 1e7] {
                for s in State::ALL {
                    assert!(w.eval(Variable::stdev_of(s), pec as f64, t).unwrap() > 0.0);
                }
            }
        }
    }

    #[test]
    fn shipped_params_file_matches_fitted_rows() {
        let w = RetentionWearModel::from_toml_str(DEFAULT_PARAMS_TOML).unwrap();
        assert_eq!(w, RetentionWearModel::fitted());
        let round = RetentionWearModel::from_toml_str(&w.to_toml_string()).unwrap();
        assert_eq!(round, w);
    }

    #[test]
    fn params_file_rejects_missing_row() {
        let text = DEFAULT_PARAMS_TOML.replace("[rows.vopt_c]", "[rows.vopt_x]");
        assert!(RetentionWearModel::from_toml_str(&text).is_err());
    }

    #[test]
    fn program_interference_examples() {
        let pi = ProgramInterferenceModel::default();
        assert_relative_eq!(program_interference_shift(&pi, State::P1, 100.0, Relation::NextWl), 2.7);
        assert_eq!(program_interference_shift(&pi, State::P2, 80.0, Relation::PrevWl), 0.0);
        assert_relative_eq!(program_interference_shift(&pi, State::Er, 100.0, Relation::PrevWl), 0.08);
        assert_eq!(program_interference_shift(&pi, State::P3, 0.0, Relation::NextWl), 0.0);
    }

    #[test]
    fn read_error_law() {
        let re = ReadErrorModel {
            enabled: true,
            amplitude: 0.1,
            decay: 0.7,
        };
        assert_eq!(read_error_probability(&re, 0.0), 0.1);
        assert!(read_error_probability(&re, 1e6) < 1e-300);
        let r1 = read_error_probability(&re, 2.0) / 0.1;
        let r2 = read_error_probability(&re, 4.0) / 0.1;
        assert_relative_eq!(r2, r1 * r1, max_relative = 1e-12);
        let big = ReadErrorModel { amplitude: 3.0, ..re };
        assert_eq!(read_error_probability(&big, 0.0), 0.5);
    }

    #[test]
    fn read_disturb_defaults() {
        let rd = ReadDisturbModel::default();
        assert_relative_eq!(rd.mean_slope[0] * 900_000.0, 8.0, epsilon = 1e-9);
        assert!(rd.mean_slope.iter().all(|s| *s <= rd.mean_slope[0]));
        assert!(rd.stdev_slope.iter().all(|s| (s * 900_000.0).abs() < 0.2));
    }

    #[test]
    fn retention_interference_monotone_and_bounded() {
        let ri = RetentionInterferenceModel { enabled: true, ..Default::default() };
        for v in [State::P1, State::P2, State::P3] {
            let mut last = f64::INFINITY;
            for n in State::ALL {
                // victims lose charge; a smaller loss means a less negative total shift
                let loss = 1.0 - ri.adjustment(v, n, RI_REFERENCE_S);
                assert!(loss <= last);
                last = loss;
                assert!(ri.adjustment(v, n, RI_REFERENCE_S).abs() <= 2.0);
            }
        }
        assert_relative_eq!(ri.adjustment(State::P2, State::P3, RI_REFERENCE_S), 1.0);
        assert_relative_eq!(ri.adjustment(State::P2, State::P3, 1e3), 1e3f64.ln() / RI_REFERENCE_S.ln());
    }

    #[test]
    fn gamma_pdf_identities() {
        for x in [0.0, 0.3, 2.0, 9.0] {
            assert_relative_eq!(gamma_rber_pdf(1.0, 2.0, x).unwrap(), (-x / 2.0).exp() / 2.0, max_relative = 1e-12);
        }
        assert!(gamma_rber_pdf(0.0, 1.0, 1.0).is_err());
        assert!(gamma_rber_pdf(1.0, -1.0, 1.0).is_err());
        // trapezoid quadrature of a=4, s=2
        let (n, hi) = (400_000, 120.0);
        let h = hi / n as f64;
        let mut sum = 0.0;
        for i in 0..=n {
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            sum += w * gamma_rber_pdf(4.0, 2.0, i as f64 * h).unwrap();
        }
        assert!((sum * h - 1.0).abs() < 1e-6);
        let mode = (4.0 - 1.0) * 2.0;
        let f = |x: f64| gamma_rber_pdf(4.0, 2.0, x).unwrap();
        assert!(f(mode) > f(mode - 0.01) && f(mode) > f(mode + 0.01));
    }

    #[test]
    fn calibrated_profile_shape() {
        let w = RetentionWearModel::fitted();
        let p = LayerVariationProfile::calibrated(32, &w);
        assert_eq!(p.n_layers(), 32);
        assert_eq!(*p.layer(0).unwrap(), LayerOffsets::default());
        let peak = p.layers().iter().map(|o| o.mean[0]).fold(f64::MIN, f64::max);
        assert!(peak <= 25.0 + 1e-9 && peak > 20.0);
        assert!(LayerVariationProfile::flat(8).is_flat());
    }

    use proptest::prelude::*;
    proptest! {
        #[test]
        fn monotone_in_t_and_pec(pec in 0u32..19_000, t in 60.0f64..5e6, dt in 1.01f64..2.0, dp in 1u32..1000) {
            let m = ErrorModels::flat(1);
            let w = &m.wear;
            let c = CellContext::new(pec, t, 0);
            let c_t = CellContext::new(pec, t * dt, 0);
            let c_p = CellContext::new(pec + dp, t, 0);
            let (a, b) = (eval_rber(w, &c).unwrap(), eval_rber(w, &c_t).unwrap());
            prop_assert!(b.0 >= a.0 && b.1 >= a.1);
            let (_, bp) = (eval_rber(w, &c).unwrap(), eval_rber(w, &c_p).unwrap());
            prop_assert!(bp.0 >= a.0 && bp.1 >= a.1);
            let d0 = m.distributions(&c).unwrap();
            let d1 = m.distributions(&c_t).unwrap();
            prop_assert!(d1[0].mean() >= d0[0].mean());
            for s in 1..4 {
                prop_assert!(d1[s].mean() <= d0[s].mean());
            }
            let dp_ = m.distributions(&c_p).unwrap();
            prop_assert!(dp_[0].mean() >= d0[0].mean());
        }

        #[test]
        fn linear_in_regressors(pec in 0.0f64..20_000.0, t in 60.0f64..1e7) {
            let w = RetentionWearModel::fitted();
            let x = regressors(pec, t);
            for v in Variable::ALL {
                let c = w.row(v).as_array();
                let lin: f64 = (0..4).map(|i| c[i] * x[i]).sum();
                let got = w.eval(v, pec, t).unwrap();
                prop_assert!((got - lin).abs() <= 1e-9 * lin.abs().max(1.0));
            }
        }
    }
}
