//! Experiment configuration (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::controller::{EccConfig, FIXED_DEFAULT_PEC, FIXED_DEFAULT_T_S, T_REF_S};
use crate::error::{Error, Result};
use crate::models::{
    ErrorModels, LayerVariationProfile, ProfileKnots, ProgramInterferenceModel, ReadDisturbModel, ReadErrorModel,
    RetentionInterferenceModel, RetentionWearModel, DAY_S,
};
use crate::sim::{ChipGeometry, Mode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ModeName {
    #[default]
    Analytic,
    MonteCarlo,
}

impl From<ModeName> for Mode {
    fn from(m: ModeName) -> Mode {
        match m {
            ModeName::Analytic => Mode::Analytic,
            ModeName::MonteCarlo => Mode::MonteCarlo,
        }
    }
}

/// Read-voltage policies a sweep can compare.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyName {
    /// Factory default vrefs.
    Fixed,
    /// PEC-only Vopt at the reference retention.
    Sota,
    /// PEC-only Vopt plus LaVAR layer offsets.
    Lavar,
    /// Retention-aware Vopt from ReMAR fits.
    Remar,
    /// ReMAR Vopt plus LaVAR layer offsets.
    RemarLavar,
    /// Measured per-block optimum (oracle).
    BlockOptimal,
}

impl PolicyName {
    pub const ALL: [PolicyName; 6] = [
        PolicyName::Fixed,
        PolicyName::Sota,
        PolicyName::Lavar,
        PolicyName::Remar,
        PolicyName::RemarLavar,
        PolicyName::BlockOptimal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyName::Fixed => "fixed",
            PolicyName::Sota => "sota",
            PolicyName::Lavar => "lavar",
            PolicyName::Remar => "remar",
            PolicyName::RemarLavar => "remar-lavar",
            PolicyName::BlockOptimal => "block-optimal",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == s)
    }
}

/// How per-page RBER is scaled for lifetime decisions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RberScale {
    /// Raw Gaussian-overlap RBER of the simulator.
    Gaussian,
    /// Rescaled per (PEC, retention, page type) so that the reference layer
    /// at its own optimum matches the fitted RBER rows.
    #[default]
    Fitted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PecGrid {
    List(Vec<u32>),
    Range { start: u32, stop: u32, step: u32 },
}

impl Default for PecGrid {
    fn default() -> Self {
        PecGrid::Range {
            start: 0,
            stop: 20_000,
            step: 1000,
        }
    }
}

impl PecGrid {
    pub fn values(&self) -> Vec<u32> {
        match self {
            PecGrid::List(v) => v.clone(),
            PecGrid::Range { start, stop, step } => {
                if *step == 0 {
                    return vec![*start];
                }
                (*start..=*stop).step_by(*step as usize).collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub chips: usize,
    pub blocks_per_chip: usize,
    pub wordlines: usize,
    pub cells: usize,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        let g = ChipGeometry::default();
        GeometryConfig {
            chips: g.n_chips,
            blocks_per_chip: g.blocks_per_chip,
            wordlines: g.wordlines_per_block,
            cells: g.cells_per_wordline,
        }
    }
}

impl GeometryConfig {
    pub fn chip_geometry(&self) -> ChipGeometry {
        ChipGeometry {
            n_chips: self.chips,
            blocks_per_chip: self.blocks_per_chip,
            wordlines_per_block: self.wordlines,
            cells_per_wordline: self.cells,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ProfileConfig {
    /// Use no layer variation at all.
    #[serde(default)]
    pub flat: bool,
    /// Custom knots; the calibrated default is used when absent.
    #[serde(default)]
    pub knots: Option<ProfileKnots>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct InterferenceConfig {
    #[serde(default)]
    pub program_interference: bool,
    #[serde(default)]
    pub read_disturb: bool,
    #[serde(default)]
    pub read_errors: bool,
    #[serde(default)]
    pub retention_interference: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub t_ref_s: f64,
    pub fixed_pec: u32,
    pub fixed_t_s: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            t_ref_s: T_REF_S,
            fixed_pec: FIXED_DEFAULT_PEC,
            fixed_t_s: FIXED_DEFAULT_T_S,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LavarConfig {
    /// Wear of the characterized sample block.
    pub sample_pec: u32,
    /// Retention of the sample block when learning offsets for the PEC-only base.
    pub sample_t_s: f64,
}

impl Default for LavarConfig {
    fn default() -> Self {
        LavarConfig {
            sample_pec: 10_000,
            sample_t_s: T_REF_S,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemarConfig {
    /// PEC values of the observed blocks.
    pub pecs: Vec<u32>,
    /// Retention times at which each block is observed.
    pub retention_s: Vec<f64>,
}

impl Default for RemarConfig {
    fn default() -> Self {
        RemarConfig {
            pecs: (0..=10).map(|i| i * 1000).collect(),
            retention_s: vec![420.0, 1800.0, 3600.0, 3.0 * 3600.0, DAY_S, 3.0 * DAY_S, 7.0 * DAY_S, 14.0 * DAY_S, 24.0 * DAY_S],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FcrConfig {
    pub period_s: f64,
}

impl Default for FcrConfig {
    fn default() -> Self {
        FcrConfig { period_s: 3.0 * DAY_S }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RaidConfig {
    pub chips_per_group: usize,
}

impl Default for RaidConfig {
    fn default() -> Self {
        RaidConfig { chips_per_group: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplicationConfig {
    /// One block per PEC value.
    pub pecs: Vec<u32>,
    pub retention_s: Vec<f64>,
    /// Cells per wordline of the replication blocks.
    pub cells: usize,
    /// Wear at which per-page RBER is fitted with a gamma distribution.
    pub gamma_pec: u32,
    pub gamma_bins: usize,
    /// Blocks and cells per wordline sampled for the gamma fit.
    pub gamma_blocks: usize,
    pub gamma_cells: usize,
    /// Read window of the replication sweeps, wide enough for every state.
    pub window: (f64, f64),
}

impl Default for ReplicationConfig {
    fn default() -> Self {
        ReplicationConfig {
            pecs: (0..=10).map(|i| i * 1000).collect(),
            retention_s: RemarConfig::default().retention_s,
            cells: 65_536,
            gamma_pec: 10_000,
            gamma_bins: 20,
            gamma_blocks: 16,
            gamma_cells: 65_536,
            window: (-200.0, 450.0),
        }
    }
}

/// Everything an experiment needs. Only `seed` is mandatory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default)]
    pub mode: ModeName,
    #[serde(default)]
    pub model_file: Option<PathBuf>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Retention assumed for sweeps and lifetime.
    #[serde(default = "default_retention")]
    pub retention_s: f64,
    #[serde(default)]
    pub pec_grid: PecGrid,
    #[serde(default = "default_policies")]
    pub policies: Vec<PolicyName>,
    #[serde(default)]
    pub rber_scale: RberScale,
    #[serde(default)]
    pub geometry: GeometryConfig,
    #[serde(default)]
    pub profile: ProfileConfig,
    #[serde(default)]
    pub interference: InterferenceConfig,
    #[serde(default)]
    pub ecc: EccConfig,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub lavar: LavarConfig,
    #[serde(default)]
    pub remar: RemarConfig,
    #[serde(default)]
    pub fcr: FcrConfig,
    #[serde(default)]
    pub raid: RaidConfig,
    #[serde(default)]
    pub replication: ReplicationConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_retention() -> f64 {
    24.0 * DAY_S
}

fn default_policies() -> Vec<PolicyName> {
    vec![PolicyName::Fixed, PolicyName::Sota, PolicyName::Lavar, PolicyName::Remar, PolicyName::RemarLavar]
}

/// 1-based line of the first line that assigns `key`, if any.
fn line_of(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|l| {
        let t = l.trim_start();
        t.strip_prefix(key).is_some_and(|r| r.trim_start().starts_with('='))
    })
    .map(|i| i + 1)
}

fn at(text: &str, key: &str, msg: String) -> Error {
    match line_of(text, key) {
        Some(l) => Error::Config(format!("line {l}: {msg}")),
        None => Error::Config(msg),
    }
}

impl ExperimentConfig {
    /// Defaults everywhere except the seed.
    pub fn with_seed(seed: u64) -> Self {
        toml::from_str(&format!("seed = {seed}")).expect("minimal config parses")
    }

    /// Parse and validate; paths are resolved against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut c: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))?;
        if let Some(p) = &c.model_file {
            if p.is_relative() {
                c.model_file = Some(base_dir.join(p));
            }
        }
        if c.output_dir.is_relative() {
            c.output_dir = base_dir.join(&c.output_dir);
        }
        c.validate_with(text)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_with("")
    }

    fn validate_with(&self, text: &str) -> Result<()> {
        let grid = self.pec_grid.values();
        if grid.is_empty() {
            return Err(at(text, "pec_grid", "pec_grid is empty".into()));
        }
        if grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(at(text, "pec_grid", "pec_grid must be strictly ascending".into()));
        }
        if let PecGrid::Range { step: 0, .. } = self.pec_grid {
            return Err(at(text, "pec_grid", "pec_grid step must be > 0".into()));
        }
        if !(self.retention_s > 0.0) {
            return Err(at(text, "retention_s", format!("retention_s {} must be > 0", self.retention_s)));
        }
        if self.policies.is_empty() {
            return Err(at(text, "policies", "policies is empty".into()));
        }
        if let Some(p) = &self.model_file {
            if !p.exists() {
                return Err(at(text, "model_file", format!("model_file {} does not exist", p.display())));
            }
        }
        self.geometry.chip_geometry().validate().map_err(|e| at(text, "wordlines", e.to_string()))?;
        self.ecc.validate().map_err(|e| at(text, "rber_limit", e.to_string()))?;
        if self.raid.chips_per_group < 2 {
            return Err(at(text, "chips_per_group", "chips_per_group must be >= 2".into()));
        }
        if !(self.fcr.period_s > 0.0) {
            return Err(at(text, "period_s", "fcr period_s must be > 0".into()));
        }
        if !(self.policy.t_ref_s > 0.0 && self.policy.fixed_t_s > 0.0 && self.lavar.sample_t_s > 0.0) {
            return Err(Error::Config("policy and lavar retention times must be > 0".into()));
        }
        let r = &self.replication;
        if r.gamma_bins < 2 || r.cells == 0 || r.gamma_cells == 0 || r.gamma_blocks < 2 {
            return Err(at(text, "gamma_bins", "replication needs >= 2 bins, >= 2 gamma blocks and >= 1 cell".into()));
        }
        if !(r.window.1 > r.window.0) {
            return Err(at(text, "window", format!("replication window {:?} is empty", r.window)));
        }
        Ok(())
    }

    /// Short SHA-256 of the canonical serialization. The output directory is
    /// left out: it does not change any result.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let text = toml::to_string(&c).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn wear_model(&self) -> Result<RetentionWearModel> {
        match &self.model_file {
            Some(p) => RetentionWearModel::load(p),
            None => Ok(RetentionWearModel::fitted()),
        }
    }

    /// Ground-truth models for the simulator.
    pub fn error_models(&self) -> Result<ErrorModels> {
        let wear = self.wear_model()?;
        let n = self.geometry.wordlines;
        let profile = if self.profile.flat {
            LayerVariationProfile::flat(n)
        } else {
            let k = self.profile.knots.clone().unwrap_or_else(ProfileKnots::calibrated);
            LayerVariationProfile::from_knots(n, &k, &wear)?
        };
        let mut m = ErrorModels::with_profile(wear, profile);
        let i = self.interference;
        m.program_interference = ProgramInterferenceModel {
            enabled: i.program_interference,
            ..Default::default()
        };
        m.read_disturb = ReadDisturbModel {
            enabled: i.read_disturb,
            ..Default::default()
        };
        m.read_error = ReadErrorModel {
            enabled: i.read_errors,
            ..Default::default()
        };
        m.retention_interference = RetentionInterferenceModel {
            enabled: i.retention_interference,
            ..Default::default()
        };
        Ok(m)
    }
}
