use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use geonet::analysis::NearRule;
use geonet::{DensitySpec, GatePolicy, ManifoldModel, MaskSpec, NetSplit, NoiseSpec, SizeConstants};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

/// One experiment: the synthetic world, the estimator settings and the
/// checks to run. Unknown keys anywhere are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub model: ManifoldModel,
    #[serde(default)]
    pub density: DensitySpec,
    #[serde(default)]
    pub noise: NoiseSpec,
    pub mask: MaskSpec,
    /// Explicit `(N₀, N₁, N₂)`; derived from `estimate` and `size_constants` when absent.
    #[serde(default)]
    pub split: Option<NetSplit>,
    #[serde(default)]
    pub size_constants: Option<SizeConstants>,
    pub estimate: EstimateSection,
    #[serde(default)]
    pub refine: Option<RefineSection>,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub calibrate: Option<CalibrateSection>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateSection {
    pub eps1: f64,
    pub delta1: f64,
    pub theta: f64,
    /// Fixed `c₅`; estimated with the oracle when absent.
    #[serde(default)]
    pub c5: Option<f64>,
    #[serde(default = "default_c5_pairs")]
    pub c5_pairs: usize,
    #[serde(default = "default_m_int")]
    pub m_int: usize,
    #[serde(default)]
    pub gate: GatePolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefineSection {
    pub delta_hat: f64,
    /// Explicit `r̂`; otherwise `r̂ = (δ̂/K)^{1/3}` from `curvature`.
    #[serde(default)]
    pub r_hat: Option<f64>,
    #[serde(default)]
    pub curvature: Option<f64>,
    #[serde(default = "default_c1")]
    pub basis_c1: f64,
    /// Per-chart budget (library default when absent); `GEONET_BUDGET` caps it.
    #[serde(default)]
    pub budget: Option<usize>,
    #[serde(default)]
    pub active: Option<Vec<usize>>,
    #[serde(default)]
    pub gate: GatePolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    #[serde(default)]
    pub near_rule: NearRule,
    #[serde(default = "default_rate")]
    pub allowed_rate: f64,
    /// Refined distances must satisfy `|d̃′ − d| ≤ c4 δ̂`.
    #[serde(default = "default_c4")]
    pub c4: f64,
    #[serde(default = "default_max_pairs")]
    pub max_refined_pairs: usize,
    /// When set, also judge whether the coarse net is a `δ`-net.
    #[serde(default)]
    pub net_delta: Option<f64>,
}

impl Default for VerifySection {
    fn default() -> Self {
        VerifySection {
            near_rule: NearRule::default(),
            allowed_rate: default_rate(),
            c4: default_c4(),
            max_refined_pairs: default_max_pairs(),
            net_delta: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationTarget {
    /// `c₅` from the Kuratowski oracle.
    C5,
    /// `C₃` in the coarse-net size, by net-density success rate.
    C3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrateSection {
    pub target: CalibrationTarget,
    #[serde(default = "default_initial")]
    pub initial: f64,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default = "default_doublings")]
    pub max_doublings: usize,
}

fn default_c5_pairs() -> usize {
    1000
}
fn default_m_int() -> usize {
    20_000
}
fn default_c1() -> f64 {
    32.0
}
fn default_rate() -> f64 {
    0.01
}
fn default_c4() -> f64 {
    60.0
}
fn default_max_pairs() -> usize {
    200_000
}
fn default_initial() -> f64 {
    1.0 / 16.0
}
fn default_runs() -> usize {
    100
}
fn default_doublings() -> usize {
    12
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: ExperimentConfig =
            serde_json::from_str(&text).with_context(|| format!("config {} does not match the schema", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != SCHEMA_VERSION {
            bail!("config version {} is not supported (expected {SCHEMA_VERSION})", self.version);
        }
        self.model.validate()?;
        self.density.ratio_range()?;
        self.noise.validate()?;
        self.mask.validate()?;
        if self.split.is_some() && self.size_constants.is_some() {
            bail!("give either `split` or `size_constants`, not both");
        }
        if let Some(split) = &self.split {
            split.validate()?;
        }
        if let Some(r) = &self.refine {
            if r.r_hat.is_some() == r.curvature.is_some() {
                bail!("refine: give exactly one of `r_hat` and `curvature`");
            }
        }
        Ok(())
    }
}
