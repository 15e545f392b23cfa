//! Run configuration: built-in defaults, then `VASTREE_SEED`, then a TOML or
//! JSON file, then command-line flags.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::CliError;
use crate::baseline::DEFAULT_SNAP_RADIUS_PX;
use crate::decode::{
    HeuristicConfig, SelectionRule, DEFAULT_LOGIT_MAGNITUDE, DEFAULT_MATCH_TOLERANCE,
    DEFAULT_NOISE_ETA,
};
use crate::metrics::DEFAULT_SAMPLES_PER_EDGE;
use crate::prompt::DEFAULT_ALPHA;
use crate::render::RenderConfig;
use crate::ssagen::GrowthConfig;
use crate::types::Profile;

pub const SEED_ENV: &str = "VASTREE_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetProfile {
    /// Planar trees.
    #[default]
    Ssa,
    /// Trees grown in a slab and projected, with crossing branches.
    Slab,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub profile: DatasetProfile,
    pub count: usize,
    pub max_attempts: u32,
    /// Also write 16-bit PNG images next to the `.f32` rasters.
    pub png: bool,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            profile: DatasetProfile::Ssa,
            count: 200,
            max_attempts: crate::dataset::DEFAULT_MAX_ATTEMPTS,
            png: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeSection {
    /// `exact`, `noisy`, `heuristic` or `cmd:<shell command>`.
    pub scorer: String,
    pub gamma: f64,
    pub n_dec: usize,
    pub eta: f64,
    pub selection_eta: f64,
    pub selection: SelectionRule,
    pub profile: Profile,
    pub alpha: f64,
    pub match_tolerance: f64,
    pub logit_magnitude: f64,
    pub heuristic: HeuristicConfig,
}

impl Default for DecodeSection {
    fn default() -> Self {
        Self {
            scorer: "exact".into(),
            gamma: 1.0,
            n_dec: 1,
            eta: DEFAULT_NOISE_ETA,
            selection_eta: 0.0,
            selection: SelectionRule::TopK,
            profile: Profile::Ssa,
            alpha: DEFAULT_ALPHA,
            match_tolerance: DEFAULT_MATCH_TOLERANCE,
            logit_magnitude: DEFAULT_LOGIT_MAGNITUDE,
            heuristic: HeuristicConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSection {
    pub snap_radius_px: f64,
}

impl Default for BaselineSection {
    fn default() -> Self {
        Self {
            snap_radius_px: DEFAULT_SNAP_RADIUS_PX,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    pub samples_per_edge: usize,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self {
            samples_per_edge: DEFAULT_SAMPLES_PER_EDGE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub gammas: Vec<f64>,
    pub n_decs: Vec<usize>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            gammas: vec![0.5, 1.5, 3.0, 6.0],
            n_decs: vec![1, 5, 10, 20],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset: DatasetSection,
    pub growth: GrowthConfig,
    pub render: RenderConfig,
    pub decode: DecodeSection,
    pub baseline: BaselineSection,
    pub metrics: MetricsSection,
    pub sweep: SweepSection,
}

/// Recursively overlays `patch` onto `base`; objects merge, other values replace.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn parse_file(path: &Path) -> Result<Value, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
    let is_json = path.extension().and_then(|e| e.to_str()) == Some("json");
    if is_json {
        serde_json::from_str(&text)
            .map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))
    } else {
        let v: toml::Value = toml::from_str(&text)
            .map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?;
        serde_json::to_value(v)
            .map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))
    }
}

/// Defaults, then the seed from the environment, then the config file.
pub fn load(file: Option<&Path>, env_seed: Option<String>) -> Result<RunConfig, CliError> {
    let mut value = serde_json::to_value(RunConfig::default()).expect("defaults serialize");
    if let Some(s) = env_seed {
        let seed: u64 = s.trim().parse().map_err(|_| {
            CliError::usage(format!("{SEED_ENV} must be an unsigned integer, got {s:?}"))
        })?;
        merge(&mut value, serde_json::json!({ "seed": seed }));
    }
    if let Some(path) = file {
        merge(&mut value, parse_file(path)?);
    }
    serde_json::from_value(value)
        .map_err(|e| CliError::usage(format!("invalid configuration: {e}")))
}

impl RunConfig {
    /// Pretty JSON with a trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}
