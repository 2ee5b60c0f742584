//! Strict JSON experiment configuration: one file, a schema version and one
//! block per subcommand. Unknown keys anywhere are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use xferlab_core::apt::AptConfig;
use xferlab_core::envs::{EnvSpec, Perturbation, ProportionalController};
use xferlab_core::mdp::{parse_layout, GridSpec, SweepConfig};
use xferlab_core::sac::SacConfig;
use xferlab_core::tasksim::{FitConfig, ScoringModels};
use xferlab_core::toy::ToyConfig;

use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u64,
    /// Where `{run_id}` directories go; relative paths resolve against the
    /// working directory.
    pub out_dir: PathBuf,
    #[serde(default)]
    pub toy: Option<ToyBlock>,
    #[serde(default)]
    pub train: Option<TrainBlock>,
    #[serde(default)]
    pub transfer: Option<TransferBlock>,
    #[serde(default)]
    pub similarity: Option<SimilarityBlock>,
    #[serde(default)]
    pub bound: Option<SweepConfig>,
    #[serde(default)]
    pub report: Option<ReportBlock>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridParams {
    pub step_reward: f64,
    pub goal_reward: f64,
    pub slip_prob: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutTarget {
    pub label: String,
    pub layout: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyBlock {
    pub source_layout: PathBuf,
    pub targets: Vec<LayoutTarget>,
    pub grid: GridParams,
    pub qlearning: ToyConfig,
    /// Leading evaluation points the summary flags are computed over.
    pub summary_window: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainBlock {
    pub env: EnvSpec,
    pub sac: SacConfig,
    pub seeds: Vec<u64>,
    /// Return that counts as solving the task.
    pub threshold: f64,
    /// Stop a run at its first evaluation at or above the threshold.
    pub stop_at_threshold: bool,
    /// Reference controller the threshold was calibrated against.
    pub controller: ProportionalController,
    /// Relative band below the controller's return that defines the threshold.
    pub threshold_band: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceBlock {
    /// Saved policy to transfer from; trained from scratch when absent.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    pub sac: SacConfig,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetBlock {
    pub label: String,
    pub perturbation: Perturbation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationBlock {
    /// Label of the target the fixed-temperature runs use.
    pub target: String,
    pub fixed_betas: Vec<f64>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferBlock {
    pub source_env: EnvSpec,
    pub source: SourceBlock,
    pub targets: Vec<TargetBlock>,
    /// Target-side settings; `apt.sac` also drives scratch and fine-tune runs.
    pub apt: AptConfig,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub threshold: Option<f64>,
    #[serde(default)]
    pub ablation: Option<AblationBlock>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimilarityBlock {
    pub env: EnvSpec,
    /// Transitions collected per task.
    pub m: usize,
    pub fit: FitConfig,
    pub scoring: ScoringModels,
    pub ladder: Vec<TargetBlock>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportBlock {
    /// Run directories holding a `traces.csv`, possibly in subdirectories.
    pub inputs: Vec<PathBuf>,
    pub title: String,
    #[serde(default)]
    pub threshold: Option<f64>,
}

/// A parsed configuration plus the directory relative input paths resolve
/// against.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn read_layout(&self, p: &Path, grid: &GridParams) -> CliResult<GridSpec> {
        let path = self.resolve(p);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::config("CONFIG_MISSING_FILE", format!("{}: {e}", path.display())))?;
        let mut spec = parse_layout(&text).map_err(|e| {
            CliError::config("LAYOUT_INVALID", format!("{}: {e}", path.display()))
        })?;
        spec.step_reward = grid.step_reward;
        spec.goal_reward = grid.goal_reward;
        spec.slip_prob = grid.slip_prob;
        spec.gamma = grid.gamma;
        spec.validate()?;
        Ok(spec)
    }
}

fn classify(e: serde_json::Error) -> CliError {
    let msg = e.to_string();
    if msg.contains("unknown field") || msg.contains("unknown variant") {
        CliError::config("CONFIG_UNKNOWN_KEY", msg)
    } else {
        CliError::config("CONFIG_INVALID", msg)
    }
}

pub fn parse_config(text: &str) -> CliResult<ExperimentConfig> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(classify)?;
    match value.get("schema_version").and_then(|v| v.as_u64()) {
        Some(SCHEMA_VERSION) => {}
        Some(v) => {
            return Err(CliError::config(
                "CONFIG_SCHEMA_VERSION",
                format!("schema_version {v} is not supported (expected {SCHEMA_VERSION})"),
            ))
        }
        None => {
            return Err(CliError::config(
                "CONFIG_SCHEMA_VERSION",
                "schema_version must be present and a nonnegative integer",
            ))
        }
    }
    serde_json::from_value(value).map_err(classify)
}

pub fn load_config(path: &Path) -> CliResult<LoadedConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config("CONFIG_MISSING_FILE", format!("{}: {e}", path.display())))?;
    let config = parse_config(&text)?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(LoadedConfig { config, base_dir })
}

pub fn nonempty_seeds(name: &str, seeds: &[u64]) -> CliResult<()> {
    if seeds.is_empty() {
        return Err(CliError::config("CONFIG_INVALID", format!("{name}: seeds must be nonempty")));
    }
    Ok(())
}

pub fn missing_block(name: &str) -> CliError {
    CliError::config("CONFIG_MISSING_BLOCK", format!("config has no \"{name}\" block"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shipped(name: &str) -> ExperimentConfig {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
        load_config(&path).unwrap().config
    }

    #[test]
    fn shipped_configs_parse_with_every_block() {
        for name in ["default.json", "smoke.json"] {
            let c = shipped(name);
            assert_eq!(c.schema_version, SCHEMA_VERSION);
            assert!(c.toy.is_some() && c.train.is_some() && c.transfer.is_some());
            assert!(c.similarity.is_some() && c.bound.is_some() && c.report.is_some());
        }
    }

    #[test]
    fn default_blocks_match_library_defaults() {
        let c = shipped("default.json");
        assert_eq!(c.train.unwrap().sac, SacConfig::default());
        assert_eq!(c.bound.unwrap(), SweepConfig::default());
        assert_eq!(c.toy.unwrap().qlearning, ToyConfig::default());
        assert_eq!(c.similarity.unwrap().fit, FitConfig::default());
    }

    #[test]
    fn missing_schema_version_is_its_own_error() {
        let e = parse_config(r#"{"out_dir": "x"}"#).unwrap_err();
        assert_eq!(e.code, "CONFIG_SCHEMA_VERSION");
        let e = parse_config(r#"{"schema_version": "1", "out_dir": "x"}"#).unwrap_err();
        assert_eq!(e.code, "CONFIG_SCHEMA_VERSION");
    }

    #[test]
    fn nested_unknown_keys_and_variants_are_rejected() {
        let e = parse_config(r#"{"schema_version": 1, "out_dir": "x", "bound": {"pairs": 1, "max_states": 2,
            "max_actions": 2, "gammas": [0.5], "tol": 1e-8, "seed": 0, "slack": 1}}"#)
        .unwrap_err();
        assert_eq!(e.code, "CONFIG_UNKNOWN_KEY");
        let e = parse_config(r#"{"schema_version": 1, "out_dir": "x", "report": {"inputs": [], "title": "t",
            "threshold": "high"}}"#)
        .unwrap_err();
        assert_eq!(e.code, "CONFIG_INVALID");
        assert_eq!(e.exit, crate::error::EXIT_CONFIG);
    }

    #[test]
    fn syntax_errors_are_invalid_config() {
        assert_eq!(parse_config("{").unwrap_err().code, "CONFIG_INVALID");
    }
}
