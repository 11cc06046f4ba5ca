//! Experiment configuration: TOML file, dotted-key overrides, validation.
//!
//! Precedence is command line over file over built-in defaults. The
//! resolved configuration serialises every setting in effect, so writing it
//! out and parsing it again reproduces the same experiment.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dair::DairConfig;
use crate::env::{EnvConfig, Task};
use crate::error::{DairError, Result};
use crate::nn::Architecture;
use crate::sac::SacConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    #[default]
    Dair,
    Attention,
    Mlp,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Dair => "dair",
            Method::Attention => "attention",
            Method::Mlp => "mlp",
        }
    }

    pub fn arch(self) -> Architecture {
        match self {
            Method::Mlp => Architecture::Mlp,
            _ => Architecture::Attention,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub embed_dim: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self { embed_dim: 512 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurriculumConfig {
    /// Environment steps per stage before the desk-scale factor. Each stage
    /// after the first adds one object (rearrange only).
    pub stage_budgets: Vec<u64>,
    /// Multiplies every stage budget.
    pub desk_scale: f64,
}

pub const REARRANGE_STAGES: [u64; 3] = [1_000_000, 3_000_000, 5_000_000];
pub const SINGLE_STAGE: u64 = 10_000_000;

impl Default for CurriculumConfig {
    fn default() -> Self {
        Self {
            stage_budgets: REARRANGE_STAGES.to_vec(),
            desk_scale: 0.02,
        }
    }
}

impl CurriculumConfig {
    /// Scaled per-stage budgets in environment steps.
    pub fn scaled(&self) -> Vec<u64> {
        self.stage_budgets
            .iter()
            .map(|b| ((*b as f64) * self.desk_scale).round().max(1.0) as u64)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seeds: Vec<u64>,
    pub out_dir: String,
    /// Episodes between checkpoints; 0 writes only the final one.
    pub checkpoint_every: usize,
    /// Deterministic evaluation episodes after training.
    pub eval_episodes: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2],
            out_dir: "runs/default".into(),
            checkpoint_every: 500,
            eval_episodes: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    #[serde(default)]
    pub method: Method,
    #[serde(default)]
    pub env: EnvConfig,
    #[serde(default)]
    pub dair: DairConfig,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub sac: SacConfig,
    #[serde(default)]
    pub curriculum: CurriculumConfig,
    #[serde(default)]
    pub run: RunConfig,
}

fn map_de_error(e: toml::de::Error) -> DairError {
    let msg = e.message().to_string();
    if let Some(rest) = msg.strip_prefix("missing field `") {
        let key = rest.split('`').next().unwrap_or(rest);
        return DairError::MissingKey(key.to_string());
    }
    if msg.starts_with("unknown field `") {
        let key = msg.trim_start_matches("unknown field `").split('`').next().unwrap_or("").to_string();
        return DairError::UnknownKey(format!("{key} ({})", msg.trim()));
    }
    DairError::Config(e.to_string().trim().to_string())
}

/// Parses the value half of `key=value`: any TOML literal, else a bare string.
fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or(toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Applies one `dotted.key=value` override to a TOML tree.
pub fn apply_override(root: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| DairError::Config(format!("override `{spec}` is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(DairError::Config(format!("override key `{key}` is malformed")));
    }
    let mut table = root;
    for p in &parts[..parts.len() - 1] {
        let entry = table.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| DairError::Config(format!("override `{key}`: `{p}` is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

fn has(root: &toml::Table, table: &str, key: &str) -> bool {
    root.get(table).and_then(|t| t.as_table()).is_some_and(|t| t.contains_key(key))
}

fn set(root: &mut toml::Table, table: &str, key: &str, v: toml::Value) {
    let t = root
        .entry(table.to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    if let Some(t) = t.as_table_mut() {
        t.insert(key.to_string(), v);
    }
}

impl ExperimentConfig {
    /// Resolves a TOML document plus overrides into a validated config.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut root: toml::Table = text.parse().map_err(map_de_error)?;
        for o in overrides {
            apply_override(&mut root, o)?;
        }
        // Defaults that depend on other keys are materialised here.
        let method = root.get("method").and_then(|m| m.as_str()).unwrap_or("dair").to_string();
        if method != "dair" && !has(&root, "dair", "lambda") {
            set(&mut root, "dair", "lambda", toml::Value::Float(0.0));
        }
        let task = root.get("task").and_then(|m| m.as_str()).unwrap_or("").to_string();
        if !task.is_empty() && task != "rearrange" && !has(&root, "curriculum", "stage_budgets") {
            set(
                &mut root,
                "curriculum",
                "stage_budgets",
                toml::Value::Array(vec![toml::Value::Integer(SINGLE_STAGE as i64)]),
            );
        }
        if task == "reach" && !has(&root, "env", "agents") {
            set(&mut root, "env", "agents", toml::Value::Integer(1));
        }
        let mut cfg: Self = toml::Value::Table(root).try_into().map_err(map_de_error)?;
        cfg.env.task = cfg.task;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| DairError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text, overrides)
    }

    /// Every setting in effect, as TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.dair.validate()?;
        self.sac.validate()?;
        match self.method {
            Method::Dair if !(self.dair.lambda > 0.0) => {
                return Err(DairError::Config("method dair needs dair.lambda > 0".into()));
            }
            Method::Attention | Method::Mlp if self.dair.lambda != 0.0 => {
                return Err(DairError::Config(format!(
                    "method {} needs dair.lambda = 0",
                    self.method.name()
                )));
            }
            _ => {}
        }
        if self.network.embed_dim == 0 {
            return Err(DairError::Config("network.embed_dim must be >= 1".into()));
        }
        let stages = self.curriculum.stage_budgets.len();
        if stages == 0 {
            return Err(DairError::Config("curriculum.stage_budgets must not be empty".into()));
        }
        if !(self.curriculum.desk_scale > 0.0) {
            return Err(DairError::Config("curriculum.desk_scale must be > 0".into()));
        }
        if stages > 1 && self.task != Task::Rearrange {
            return Err(DairError::Config(format!(
                "curriculum stages only apply to rearrange, got {stages} for {}",
                self.task.name()
            )));
        }
        if stages > 1 && self.method == Method::Mlp {
            return Err(DairError::Incompatible(
                "mlp has a fixed input width and cannot follow an object curriculum".into(),
            ));
        }
        if self.run.seeds.is_empty() {
            return Err(DairError::Config("run.seeds must not be empty".into()));
        }
        Ok(())
    }

    /// Region count at curriculum stage `stage`.
    pub fn stage_env(&self, stage: usize) -> EnvConfig {
        let mut env = self.env.clone();
        if self.task == Task::Rearrange {
            env.objects += stage;
        }
        env
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn missing_task_is_named() {
        let err = ExperimentConfig::from_toml_str("method = \"dair\"\n", &[]).unwrap_err();
        assert!(matches!(&err, DairError::MissingKey(k) if k == "task"), "{err}");
    }

    #[test]
    fn unknown_key_is_named() {
        let err = ExperimentConfig::from_toml_str("task = \"push-door\"\n[sac]\nbatchsize = 3\n", &[]).unwrap_err();
        assert!(err.to_string().contains("batchsize"), "{err}");
    }

    #[test]
    fn lambda_override_accepted() {
        let cfg = ExperimentConfig::from_toml_str("task = \"push-door\"\n", &["dair.lambda=0.2".into()]).unwrap();
        assert_eq!(cfg.dair.lambda, 0.2);
        assert_eq!(cfg.curriculum.stage_budgets, vec![SINGLE_STAGE]);
    }

    #[test]
    fn overrides_beat_file() {
        let cfg = ExperimentConfig::from_toml_str(
            "task = \"rearrange\"\n[sac]\nbatch_size = 64\n",
            &["sac.batch_size=32".into(), "env.reward_mode=informative".into()],
        )
        .unwrap();
        assert_eq!(cfg.sac.batch_size, 32);
        assert_eq!(cfg.env.reward_mode, crate::env::RewardMode::Informative);
        assert_eq!(cfg.curriculum.stage_budgets, REARRANGE_STAGES.to_vec());
    }

    #[test]
    fn method_lambda_invariants() {
        let att = ExperimentConfig::from_toml_str("task = \"push-door\"\nmethod = \"attention\"\n", &[]).unwrap();
        assert_eq!(att.dair.lambda, 0.0);
        assert!(ExperimentConfig::from_toml_str("task = \"push-door\"\nmethod = \"attention\"\n[dair]\nlambda = 0.1\n", &[]).is_err());
        assert!(ExperimentConfig::from_toml_str("task = \"push-door\"\n[dair]\nlambda = 0.0\n", &[]).is_err());
        assert_eq!(att.method.arch(), Architecture::Attention);
        let mlp = ExperimentConfig::from_toml_str("task = \"push-door\"\nmethod = \"mlp\"\n", &[]).unwrap();
        assert_eq!(mlp.method.arch(), Architecture::Mlp);
    }

    #[test]
    fn mlp_rejects_curriculum() {
        let err = ExperimentConfig::from_toml_str("task = \"rearrange\"\nmethod = \"mlp\"\n", &[]).unwrap_err();
        assert!(matches!(err, DairError::Incompatible(_)));
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = ExperimentConfig::from_toml_str(
            "task = \"adjust-bar\"\nmethod = \"attention\"\n[network]\nembed_dim = 32\n",
            &["run.seeds=[4]".into()],
        )
        .unwrap();
        let text = cfg.to_toml();
        let back = ExperimentConfig::from_toml_str(&text, &[]).unwrap();
        assert_eq!(back, cfg);
        for key in ["gamma", "polyak", "target_entropy", "conflict_threshold", "desk_scale", "lambda", "embed_dim"] {
            assert!(text.contains(key), "resolved config lacks {key}");
        }
    }

    #[test]
    fn desk_scale_budgets() {
        let c = CurriculumConfig::default();
        assert_eq!(c.scaled(), vec![20_000, 60_000, 100_000]);
    }

    proptest! {
        #[test]
        fn override_values_round_trip(lambda in 0.001f64..1.0, batch in 1usize..4096) {
            let cfg = ExperimentConfig::from_toml_str(
                "task = \"push-door\"\n",
                &[format!("dair.lambda={lambda}"), format!("sac.batch_size={batch}")],
            ).unwrap();
            prop_assert_eq!(cfg.dair.lambda, lambda);
            prop_assert_eq!(cfg.sac.batch_size, batch);
            let back = ExperimentConfig::from_toml_str(&cfg.to_toml(), &[]).unwrap();
            prop_assert_eq!(back, cfg);
        }
    }
}
