//! Run configuration: one JSON file, dotted-path overrides, per-stage seeds
//! and a run directory keyed by the configuration's hash.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analysis::TsneConfig;
use crate::baselines::WideDeepConfig;
use crate::datagen::GenConfig;
use crate::features::{Schema, MIN_DURATION_MINUTES};
use crate::model::{EncoderConfig, TrainConfig};
use crate::tensor::derive_seed;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid override {0:?}: expected key=value")]
    OverrideSyntax(String),
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("config file {path}: {source}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Random,
    Toppop,
    ToppopTemporal,
    WideDeep,
    LJcce,
    Jcce,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Random,
        Method::Toppop,
        Method::ToppopTemporal,
        Method::WideDeep,
        Method::LJcce,
        Method::Jcce,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Random => "random",
            Method::Toppop => "toppop",
            Method::ToppopTemporal => "toppop_temporal",
            Method::WideDeep => "wide_deep",
            Method::LJcce => "l_jcce",
            Method::Jcce => "jcce",
        }
    }

    /// Whether `train` produces a model file for this method.
    pub fn is_trained(self) -> bool {
        matches!(self, Method::WideDeep | Method::LJcce | Method::Jcce)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// External event log; when unset `datagen` writes one into the run.
    pub events: Option<PathBuf>,
    /// Schema file; the built-in TV schema when unset.
    pub schema: Option<PathBuf>,
    pub min_duration_minutes: u32,
    pub min_content_count: usize,
    pub train_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            events: None,
            schema: None,
            min_duration_minutes: MIN_DURATION_MINUTES,
            min_content_count: 50,
            train_fraction: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
    pub methods: Vec<Method>,
    /// Cut-off whose hit indicators feed the pairwise McNemar tests.
    pub mcnemar_k: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            ks: vec![1, 3, 5, 10, 20, 64],
            methods: Method::ALL.to_vec(),
            mcnemar_k: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub sample_size: usize,
    pub tsne: TsneConfig,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            sample_size: 1000,
            tsne: TsneConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeConfig {
    pub host: String,
    pub port: u16,
    pub default_k: usize,
}

impl Default for ServeConfig {
    fn default() -> Self {
        ServeConfig {
            host: "127.0.0.1".into(),
            port: 8080,
            default_k: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Global seed; every stage derives its own from it.
    pub seed: u64,
    pub output_root: PathBuf,
    pub data: DataConfig,
    pub generator: GenConfig,
    pub train: TrainConfig,
    pub content_encoder: EncoderConfig,
    pub context_encoder: EncoderConfig,
    pub linear_embed_dim: usize,
    pub wide_deep: WideDeepConfig,
    pub eval: EvalConfig,
    pub analysis: AnalysisConfig,
    pub serve: ServeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            output_root: PathBuf::from("runs"),
            data: DataConfig::default(),
            generator: GenConfig::default(),
            train: TrainConfig::default(),
            content_encoder: EncoderConfig::default(),
            context_encoder: EncoderConfig::default(),
            linear_embed_dim: 50,
            wide_deep: WideDeepConfig::default(),
            eval: EvalConfig::default(),
            analysis: AnalysisConfig::default(),
            serve: ServeConfig::default(),
        }
    }
}

fn invalid(e: impl std::fmt::Display) -> ConfigError {
    ConfigError::Invalid(e.to_string())
}

impl RunConfig {
    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// Applies `key=value` overrides addressed by dotted path, e.g.
    /// `train.max_epochs=5`. Values are read as JSON, falling back to a bare
    /// string.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        if overrides.is_empty() {
            return Ok(());
        }
        let mut tree = serde_json::to_value(&*self).expect("config serialises");
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| ConfigError::OverrideSyntax(o.to_string()))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(ConfigError::OverrideSyntax(o.to_string()));
            }
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            let mut node = &mut tree;
            for part in key.split('.') {
                node = node
                    .as_object_mut()
                    .and_then(|m| m.get_mut(part))
                    .ok_or_else(|| ConfigError::UnknownKey(key.to_string()))?;
            }
            *node = value;
        }
        *self = serde_json::from_value(tree).map_err(invalid)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate().map_err(invalid)?;
        self.train.validate().map_err(invalid)?;
        self.content_encoder.validate().map_err(invalid)?;
        self.context_encoder.validate().map_err(invalid)?;
        if self.content_encoder.out_dim != self.context_encoder.out_dim {
            return Err(invalid("content and context encoders must share an output dimension"));
        }
        if self.linear_embed_dim == 0 {
            return Err(invalid("linear_embed_dim must be positive"));
        }
        if !(self.data.train_fraction > 0.0 && self.data.train_fraction < 1.0) {
            return Err(invalid("data.train_fraction must lie in (0, 1)"));
        }
        if self.eval.ks.is_empty() || self.eval.ks.contains(&0) {
            return Err(invalid("eval.ks must be nonempty and positive"));
        }
        if self.eval.methods.is_empty() {
            return Err(invalid("eval.methods must be nonempty"));
        }
        if self.serve.default_k == 0 {
            return Err(invalid("serve.default_k must be positive"));
        }
        Ok(())
    }

    /// Short hex digest of the canonical JSON form.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(&serde_json::to_value(self).expect("config serialises")).expect("json");
        Sha256::digest(canonical)
            .iter()
            .take(6)
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_root.join(self.hash())
    }

    pub fn stage_seed(&self, stage: &str) -> u64 {
        derive_seed(self.seed, stage)
    }

    pub fn schema(&self) -> std::result::Result<Schema, crate::features::FeatureError> {
        match &self.data.schema {
            Some(p) => Schema::load(p),
            None => Ok(Schema::default_tv()),
        }
    }

    /// Generator settings with the stage seed applied.
    pub fn generator_for_run(&self) -> GenConfig {
        GenConfig {
            seed: self.stage_seed("datagen"),
            ..self.generator.clone()
        }
    }

    pub fn train_for(&self, method: Method) -> TrainConfig {
        TrainConfig {
            seed: self.stage_seed(&format!("train/{}", method.name())),
            ..self.train.clone()
        }
    }

    pub fn wide_deep_for_run(&self) -> WideDeepConfig {
        WideDeepConfig {
            seed: self.stage_seed("train/wide_deep"),
            ..self.wide_deep.clone()
        }
    }

    pub fn tsne_for_run(&self) -> TsneConfig {
        TsneConfig {
            seed: self.stage_seed("project"),
            ..self.analysis.tsne.clone()
        }
    }
}

/// File names inside a run directory.
pub mod files {
    pub const CONFIG: &str = "config.json";
    pub const EVENTS: &str = "events.csv";
    pub const TRAIN: &str = "train.csv";
    pub const TEST: &str = "test.csv";
    pub const TABLE: &str = "results.csv";
    pub const CURVE: &str = "hit_ratio_curve.csv";
    pub const MCNEMAR: &str = "mcnemar.csv";
    pub const EMBEDDINGS: &str = "embeddings.csv";
    pub const PROJECTION: &str = "projection.csv";

    pub fn model(method: super::Method) -> String {
        format!("model_{}.json", method.name())
    }

    pub fn train_log(method: super::Method) -> String {
        format!("train_log_{}.csv", method.name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        cfg.validate().unwrap();
    }

    #[test]
    fn partial_files_take_defaults() {
        let cfg = RunConfig::from_json(r#"{"seed": 7, "train": {"max_epochs": 3}}"#).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.train.max_epochs, 3);
        assert_eq!(cfg.train.patience, TrainConfig::default().patience);
        assert!(RunConfig::from_json(r#"{"sed": 7}"#).is_err());
    }

    #[test]
    fn overrides() {
        let mut cfg = RunConfig::default();
        cfg.apply_overrides(&[
            "train.max_epochs=5",
            "generator.habit_strength=1.0",
            "output_root=/tmp/x",
            "eval.methods=[\"jcce\",\"random\"]",
        ])
        .unwrap();
        assert_eq!(cfg.train.max_epochs, 5);
        assert_eq!(cfg.generator.habit_strength, 1.0);
        assert_eq!(cfg.output_root, PathBuf::from("/tmp/x"));
        assert_eq!(cfg.eval.methods, vec![Method::Jcce, Method::Random]);
        assert!(matches!(
            cfg.apply_overrides(&["train.nope=1"]),
            Err(ConfigError::UnknownKey(_))
        ));
        assert!(matches!(cfg.apply_overrides(&["seed"]), Err(ConfigError::OverrideSyntax(_))));
        assert!(matches!(cfg.apply_overrides(&["seed=\"x\""]), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn hash_and_seeds_depend_on_config() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.seed = 43;
        assert_ne!(a.hash(), b.hash());
        assert_ne!(a.run_dir(), b.run_dir());
        assert_eq!(a.stage_seed("datagen"), a.clone().stage_seed("datagen"));
        assert_ne!(a.stage_seed("datagen"), a.stage_seed("project"));
        assert_ne!(a.train_for(Method::Jcce).seed, a.train_for(Method::LJcce).seed);
    }
}
