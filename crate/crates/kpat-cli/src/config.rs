//! Run configuration: a single JSON file plus `--set key=value` overrides.
//! Relative paths resolve against the config file's directory, and every
//! artifact a command writes records the config hash and seed in a sidecar.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use kpat_core::knn::InterpolationParams;
use kpat_core::sim::{GenSizes, NoiseParams};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("override {0:?} must look like key.path=value")]
    BadOverride(String),
    #[error("override key {0:?} does not exist in the config")]
    UnknownKey(String),
    #[error("required input {field} not found at {path}")]
    MissingInput { field: &'static str, path: PathBuf },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Paper,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub lexicon: PathBuf,
    pub entities_dir: PathBuf,
    pub templates: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            lexicon: "data/lexicon.txt".into(),
            entities_dir: "data/entities".into(),
            templates: "data/templates.tsv".into(),
            out_dir: "out".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub train_refs: usize,
    pub dev_refs: usize,
    pub test_refs: usize,
    pub oov_refs: usize,
    pub train_variants: usize,
    pub zipf_s: f64,
    /// Tail fraction of each entity list held out as OOV.
    pub oov_fraction: f64,
    pub domains: Vec<String>,
    pub noise: NoiseParams,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            train_refs: 2000,
            dev_refs: 200,
            test_refs: 200,
            oov_refs: 150,
            train_variants: 2,
            zipf_s: 1.2,
            oov_fraction: 0.1,
            domains: vec![
                "full_names".into(),
                "airports".into(),
                "street_names".into(),
                "cities_states".into(),
            ],
            noise: NoiseParams::default(),
        }
    }
}

impl GenConfig {
    pub fn sizes(&self) -> GenSizes {
        GenSizes {
            train_refs: self.train_refs,
            dev_refs: self.dev_refs,
            test_refs: self.test_refs,
            oov_refs: self.oov_refs,
            train_variants: self.train_variants,
        }
    }
}

/// Optional overrides on top of the preset's model dimensions.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelOverrides {
    pub n_enc_layers: Option<usize>,
    pub n_dec_layers: Option<usize>,
    pub d_k: Option<usize>,
    pub n_heads: Option<usize>,
    pub d_ff: Option<usize>,
    pub dropout_rate: Option<f64>,
    pub input_dropout_rate: Option<f64>,
    pub clean_swap_prob: Option<f64>,
    pub attn_temperature: Option<f64>,
    pub max_len: Option<usize>,
    pub label_smoothing: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_factor: f64,
    pub warmup_steps: usize,
    /// Cap on dev utterances decoded for the per-epoch WER log (0 = skip).
    pub dev_eval_limit: usize,
    /// Stop once teacher-forced training accuracy reaches this value.
    pub stop_at_accuracy: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 32,
            lr_factor: 1.0,
            warmup_steps: 400,
            dev_eval_limit: 100,
            stop_at_accuracy: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndexConfig {
    /// None picks ceil(sqrt(N)) clamped to [16, 4096].
    pub n_centroids: Option<usize>,
    pub train_sample: usize,
}

impl Default for IndexConfig {
    fn default() -> Self {
        IndexConfig {
            n_centroids: None,
            train_sample: 100_000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub max_len: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig { max_len: 40 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub preset: Preset,
    pub vocab_size: usize,
    pub paths: Paths,
    pub gen: GenConfig,
    pub model: ModelOverrides,
    pub train: TrainConfig,
    pub knn: InterpolationParams,
    pub index: IndexConfig,
    pub decode: DecodeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            preset: Preset::Desk,
            vocab_size: 1000,
            paths: Paths::default(),
            gen: GenConfig::default(),
            model: ModelOverrides::default(),
            train: TrainConfig::default(),
            knn: InterpolationParams::default(),
            index: IndexConfig::default(),
            decode: DecodeConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parse a config file, apply `--set key.path=value` overrides, resolve
    /// relative paths against the config's directory, and hash the result.
    pub fn load(path: &Path, overrides: &[String]) -> Result<(RunConfig, String), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        for ov in overrides {
            apply_override(&mut value, ov)?;
        }
        let mut cfg: RunConfig =
            serde_json::from_value(value).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        for p in [
            &mut cfg.paths.lexicon,
            &mut cfg.paths.entities_dir,
            &mut cfg.paths.templates,
            &mut cfg.paths.out_dir,
        ] {
            if p.is_relative() {
                *p = base.join(&p);
            }
        }
        let hash = cfg.hash();
        Ok((cfg, hash))
    }

    /// SHA-256 (hex, truncated) of the effective configuration.
    pub fn hash(&self) -> String {
        let canon = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canon.as_bytes());
        digest[..12].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.paths.out_dir.join("corpus")
    }

    pub fn corpus_file(&self, split: &str) -> PathBuf {
        self.corpus_dir().join(format!("{split}.jsonl"))
    }

    pub fn vocab_path(&self) -> PathBuf {
        self.paths.out_dir.join("vocab.json")
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.paths.out_dir.join("model.patw")
    }

    pub fn datastore_path(&self, tag: &str) -> PathBuf {
        self.paths.out_dir.join(format!("{tag}.kpat"))
    }

    pub fn index_path(&self, tag: &str) -> PathBuf {
        self.paths.out_dir.join(format!("{tag}.kivf"))
    }

    pub fn hyp_dir(&self) -> PathBuf {
        self.paths.out_dir.join("hyp")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.paths.out_dir.join("reports")
    }

    pub fn require_input(&self, field: &'static str, path: &Path) -> Result<(), ConfigError> {
        if path.exists() {
            Ok(())
        } else {
            Err(ConfigError::MissingInput {
                field,
                path: path.to_path_buf(),
            })
        }
    }
}

fn apply_override(root: &mut serde_json::Value, spec: &str) -> Result<(), ConfigError> {
    let Some((key, raw)) = spec.split_once('=') else {
        return Err(ConfigError::BadOverride(spec.to_string()));
    };
    // parse numbers/bools/null as JSON, anything else as a string
    let value: serde_json::Value = serde_json::from_str(raw)
        .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if !node.is_object() {
            return Err(ConfigError::UnknownKey(key.to_string()));
        }
        let map = node.as_object_mut().unwrap();
        if i + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map
            .entry(part.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    Err(ConfigError::BadOverride(spec.to_string()))
}

/// Writes `<artifact>.meta.json` next to an artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub tool_version: String,
}

impl ArtifactMeta {
    pub fn new(command: &str, config_hash: &str, seed: u64) -> Self {
        ArtifactMeta {
            command: command.to_string(),
            config_hash: config_hash.to_string(),
            seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    pub fn write_for(&self, artifact: &Path) -> std::io::Result<()> {
        let mut os = artifact.as_os_str().to_owned();
        os.push(".meta.json");
        let json = serde_json::to_string_pretty(self).expect("meta serializes");
        std::fs::write(PathBuf::from(os), json)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_hash_is_stable() {
        let cfg = RunConfig::default();
        let json = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, "{}").unwrap();
        let (cfg, _) = RunConfig::load(
            &path,
            &["knn.lambda=0.25".into(), "gen.train_refs=7".into(), "preset=paper".into()],
        )
        .unwrap();
        assert_eq!(cfg.knn.lambda, 0.25);
        assert_eq!(cfg.gen.train_refs, 7);
        assert_eq!(cfg.preset, Preset::Paper);
    }

    #[test]
    fn unknown_field_in_config_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"not_a_field": 1}"#).unwrap();
        assert!(matches!(
            RunConfig::load(&path, &[]),
            Err(ConfigError::Parse(_))
        ));
    }

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"paths": {"lexicon": "lex.txt"}}"#).unwrap();
        let (cfg, _) = RunConfig::load(&path, &[]).unwrap();
        assert_eq!(cfg.paths.lexicon, dir.path().join("lex.txt"));
    }

    #[test]
    fn hash_changes_with_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, "{}").unwrap();
        let (_, h1) = RunConfig::load(&path, &[]).unwrap();
        let (_, h2) = RunConfig::load(&path, &["seed=99".into()]).unwrap();
        assert_ne!(h1, h2);
    }
}
