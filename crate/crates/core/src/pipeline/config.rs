//! Pipeline configuration file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::AugmentationConfig;
use crate::encoding::EncoderConfig;
use crate::error::{ConfigError, Error, Result};
use crate::eval::RemoteNliConfig;
use crate::extract::{PatternRuleSpec, RemoteConfig};
use crate::ingest::CleaningConfig;
use crate::model::{AdamConfig, Decoding, ModelConfig, TrainSchedule};
use crate::synthetic::{DumpConfig, SyntheticConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractBackendKind {
    #[default]
    Rules,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractSection {
    pub backend: ExtractBackendKind,
    /// Extra pattern rules tried before the built-in ones.
    pub rules: Vec<PatternRuleSpec>,
    pub remote: RemoteConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSection {
    pub max_subject_tokens: usize,
    pub min_similarity: f64,
    pub hash_dims: usize,
    /// Attribute list file; the built-in list when absent.
    pub registry: Option<PathBuf>,
}

impl Default for FilterSection {
    fn default() -> Self {
        Self {
            max_subject_tokens: 5,
            min_similarity: 0.1,
            hash_dims: 4096,
            registry: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildSection {
    pub profile_cap: usize,
}

impl Default for BuildSection {
    fn default() -> Self {
        Self {
            profile_cap: crate::profile::DEFAULT_PROFILE_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabSection {
    /// Vocabulary size including the special tokens.
    pub max_size: usize,
}

impl Default for VocabSection {
    fn default() -> Self {
        Self { max_size: 8000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateSection {
    pub decoding: Decoding,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for GenerateSection {
    fn default() -> Self {
        Self {
            decoding: Decoding::Greedy,
            max_len: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NliBackendKind {
    #[default]
    Oracle,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub backend: NliBackendKind,
    /// World description for the oracle judge; the standard world when
    /// absent.
    pub world: Option<PathBuf>,
    pub remote: RemoteNliConfig,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// When set, replaces the seed of every section.
    pub seed: Option<u64>,
    pub cleaning: CleaningConfig,
    pub extract: ExtractSection,
    pub filter: FilterSection,
    pub build: BuildSection,
    pub augmentation: AugmentationConfig,
    pub vocab: VocabSection,
    pub encoder: EncoderConfig,
    pub model: ModelConfig,
    pub schedule: TrainSchedule,
    pub adam: AdamConfig,
    pub generate: GenerateSection,
    pub eval: EvalSection,
    pub synthetic: SyntheticConfig,
    pub dump: DumpConfig,
}

/// Parses `key=value` where `key` is a dotted path and `value` is a TOML
/// literal (bare words are taken as strings).
fn parse_override(spec: &str) -> Result<(Vec<String>, toml::Value), ConfigError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| ConfigError::new(format!("override {spec:?} is not key=value")))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::new(format!("override key {key:?} is malformed")));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((path, value))
}

fn apply_override(root: &mut toml::Table, path: &[String], value: toml::Value) -> Result<(), ConfigError> {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut table = root;
    for p in parents {
        let entry = table
            .entry(p.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError::new(format!("override path crosses non-table key {p:?}")))?;
    }
    table.insert(last.clone(), value);
    Ok(())
}

impl PipelineConfig {
    /// Parses TOML text, applies `key=value` overrides and validates.
    pub fn from_toml(text: &str, origin: &str, overrides: &[String]) -> Result<Self> {
        let located = |e: toml::de::Error| ConfigError::new(format!("{origin}: {e}"));
        // Deserializing the text itself keeps line numbers in errors.
        toml::from_str::<PipelineConfig>(text).map_err(located)?;
        let mut table: toml::Table = text.parse().map_err(located)?;
        for o in overrides {
            let (path, value) = parse_override(o)?;
            apply_override(&mut table, &path, value)?;
        }
        let mut cfg: PipelineConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::new(format!("{origin} with overrides: {e}")))?;
        cfg.apply_seed();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        match path {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| ConfigError::new(format!("cannot read config {}: {e}", p.display())))?;
                Self::from_toml(&text, &p.display().to_string(), overrides)
            }
            None => Self::from_toml("", "<defaults>", overrides),
        }
    }

    fn apply_seed(&mut self) {
        if let Some(s) = self.seed {
            self.augmentation.seed = s;
            self.model.seed = s;
            self.schedule.seed = s;
            self.generate.seed = s;
            self.synthetic.seed = s;
            self.dump.seed = s;
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.augmentation.validate()?;
        self.encoder.validate()?;
        self.schedule.validate()?;
        self.synthetic.validate()?;
        if self.vocab.max_size < crate::encoding::SPECIALS.len() + 1 {
            return Err(ConfigError::new("vocab.max_size leaves no room for words"));
        }
        if self.filter.hash_dims < 64 {
            return Err(ConfigError::new("filter.hash_dims must be at least 64"));
        }
        for p in [&self.filter.registry, &self.eval.world].into_iter().flatten() {
            if !p.exists() {
                return Err(ConfigError::new(format!("referenced file {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the effective configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex_digest(&json)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(ConfigError::new(e.to_string())))
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        let c = PipelineConfig::from_toml("", "t", &[]).unwrap();
        assert_eq!(c, PipelineConfig::default());
    }

    #[test]
    fn overrides_and_seed() {
        let c = PipelineConfig::from_toml(
            "seed = 3\n[schedule]\ntotal_steps = 30\n",
            "t",
            &["schedule.batch_size=4".into(), "extract.backend=remote".into()],
        )
        .unwrap();
        assert_eq!((c.schedule.total_steps, c.schedule.batch_size), (30, 4));
        assert_eq!(c.extract.backend, ExtractBackendKind::Remote);
        assert_eq!((c.model.seed, c.augmentation.seed), (3, 3));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = PipelineConfig::from_toml("[schedule]\ntotal_steps = \"x\"\n", "cfg.toml", &[]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("cfg.toml") && msg.contains("line 2"), "{msg}");
        assert!(PipelineConfig::from_toml("[nope]\n", "t", &[]).is_err());
        assert!(PipelineConfig::from_toml("[augmentation]\nmix_ratio = 2.0\n", "t", &[]).is_err());
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.schedule.total_steps += 1;
        assert_ne!(a.hash(), b.hash());
    }
}
