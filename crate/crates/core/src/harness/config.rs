//! Versioned TOML run configuration.
//!
//! ```toml
//! version = 1
//! dataset = "dataset"
//! runs_dir = "runs"
//! regimes = ["prose", "canonical_structured", "ccl_core", "ccl_min", "szip_ascii", "szip_emoji"]
//! thresholds = [0.65, 0.72, 0.80]
//! default_threshold = 0.72
//! parallelism = 4
//! vocab_dirs = ["vocab"]
//! # alias_table = "aliases.txt"
//!
//! [weights]
//! subject = 0.40
//! predicate = 0.20
//! value = 0.30
//! type = 0.10
//! scope = 0.0
//!
//! [decoder]
//! model = "gpt-4o-mini"
//! endpoint = "https://api.openai.com/v1/chat/completions"
//! ```
//!
//! Every key is optional; the values above are the defaults. Relative paths
//! are resolved against the directory holding the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{HarnessError, Stage};
use crate::case::Regime;
use crate::decoder::DecoderConfig;
use crate::matching::{SimilarityWeights, DEFAULT_SWEEP, DEFAULT_THRESHOLD};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HarnessConfig {
    pub version: u32,
    pub dataset: PathBuf,
    pub runs_dir: PathBuf,
    pub regimes: Vec<Regime>,
    pub thresholds: Vec<f64>,
    pub default_threshold: f64,
    pub parallelism: usize,
    pub vocab_dirs: Vec<PathBuf>,
    pub alias_table: Option<PathBuf>,
    pub weights: SimilarityWeights,
    pub decoder: DecoderConfig,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig {
            version: CONFIG_VERSION,
            dataset: "dataset".into(),
            runs_dir: "runs".into(),
            regimes: Regime::ALL.to_vec(),
            thresholds: DEFAULT_SWEEP.to_vec(),
            default_threshold: DEFAULT_THRESHOLD,
            parallelism: 4,
            vocab_dirs: vec!["vocab".into()],
            alias_table: None,
            weights: SimilarityWeights::default(),
            decoder: DecoderConfig::default(),
        }
    }
}

impl HarnessConfig {
    pub fn parse(text: &str) -> Result<HarnessConfig, HarnessError> {
        let config: HarnessConfig = toml::from_str(text).map_err(super::at(Stage::Config))?;
        if config.version != CONFIG_VERSION {
            return Err(HarnessError::Stage {
                stage: Stage::Config,
                message: format!("unsupported config version {} (expected {CONFIG_VERSION})", config.version),
            });
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<HarnessConfig, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Stage {
            stage: Stage::Config,
            message: format!("{}: {e}", path.display()),
        })?;
        let mut config = HarnessConfig::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut config.dataset);
        resolve(&mut config.runs_dir);
        config.vocab_dirs.iter_mut().for_each(resolve);
        if let Some(p) = config.alias_table.as_mut() {
            resolve(p);
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |message: String| HarnessError::Stage {
            stage: Stage::Config,
            message,
        };
        if self.regimes.is_empty() {
            return Err(fail("no regimes selected".into()));
        }
        if self.thresholds.is_empty() {
            return Err(fail("no thresholds selected".into()));
        }
        if let Some(t) = self.thresholds.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(fail(format!("threshold {t} outside [0, 1]")));
        }
        if !self.thresholds.contains(&self.default_threshold) {
            return Err(fail(format!(
                "default threshold {} is not among the thresholds {:?}",
                self.default_threshold, self.thresholds
            )));
        }
        if self.parallelism == 0 {
            return Err(fail("parallelism must be at least 1".into()));
        }
        self.weights.validate().map_err(super::at(Stage::Config))?;
        Ok(())
    }
}
