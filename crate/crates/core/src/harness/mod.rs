//! End-to-end pipeline: render/export → decode → score → aggregate.
//!
//! A run directory looks like
//!
//! ```text
//! runs/<run_id>/
//!   manifest.json        written once, before any network call
//!   cases/               the case set with every representation filled in
//!   gold/<case>.json     gold atoms and their weights
//!   prompts.jsonl        decoder prompts
//!   raw/                 <case>__<regime>.txt (byte-exact) and .json records
//!   scores/              tokens.json and <case>__<regime>__<t>.json
//!   reports/             aggregate.{csv,md}, tradeoff.csv, sensitivity.{csv,md}
//!   STAGE_FAILED.json    only when a stage failed
//! ```
//!
//! Each stage reads only what the previous stage wrote, so any stage can be
//! re-run on an existing directory.

mod config;
mod pipeline;
mod report;

use std::fmt;
use std::path::PathBuf;

pub use config::{HarnessConfig, CONFIG_VERSION};
pub use pipeline::{
    aggregate_stage, begin_run, check_grid, create_run_dir, decode_stage, load_manifest, load_records, load_scores,
    prepare_stage, read_tokens, run_pipeline, score_records, score_stage, token_rows, write_failure_marker, write_manifest,
    DecoderSettings, Environment, RunManifest, ScoreFile, TokenRow, VocabEntry, RUN_FORMAT,
};
pub use report::{
    aggregate, aggregate_csv, aggregate_markdown, mean, ordering_by_war, per_case_csv, sensitivity, sensitivity_csv,
    sensitivity_markdown, tradeoff_csv, AggregateRow, CaseValues, SensitivityRow,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Prepare,
    Decode,
    Score,
    Aggregate,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Prepare => "prepare",
            Stage::Decode => "decode",
            Stage::Score => "score",
            Stage::Aggregate => "aggregate",
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{stage} stage: {message}")]
    Stage { stage: Stage, message: String },
    #[error("{stage} stage: missing artifact {path}")]
    MissingArtifact { stage: Stage, path: PathBuf },
    #[error("case set is empty; nothing to run")]
    EmptyCaseSet,
    #[error("{stage} stage: grid mismatch: expected {expected} {what}, found {found}")]
    Grid {
        stage: Stage,
        what: &'static str,
        expected: usize,
        found: usize,
    },
}

impl HarnessError {
    pub fn stage(&self) -> Option<Stage> {
        match self {
            HarnessError::Stage { stage, .. }
            | HarnessError::MissingArtifact { stage, .. }
            | HarnessError::Grid { stage, .. } => Some(*stage),
            HarnessError::EmptyCaseSet => Some(Stage::Prepare),
        }
    }
}

/// `map_err` adapter attaching a stage name to any displayable error.
pub(crate) fn at<E: fmt::Display>(stage: Stage) -> impl Fn(E) -> HarnessError {
    move |e| HarnessError::Stage {
        stage,
        message: e.to_string(),
    }
}
