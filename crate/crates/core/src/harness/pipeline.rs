use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::report::{self, AggregateRow};
use super::{at, HarnessConfig, HarnessError, Stage};
use crate::atom::{GoldAtom, SemanticAtom};
use crate::bpe::{find_rank_file, gain_from_counts, BpeVocabulary, VocabSpec, CL100K_BASE, O200K_BASE};
use crate::case::{write_case_set, CaseSet, Regime, Representation};
use crate::codec::Codec;
use crate::decoder::stub::{StubBehavior, StubServer};
use crate::decoder::{
    decode_batch, prompt_records, read_prompts, record_stem, write_prompts, ChatClient,
    DecodeRecord, DecoderConfig, PromptTemplate,
};
use crate::matching::{sensitivity_sweep, MatchReport, SimilarityWeights};
use crate::normalize::AliasTable;
use crate::packet::Packetizer;

pub const RUN_FORMAT: &str = "semzip-run/1";
const MANIFEST: &str = "manifest.json";
const FAILURE_MARKER: &str = "STAGE_FAILED.json";

/// Everything a stage needs besides the run directory: settings, tables, and
/// (lazily) the two tokenizer vocabularies.
pub struct Environment {
    pub config: HarnessConfig,
    pub codec: Codec,
    pub template: PromptTemplate,
    /// Decode against an in-process deterministic stub instead of the endpoint.
    pub stub: bool,
    /// Allow sampling settings other than temperature 0 / top_p 1.
    pub unsafe_sampling: bool,
    vocabs: OnceLock<Result<[(BpeVocabulary, PathBuf); 2], String>>,
}

impl Environment {
    pub fn new(config: HarnessConfig) -> Result<Environment, HarnessError> {
        config.validate()?;
        let table = match &config.alias_table {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| HarnessError::Stage {
                    stage: Stage::Config,
                    message: format!("{}: {e}", path.display()),
                })?;
                AliasTable::parse(&text).map_err(at(Stage::Config))?
            }
            None => AliasTable::builtin(),
        };
        Ok(Environment {
            config,
            codec: Codec::new(table),
            template: PromptTemplate::builtin(),
            stub: false,
            unsafe_sampling: false,
            vocabs: OnceLock::new(),
        })
    }

    pub fn alias_table(&self) -> &AliasTable {
        &self.codec.table
    }

    /// o200k_base and cl100k_base, located and hash-checked on first use.
    pub fn vocabularies(&self) -> Result<&[(BpeVocabulary, PathBuf); 2], HarnessError> {
        let loaded = self.vocabs.get_or_init(|| {
            let load = |spec: &VocabSpec| -> Result<(BpeVocabulary, PathBuf), String> {
                let path = find_rank_file(spec, &self.config.vocab_dirs).map_err(|e| e.to_string())?;
                let vocab = BpeVocabulary::load_verified(&path, spec).map_err(|e| e.to_string())?;
                Ok((vocab, path))
            };
            Ok([load(&O200K_BASE)?, load(&CL100K_BASE)?])
        });
        loaded.as_ref().map_err(|message| HarnessError::Stage {
            stage: Stage::Config,
            message: message.clone(),
        })
    }

    /// The decoder settings actually used, given the stub flag.
    fn decoder_config(&self, stub_endpoint: Option<String>) -> DecoderConfig {
        let mut config = self.config.decoder.clone();
        if let Some(endpoint) = stub_endpoint {
            config.endpoint = endpoint;
            config.api_key_env = None;
        }
        config
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabEntry {
    pub name: String,
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderSettings {
    pub model: String,
    pub endpoint: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_output_tokens: u32,
    pub strict_json: bool,
    pub parallelism: usize,
    pub stub: bool,
}

/// Provenance of a run. Written once, before any request leaves the process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub run_id: String,
    pub created_at: String,
    pub tool_version: String,
    pub case_set_sha256: String,
    pub cases: Vec<String>,
    pub alias_table_sha256: String,
    pub codec_tables: BTreeMap<String, String>,
    pub keywords_sha256: String,
    pub prompt_template_sha256: String,
    pub decoder: DecoderSettings,
    pub vocabularies: Vec<VocabEntry>,
    pub regimes: Vec<Regime>,
    pub thresholds: Vec<f64>,
    pub default_threshold: f64,
    pub weights: SimilarityWeights,
    pub notes: Vec<String>,
}

impl RunManifest {
    pub fn build(env: &Environment, set: &CaseSet, run_id: &str) -> Result<RunManifest, HarnessError> {
        let vocabularies = env
            .vocabularies()?
            .iter()
            .map(|(v, path)| VocabEntry {
                name: v.name().to_string(),
                path: path.clone(),
                sha256: v.sha256().to_string(),
            })
            .collect();
        let mut regimes = env.config.regimes.clone();
        regimes.sort();
        regimes.dedup();
        let mut thresholds = env.config.thresholds.clone();
        thresholds.sort_by(f64::total_cmp);
        thresholds.dedup();
        let d = &env.config.decoder;
        Ok(RunManifest {
            format: RUN_FORMAT.into(),
            run_id: run_id.into(),
            created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            case_set_sha256: set.content_hash(),
            cases: sorted_ids(set),
            alias_table_sha256: alias_hash(env.alias_table()),
            codec_tables: env.codec.table_hashes().into_iter().collect(),
            keywords_sha256: Packetizer::builtin().keywords.sha256(),
            prompt_template_sha256: env.template.sha256(),
            decoder: DecoderSettings {
                model: if env.stub { crate::decoder::stub::STUB_MODEL.into() } else { d.model.clone() },
                endpoint: if env.stub { "stub".into() } else { d.endpoint.clone() },
                temperature: d.temperature,
                top_p: d.top_p,
                max_output_tokens: d.max_output_tokens,
                strict_json: d.strict_json,
                parallelism: env.config.parallelism,
                stub: env.stub,
            },
            vocabularies,
            regimes,
            thresholds,
            default_threshold: env.config.default_threshold,
            weights: env.config.weights,
            notes: vec!["prose representations are template-generated from gold atoms".into()],
        })
    }
}

fn alias_hash(table: &AliasTable) -> String {
    hex::encode(Sha256::digest(table.to_text().as_bytes()))
}

fn sorted_ids(set: &CaseSet) -> Vec<String> {
    let mut ids: Vec<String> = set.ids().into_iter().map(str::to_string).collect();
    ids.sort();
    ids
}

/// Token counts and gains for one (case, regime).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenRow {
    pub case_id: String,
    pub regime: Regime,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dictionary_id: Option<String>,
    pub original_o200k: usize,
    pub original_cl100k: usize,
    pub payload_o200k: usize,
    pub payload_cl100k: usize,
    /// Tokens of the dictionary header, 0 without a dictionary.
    pub dictionary_o200k: usize,
    pub dictionary_cl100k: usize,
    /// Payload-only gain.
    pub o200k_gain: f64,
    pub cl100k_gain: f64,
    /// Gain after adding this representation's share of the dictionary header.
    pub o200k_gain_amortized: f64,
    pub cl100k_gain_amortized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GoldFile {
    case_id: String,
    gold_atoms: Vec<GoldAtom>,
}

/// Scorer output for one (case, regime, threshold).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreFile {
    pub case_id: String,
    pub regime: Regime,
    pub threshold: f64,
    pub decode_failed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub report: MatchReport,
}

impl ScoreFile {
    pub fn file_name(&self) -> String {
        score_file_name(&self.case_id, self.regime, self.threshold)
    }
}

fn score_file_name(case_id: &str, regime: Regime, threshold: f64) -> String {
    format!("{}__{threshold:.2}.json", record_stem(case_id, regime))
}

fn write_file(stage: Stage, path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), HarnessError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| HarnessError::Stage {
            stage,
            message: format!("{}: {e}", parent.display()),
        })?;
    }
    fs::write(path, bytes).map_err(|e| HarnessError::Stage {
        stage,
        message: format!("{}: {e}", path.display()),
    })
}

fn write_json<T: Serialize>(stage: Stage, path: &Path, value: &T) -> Result<(), HarnessError> {
    let mut text = serde_json::to_string_pretty(value).map_err(at(stage))?;
    text.push('\n');
    write_file(stage, path, text)
}

fn read_json<T: DeserializeOwned>(stage: Stage, path: &Path) -> Result<T, HarnessError> {
    let text = fs::read_to_string(path).map_err(|_| HarnessError::MissingArtifact {
        stage,
        path: path.to_path_buf(),
    })?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Stage {
        stage,
        message: format!("{}: {e}", path.display()),
    })
}

fn json_files(stage: Stage, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let entries = fs::read_dir(dir).map_err(|_| HarnessError::MissingArtifact {
        stage,
        path: dir.to_path_buf(),
    })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    Ok(paths)
}

pub fn check_grid(stage: Stage, what: &'static str, expected: usize, found: usize) -> Result<(), HarnessError> {
    if expected == found {
        Ok(())
    } else {
        Err(HarnessError::Grid {
            stage,
            what,
            expected,
            found,
        })
    }
}

pub fn load_manifest(run_dir: &Path) -> Result<RunManifest, HarnessError> {
    read_json(Stage::Config, &run_dir.join(MANIFEST))
}

/// Stage (i)–(iii): case copies with every representation, gold files,
/// prompts, and token counts.
pub fn prepare_stage(env: &Environment, set: &CaseSet, run_dir: &Path) -> Result<(), HarnessError> {
    const S: Stage = Stage::Prepare;
    if set.cases.is_empty() {
        return Err(HarnessError::EmptyCaseSet);
    }
    let manifest = load_manifest(run_dir)?;
    let mut filled = set.clone();
    for case in &mut filled.cases {
        let atoms: Vec<SemanticAtom> = case.gold_atoms.iter().map(|g| g.atom.clone()).collect();
        for &regime in &manifest.regimes {
            if case.representation(regime).is_none() {
                let rendering = env.codec.render(&atoms, regime, None).map_err(|e| HarnessError::Stage {
                    stage: S,
                    message: format!("{} / {regime}: {e}", case.case_id),
                })?;
                case.insert_representation(Representation::new(regime, rendering.payload));
            }
        }
    }
    write_case_set(&run_dir.join("cases"), &filled).map_err(at(S))?;

    for case in &filled.cases {
        let gold = GoldFile {
            case_id: case.case_id.clone(),
            gold_atoms: case.gold_atoms.clone(),
        };
        write_json(S, &run_dir.join("gold").join(format!("{}.json", case.case_id)), &gold)?;
    }

    let prompts = prompt_records(&filled, &manifest.regimes, &env.template, &env.codec).map_err(at(S))?;
    write_prompts(&run_dir.join("prompts.jsonl"), &prompts, &env.template).map_err(at(S))?;

    let tokens = token_rows(env, &filled, &manifest.regimes)?;
    write_json(S, &run_dir.join("scores").join("tokens.json"), &tokens)
}

/// Token counts for every (case, regime) of a case set whose representations
/// are all present.
pub fn token_rows(env: &Environment, set: &CaseSet, regimes: &[Regime]) -> Result<Vec<TokenRow>, HarnessError> {
    const S: Stage = Stage::Prepare;
    let [(o200k, _), (cl100k, _)] = env.vocabularies()?;
    let mut users: BTreeMap<&str, usize> = BTreeMap::new();
    for case in &set.cases {
        for &regime in regimes {
            if let Some(id) = case.representation(regime).and_then(|r| r.dictionary_id.as_deref()) {
                *users.entry(id).or_default() += 1;
            }
        }
    }
    let mut rows = Vec::new();
    for id in sorted_ids(set) {
        let case = set.get(&id).expect("id from set");
        let original = (o200k.count(&case.original_text), cl100k.count(&case.original_text));
        for &regime in regimes {
            let rep = case.representation(regime).ok_or_else(|| HarnessError::Stage {
                stage: S,
                message: format!("{id} has no {regime} representation"),
            })?;
            let payload = (o200k.count(&rep.payload), cl100k.count(&rep.payload));
            let dict = rep.dictionary_id.as_deref().and_then(|d| set.dictionary(d));
            let header = dict.map_or((0, 0), |d| (o200k.count(&d.header_text), cl100k.count(&d.header_text)));
            let share = rep.dictionary_id.as_deref().and_then(|d| users.get(d)).copied().unwrap_or(1) as f64;
            let gain = |orig: usize, comp: usize| gain_from_counts(orig, comp).map_err(at(S));
            let amortized = |orig: usize, comp: usize, head: usize| -> Result<f64, HarnessError> {
                if orig == 0 {
                    return gain(orig, comp);
                }
                Ok(1.0 - (comp as f64 + head as f64 / share) / orig as f64)
            };
            rows.push(TokenRow {
                case_id: id.clone(),
                regime,
                dictionary_id: rep.dictionary_id.clone(),
                original_o200k: original.0,
                original_cl100k: original.1,
                payload_o200k: payload.0,
                payload_cl100k: payload.1,
                dictionary_o200k: header.0,
                dictionary_cl100k: header.1,
                o200k_gain: gain(original.0, payload.0)?,
                cl100k_gain: gain(original.1, payload.1)?,
                o200k_gain_amortized: amortized(original.0, payload.0, header.0)?,
                cl100k_gain_amortized: amortized(original.1, payload.1, header.1)?,
            });
        }
    }
    Ok(rows)
}

pub fn read_tokens(run_dir: &Path) -> Result<Vec<TokenRow>, HarnessError> {
    read_json(Stage::Aggregate, &run_dir.join("scores").join("tokens.json"))
}

/// Stage (iv): decode every prompt without an archived record. Returns the
/// number of prompts sent.
pub fn decode_stage(env: &Environment, run_dir: &Path) -> Result<usize, HarnessError> {
    const S: Stage = Stage::Decode;
    let prompts_path = run_dir.join("prompts.jsonl");
    if !prompts_path.is_file() {
        return Err(HarnessError::MissingArtifact {
            stage: S,
            path: prompts_path,
        });
    }
    let prompts = read_prompts(&prompts_path).map_err(at(S))?;
    let raw = run_dir.join("raw");
    let pending: Vec<_> = prompts
        .into_iter()
        .filter(|p| !raw.join(format!("{}.json", record_stem(&p.case_id, p.regime))).is_file())
        .collect();
    if pending.is_empty() {
        return Ok(0);
    }
    let server = if env.stub {
        Some(StubServer::start(StubBehavior::Deterministic).map_err(at(S))?)
    } else {
        None
    };
    let config = env.decoder_config(server.as_ref().map(StubServer::endpoint));
    config.validate(env.unsafe_sampling).map_err(at(S))?;
    let client = ChatClient::new(config).map_err(at(S))?;
    decode_batch(&pending, &client, env.config.parallelism, Some(&raw)).map_err(at(S))?;
    Ok(pending.len())
}

pub fn load_records(run_dir: &Path) -> Result<Vec<DecodeRecord>, HarnessError> {
    json_files(Stage::Score, &run_dir.join("raw"))?
        .iter()
        .map(|p| read_json(Stage::Score, p))
        .collect()
}

fn load_gold(run_dir: &Path) -> Result<BTreeMap<String, Vec<GoldAtom>>, HarnessError> {
    json_files(Stage::Score, &run_dir.join("gold"))?
        .iter()
        .map(|p| read_json::<GoldFile>(Stage::Score, p).map(|g| (g.case_id, g.gold_atoms)))
        .collect()
}

/// Scores each record at each threshold. A failed decode is scored as if
/// nothing was decoded.
pub fn score_records(
    env: &Environment,
    records: &[DecodeRecord],
    gold: &BTreeMap<String, Vec<GoldAtom>>,
    thresholds: &[f64],
    weights: &SimilarityWeights,
) -> Result<Vec<ScoreFile>, HarnessError> {
    const S: Stage = Stage::Score;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(env.config.parallelism.max(1))
        .build()
        .map_err(at(S))?;
    let nested: Vec<Vec<ScoreFile>> = pool.install(|| {
        records
            .par_iter()
            .map(|r| {
                let gold = gold.get(&r.case_id).ok_or_else(|| HarnessError::MissingArtifact {
                    stage: S,
                    path: PathBuf::from("gold").join(format!("{}.json", r.case_id)),
                })?;
                let decoded = r.atoms.as_deref().unwrap_or(&[]);
                let reports = sensitivity_sweep(gold, decoded, thresholds, weights, env.alias_table()).map_err(at(S))?;
                Ok(reports
                    .into_iter()
                    .map(|report| ScoreFile {
                        case_id: r.case_id.clone(),
                        regime: r.regime,
                        threshold: report.threshold,
                        decode_failed: r.atoms.is_none(),
                        failure: r.failure.clone(),
                        report,
                    })
                    .collect())
            })
            .collect::<Result<_, HarnessError>>()
    })?;
    let mut scores: Vec<ScoreFile> = nested.into_iter().flatten().collect();
    scores.sort_by(|a, b| {
        (&a.case_id, a.regime)
            .cmp(&(&b.case_id, b.regime))
            .then(a.threshold.total_cmp(&b.threshold))
    });
    Ok(scores)
}

/// Stage (v), first half: score archived records. `thresholds` overrides the
/// manifest's list (rescoring at extra thresholds); returns the files written.
pub fn score_stage(
    env: &Environment,
    run_dir: &Path,
    thresholds: Option<&[f64]>,
) -> Result<Vec<ScoreFile>, HarnessError> {
    const S: Stage = Stage::Score;
    let manifest = load_manifest(run_dir)?;
    if alias_hash(env.alias_table()) != manifest.alias_table_sha256 {
        return Err(HarnessError::Stage {
            stage: S,
            message: "alias table differs from the one recorded in the run manifest".into(),
        });
    }
    let records = load_records(run_dir)?;
    check_grid(S, "decode records", manifest.cases.len() * manifest.regimes.len(), records.len())?;
    let gold = load_gold(run_dir)?;
    let thresholds = thresholds.unwrap_or(&manifest.thresholds);
    let scores = score_records(env, &records, &gold, thresholds, &manifest.weights)?;
    check_grid(S, "match reports", records.len() * thresholds.len(), scores.len())?;
    let dir = run_dir.join("scores");
    for s in &scores {
        write_json(S, &dir.join(s.file_name()), s)?;
    }
    Ok(scores)
}

/// Every score file the manifest's grid calls for.
pub fn load_scores(run_dir: &Path, manifest: &RunManifest) -> Result<Vec<ScoreFile>, HarnessError> {
    let mut out = Vec::new();
    for case_id in &manifest.cases {
        for &regime in &manifest.regimes {
            for &t in &manifest.thresholds {
                let path = run_dir.join("scores").join(score_file_name(case_id, regime, t));
                out.push(read_json(Stage::Aggregate, &path)?);
            }
        }
    }
    Ok(out)
}

/// Stage (v), second half: report tables. Returns the default-threshold rows.
pub fn aggregate_stage(run_dir: &Path) -> Result<Vec<AggregateRow>, HarnessError> {
    const S: Stage = Stage::Aggregate;
    let manifest = load_manifest(run_dir)?;
    let scores = load_scores(run_dir, &manifest)?;
    let tokens = read_tokens(run_dir)?;
    let rows = report::aggregate(&scores, &tokens, manifest.default_threshold)?;
    check_grid(S, "aggregate rows", manifest.regimes.len(), rows.len())?;
    let sensitivity = report::sensitivity(&scores);
    let dir = run_dir.join("reports");
    write_file(S, &dir.join("aggregate.csv"), report::aggregate_csv(&rows))?;
    write_file(S, &dir.join("aggregate.md"), report::aggregate_markdown(&rows))?;
    write_file(S, &dir.join("per_case.csv"), report::per_case_csv(&rows))?;
    write_file(S, &dir.join("tradeoff.csv"), report::tradeoff_csv(&rows))?;
    write_file(S, &dir.join("sensitivity.csv"), report::sensitivity_csv(&sensitivity))?;
    write_file(S, &dir.join("sensitivity.md"), report::sensitivity_markdown(&sensitivity))?;
    Ok(rows)
}

/// A fresh run directory under `runs_dir`; `run_id` defaults to the UTC time.
/// An existing directory is never reused: a numeric suffix is appended.
pub fn create_run_dir(runs_dir: &Path, run_id: Option<&str>) -> Result<(String, PathBuf), HarnessError> {
    let base = run_id
        .map(str::to_string)
        .unwrap_or_else(|| chrono::Utc::now().format("%Y%m%dT%H%M%SZ").to_string());
    fs::create_dir_all(runs_dir).map_err(|e| HarnessError::Stage {
        stage: Stage::Prepare,
        message: format!("{}: {e}", runs_dir.display()),
    })?;
    for n in 1.. {
        let id = if n == 1 { base.clone() } else { format!("{base}-{n}") };
        let dir = runs_dir.join(&id);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok((id, dir)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => {
                return Err(HarnessError::Stage {
                    stage: Stage::Prepare,
                    message: format!("{}: {e}", dir.display()),
                })
            }
        }
    }
    unreachable!()
}

/// Writes the manifest; refuses to overwrite an existing one.
pub fn write_manifest(run_dir: &Path, manifest: &RunManifest) -> Result<(), HarnessError> {
    let path = run_dir.join(MANIFEST);
    let mut text = serde_json::to_string_pretty(manifest).map_err(at(Stage::Prepare))?;
    text.push('\n');
    let mut file = fs::OpenOptions::new()
        .write(true)
        .create_new(true)
        .open(&path)
        .map_err(|e| HarnessError::Stage {
            stage: Stage::Prepare,
            message: format!("{}: {e}", path.display()),
        })?;
    std::io::Write::write_all(&mut file, text.as_bytes()).map_err(at(Stage::Prepare))
}

#[derive(Serialize)]
struct FailureMarker<'a> {
    stage: String,
    error: String,
    completed: &'a [String],
}

/// Records why a run stopped; `completed` lists the stages that finished.
pub fn write_failure_marker(run_dir: &Path, error: &HarnessError, completed: &[String]) {
    let marker = FailureMarker {
        stage: error.stage().map(|s| s.to_string()).unwrap_or_default(),
        error: error.to_string(),
        completed,
    };
    let _ = write_json(Stage::Aggregate, &run_dir.join(FAILURE_MARKER), &marker);
}

/// Checks the inputs, creates the run directory and writes its manifest.
/// Nothing is written when the case set is empty or a vocabulary is missing.
pub fn begin_run(env: &Environment, set: &CaseSet, run_id: Option<&str>) -> Result<PathBuf, HarnessError> {
    if set.cases.is_empty() {
        return Err(HarnessError::EmptyCaseSet);
    }
    set.check().map_err(at(Stage::Prepare))?;
    env.vocabularies()?;
    let (id, dir) = create_run_dir(&env.config.runs_dir, run_id)?;
    let manifest = RunManifest::build(env, set, &id)?;
    write_manifest(&dir, &manifest)?;
    Ok(dir)
}

/// All stages, in order. On failure a `STAGE_FAILED.json` marker names the
/// failing stage and the error is returned; earlier artifacts stay in place.
pub fn run_pipeline(env: &Environment, set: &CaseSet, run_id: Option<&str>) -> Result<PathBuf, HarnessError> {
    let dir = begin_run(env, set, run_id)?;
    let mut completed: Vec<String> = Vec::new();
    let result = (|| -> Result<(), HarnessError> {
        prepare_stage(env, set, &dir)?;
        completed.push(Stage::Prepare.to_string());
        decode_stage(env, &dir)?;
        completed.push(Stage::Decode.to_string());
        score_stage(env, &dir, None)?;
        completed.push(Stage::Score.to_string());
        aggregate_stage(&dir)?;
        completed.push(Stage::Aggregate.to_string());
        Ok(())
    })();
    if let Err(e) = result {
        write_failure_marker(&dir, &e, &completed);
        return Err(e);
    }
    Ok(dir)
}
