//! Case records and their canonical on-disk form.
//!
//! A case file is a TOML document whose first key is
//! `format = "semzip-case/1"`. Keys always appear in this order:
//!
//! ```text
//! format, case_id, provenance?, original_text,
//! [[gold_atoms]]      type, subject, predicate, value, modality, scope,
//!                     evidence?, confidence?, risk?, criticality, critical
//! [[representations]] regime, payload, dictionary_id?
//! ```
//!
//! Optional keys (`?`) are omitted entirely when absent. Representations are
//! written in the fixed regime order. Canonical serialization is a pure
//! function of the record.
//!
//! A case-set directory holds `index` (header `semzip-index/1`, then one
//! case id per line), `cases/<case_id>.case`, and optionally `dicts/*.dict`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::atom::{validate_gold_atom, GoldAtom, UnknownVariant, ValidationReport};
use crate::codec::dict::{DictError, ProtocolDictionary};

pub const CASE_FORMAT: &str = "semzip-case/1";
pub const INDEX_HEADER: &str = "semzip-index/1";

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Prose,
    CanonicalStructured,
    CclCore,
    CclMin,
    SzipAscii,
    SzipEmoji,
}

impl Regime {
    /// Fixed reporting order.
    pub const ALL: [Regime; 6] = [
        Regime::Prose,
        Regime::CanonicalStructured,
        Regime::CclCore,
        Regime::CclMin,
        Regime::SzipAscii,
        Regime::SzipEmoji,
    ];

    pub const DECODABLE: [Regime; 3] = [Regime::CclCore, Regime::CclMin, Regime::SzipAscii];

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Prose => "prose",
            Regime::CanonicalStructured => "canonical_structured",
            Regime::CclCore => "ccl_core",
            Regime::CclMin => "ccl_min",
            Regime::SzipAscii => "szip_ascii",
            Regime::SzipEmoji => "szip_emoji",
        }
    }

    /// Whether a deterministic parser exists for this regime.
    pub fn is_decodable(self) -> bool {
        Self::DECODABLE.contains(&self)
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Regime {
    type Err = UnknownVariant;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Regime::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| UnknownVariant {
                field: "Regime",
                value: s.to_string(),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Representation {
    pub regime: Regime,
    pub payload: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dictionary_id: Option<String>,
}

impl Representation {
    pub fn new(regime: Regime, payload: impl Into<String>) -> Self {
        Representation {
            regime,
            payload: payload.into(),
            dictionary_id: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseRecord {
    pub case_id: String,
    pub provenance: Option<String>,
    pub original_text: String,
    pub gold_atoms: Vec<GoldAtom>,
    pub representations: BTreeMap<Regime, Representation>,
}

impl CaseRecord {
    pub fn critical_atoms(&self) -> impl Iterator<Item = &GoldAtom> {
        self.gold_atoms.iter().filter(|g| g.is_critical)
    }

    pub fn representation(&self, regime: Regime) -> Option<&Representation> {
        self.representations.get(&regime)
    }

    pub fn insert_representation(&mut self, rep: Representation) {
        self.representations.insert(rep.regime, rep);
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CaseDocument {
    format: String,
    case_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<String>,
    original_text: String,
    gold_atoms: Vec<GoldAtom>,
    #[serde(default)]
    representations: Vec<Representation>,
}

#[derive(Debug, thiserror::Error)]
pub enum CaseError {
    #[error("line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unsupported case format `{0}` (expected `{CASE_FORMAT}`)")]
    Format(String),
    #[error("regime `{0}` appears more than once")]
    DuplicateRegime(Regime),
    #[error("case failed validation: {0}")]
    Invalid(ValidationReport),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    InFile {
        path: PathBuf,
        #[source]
        source: Box<CaseError>,
    },
    #[error("index: {0}")]
    Index(String),
    #[error("case id `{0}` listed more than once")]
    DuplicateCaseId(String),
    #[error("case `{case_id}` references unknown dictionary `{dictionary_id}`")]
    UnknownDictionary {
        case_id: String,
        dictionary_id: String,
    },
    #[error("dictionary {path}: {source}")]
    Dictionary {
        path: PathBuf,
        source: DictError,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CaseError + '_ {
    move |source| CaseError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn is_case_id(s: &str) -> bool {
    !s.is_empty()
        && s
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_' || b == b'-')
}

pub fn validate_case(case: &CaseRecord) -> ValidationReport {
    let mut report = ValidationReport::default();
    if !is_case_id(&case.case_id) {
        report.push("case_id", "must be nonempty [a-z0-9_-]");
    }
    if case.original_text.trim().is_empty() {
        report.push("original_text", "must be nonempty");
    }
    if case.gold_atoms.is_empty() {
        report.push("gold_atoms", "at least one gold atom required");
    } else if !case.gold_atoms.iter().any(|g| g.is_critical) {
        report.push("gold_atoms", "at least one gold atom must be flagged critical");
    }
    for (i, g) in case.gold_atoms.iter().enumerate() {
        report.extend_prefixed(&format!("gold_atoms[{i}]"), validate_gold_atom(g));
    }
    for (regime, rep) in &case.representations {
        if rep.regime != *regime {
            report.push(format!("representations.{regime}"), "keyed under the wrong regime");
        }
        if rep.payload.trim().is_empty() {
            report.push(format!("representations.{regime}"), "payload is empty");
        }
        if let Some(id) = &rep.dictionary_id {
            if id.trim().is_empty() {
                report.push(format!("representations.{regime}"), "dictionary_id is empty");
            }
        }
    }
    report
}

pub fn canonical_serialize(case: &CaseRecord) -> Result<String, CaseError> {
    let report = validate_case(case);
    if !report.is_ok() {
        return Err(CaseError::Invalid(report));
    }
    let doc = CaseDocument {
        format: CASE_FORMAT.to_string(),
        case_id: case.case_id.clone(),
        provenance: case.provenance.clone(),
        original_text: case.original_text.clone(),
        gold_atoms: case.gold_atoms.clone(),
        representations: case.representations.values().cloned().collect(),
    };
    Ok(toml::to_string(&doc).expect("case documents always serialize"))
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

pub fn parse_case(document: &str) -> Result<CaseRecord, CaseError> {
    if document.trim().is_empty() {
        return Err(CaseError::Syntax {
            line: 1,
            column: 1,
            message: "empty document".into(),
        });
    }
    let doc: CaseDocument = toml::from_str(document).map_err(|e| {
        let (line, column) = e
            .span()
            .map(|span| line_col(document, span.start))
            .unwrap_or((1, 1));
        CaseError::Syntax {
            line,
            column,
            message: e.message().to_string(),
        }
    })?;
    if doc.format != CASE_FORMAT {
        return Err(CaseError::Format(doc.format));
    }
    let mut representations = BTreeMap::new();
    for rep in doc.representations {
        let regime = rep.regime;
        if representations.insert(regime, rep).is_some() {
            return Err(CaseError::DuplicateRegime(regime));
        }
    }
    let case = CaseRecord {
        case_id: doc.case_id,
        provenance: doc.provenance,
        original_text: doc.original_text,
        gold_atoms: doc.gold_atoms,
        representations,
    };
    let report = validate_case(&case);
    if !report.is_ok() {
        return Err(CaseError::Invalid(report));
    }
    Ok(case)
}

/// Cases plus the protocol dictionaries their representations may reference.
#[derive(Debug, Clone, Default)]
pub struct CaseSet {
    pub cases: Vec<CaseRecord>,
    pub dictionaries: BTreeMap<String, ProtocolDictionary>,
}

impl CaseSet {
    pub fn get(&self, case_id: &str) -> Option<&CaseRecord> {
        self.cases.iter().find(|c| c.case_id == case_id)
    }

    pub fn ids(&self) -> Vec<&str> {
        self.cases.iter().map(|c| c.case_id.as_str()).collect()
    }

    pub fn dictionary(&self, id: &str) -> Option<&ProtocolDictionary> {
        self.dictionaries.get(id)
    }

    /// Unique ids and resolvable dictionary references.
    pub fn check(&self) -> Result<(), CaseError> {
        let mut seen = BTreeSet::new();
        for case in &self.cases {
            if !seen.insert(case.case_id.as_str()) {
                return Err(CaseError::DuplicateCaseId(case.case_id.clone()));
            }
            for rep in case.representations.values() {
                if let Some(id) = &rep.dictionary_id {
                    if !self.dictionaries.contains_key(id) {
                        return Err(CaseError::UnknownDictionary {
                            case_id: case.case_id.clone(),
                            dictionary_id: id.clone(),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// SHA-256 over the index and every case's canonical bytes.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(render_index(&self.ids()).as_bytes());
        for case in &self.cases {
            let bytes = canonical_serialize(case).unwrap_or_default();
            hasher.update((bytes.len() as u64).to_le_bytes());
            hasher.update(bytes.as_bytes());
        }
        for (id, dict) in &self.dictionaries {
            hasher.update(id.as_bytes());
            hasher.update(dict.header_text.as_bytes());
        }
        hex::encode(hasher.finalize())
    }
}

pub fn render_index(ids: &[&str]) -> String {
    let mut out = String::from(INDEX_HEADER);
    out.push('\n');
    for id in ids {
        out.push_str(id);
        out.push('\n');
    }
    out
}

pub fn parse_index(text: &str) -> Result<Vec<String>, CaseError> {
    let mut lines = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty());
    match lines.next() {
        Some(INDEX_HEADER) => {}
        Some(other) => {
            return Err(CaseError::Index(format!(
                "expected header `{INDEX_HEADER}`, found `{other}`"
            )))
        }
        None => return Err(CaseError::Index("missing header".into())),
    }
    let mut ids = Vec::new();
    let mut seen = BTreeSet::new();
    for id in lines {
        if !is_case_id(id) {
            return Err(CaseError::Index(format!("invalid case id `{id}`")));
        }
        if !seen.insert(id.to_string()) {
            return Err(CaseError::DuplicateCaseId(id.to_string()));
        }
        ids.push(id.to_string());
    }
    Ok(ids)
}

pub fn case_path(root: &Path, case_id: &str) -> PathBuf {
    root.join("cases").join(format!("{case_id}.case"))
}

pub fn load_case_file(path: &Path) -> Result<CaseRecord, CaseError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_case(&text).map_err(|e| CaseError::InFile {
        path: path.to_path_buf(),
        source: Box::new(e),
    })
}

pub fn load_dictionaries(root: &Path) -> Result<BTreeMap<String, ProtocolDictionary>, CaseError> {
    let dir = root.join("dicts");
    let mut out = BTreeMap::new();
    if !dir.is_dir() {
        return Ok(out);
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(io_err(&dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "dict"))
        .collect();
    paths.sort();
    for path in paths {
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let mut dict = ProtocolDictionary::parse(&text).map_err(|source| CaseError::Dictionary {
            path: path.clone(),
            source,
        })?;
        let id = path.file_stem().unwrap().to_string_lossy().to_string();
        dict.dictionary_id = id.clone();
        out.insert(id, dict);
    }
    Ok(out)
}

pub fn load_case_set(root: &Path) -> Result<CaseSet, CaseError> {
    let index_path = root.join("index");
    let index = fs::read_to_string(&index_path).map_err(io_err(&index_path))?;
    let ids = parse_index(&index)?;
    let mut cases = Vec::with_capacity(ids.len());
    for id in &ids {
        let case = load_case_file(&case_path(root, id))?;
        if &case.case_id != id {
            return Err(CaseError::Index(format!(
                "file for `{id}` declares case_id `{}`",
                case.case_id
            )));
        }
        cases.push(case);
    }
    let set = CaseSet {
        cases,
        dictionaries: load_dictionaries(root)?,
    };
    set.check()?;
    Ok(set)
}

/// Write a case set in canonical form (index, case files, dictionaries).
pub fn write_case_set(root: &Path, set: &CaseSet) -> Result<(), CaseError> {
    let cases_dir = root.join("cases");
    fs::create_dir_all(&cases_dir).map_err(io_err(&cases_dir))?;
    for case in &set.cases {
        let path = case_path(root, &case.case_id);
        fs::write(&path, canonical_serialize(case)?).map_err(io_err(&path))?;
    }
    let index_path = root.join("index");
    fs::write(&index_path, render_index(&set.ids())).map_err(io_err(&index_path))?;
    if !set.dictionaries.is_empty() {
        let dir = root.join("dicts");
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        for (id, dict) in &set.dictionaries {
            let path = dir.join(format!("{id}.dict"));
            fs::write(&path, format!("{}\n", dict.header_text)).map_err(io_err(&path))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atom::{AtomType, Modality, Predicate, Scope, SemanticAtom, Value};

    fn sample() -> CaseRecord {
        let atom = SemanticAtom::new(
            AtomType::Constraint,
            "rental_car",
            Predicate::Allowed,
            Value::Bool(false),
            Modality::Must,
            Scope::Trip,
        );
        let mut reps = BTreeMap::new();
        reps.insert(Regime::SzipAscii, Representation::new(Regime::SzipAscii, "!car"));
        reps.insert(Regime::Prose, Representation::new(Regime::Prose, "No rental car.\nWalk."));
        CaseRecord {
            case_id: "mini".into(),
            provenance: None,
            original_text: "Please do not book a rental car.".into(),
            gold_atoms: vec![GoldAtom::new(atom, 5, true)],
            representations: reps,
        }
    }

    #[test]
    fn optional_keys_omitted_golden() {
        // frozen from the documented key order before the serializer was written
        let expected = r#"format = "semzip-case/1"
case_id = "mini"
original_text = "Please do not book a rental car."

[[gold_atoms]]
type = "constraint"
subject = "rental_car"
predicate = "allowed"
value = false
modality = "must"
scope = "trip"
criticality = 5
critical = true

[[representations]]
regime = "prose"
payload = """
No rental car.
Walk."""

[[representations]]
regime = "szip_ascii"
payload = "!car"
"#;
        assert_eq!(canonical_serialize(&sample()).unwrap(), expected);
    }

    #[test]
    fn round_trip_and_idempotence() {
        let text = canonical_serialize(&sample()).unwrap();
        let parsed = parse_case(&text).unwrap();
        assert_eq!(parsed, sample());
        assert_eq!(canonical_serialize(&parsed).unwrap(), text);
    }

    #[test]
    fn key_order_does_not_matter() {
        let shuffled = r#"
case_id = "mini"
original_text = "Please do not book a rental car."
format = "semzip-case/1"

[[representations]]
payload = "!car"
regime = "szip_ascii"

[[representations]]
payload = "No rental car.\nWalk."
regime = "prose"

[[gold_atoms]]
critical = true
criticality = 5
scope = "trip"
modality = "must"
value = false
predicate = "allowed"
subject = "rental_car"
type = "constraint"
"#;
        let parsed = parse_case(shuffled).unwrap();
        assert_eq!(
            canonical_serialize(&parsed).unwrap(),
            canonical_serialize(&sample()).unwrap()
        );
    }

    #[test]
    fn empty_document_is_a_parse_error() {
        assert!(matches!(parse_case(""), Err(CaseError::Syntax { line: 1, .. })));
    }

    #[test]
    fn criticality_seven_is_rejected() {
        let text = canonical_serialize(&sample())
            .unwrap()
            .replace("criticality = 5", "criticality = 7");
        match parse_case(&text) {
            Err(CaseError::Invalid(report)) => {
                assert_eq!(report.violations[0].field, "gold_atoms[0].criticality")
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_regime_is_rejected() {
        let text = format!(
            "{}\n[[representations]]\nregime = \"prose\"\npayload = \"again\"\n",
            canonical_serialize(&sample()).unwrap()
        );
        assert!(matches!(parse_case(&text), Err(CaseError::DuplicateRegime(Regime::Prose))));
    }

    #[test]
    fn syntax_errors_carry_position() {
        let text = "format = \"semzip-case/1\"\ncase_id = \"x\"\noriginal_text = \n";
        match parse_case(text) {
            Err(CaseError::Syntax { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn wrong_format_header() {
        let text = canonical_serialize(&sample())
            .unwrap()
            .replace("semzip-case/1", "semzip-case/9");
        assert!(matches!(parse_case(&text), Err(CaseError::Format(_))));
    }

    #[test]
    fn no_critical_atom_is_invalid() {
        let mut case = sample();
        case.gold_atoms[0].is_critical = false;
        assert!(matches!(canonical_serialize(&case), Err(CaseError::Invalid(_))));
    }

    #[test]
    fn index_round_trip() {
        let text = render_index(&["travel", "canvas"]);
        assert_eq!(parse_index(&text).unwrap(), vec!["travel", "canvas"]);
        assert!(matches!(
            parse_index("semzip-index/1\na\na\n"),
            Err(CaseError::DuplicateCaseId(_))
        ));
        assert!(parse_index("").is_err());
    }

    #[test]
    fn regime_names() {
        for r in Regime::ALL {
            assert_eq!(r.as_str().parse::<Regime>().unwrap(), r);
        }
        assert!(Regime::SzipAscii.is_decodable());
        assert!(!Regime::SzipEmoji.is_decodable());
    }
}
