mod common;

use semzip::atom::{AtomType, Predicate, Value};
use semzip::case::{load_case_set, CaseSet, Regime};
use semzip::codec::Codec;
use semzip::decoder::stub::{completion, StubBehavior, StubServer};
use semzip::decoder::{
    decode_batch, export_prompts, parse_decoder_output, parse_prompts, prompt_records, render_prompt,
    representation_payload, ChatClient, DecoderConfig, DecoderError, PromptRecord, PromptTemplate, TEMPLATE,
    TEMPLATE_SHA256,
};
use sha2::{Digest, Sha256};

const VALID: &str = r#"{"atoms":[{"type":"constraint","subject":"rental_car","predicate":"allowed","value":false,"modality":"must","scope":"trip"}]}"#;

fn stub_config(endpoint: String) -> DecoderConfig {
    DecoderConfig {
        model: "stub".into(),
        endpoint,
        api_key_env: None,
        backoff_ms: 1,
        max_backoff_ms: 5,
        timeout_secs: 10,
        ..DecoderConfig::default()
    }
}

fn one_prompt() -> Vec<PromptRecord> {
    vec![PromptRecord {
        case_id: "travel".into(),
        regime: Regime::SzipAscii,
        prompt: render_prompt("!car"),
    }]
}

#[test]
fn template_is_pinned_and_verbatim() {
    assert_eq!(hex::encode(Sha256::digest(TEMPLATE.as_bytes())), TEMPLATE_SHA256);
    assert!(TEMPLATE.starts_with("Given the compressed context below, reconstruct the semantic atoms as JSON.\n"));
    assert!(TEMPLATE.ends_with("Compressed context:\n<COMPRESSED_REPRESENTATION>"));
    let tampered = TEMPLATE.replace("Do not infer", "Feel free to infer");
    assert!(matches!(PromptTemplate::verified(&tampered), Err(DecoderError::TemplateHash { .. })));
}

#[test]
fn prompt_ends_with_payload() {
    let set = load_case_set(&common::dataset_dir()).unwrap();
    let payload = representation_payload(&set, "travel", Regime::SzipAscii, Codec::builtin()).unwrap();
    let prompt = render_prompt(&payload);
    assert!(prompt.ends_with(&format!("Compressed context:\n{payload}")));
    let braces = render_prompt("@SAFE{a:\"}\"} {x}");
    assert!(braces.ends_with("@SAFE{a:\"}\"} {x}"));
}

#[test]
fn prompts_never_carry_original_text() {
    let set = load_case_set(&common::dataset_dir()).unwrap();
    let records = prompt_records(&set, &Regime::ALL, &PromptTemplate::builtin(), Codec::builtin()).unwrap();
    for r in &records {
        let case = set.get(&r.case_id).unwrap();
        let first_line = case.original_text.lines().find(|l| l.len() > 20).unwrap();
        assert!(!r.prompt.contains(first_line), "{} / {}", r.case_id, r.regime);
    }
}

#[test]
fn export_grid_order_and_determinism() {
    let set = load_case_set(&common::dataset_dir()).unwrap();
    let template = PromptTemplate::builtin();
    let records = prompt_records(&set, &Regime::ALL, &template, Codec::builtin()).unwrap();
    assert_eq!(records.len(), 30);
    let keys: Vec<(String, Regime)> = records.iter().map(|r| (r.case_id.clone(), r.regime)).collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);

    let a = export_prompts(&records, &template);
    let again = prompt_records(&set, &Regime::ALL, &template, Codec::builtin()).unwrap();
    assert_eq!(a, export_prompts(&again, &template));
    assert_eq!(a.lines().count(), 31);
    assert_eq!(parse_prompts(&a).unwrap(), records);

    let empty = prompt_records(&CaseSet::default(), &Regime::ALL, &template, Codec::builtin()).unwrap();
    let text = export_prompts(&empty, &template);
    assert_eq!(text.lines().count(), 1);
    assert!(text.contains("semzip-prompts/1"));
}

#[test]
fn fixed_stub_body_parses_everything() {
    let server = StubServer::start(StubBehavior::Fixed { status: 200, content: VALID.into() }).unwrap();
    let client = ChatClient::new(stub_config(server.endpoint())).unwrap();
    let set = load_case_set(&common::dataset_dir()).unwrap();
    let prompts = prompt_records(&set, &Regime::ALL, &PromptTemplate::builtin(), Codec::builtin()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let records = decode_batch(&prompts, &client, 4, Some(dir.path())).unwrap();
    assert_eq!(records.len(), 30);
    for r in &records {
        assert!(r.failure.is_none());
        assert_eq!(r.atoms.as_ref().unwrap().len(), 1);
        assert_eq!(r.attempts, 1);
        let archived = std::fs::read_to_string(dir.path().join(format!("{}.txt", r.stem()))).unwrap();
        assert_eq!(archived, VALID);
    }
}

#[test]
fn retries_after_rate_limits() {
    let server = StubServer::start(StubBehavior::Script(vec![
        (429, "slow down".into()),
        (429, "slow down".into()),
        (200, completion(VALID)),
    ]))
    .unwrap();
    let client = ChatClient::new(stub_config(server.endpoint())).unwrap();
    let records = decode_batch(&one_prompt(), &client, 1, None).unwrap();
    assert_eq!(records[0].attempts, 3);
    assert_eq!(records[0].atoms.as_ref().unwrap().len(), 1);
    assert_eq!(server.hits(), 3);
}

#[test]
fn exhausted_retries_are_recorded_not_fatal() {
    let server = StubServer::start(StubBehavior::Script(vec![(503, "down".into())])).unwrap();
    let mut config = stub_config(server.endpoint());
    config.max_attempts = 2;
    let client = ChatClient::new(config).unwrap();
    let records = decode_batch(&one_prompt(), &client, 1, None).unwrap();
    assert_eq!(records[0].attempts, 2);
    assert!(records[0].raw_response.is_none());
    assert!(records[0].failure.as_deref().unwrap().starts_with("transport"));
}

#[test]
fn prose_answer_is_a_parse_failure_with_raw_text_kept() {
    let prose = "Sure! The traveller wants to avoid cars.";
    let server = StubServer::start(StubBehavior::Fixed { status: 200, content: prose.into() }).unwrap();
    let client = ChatClient::new(stub_config(server.endpoint())).unwrap();
    let records = decode_batch(&one_prompt(), &client, 1, None).unwrap();
    assert_eq!(records[0].raw_response.as_deref(), Some(prose));
    assert!(records[0].atoms.is_none());
    assert!(records[0].failure.as_deref().unwrap().starts_with("parse"));
}

#[test]
fn rejected_credentials_abort() {
    let server = StubServer::start(StubBehavior::Script(vec![(401, "bad key".into())])).unwrap();
    let client = ChatClient::new(stub_config(server.endpoint())).unwrap();
    assert!(matches!(
        decode_batch(&one_prompt(), &client, 1, None),
        Err(DecoderError::Auth { status: 401, .. })
    ));
}

#[test]
fn sampling_is_pinned_unless_acknowledged() {
    let mut config = DecoderConfig::default();
    assert!(config.validate(false).is_ok());
    assert_eq!(config.max_output_tokens, 2048);
    config.temperature = 0.7;
    assert!(matches!(config.validate(false), Err(DecoderError::UnsafeSampling { .. })));
    assert!(config.validate(true).is_ok());
}

#[test]
fn missing_api_key_is_reported() {
    let config = DecoderConfig {
        api_key_env: Some("SEMZIP_TEST_SURELY_UNSET_VARIABLE".into()),
        ..DecoderConfig::default()
    };
    assert!(matches!(ChatClient::new(config), Err(DecoderError::MissingApiKey(_))));
}

#[test]
fn deterministic_stub_decodes_symbolic_payloads() {
    let server = StubServer::start(StubBehavior::Deterministic).unwrap();
    let client = ChatClient::new(stub_config(server.endpoint())).unwrap();
    let records = decode_batch(&one_prompt(), &client, 1, None).unwrap();
    let atoms = records[0].atoms.as_ref().unwrap();
    assert_eq!(atoms.len(), 1);
    assert_eq!(atoms[0].subject, "rental_car");
    assert_eq!(atoms[0].predicate, Predicate::Allowed);
    assert_eq!(atoms[0].value, Value::Bool(false));
}

#[test]
fn output_parsing_examples() {
    let one = parse_decoder_output(VALID, false).unwrap();
    assert_eq!(one.atoms.len(), 1);
    assert_eq!(one.atoms[0].atom_type, AtomType::Constraint);
    let fenced = format!("```json\n{VALID}\n```");
    assert_eq!(parse_decoder_output(&fenced, false).unwrap(), one);
    assert!(parse_decoder_output(r#"{"atoms": []}"#, false).unwrap().atoms.is_empty());
}
