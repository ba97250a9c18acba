//! Conformance of the BPE counter against reference-tokenizer golden vectors.
//!
//! `bpe_golden.jsonl` was produced by `record_golden` (tiktoken-rs reference
//! implementation) before the counter existed. Regenerate with
//! `cargo test -p semzip --test bpe_conformance -- --ignored record_golden`.

mod common;

use std::fs;
use std::path::PathBuf;

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn corpus() -> Vec<String> {
    fs::read_to_string(data("bpe_corpus.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
#[ignore]
fn record_golden() {
    let cl = tiktoken_rs::cl100k_base().unwrap();
    let o2 = tiktoken_rs::o200k_base().unwrap();
    let mut out = String::new();
    for text in corpus() {
        let line = serde_json::json!({
            "text": text,
            "cl100k_base": cl.encode_ordinary(&text).len(),
            "o200k_base": o2.encode_ordinary(&text).len(),
        });
        out.push_str(&line.to_string());
        out.push('\n');
    }
    fs::write(data("bpe_golden.jsonl"), out).unwrap();
}

#[derive(serde::Deserialize)]
struct Golden {
    text: String,
    cl100k_base: usize,
    o200k_base: usize,
}

fn golden() -> Vec<Golden> {
    fs::read_to_string(data("bpe_golden.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn golden_file_covers_corpus() {
    let g = golden();
    assert_eq!(g.len(), 50);
    let texts: Vec<String> = g.iter().map(|g| g.text.clone()).collect();
    assert_eq!(texts, corpus());
}

#[test]
fn counts_match_golden_vectors() {
    let (cl, o2) = (common::cl100k(), common::o200k());
    let mut mismatches = Vec::new();
    for g in golden() {
        let (c, o) = (cl.count(&g.text), o2.count(&g.text));
        if c != g.cl100k_base || o != g.o200k_base {
            mismatches.push(format!(
                "{:?}: cl100k {c} vs {}, o200k {o} vs {}",
                g.text, g.cl100k_base, g.o200k_base
            ));
        }
    }
    assert!(mismatches.is_empty(), "{}", mismatches.join("\n"));
}

#[test]
fn rank_files_are_the_published_ones() {
    assert_eq!(common::cl100k().sha256(), semzip::bpe::CL100K_SHA256);
    assert_eq!(common::o200k().sha256(), semzip::bpe::O200K_SHA256);
}

/// count(a+b) <= count(a) + count(b) is not a BPE theorem: when the join
/// fuses two words into one pre-token span the merge sequence changes. The
/// bound must hold exactly where the reference tokenizer's does, and the
/// concatenated counts must agree with it everywhere.
#[test]
fn concatenation_bound_tracks_reference() {
    let texts = corpus();
    let reference = [
        (common::cl100k(), tiktoken_rs::cl100k_base().unwrap()),
        (common::o200k(), tiktoken_rs::o200k_base().unwrap()),
    ];
    let mut violations = Vec::new();
    for (vocab, oracle) in &reference {
        for pair in texts.windows(2) {
            let joined = format!("{}{}", pair[0], pair[1]);
            let ours = vocab.count(&joined);
            assert_eq!(ours, oracle.encode_ordinary(&joined).len(), "{joined:?}");
            let oracle_holds = oracle.encode_ordinary(&joined).len()
                <= oracle.encode_ordinary(&pair[0]).len() + oracle.encode_ordinary(&pair[1]).len();
            let holds = ours <= vocab.count(&pair[0]) + vocab.count(&pair[1]);
            assert_eq!(holds, oracle_holds, "{joined:?}");
            if !holds {
                violations.push(format!("{} {:?}+{:?}", vocab.name(), pair[0], pair[1]));
            }
        }
    }
    // both fusions are word-joins at the boundary ("g"+"snake", "Parts"+"don")
    assert_eq!(violations.len(), 4, "{violations:?}");
}

#[test]
fn special_token_text_is_plain() {
    let o2 = common::o200k();
    assert!(o2.count("<|endoftext|>") > 1);
}

#[test]
fn empty_string_is_zero() {
    assert_eq!(common::cl100k().count_tokens("").count, 0);
    assert_eq!(common::o200k().count(""), 0);
}
