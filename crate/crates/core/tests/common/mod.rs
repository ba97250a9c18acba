#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use semzip::bpe::{BpeVocabulary, VocabSpec, CL100K_BASE, O200K_BASE};

pub fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn dataset_dir() -> PathBuf {
    workspace_root().join("dataset")
}

/// Rank file lookup: `SEMZIP_<SHORT>_PATH`, then `<workspace>/vocab/`, then the
/// copy bundled with the tiktoken-rs dev-dependency in the cargo registry.
pub fn rank_file(spec: &VocabSpec) -> PathBuf {
    let file = format!("{}.tiktoken", spec.name);
    let env_key = format!("SEMZIP_{}_PATH", spec.short_name().to_uppercase());
    if let Ok(p) = std::env::var(&env_key) {
        return PathBuf::from(p);
    }
    let local = workspace_root().join("vocab").join(&file);
    if local.exists() {
        return local;
    }
    let cargo_home = std::env::var("CARGO_HOME")
        .map(PathBuf::from)
        .unwrap_or_else(|_| PathBuf::from(std::env::var("HOME").unwrap()).join(".cargo"));
    let registry = cargo_home.join("registry/src");
    for index in std::fs::read_dir(&registry).expect("cargo registry present") {
        let index = index.unwrap().path();
        let Ok(entries) = std::fs::read_dir(&index) else { continue };
        for entry in entries {
            let path = entry.unwrap().path();
            let name = path.file_name().unwrap().to_string_lossy().to_string();
            if name.starts_with("tiktoken-rs-") {
                let candidate = path.join("assets").join(&file);
                if candidate.exists() {
                    return candidate;
                }
            }
        }
    }
    panic!("no rank file for {} (set {env_key})", spec.name);
}

pub fn o200k() -> &'static BpeVocabulary {
    static V: OnceLock<BpeVocabulary> = OnceLock::new();
    V.get_or_init(|| BpeVocabulary::load(&rank_file(&O200K_BASE), &O200K_BASE).unwrap())
}

pub fn cl100k() -> &'static BpeVocabulary {
    static V: OnceLock<BpeVocabulary> = OnceLock::new();
    V.get_or_init(|| BpeVocabulary::load(&rank_file(&CL100K_BASE), &CL100K_BASE).unwrap())
}
