//! C ABI over the semzip codecs, tokenizer, scorer and packetizer.
//!
//! Conventions:
//!
//! * Every fallible function returns a [`SemzipStatus`]; `SEMZIP_STATUS_OK` is 0.
//!   On any other status, [`semzip_last_error`] describes the failure for the
//!   calling thread until its next call into this library.
//! * Strings passed in are NUL-terminated UTF-8 and borrowed for the call only.
//! * Strings handed out through `out` parameters are owned by the caller and
//!   must be released with [`semzip_string_free`].
//! * Handles ([`SemzipCodec`], [`SemzipVocab`]) are opaque; release them with
//!   their `_free` function. Freeing NULL is a no-op.
//! * Atom lists cross the boundary as JSON: a bare array of atoms or an
//!   `{"atoms": [...]}` object. Gold lists also carry `criticality` and
//!   `critical` on each atom.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use semzip::atom::{validate_atom, validate_gold_atom, GoldAtom, SemanticAtom};
use semzip::bpe::{gain_from_counts, BpeVocabulary, VocabSpec};
use semzip::case::Regime;
use semzip::codec::Codec;
use semzip::matching::{match_atoms, SimilarityWeights};
use semzip::normalize::AliasTable;
use semzip::packet::Packetizer;
use serde::de::DeserializeOwned;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SemzipStatus {
    Ok = 0,
    /// A required pointer argument was NULL.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// An argument was well-formed but not acceptable (unknown regime,
    /// threshold out of range, invalid atom, ...).
    InvalidArgument = 3,
    /// Input text or JSON could not be parsed.
    Parse = 4,
    /// Atoms could not be expressed in the requested representation.
    Render = 5,
    /// A vocabulary file could not be read or did not match its hash.
    Vocabulary = 6,
    /// A Rust panic was caught at the boundary; this is a bug.
    Internal = 7,
}

/// Opaque codec handle (alias table plus grammar tables).
pub struct SemzipCodec {
    codec: Codec,
    packetizer: Packetizer,
}

/// Opaque tokenizer vocabulary handle.
pub struct SemzipVocab {
    vocab: BpeVocabulary,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(SemzipStatus, String);

impl Failure {
    fn new(status: SemzipStatus, message: impl ToString) -> Failure {
        Failure(status, message.to_string())
    }
}

fn set_last_error(message: Option<String>) {
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = message.map(|m| CString::new(m.replace('\0', " ")).expect("NULs removed"));
    });
}

/// Runs `f` behind a panic guard and turns its outcome into a status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SemzipStatus {
    set_last_error(None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SemzipStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_last_error(Some(message));
            status
        }
        Err(panic) => {
            let message = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(Some(format!("internal error: {message}")));
            SemzipStatus::Internal
        }
    }
}

unsafe fn arg_str<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(SemzipStatus::NullArgument, format!("`{name}` is NULL")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(SemzipStatus::InvalidUtf8, format!("`{name}` is not UTF-8")))
}

unsafe fn arg_ref<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure::new(SemzipStatus::NullArgument, format!("`{name}` is NULL")))
}

unsafe fn put<T>(out: *mut T, value: T, name: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::new(SemzipStatus::NullArgument, format!("`{name}` is NULL")));
    }
    out.write(value);
    Ok(())
}

unsafe fn put_string(out: *mut *mut c_char, value: String) -> Result<(), Failure> {
    let c = CString::new(value).map_err(|_| Failure::new(SemzipStatus::Internal, "output contains NUL"))?;
    put(out, c.into_raw(), "out")
}

fn parse_regime(s: &str) -> Result<Regime, Failure> {
    s.parse()
        .map_err(|_| Failure::new(SemzipStatus::InvalidArgument, format!("unknown regime `{s}`")))
}

/// Accepts `[...]` or `{"atoms": [...]}`.
fn parse_list<T: DeserializeOwned>(json: &str) -> Result<Vec<T>, Failure> {
    let value: serde_json::Value = serde_json::from_str(json).map_err(|e| Failure::new(SemzipStatus::Parse, e))?;
    let list = match value {
        serde_json::Value::Object(mut map) => map
            .remove("atoms")
            .ok_or_else(|| Failure::new(SemzipStatus::Parse, "object has no `atoms` key"))?,
        other => other,
    };
    serde_json::from_value(list).map_err(|e| Failure::new(SemzipStatus::Parse, e))
}

fn parse_atoms(json: &str) -> Result<Vec<SemanticAtom>, Failure> {
    let atoms: Vec<SemanticAtom> = parse_list(json)?;
    for (i, a) in atoms.iter().enumerate() {
        let report = validate_atom(a);
        if !report.is_ok() {
            return Err(Failure::new(SemzipStatus::InvalidArgument, format!("atom {i}: {report}")));
        }
    }
    Ok(atoms)
}

fn parse_gold(json: &str) -> Result<Vec<GoldAtom>, Failure> {
    let gold: Vec<GoldAtom> = parse_list(json)?;
    for (i, g) in gold.iter().enumerate() {
        let report = validate_gold_atom(g);
        if !report.is_ok() {
            return Err(Failure::new(SemzipStatus::InvalidArgument, format!("gold atom {i}: {report}")));
        }
    }
    Ok(gold)
}

fn atoms_json(atoms: &[SemanticAtom]) -> String {
    serde_json::json!({ "atoms": atoms }).to_string()
}

/// Library version, a static string.
#[no_mangle]
pub extern "C" fn semzip_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the calling thread's last failure, or NULL after a success.
/// Valid until the thread's next call into this library; do not free.
#[no_mangle]
pub extern "C" fn semzip_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned through an `out` parameter.
///
/// # Safety
/// `s` must be NULL or a pointer obtained from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn semzip_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// A codec with the built-in alias table.
#[no_mangle]
pub extern "C" fn semzip_codec_new() -> *mut SemzipCodec {
    Box::into_raw(Box::new(SemzipCodec {
        codec: Codec::new(AliasTable::builtin()),
        packetizer: Packetizer::default(),
    }))
}

/// A codec whose alias table is parsed from `aliases` (an `aliases/1` document).
///
/// # Safety
/// `aliases` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn semzip_codec_with_aliases(aliases: *const c_char, out: *mut *mut SemzipCodec) -> SemzipStatus {
    guard(|| {
        let text = arg_str(aliases, "aliases")?;
        let table = AliasTable::parse(text).map_err(|e| Failure::new(SemzipStatus::Parse, e))?;
        let packetizer = Packetizer {
            aliases: table.clone(),
            ..Packetizer::default()
        };
        let handle = Box::new(SemzipCodec {
            codec: Codec::new(table),
            packetizer,
        });
        put(out, Box::into_raw(handle), "out")
    })
}

/// # Safety
/// `codec` must be NULL or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn semzip_codec_free(codec: *mut SemzipCodec) {
    if !codec.is_null() {
        drop(Box::from_raw(codec));
    }
}

/// Renders `atoms_json` into `regime` (`prose`, `canonical_structured`,
/// `ccl_core`, `ccl_min`, `szip_ascii`, `szip_emoji`).
///
/// # Safety
/// Pointer arguments must be valid; `out` receives a string to free with
/// [`semzip_string_free`].
#[no_mangle]
pub unsafe extern "C" fn semzip_render(
    codec: *const SemzipCodec,
    atoms_json: *const c_char,
    regime: *const c_char,
    out: *mut *mut c_char,
) -> SemzipStatus {
    guard(|| {
        let codec = arg_ref(codec, "codec")?;
        let atoms = parse_atoms(arg_str(atoms_json, "atoms_json")?)?;
        let regime = parse_regime(arg_str(regime, "regime")?)?;
        let rendering = codec
            .codec
            .render(&atoms, regime, None)
            .map_err(|e| Failure::new(SemzipStatus::Render, e))?;
        put_string(out, rendering.payload)
    })
}

/// Parses a symbolic payload (`ccl_core`, `ccl_min` or `szip_ascii`) back into
/// an `{"atoms": [...]}` document.
///
/// # Safety
/// As for [`semzip_render`].
#[no_mangle]
pub unsafe extern "C" fn semzip_parse(
    codec: *const SemzipCodec,
    payload: *const c_char,
    regime: *const c_char,
    out: *mut *mut c_char,
) -> SemzipStatus {
    guard(|| {
        let codec = arg_ref(codec, "codec")?;
        let payload = arg_str(payload, "payload")?;
        let regime = parse_regime(arg_str(regime, "regime")?)?;
        let atoms = codec
            .codec
            .parse_symbolic(payload, regime, None)
            .map_err(|e| Failure::new(SemzipStatus::Parse, e))?;
        put_string(out, atoms_json(&atoms))
    })
}

/// Builds a hybrid `@SAFE{...}` / `@SZIP{...}` packet.
///
/// # Safety
/// As for [`semzip_render`].
#[no_mangle]
pub unsafe extern "C" fn semzip_packet(
    codec: *const SemzipCodec,
    atoms_json: *const c_char,
    out: *mut *mut c_char,
) -> SemzipStatus {
    guard(|| {
        let codec = arg_ref(codec, "codec")?;
        let atoms = parse_atoms(arg_str(atoms_json, "atoms_json")?)?;
        let packet = codec
            .packetizer
            .build_packet(&atoms, None, &codec.codec)
            .map_err(|e| Failure::new(SemzipStatus::Render, e))?;
        put_string(out, packet.text())
    })
}

/// Matches decoded atoms against gold atoms at `threshold` with the default
/// similarity weights; `out` receives the match report as JSON.
///
/// # Safety
/// As for [`semzip_render`].
#[no_mangle]
pub unsafe extern "C" fn semzip_score(
    codec: *const SemzipCodec,
    gold_json: *const c_char,
    decoded_json: *const c_char,
    threshold: f64,
    out: *mut *mut c_char,
) -> SemzipStatus {
    guard(|| {
        let codec = arg_ref(codec, "codec")?;
        let gold = parse_gold(arg_str(gold_json, "gold_json")?)?;
        let decoded = parse_atoms(arg_str(decoded_json, "decoded_json")?)?;
        let report = match_atoms(&gold, &decoded, threshold, &SimilarityWeights::default(), &codec.codec.table)
            .map_err(|e| Failure::new(SemzipStatus::InvalidArgument, e))?;
        put_string(out, serde_json::to_string(&report).expect("report serializes"))
    })
}

/// Loads a standard vocabulary (`o200k_base` or `cl100k_base`) from its rank
/// file, checking the file's published SHA-256.
///
/// # Safety
/// String arguments must be valid C strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn semzip_vocab_load(
    name: *const c_char,
    rank_file: *const c_char,
    out: *mut *mut SemzipVocab,
) -> SemzipStatus {
    guard(|| {
        let name = arg_str(name, "name")?;
        let spec = VocabSpec::by_name(name)
            .ok_or_else(|| Failure::new(SemzipStatus::InvalidArgument, format!("unknown vocabulary `{name}`")))?;
        let path = arg_str(rank_file, "rank_file")?;
        let vocab = BpeVocabulary::load_verified(Path::new(path), &spec)
            .map_err(|e| Failure::new(SemzipStatus::Vocabulary, e))?;
        put(out, Box::into_raw(Box::new(SemzipVocab { vocab })), "out")
    })
}

/// # Safety
/// `vocab` must be NULL or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn semzip_vocab_free(vocab: *mut SemzipVocab) {
    if !vocab.is_null() {
        drop(Box::from_raw(vocab));
    }
}

/// Number of tokens in `text`.
///
/// # Safety
/// Pointer arguments must be valid.
#[no_mangle]
pub unsafe extern "C" fn semzip_vocab_count(
    vocab: *const SemzipVocab,
    text: *const c_char,
    out: *mut usize,
) -> SemzipStatus {
    guard(|| {
        let vocab = arg_ref(vocab, "vocab")?;
        let text = arg_str(text, "text")?;
        put(out, vocab.vocab.count(text), "out")
    })
}

/// Token gain `1 - compressed/original` of `compressed` relative to `original`.
///
/// # Safety
/// Pointer arguments must be valid.
#[no_mangle]
pub unsafe extern "C" fn semzip_token_gain(
    vocab: *const SemzipVocab,
    original: *const c_char,
    compressed: *const c_char,
    out: *mut f64,
) -> SemzipStatus {
    guard(|| {
        let vocab = arg_ref(vocab, "vocab")?;
        let original = vocab.vocab.count(arg_str(original, "original")?);
        let compressed = vocab.vocab.count(arg_str(compressed, "compressed")?);
        let gain = gain_from_counts(original, compressed).map_err(|e| Failure::new(SemzipStatus::InvalidArgument, e))?;
        put(out, gain, "out")
    })
}
