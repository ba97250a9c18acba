use std::ffi::{c_char, CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use semzip_ffi::*;

const CAR: &str = r#"[{"type":"constraint","subject":"rental_car","predicate":"allowed","value":false,"modality":"must","scope":"task"}]"#;
const GOLD: &str = r#"{"atoms":[{"type":"constraint","subject":"rental_car","predicate":"allowed","value":false,"modality":"must","scope":"task","criticality":5,"critical":true}]}"#;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

unsafe fn take(p: *mut c_char) -> String {
    let s = CStr::from_ptr(p).to_str().unwrap().to_string();
    semzip_string_free(p);
    s
}

fn last_error() -> String {
    let p = semzip_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn render_parse_round_trip() {
    unsafe {
        let codec = semzip_codec_new();
        let mut out = ptr::null_mut();
        assert_eq!(semzip_render(codec, c(CAR).as_ptr(), c("szip_ascii").as_ptr(), &mut out), SemzipStatus::Ok);
        assert!(semzip_last_error().is_null());
        let payload = take(out);
        assert!(payload.contains("!car"), "{payload}");

        let mut back = ptr::null_mut();
        assert_eq!(
            semzip_parse(codec, c(&payload).as_ptr(), c("szip_ascii").as_ptr(), &mut back),
            SemzipStatus::Ok
        );
        let json = take(back);
        assert!(json.contains("\"rental_car\""), "{json}");
        semzip_codec_free(codec);
    }
}

#[test]
fn errors_are_codes_plus_messages() {
    unsafe {
        let codec = semzip_codec_new();
        let mut out = ptr::null_mut();
        assert_eq!(
            semzip_render(codec, c(CAR).as_ptr(), c("morse").as_ptr(), &mut out),
            SemzipStatus::InvalidArgument
        );
        assert!(last_error().contains("morse"));
        assert!(out.is_null());

        assert_eq!(
            semzip_render(codec, c("not json").as_ptr(), c("prose").as_ptr(), &mut out),
            SemzipStatus::Parse
        );
        assert_eq!(
            semzip_render(ptr::null(), c(CAR).as_ptr(), c("prose").as_ptr(), &mut out),
            SemzipStatus::NullArgument
        );
        assert_eq!(
            semzip_render(codec, c(CAR).as_ptr(), c("prose").as_ptr(), ptr::null_mut()),
            SemzipStatus::NullArgument
        );
        let bad_utf8 = [0xffu8, 0];
        assert_eq!(
            semzip_render(codec, bad_utf8.as_ptr().cast(), c("prose").as_ptr(), &mut out),
            SemzipStatus::InvalidUtf8
        );
        let evidence = CAR.replace("\"scope\":\"task\"", "\"scope\":\"task\",\"evidence\":\"no car\"");
        assert_eq!(
            semzip_render(codec, c(&evidence).as_ptr(), c("szip_ascii").as_ptr(), &mut out),
            SemzipStatus::Render
        );
        assert_eq!(
            semzip_parse(codec, c("@C1 T=trip {").as_ptr(), c("ccl_min").as_ptr(), &mut out),
            SemzipStatus::Parse
        );
        semzip_codec_free(codec);
        semzip_codec_free(ptr::null_mut());
        semzip_string_free(ptr::null_mut());
    }
}

#[test]
fn score_and_packet() {
    unsafe {
        let codec = semzip_codec_new();
        let mut out = ptr::null_mut();
        assert_eq!(semzip_score(codec, c(GOLD).as_ptr(), c(CAR).as_ptr(), 0.72, &mut out), SemzipStatus::Ok);
        let report: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(report["war"], 1.0);
        assert_eq!(report["car"], 1.0);

        assert_eq!(
            semzip_score(codec, c(GOLD).as_ptr(), c(CAR).as_ptr(), 1.5, &mut out),
            SemzipStatus::InvalidArgument
        );

        assert_eq!(semzip_packet(codec, c(CAR).as_ptr(), &mut out), SemzipStatus::Ok);
        let packet = take(out);
        assert!(packet.starts_with("@SAFE{rental_car"), "{packet}");
        assert!(packet.ends_with("@SZIP{}"), "{packet}");
        semzip_codec_free(codec);
    }
}

#[test]
fn custom_alias_table() {
    unsafe {
        let mut codec = ptr::null_mut();
        let table = "aliases/1\n[subjects]\nauto = rental_car\n";
        assert_eq!(semzip_codec_with_aliases(c(table).as_ptr(), &mut codec), SemzipStatus::Ok);
        semzip_codec_free(codec);
        assert_eq!(semzip_codec_with_aliases(c("[subjects]").as_ptr(), &mut codec), SemzipStatus::Parse);
    }
}

fn rank_file(name: &str) -> Option<PathBuf> {
    let spec = semzip::bpe::VocabSpec::by_name(name)?;
    semzip::bpe::find_rank_file(&spec, &[]).ok()
}

#[test]
fn vocabulary_counts_and_gain() {
    let Some(path) = rank_file("cl100k_base") else {
        eprintln!("cl100k_base rank file not found; skipping");
        return;
    };
    unsafe {
        let mut vocab = ptr::null_mut();
        let path = c(path.to_str().unwrap());
        assert_eq!(semzip_vocab_load(c("cl100k_base").as_ptr(), path.as_ptr(), &mut vocab), SemzipStatus::Ok);
        let mut n = 0usize;
        assert_eq!(semzip_vocab_count(vocab, c("").as_ptr(), &mut n), SemzipStatus::Ok);
        assert_eq!(n, 0);
        assert_eq!(semzip_vocab_count(vocab, c("hello world").as_ptr(), &mut n), SemzipStatus::Ok);
        assert_eq!(n, 2);
        let mut gain = 0.0;
        assert_eq!(
            semzip_token_gain(vocab, c("hello world").as_ptr(), c("hello").as_ptr(), &mut gain),
            SemzipStatus::Ok
        );
        assert_eq!(gain, 0.5);
        assert_eq!(
            semzip_token_gain(vocab, c("").as_ptr(), c("x").as_ptr(), &mut gain),
            SemzipStatus::InvalidArgument
        );
        semzip_vocab_free(vocab);

        // the o200k name with the cl100k file fails the hash check
        assert_eq!(semzip_vocab_load(c("o200k_base").as_ptr(), path.as_ptr(), &mut vocab), SemzipStatus::Vocabulary);
        assert_eq!(semzip_vocab_load(c("gpt2").as_ptr(), path.as_ptr(), &mut vocab), SemzipStatus::InvalidArgument);
    }
}

#[test]
fn version_is_the_package_version() {
    let v = unsafe { CStr::from_ptr(semzip_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

fn target_dir() -> PathBuf {
    // <target>/<profile>/deps/<test binary>
    std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf()
}

fn have(tool: &str) -> bool {
    Command::new(tool).arg("--version").output().is_ok()
}

#[test]
fn header_compiles_and_links_from_c() {
    let header_dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let lib = target_dir().join("libsemzip_ffi.a");
    if !have("cc") || !lib.is_file() {
        eprintln!("no C compiler or static library at {}; skipping", lib.display());
        return;
    }
    let tmp = tempfile::tempdir().unwrap();
    let exe = tmp.path().join("smoke");
    let status = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror"])
        .arg("-I")
        .arg(&header_dir)
        .arg(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C smoke program failed to build");
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "ok");
}
