use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use laed::config::ModelConfig;
use laed::corpus::{split_dialogs, RawCorpus};
use laed::synthetic::{markov_dialogs, Transition};
use laed::training::{train, Dataset};
use laed_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(laed_last_error()) }.to_string_lossy().into_owned()
}

fn tiny_run(dir: &Path, variant: &str) {
    let raw = markov_dialogs(40, 4, Transition::Deterministic, 1);
    let (a, b, c) = split_dialogs(&raw.dialogs, 0);
    let w = |dialogs| RawCorpus { dialogs, dropped_empty: 0 };
    let data = Dataset::from_raw(&w(a), &w(b), &w(c), None, 100, true).unwrap();
    let mut config = ModelConfig::default();
    for (k, v) in [
        ("variant", variant),
        ("M", "2"),
        ("K", "3"),
        ("embed_dim", "4"),
        ("recognizer_hidden", "5"),
        ("decoder_hidden", "5"),
        ("context_hidden", "5"),
        ("utterance_hidden", "3"),
        ("policy_hidden", "4"),
        ("batch_size", "8"),
        ("max_steps", "3"),
        ("max_len", "6"),
    ] {
        config.set(k, v).unwrap();
    }
    train(&config, &data, Some(dir)).unwrap();
}

fn load(dir: &Path) -> *mut LaedModel {
    let path = CString::new(dir.to_str().unwrap()).unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { laed_model_load(path.as_ptr(), &mut model) }, LaedStatus::Ok, "{}", last_error());
    assert!(!model.is_null());
    model
}

#[test]
fn metrics_match_direct_sums() {
    let probs = [0.9, 0.1, 0.7, 0.3];
    let (mut bpr, mut mi) = (f64::NAN, f64::NAN);
    unsafe {
        assert_eq!(laed_batch_prior_regularization(probs.as_ptr(), 2, 1, 2, &mut bpr), LaedStatus::Ok);
        assert_eq!(laed_mutual_information(probs.as_ptr(), 2, 1, 2, &mut mi), LaedStatus::Ok);
    }
    let h = |p: f64| -(p * p.ln() + (1.0 - p) * (1.0 - p).ln());
    assert!((bpr - (0.8 * 1.6f64.ln() + 0.2 * 0.4f64.ln())).abs() < 1e-12);
    assert!((mi - (h(0.8) - 0.5 * (h(0.9) + h(0.7)))).abs() < 1e-12);

    let counts = [5u64, 0, 0, 7];
    let mut hom = f64::NAN;
    assert_eq!(unsafe { laed_homogeneity(counts.as_ptr(), 2, 2, &mut hom) }, LaedStatus::Ok);
    assert!((hom - 1.0).abs() < 1e-12);
    let mut ppl = f64::NAN;
    assert_eq!(unsafe { laed_perplexity(10.0, 5, &mut ppl) }, LaedStatus::Ok);
    assert!((ppl - 2f64.exp()).abs() < 1e-12);
}

#[test]
fn bad_inputs_map_to_status_codes() {
    let not_simplex = [0.5, 0.6];
    let mut v = 0.0;
    unsafe {
        assert_eq!(laed_batch_prior_regularization(not_simplex.as_ptr(), 1, 1, 2, &mut v), LaedStatus::Config);
        assert!(!last_error().is_empty());
        assert_eq!(laed_mutual_information(ptr::null(), 1, 1, 2, &mut v), LaedStatus::NullOrInvalidPointer);
        assert_eq!(laed_perplexity(1.0, 0, &mut v), LaedStatus::Config);
        assert_eq!(laed_homogeneity([0u64; 4].as_ptr(), 2, 2, &mut v), LaedStatus::Config);
    }
    let dir = tempfile::tempdir().unwrap();
    let missing = CString::new(dir.path().join("none").to_str().unwrap()).unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { laed_model_load(missing.as_ptr(), &mut model) }, LaedStatus::Runtime);
    assert!(model.is_null());
    assert!(last_error().contains("missing run artifact"), "{}", last_error());
    unsafe { laed_model_free(ptr::null_mut()) };
    unsafe { laed_string_free(ptr::null_mut()) };
}

#[test]
fn laed_run_recognizes_and_generates() {
    let dir = tempfile::tempdir().unwrap();
    tiny_run(dir.path(), "ae-ed");
    let model = load(dir.path());
    let (mut m, mut k) = (0, 0);
    assert_eq!(unsafe { laed_model_shape(model, &mut m, &mut k) }, LaedStatus::Ok);
    assert_eq!((m, k), (2, 3));

    let text = CString::new("please cook the salad now").unwrap();
    let mut codes = [usize::MAX; 2];
    assert_eq!(unsafe { laed_model_recognize(model, text.as_ptr(), codes.as_mut_ptr(), 2) }, LaedStatus::Ok);
    assert!(codes.iter().all(|&c| c < 3));
    assert_eq!(unsafe { laed_model_recognize(model, text.as_ptr(), codes.as_mut_ptr(), 1) }, LaedStatus::Config);

    let context = CString::new("i want to cook the soup\ncan you play a song").unwrap();
    let action = CString::new("1-2").unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { laed_model_generate(model, context.as_ptr(), action.as_ptr(), &mut out) }, LaedStatus::Ok);
    let json: serde_json::Value = serde_json::from_str(unsafe { CStr::from_ptr(out) }.to_str().unwrap()).unwrap();
    assert_eq!(json["action"], "1-2");
    assert!(json["response"].is_string());
    unsafe { laed_string_free(out) };

    let mut out = ptr::null_mut();
    assert_eq!(unsafe { laed_model_generate(model, context.as_ptr(), ptr::null(), &mut out) }, LaedStatus::Ok);
    unsafe { laed_string_free(out) };
    let bad = CString::new("1-7").unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { laed_model_generate(model, context.as_ptr(), bad.as_ptr(), &mut out) }, LaedStatus::Config);
    assert!(out.is_null());
    unsafe { laed_model_free(model) };
}

#[test]
fn sentence_run_cannot_generate() {
    let dir = tempfile::tempdir().unwrap();
    tiny_run(dir.path(), "di-vst");
    let model = load(dir.path());
    let context = CString::new("can you play a song").unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { laed_model_generate(model, context.as_ptr(), ptr::null(), &mut out) }, LaedStatus::Config);
    assert!(last_error().contains("ae-ed or st-ed"));
    unsafe { laed_model_free(model) };
}

#[test]
fn header_declares_the_exports() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/laed.h")).unwrap();
    for f in [
        "laed_last_error",
        "laed_model_load",
        "laed_model_free",
        "laed_model_shape",
        "laed_model_recognize",
        "laed_model_generate",
        "laed_string_free",
        "laed_batch_prior_regularization",
        "laed_mutual_information",
        "laed_homogeneity",
        "laed_perplexity",
    ] {
        assert!(header.contains(&format!(" {f}(")) || header.contains(&format!("*{f}(")), "{f}");
    }
    assert!(header.contains("typedef struct LaedModel LaedModel;"));
}
