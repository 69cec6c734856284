use std::ffi::{CStr, CString};
use std::ptr;

use predmodel_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = pm_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn take_string(p: *mut std::os::raw::c_char) -> String {
    let s = unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned();
    unsafe { pm_string_free(p) };
    s
}

fn generate(kind: &str, params: &str, seed: u64) -> *mut PmBench {
    let mut bench = ptr::null_mut();
    let status = unsafe { pm_bench_generate(c(kind).as_ptr(), c(params).as_ptr(), seed, &mut bench) };
    assert_eq!(status, PmStatus::Ok, "{}", last_error());
    bench
}

#[test]
fn generate_fit_evaluate_round_trip() {
    let bench = generate("clustering", r#"{"K": 4, "n": 256}"#, 0);
    assert_eq!(unsafe { pm_bench_len(bench) }, 256);

    let mut fit = ptr::null_mut();
    let status = unsafe { pm_fit(bench, c(r#"{"K": 4, "S": 2, "seed": 0}"#).as_ptr(), &mut fit) };
    assert_eq!(status, PmStatus::Ok, "{}", last_error());

    let mut fitness = 0.0;
    assert_eq!(unsafe { pm_fit_fitness(fit, &mut fitness) }, PmStatus::Ok);
    assert!(fitness.is_finite() && fitness < 0.0);

    assert_eq!(unsafe { pm_fit_predicate_count(fit) }, 4);
    let mut text = ptr::null_mut();
    assert_eq!(unsafe { pm_fit_predicate(fit, 0, &mut text) }, PmStatus::Ok);
    assert!(!take_string(text).is_empty());
    assert_eq!(unsafe { pm_fit_predicate(fit, 4, &mut text) }, PmStatus::InvalidArgument);

    let mut json = ptr::null_mut();
    assert_eq!(unsafe { pm_fit_to_json(fit, &mut json) }, PmStatus::Ok);
    let value: serde_json::Value = serde_json::from_str(&take_string(json)).unwrap();
    assert_eq!(value["predicates"].as_array().unwrap().len(), 4);

    let mut f1 = -1.0;
    assert_eq!(unsafe { pm_evaluate(bench, fit, &mut f1) }, PmStatus::Ok);
    assert!((0.0..=1.0).contains(&f1));

    unsafe {
        pm_fit_free(fit);
        pm_bench_free(bench);
    }
}

#[test]
fn written_bench_loads_back() {
    let dir = tempfile::tempdir().unwrap();
    let path = c(dir.path().to_str().unwrap());
    let bench = generate("timeseries", r#"{"T": 48, "mode": "topic"}"#, 3);
    assert_eq!(unsafe { pm_bench_write(bench, path.as_ptr()) }, PmStatus::Ok);

    let mut loaded = ptr::null_mut();
    assert_eq!(unsafe { pm_bench_load(path.as_ptr(), c("timeseries").as_ptr(), &mut loaded) }, PmStatus::Ok);
    assert_eq!(unsafe { pm_bench_len(loaded) }, 48);
    unsafe {
        pm_bench_free(loaded);
        pm_bench_free(bench);
    }
}

#[test]
fn errors_are_reported() {
    let mut bench = ptr::null_mut();
    let status = unsafe { pm_bench_generate(c("galaxies").as_ptr(), ptr::null(), 0, &mut bench) };
    assert_eq!(status, PmStatus::InvalidArgument);
    assert!(last_error().contains("galaxies"));
    assert!(bench.is_null());

    let status = unsafe { pm_bench_generate(ptr::null(), ptr::null(), 0, &mut bench) };
    assert_eq!(status, PmStatus::NullPointer);

    let status = unsafe { pm_bench_generate(c("clustering").as_ptr(), c("{not json").as_ptr(), 0, &mut bench) };
    assert_eq!(status, PmStatus::InvalidArgument);

    let mut fitness = 0.0;
    assert_eq!(unsafe { pm_fit_fitness(ptr::null(), &mut fitness) }, PmStatus::NullPointer);
    assert!(last_error().contains("null"));

    let missing = c("/nonexistent/bench");
    let status = unsafe { pm_bench_load(missing.as_ptr(), c("clustering").as_ptr(), &mut bench) };
    assert_eq!(status, PmStatus::Io);

    // Freeing NULL is a no-op.
    unsafe {
        pm_bench_free(ptr::null_mut());
        pm_fit_free(ptr::null_mut());
        pm_string_free(ptr::null_mut());
    }
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/predmodel.h")).unwrap();
    for name in [
        "PM_STATUS_OK",
        "PM_STATUS_NULL_POINTER",
        "typedef struct PmBench PmBench",
        "typedef struct PmFit PmFit",
        "pm_bench_generate",
        "pm_bench_load",
        "pm_fit(",
        "pm_evaluate",
        "pm_last_error_message",
        "pm_string_free",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}
