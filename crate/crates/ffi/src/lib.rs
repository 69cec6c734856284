//! C ABI over `predmodel`.
//!
//! Handles are opaque and owned by the caller once returned; release them
//! with the matching `*_free`. Every fallible call returns a [`PmStatus`] and
//! leaves a message retrievable with [`pm_last_error_message`] on failure.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::Arc;

use serde::Deserialize;

use predmodel::benchgen::{
    gen_classification, gen_clustering, gen_hierarchy, gen_timeseries, load_references, BenchmarkInstance,
    SyntheticWorld, TimeseriesMode,
};
use predmodel::corpus::{load_corpus, load_embeddings, CorpusKind};
use predmodel::evaluation::{evaluate, MockJudge};
use predmodel::grounding::Grounder;
use predmodel::learner::{fit, Backends, FitConfig, FitResult};
use predmodel::proposer::{oracle_vocabulary, OracleProposer};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    Fit = 5,
    Panic = 6,
}

/// A generated or loaded benchmark instance.
pub struct PmBench {
    inner: BenchmarkInstance,
}

/// The result of one fit.
pub struct PmFit {
    inner: FitResult,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

/// Message of the last failure on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

struct Failure(PmStatus, String);

impl From<predmodel::Error> for Failure {
    fn from(e: predmodel::Error) -> Self {
        let status = match e {
            predmodel::Error::Io { .. } => PmStatus::Io,
            predmodel::Error::Config(_) => PmStatus::InvalidArgument,
            _ => PmStatus::Fit,
        };
        Failure(status, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PmStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            PmStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(PmStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(PmStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

/// Optional JSON argument: NULL or empty means `{}`.
unsafe fn json_arg<T: for<'de> Deserialize<'de>>(p: *const c_char, name: &str) -> Result<T, Failure> {
    let text = if p.is_null() { "" } else { str_arg(p, name)? };
    let text = if text.trim().is_empty() { "{}" } else { text };
    serde_json::from_str(text).map_err(|e| Failure(PmStatus::InvalidArgument, format!("{name}: {e}")))
}

unsafe fn out_arg<'a, T>(p: *mut *mut T, name: &str) -> Result<&'a mut *mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| Failure(PmStatus::NullPointer, format!("{name} is null")))
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure(PmStatus::NullPointer, format!("{name} is null")))
}

#[derive(Deserialize)]
#[serde(default)]
struct BenchParams {
    group: String,
    #[serde(rename = "K")]
    k: usize,
    n: usize,
    #[serde(rename = "T")]
    t: usize,
    mode: String,
    per_group: Option<usize>,
    classes: usize,
    noise: f64,
}

impl Default for BenchParams {
    fn default() -> Self {
        BenchParams {
            group: "topic".into(),
            k: 4,
            n: 512,
            t: 256,
            mode: "all".into(),
            per_group: None,
            classes: 20,
            noise: 0.1,
        }
    }
}

/// Generates a synthetic benchmark. `kind` is one of clustering,
/// timeseries, classification or hierarchy; `params_json` may be NULL.
///
/// # Safety
/// String arguments must be NULL or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pm_bench_generate(
    kind: *const c_char,
    params_json: *const c_char,
    seed: u64,
    out: *mut *mut PmBench,
) -> PmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let kind = str_arg(kind, "kind")?;
        let p: BenchParams = json_arg(params_json, "params_json")?;
        let world = SyntheticWorld::news();
        let inner = match kind {
            "clustering" => gen_clustering(&world, &p.group, p.k, p.n, p.noise, seed)?,
            "timeseries" => {
                let mode: TimeseriesMode = p.mode.parse()?;
                gen_timeseries(&world, p.t, mode, p.per_group, p.noise, seed)?
            }
            "classification" => gen_classification(&world, p.classes, p.n, p.noise, seed)?,
            "hierarchy" => gen_hierarchy(p.n, p.noise, seed)?,
            other => return Err(Failure(PmStatus::InvalidArgument, format!("unknown kind {other:?}"))),
        };
        *out = Box::into_raw(Box::new(PmBench { inner }));
        Ok(())
    })
}

/// Loads a benchmark directory written by `pm_bench_write` or `gen-bench`.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pm_bench_load(dir: *const c_char, kind: *const c_char, out: *mut *mut PmBench) -> PmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let dir = Path::new(str_arg(dir, "dir")?);
        let kind: CorpusKind = str_arg(kind, "kind")?.parse()?;
        let corpus = load_corpus(&dir.join("corpus.jsonl"), kind)?;
        let embeddings = load_embeddings(&dir.join("embeddings.jsonl"), &corpus)?;
        let references = load_references(&dir.join("references.jsonl"))?;
        let base = load_references(&dir.join("vocabulary.jsonl"))?;
        let inner = BenchmarkInstance {
            kind,
            corpus,
            embeddings,
            references,
            base,
            weights: None,
        };
        *out = Box::into_raw(Box::new(PmBench { inner }));
        Ok(())
    })
}

/// # Safety
/// `bench` must come from this library; `dir` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn pm_bench_write(bench: *const PmBench, dir: *const c_char) -> PmStatus {
    guard(|| {
        let bench = handle(bench, "bench")?;
        let dir = str_arg(dir, "dir")?;
        bench.inner.write(Path::new(dir))?;
        Ok(())
    })
}

/// Number of samples, or 0 for NULL.
///
/// # Safety
/// `bench` must be NULL or come from this library.
#[no_mangle]
pub unsafe extern "C" fn pm_bench_len(bench: *const PmBench) -> usize {
    bench.as_ref().map_or(0, |b| b.inner.corpus.len())
}

/// # Safety
/// `bench` must be NULL or come from this library, and not be used again.
#[no_mangle]
pub unsafe extern "C" fn pm_bench_free(bench: *mut PmBench) {
    if !bench.is_null() {
        drop(Box::from_raw(bench));
    }
}

/// Fits with oracle backends built from the benchmark's tag vocabulary.
/// `config_json` holds `FitConfig` fields (`K`, `S`, `seed`, ...) and may be NULL.
///
/// # Safety
/// `bench` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pm_fit(bench: *const PmBench, config_json: *const c_char, out: *mut *mut PmFit) -> PmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let bench = &handle(bench, "bench")?.inner;
        let config: FitConfig = json_arg(config_json, "config_json")?;
        let vocab = oracle_vocabulary(&bench.base, &bench.corpus)?;
        let backends = Backends {
            grounder: Grounder::oracle(),
            proposer: Arc::new(OracleProposer::new(vocab)?),
        };
        let inner = fit(&bench.corpus, &bench.embeddings, &config, &backends)?;
        *out = Box::into_raw(Box::new(PmFit { inner }));
        Ok(())
    })
}

/// # Safety
/// `fit` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pm_fit_fitness(fit: *const PmFit, out: *mut f64) -> PmStatus {
    guard(|| {
        let fit = handle(fit, "fit")?;
        let out = out
            .as_mut()
            .ok_or_else(|| Failure(PmStatus::NullPointer, "out is null".into()))?;
        *out = fit.inner.fitness();
        Ok(())
    })
}

/// Number of learned predicates, or 0 for NULL.
///
/// # Safety
/// `fit` must be NULL or come from this library.
#[no_mangle]
pub unsafe extern "C" fn pm_fit_predicate_count(fit: *const PmFit) -> usize {
    fit.as_ref().map_or(0, |f| f.inner.predicates.len())
}

/// Text of predicate `index`; release with `pm_string_free`.
///
/// # Safety
/// `fit` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pm_fit_predicate(fit: *const PmFit, index: usize, out: *mut *mut c_char) -> PmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let fit = handle(fit, "fit")?;
        let p = fit.inner.predicates.get(index).ok_or_else(|| {
            Failure(
                PmStatus::InvalidArgument,
                format!("index {index} out of range for {} predicates", fit.inner.predicates.len()),
            )
        })?;
        *out = to_c(&p.text)?;
        Ok(())
    })
}

/// The full result as JSON; release with `pm_string_free`.
///
/// # Safety
/// `fit` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pm_fit_to_json(fit: *const PmFit, out: *mut *mut c_char) -> PmStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let fit = handle(fit, "fit")?;
        *out = to_c(&fit.inner.to_json()?)?;
        Ok(())
    })
}

/// Mean matched F1 of the fit against the benchmark references.
///
/// # Safety
/// Handles must come from this library; `mean_f1` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pm_evaluate(bench: *const PmBench, fit: *const PmFit, mean_f1: *mut f64) -> PmStatus {
    guard(|| {
        let bench = &handle(bench, "bench")?.inner;
        let fit = &handle(fit, "fit")?.inner;
        let out = mean_f1
            .as_mut()
            .ok_or_else(|| Failure(PmStatus::NullPointer, "mean_f1 is null".into()))?;
        let report = evaluate(
            &fit.predicates,
            &bench.references,
            &bench.corpus,
            &Grounder::oracle(),
            &MockJudge,
            Some(fit.provenance.seed),
        )?;
        *out = report.mean_f1;
        Ok(())
    })
}

/// # Safety
/// `fit` must be NULL or come from this library, and not be used again.
#[no_mangle]
pub unsafe extern "C" fn pm_fit_free(fit: *mut PmFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// # Safety
/// `s` must be NULL or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn pm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

fn to_c(s: &str) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure(PmStatus::InvalidArgument, "string contains NUL".into()))
}
