//! C interface to `laed`: load a trained run, recognize utterances into
//! latent codes, generate responses, and compute the information metrics.
//!
//! Every function returns a [`LaedStatus`]; on failure the message is kept
//! per thread and read back with [`laed_last_error`]. Strings returned to the
//! caller are released with [`laed_string_free`], models with
//! [`laed_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use laed::corpus::Utterance;
use laed::error::Error;
use laed::laed::{generate, GenerationMode};
use laed::latent::{LatentAssignment, PosteriorStack};
use laed::metrics::{homogeneity, perplexity, ContingencyTable};
use laed::objectives::{batch_prior_regularization, mutual_information_estimate, BatchPosterior, Prior};
use laed::training::{load_run, tokenizer_named, AnyModel, LoadedRun};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Result codes. The nonzero values 2 to 4 match the command-line exit codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LaedStatus {
    Ok = 0,
    /// A required pointer was null or a string was not UTF-8.
    NullOrInvalidPointer = 1,
    /// Bad configuration or argument.
    Config = 2,
    /// Unreadable or malformed data.
    Data = 3,
    /// Missing artifacts, I/O errors and other runtime failures.
    Runtime = 4,
    /// The call panicked; the model handle may no longer be usable.
    Panic = 5,
}

/// A loaded run. Opaque to C.
pub struct LaedModel {
    run: LoadedRun,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

enum Failure {
    Pointer(&'static str),
    Laed(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Laed(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> LaedStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            LaedStatus::Ok
        }
        Ok(Err(Failure::Pointer(what))) => {
            set_error(format!("invalid pointer or string: {what}"));
            LaedStatus::NullOrInvalidPointer
        }
        Ok(Err(Failure::Laed(e))) => {
            set_error(e.to_string());
            match e.exit_code() {
                2 => LaedStatus::Config,
                3 => LaedStatus::Data,
                _ => LaedStatus::Runtime,
            }
        }
        Err(_) => {
            set_error("panic inside laed");
            LaedStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Pointer(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure::Pointer(what))
}

unsafe fn model_arg<'a>(p: *const LaedModel) -> Result<&'a LaedModel, Failure> {
    p.as_ref().ok_or(Failure::Pointer("model"))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Pointer(what))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Pointer(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn laed_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads the run directory at `run_dir` into `*out`.
///
/// # Safety
/// `run_dir` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn laed_model_load(run_dir: *const c_char, out: *mut *mut LaedModel) -> LaedStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let dir = str_arg(run_dir, "run_dir")?;
        let run = load_run(Path::new(dir))?;
        *out = Box::into_raw(Box::new(LaedModel { run }));
        Ok(())
    })
}

/// Releases a model; null is ignored.
///
/// # Safety
/// `model` must come from [`laed_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn laed_model_free(model: *mut LaedModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Writes the number of latent variables M and classes K.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn laed_model_shape(
    model: *const LaedModel,
    num_vars: *mut usize,
    num_classes: *mut usize,
) -> LaedStatus {
    guard(|| {
        let spec = model_arg(model)?.run.model.spec();
        *out_arg(num_vars, "num_vars")? = spec.num_vars;
        *out_arg(num_classes, "num_classes")? = spec.num_classes;
        Ok(())
    })
}

fn encode(run: &LoadedRun, text: &str) -> Result<Utterance, Failure> {
    let tok = tokenizer_named(&run.config.tokenizer)?;
    let u = Utterance::new(run.vocab.encode(&tok.tokenize(text)));
    if u.is_empty() {
        return Err(Error::invalid("utterance has no tokens").into());
    }
    Ok(u)
}

/// Greedy latent code of `text`, written to `codes[0..M]`.
///
/// # Safety
/// `codes` must have room for `capacity` values; `text` is NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn laed_model_recognize(
    model: *const LaedModel,
    text: *const c_char,
    codes: *mut usize,
    capacity: usize,
) -> LaedStatus {
    guard(|| {
        let m = model_arg(model)?;
        let u = encode(&m.run, str_arg(text, "text")?)?;
        let seqs = [u.tokens.as_slice()];
        let code = match &m.run.model {
            AnyModel::Sentence(s) => s.greedy_codes(&seqs)?,
            AnyModel::Laed(l) => l.greedy_codes(&seqs)?,
        }
        .remove(0);
        if capacity < code.len() {
            return Err(Error::invalid(format!("codes buffer holds {capacity}, need {}", code.len())).into());
        }
        if codes.is_null() {
            return Err(Failure::Pointer("codes"));
        }
        std::slice::from_raw_parts_mut(codes, code.len()).copy_from_slice(code.codes());
        Ok(())
    })
}

/// Generates a response for a context given as utterances separated by
/// newlines. `action` is null to use the policy's most likely code, or a
/// code such as "1-4-2" to force it. The result is JSON
/// `{"action": ..., "response": ...}` in `*out`, freed with
/// [`laed_string_free`]. Needs an ae-ed or st-ed run.
///
/// # Safety
/// `context` is NUL-terminated, `action` is null or NUL-terminated, `out`
/// is valid.
#[no_mangle]
pub unsafe extern "C" fn laed_model_generate(
    model: *const LaedModel,
    context: *const c_char,
    action: *const c_char,
    out: *mut *mut c_char,
) -> LaedStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let m = model_arg(model)?;
        let laed = m
            .run
            .model
            .as_laed()
            .ok_or_else(|| Error::invalid("generation needs an ae-ed or st-ed run"))?;
        let utts = str_arg(context, "context")?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| encode(&m.run, l))
            .collect::<Result<Vec<_>, _>>()?;
        let window = m.run.config.context_window;
        let ctx = &utts[utts.len().saturating_sub(window)..];
        let mode = if action.is_null() {
            GenerationMode::PolicyArgmax
        } else {
            let code: LatentAssignment = str_arg(action, "action")?.parse()?;
            GenerationMode::ForcedCode(LatentAssignment::new(code.codes().to_vec(), &laed.spec)?)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(m.run.config.seed);
        let g = generate(laed, ctx, &mode, m.run.config.max_len, &mut rng)?;
        let json = serde_json::json!({
            "action": g.assignment.to_string(),
            "response": m.run.vocab.decode(&g.tokens),
        })
        .to_string();
        *out = CString::new(json).map_err(|_| Error::invalid("NUL in output"))?.into_raw();
        Ok(())
    })
}

/// Releases a string returned by this library; null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn laed_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

unsafe fn batch(probs: *const f64, n: usize, m: usize, k: usize) -> Result<BatchPosterior, Failure> {
    let len = n
        .checked_mul(m)
        .and_then(|x| x.checked_mul(k))
        .ok_or_else(|| Error::invalid("batch too large"))?;
    if len == 0 {
        return Err(Error::invalid("empty batch").into());
    }
    let data = slice_arg(probs, len, "probs")?;
    let stacks = data
        .chunks(m * k)
        .map(|c| {
            let rows = laed::autodiff::Matrix::from_shape_vec((m, k), c.to_vec()).expect("chunk shape");
            PosteriorStack::new(rows)
        })
        .collect::<laed::Result<Vec<_>>>()?;
    Ok(BatchPosterior::new(stacks)?)
}

/// Batch prior regularization against the uniform prior: the sum over
/// variables of KL(batch-average posterior || uniform). `probs` holds
/// `n * m * k` values, item-major, each length-`k` row a distribution.
///
/// # Safety
/// `probs` must point to `n * m * k` doubles; `out` is valid.
#[no_mangle]
pub unsafe extern "C" fn laed_batch_prior_regularization(
    probs: *const f64,
    n: usize,
    m: usize,
    k: usize,
    out: *mut f64,
) -> LaedStatus {
    guard(|| {
        let bp = batch(probs, n, m, k)?;
        let prior = Prior::uniform(&laed::latent::LatentSpec::new(m, k, 1.0)?);
        *out_arg(out, "out")? = batch_prior_regularization(&bp, &prior)?;
        Ok(())
    })
}

/// Mutual-information estimate H(average posterior) - average H(posterior),
/// summed over variables; same layout as
/// [`laed_batch_prior_regularization`].
///
/// # Safety
/// `probs` must point to `n * m * k` doubles; `out` is valid.
#[no_mangle]
pub unsafe extern "C" fn laed_mutual_information(
    probs: *const f64,
    n: usize,
    m: usize,
    k: usize,
    out: *mut f64,
) -> LaedStatus {
    guard(|| {
        let bp = batch(probs, n, m, k)?;
        *out_arg(out, "out")? = mutual_information_estimate(&bp);
        Ok(())
    })
}

/// Homogeneity of a `classes x actions` contingency table given row-major.
///
/// # Safety
/// `counts` must point to `classes * actions` values; `out` is valid.
#[no_mangle]
pub unsafe extern "C" fn laed_homogeneity(
    counts: *const u64,
    classes: usize,
    actions: usize,
    out: *mut f64,
) -> LaedStatus {
    guard(|| {
        let len = classes
            .checked_mul(actions)
            .ok_or_else(|| Error::invalid("table too large"))?;
        let data = slice_arg(counts, len, "counts")?;
        let rows = if actions == 0 {
            vec![Vec::new(); classes]
        } else {
            data.chunks(actions).map(<[u64]>::to_vec).collect()
        };
        *out_arg(out, "out")? = homogeneity(&ContingencyTable::from_counts(rows)?)?;
        Ok(())
    })
}

/// exp(total_nll / tokens).
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn laed_perplexity(total_nll: f64, tokens: usize, out: *mut f64) -> LaedStatus {
    guard(|| {
        *out_arg(out, "out")? = perplexity(total_nll, tokens)?;
        Ok(())
    })
}
