//! C ABI for the domain-discovery toolkit.
//!
//! Every function returns an [`IdolStatus`]; `IDOL_OK` is zero. On any
//! failure the thread-local message retrieved by `idol_last_error_message`
//! describes what went wrong. Objects cross the boundary as opaque handles
//! that must be released with their matching `_free` function. Pointers
//! returned by accessor functions borrow from the handle and stay valid
//! until the handle is freed.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use idol_core::adapt::GradualStep;
use idol_core::config::ExperimentConfig;
use idol_core::data::{stream_to_csv, ShiftStream};
use idol_core::error::Error;
use idol_core::model::{train_supervised, ClassifierParams, OptimizerConfig};
use idol_core::pipeline::{
    evaluate_accuracy, idol_with_params, run_gda, theory_bound, DomainSequence, ScorerChoice,
    TheoryInputs,
};
use idol_core::seed;

/// Result codes of every C-ABI call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IdolStatus {
    IdolOk = 0,
    /// A precondition on arguments or object state failed.
    IdolErrContract = 1,
    /// A numerical routine failed to produce a finite result.
    IdolErrNumerical = 2,
    /// A file had the wrong format.
    IdolErrFormat = 3,
    /// A theoretical assumption was violated by the inputs.
    IdolErrAssumption = 4,
    /// The operating system reported an I/O failure.
    IdolErrIo = 5,
    /// A required pointer argument was null.
    IdolErrNullArgument = 6,
    /// A string argument was not valid UTF-8.
    IdolErrUtf8 = 7,
    /// The call panicked; the library state is still consistent.
    IdolErrPanic = 8,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).expect("nul bytes stripped above");
    });
}

fn status_of(err: &Error) -> IdolStatus {
    match err {
        Error::Contract(_) => IdolStatus::IdolErrContract,
        Error::Numerical { .. } => IdolStatus::IdolErrNumerical,
        Error::Format { .. } => IdolStatus::IdolErrFormat,
        Error::Assumption(_) => IdolStatus::IdolErrAssumption,
        Error::Io(_) => IdolStatus::IdolErrIo,
    }
}

/// Message of the most recent failure on this thread. Never null; the
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn idol_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Runs `body` with panic containment and writes its output through `out`.
fn guarded<T, F>(out: *mut T, body: F) -> IdolStatus
where
    F: FnOnce() -> Result<T, (IdolStatus, String)>,
{
    if out.is_null() {
        set_error("output pointer is null");
        return IdolStatus::IdolErrNullArgument;
    }
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(value)) => {
            unsafe { ptr::write(out, value) };
            IdolStatus::IdolOk
        }
        Ok(Err((status, message))) => {
            set_error(&message);
            status
        }
        Err(panic) => {
            let message = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic with non-string payload".to_string());
            set_error(&format!("internal panic: {message}"));
            IdolStatus::IdolErrPanic
        }
    }
}

/// Like [`guarded`] but for calls with no output value.
fn guarded_unit<F>(body: F) -> IdolStatus
where
    F: FnOnce() -> Result<(), (IdolStatus, String)>,
{
    let mut unit = ();
    guarded(&mut unit, body)
}

fn lib_err(e: Error) -> (IdolStatus, String) {
    (status_of(&e), e.to_string())
}

fn null_err(what: &str) -> (IdolStatus, String) {
    (
        IdolStatus::IdolErrNullArgument,
        format!("{what} pointer is null"),
    )
}

unsafe fn required<'a, T>(ptr: *const T, what: &str) -> Result<&'a T, (IdolStatus, String)> {
    ptr.as_ref().ok_or_else(|| null_err(what))
}

unsafe fn c_str<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, (IdolStatus, String)> {
    if ptr.is_null() {
        return Err(null_err(what));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| (IdolStatus::IdolErrUtf8, format!("{what} is not valid UTF-8")))
}

/// A source → intermediates → target shift stream.
pub struct IdolStream {
    inner: ShiftStream,
}

/// A trained classifier bound to its topology.
pub struct IdolClassifier {
    inner: ClassifierParams,
}

/// A discovered domain sequence: an exact partition of the pool.
pub struct IdolSequence {
    inner: DomainSequence,
}

/// Loads a shift stream from the CSV interchange format.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn idol_stream_load_csv(
    path: *const c_char,
    out: *mut *mut IdolStream,
) -> IdolStatus {
    guarded(out, || {
        let path = c_str(path, "path")?;
        let inner = idol_core::data::stream_from_csv(Path::new(path)).map_err(lib_err)?;
        Ok(Box::into_raw(Box::new(IdolStream { inner })))
    })
}

/// Generates a rotated-Gaussians stream (see the `gen` CLI subcommand).
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn idol_stream_gen_rotated_gaussians(
    num_classes: usize,
    points_per_domain: usize,
    num_domains: usize,
    total_angle: f64,
    noise_sd: f64,
    seed: u64,
    out: *mut *mut IdolStream,
) -> IdolStatus {
    guarded(out, || {
        let inner = idol_core::data::gen_rotated_gaussians(
            num_classes,
            points_per_domain,
            num_domains,
            total_angle,
            noise_sd,
            seed,
        )
        .map_err(lib_err)?;
        Ok(Box::into_raw(Box::new(IdolStream { inner })))
    })
}

/// Writes a stream in the CSV interchange format.
///
/// # Safety
/// `stream` must be a live handle and `path` a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn idol_stream_save_csv(
    stream: *const IdolStream,
    path: *const c_char,
) -> IdolStatus {
    guarded_unit(|| {
        let stream = required(stream, "stream")?;
        let path = c_str(path, "path")?;
        stream_to_csv(&stream.inner, Path::new(path)).map_err(lib_err)
    })
}

/// Number of examples in the unindexed intermediate pool.
///
/// # Safety
/// `stream` must be a live handle; null returns 0.
#[no_mangle]
pub unsafe extern "C" fn idol_stream_pool_len(stream: *const IdolStream) -> usize {
    stream.as_ref().map_or(0, |s| s.inner.intermediate.len())
}

/// Releases a stream handle. Null is a no-op.
///
/// # Safety
/// `stream` must have come from this library and not been freed before.
#[no_mangle]
pub unsafe extern "C" fn idol_stream_free(stream: *mut IdolStream) {
    if !stream.is_null() {
        drop(Box::from_raw(stream));
    }
}

/// Trains the source model: one hidden ReLU layer of `hidden_width` units
/// (0 for logistic regression) under minibatch SGD.
///
/// # Safety
/// `stream` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn idol_classifier_train_source(
    stream: *const IdolStream,
    hidden_width: usize,
    lr: f64,
    epochs: usize,
    batch_size: usize,
    seed: u64,
    out: *mut *mut IdolClassifier,
) -> IdolStatus {
    guarded(out, || {
        let stream = required(stream, "stream")?;
        let mut config = ExperimentConfig::default();
        config.model.hidden_dims = if hidden_width == 0 {
            vec![]
        } else {
            vec![hidden_width]
        };
        let num_classes = stream
            .inner
            .source
            .inferred_classes()
            .max(stream.inner.target.inferred_classes());
        let spec = config
            .idol_config()
            .classifier_spec(stream.inner.source.feature_dim(), num_classes)
            .map_err(lib_err)?;
        let opt = OptimizerConfig {
            lr,
            epochs,
            batch_size,
            ..OptimizerConfig::default()
        };
        opt.validate().map_err(lib_err)?;
        let (inner, _) = train_supervised(
            &spec,
            &stream.inner.source,
            &opt,
            seed::derive(seed, "source-model"),
        )
        .map_err(lib_err)?;
        Ok(Box::into_raw(Box::new(IdolClassifier { inner })))
    })
}

/// Loads a classifier saved by `idol_classifier_save` or the CLI.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn idol_classifier_load(
    path: *const c_char,
    out: *mut *mut IdolClassifier,
) -> IdolStatus {
    guarded(out, || {
        let path = c_str(path, "path")?;
        let inner = ClassifierParams::load(path).map_err(lib_err)?;
        Ok(Box::into_raw(Box::new(IdolClassifier { inner })))
    })
}

/// Saves a classifier to the toolkit's parameter file format.
///
/// # Safety
/// `classifier` must be a live handle and `path` a valid string.
#[no_mangle]
pub unsafe extern "C" fn idol_classifier_save(
    classifier: *const IdolClassifier,
    path: *const c_char,
) -> IdolStatus {
    guarded_unit(|| {
        let classifier = required(classifier, "classifier")?;
        let path = c_str(path, "path")?;
        classifier.inner.save(path).map_err(lib_err)
    })
}

/// Accuracy of the classifier on the stream's labeled target split.
///
/// # Safety
/// `classifier` and `stream` must be live handles; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn idol_classifier_target_accuracy(
    classifier: *const IdolClassifier,
    stream: *const IdolStream,
    out: *mut f64,
) -> IdolStatus {
    guarded(out, || {
        let classifier = required(classifier, "classifier")?;
        let stream = required(stream, "stream")?;
        evaluate_accuracy(&classifier.inner, &stream.inner.target).map_err(lib_err)
    })
}

/// Releases a classifier handle. Null is a no-op.
///
/// # Safety
/// `classifier` must have come from this library and not been freed before.
#[no_mangle]
pub unsafe extern "C" fn idol_classifier_free(classifier: *mut IdolClassifier) {
    if !classifier.is_null() {
        drop(Box::from_raw(classifier));
    }
}

/// Discovers a domain sequence in the stream's pool: coarse scoring with
/// `scorer` ("confidence", "manifold", "discriminator", or "progressive"),
/// then optional cycle-consistency refinement, using the default budgets.
///
/// # Safety
/// `stream` and `classifier` must be live handles, `scorer` a valid string,
/// and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn idol_discover_sequence(
    stream: *const IdolStream,
    classifier: *const IdolClassifier,
    scorer: *const c_char,
    num_domains: usize,
    refine: bool,
    seed: u64,
    out: *mut *mut IdolSequence,
) -> IdolStatus {
    guarded(out, || {
        let stream = required(stream, "stream")?;
        let classifier = required(classifier, "classifier")?;
        let scorer = ScorerChoice::parse(c_str(scorer, "scorer")?).map_err(lib_err)?;
        let config = ExperimentConfig::default().idol_config();
        let inner = idol_with_params(
            &classifier.inner,
            &stream.inner.source,
            &stream.inner.target.to_unlabeled(),
            &stream.inner.intermediate,
            num_domains,
            scorer,
            refine,
            &config,
            seed,
        )
        .map_err(lib_err)?;
        Ok(Box::into_raw(Box::new(IdolSequence { inner })))
    })
}

/// Loads a sequence file for a pool of `pool_len` examples.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn idol_sequence_load(
    path: *const c_char,
    pool_len: usize,
    out: *mut *mut IdolSequence,
) -> IdolStatus {
    guarded(out, || {
        let path = c_str(path, "path")?;
        let text = std::fs::read_to_string(path).map_err(|e| lib_err(Error::Io(e)))?;
        let inner = DomainSequence::parse(&text, pool_len, "loaded").map_err(lib_err)?;
        Ok(Box::into_raw(Box::new(IdolSequence { inner })))
    })
}

/// Writes a sequence in the one-domain-per-line format.
///
/// # Safety
/// `sequence` must be a live handle and `path` a valid string.
#[no_mangle]
pub unsafe extern "C" fn idol_sequence_save(
    sequence: *const IdolSequence,
    path: *const c_char,
) -> IdolStatus {
    guarded_unit(|| {
        let sequence = required(sequence, "sequence")?;
        let path = c_str(path, "path")?;
        sequence.inner.export(Path::new(path)).map_err(lib_err)
    })
}

/// Number of discovered domains. Null returns 0.
///
/// # Safety
/// `sequence` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn idol_sequence_num_domains(sequence: *const IdolSequence) -> usize {
    sequence.as_ref().map_or(0, |s| s.inner.num_chunks())
}

/// Borrows the pool indices of domain `m` (0 = most source-like). The
/// pointer stays valid until the sequence is freed.
///
/// # Safety
/// `sequence` must be a live handle; `ids` and `len` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn idol_sequence_domain(
    sequence: *const IdolSequence,
    m: usize,
    ids: *mut *const usize,
    len: *mut usize,
) -> IdolStatus {
    guarded_unit(|| {
        let sequence = required(sequence, "sequence")?;
        if ids.is_null() || len.is_null() {
            return Err(null_err("ids/len"));
        }
        let chunks = sequence.inner.chunks();
        let chunk = chunks.get(m).ok_or_else(|| {
            (
                IdolStatus::IdolErrContract,
                format!("domain index {m} out of range for {} domains", chunks.len()),
            )
        })?;
        ptr::write(ids, chunk.as_ptr());
        ptr::write(len, chunk.len());
        Ok(())
    })
}

/// Releases a sequence handle. Null is a no-op.
///
/// # Safety
/// `sequence` must have come from this library and not been freed before.
#[no_mangle]
pub unsafe extern "C" fn idol_sequence_free(sequence: *mut IdolSequence) {
    if !sequence.is_null() {
        drop(Box::from_raw(sequence));
    }
}

/// Gradually self-trains through the sequence and finally the target.
/// Writes the adapted model to `out_model` and, when the stream has target
/// labels, the final target accuracy to `out_accuracy`.
///
/// # Safety
/// All handles must be live; `out_model` and `out_accuracy` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn idol_gda_walk(
    classifier: *const IdolClassifier,
    stream: *const IdolStream,
    sequence: *const IdolSequence,
    keep_frac: f64,
    lr: f64,
    epochs: usize,
    batch_size: usize,
    seed: u64,
    out_model: *mut *mut IdolClassifier,
    out_accuracy: *mut f64,
) -> IdolStatus {
    guarded(out_model, || {
        let classifier = required(classifier, "classifier")?;
        let stream = required(stream, "stream")?;
        let sequence = required(sequence, "sequence")?;
        if out_accuracy.is_null() {
            return Err(null_err("out_accuracy"));
        }
        let opt = OptimizerConfig {
            lr,
            epochs,
            batch_size,
            ..OptimizerConfig::default()
        };
        opt.validate().map_err(lib_err)?;
        let (params, walk) = run_gda(
            &classifier.inner,
            &stream.inner.intermediate,
            &sequence.inner,
            &stream.inner.target.to_unlabeled(),
            Some(&stream.inner.target),
            keep_frac,
            &opt,
            seed::derive(seed, "walk-ffi"),
        )
        .map_err(lib_err)?;
        let accuracy = last_accuracy(&walk);
        ptr::write(out_accuracy, accuracy);
        Ok(Box::into_raw(Box::new(IdolClassifier { inner: params })))
    })
}

fn last_accuracy(walk: &[GradualStep]) -> f64 {
    walk.last()
        .and_then(|s| s.target_accuracy)
        .unwrap_or(f64::NAN)
}

/// Evaluates the gradual self-training error bound; rejects inputs that
/// violate the gradual shift assumption.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn idol_theory_bound(
    source_loss: f64,
    data_bound: f64,
    norm_bound: f64,
    per_step_shift: f64,
    num_steps: usize,
    samples_per_domain: usize,
    delta: f64,
    out: *mut f64,
) -> IdolStatus {
    guarded(out, || {
        theory_bound(&TheoryInputs {
            source_loss,
            data_bound,
            norm_bound,
            per_step_shift,
            num_steps,
            samples_per_domain,
            delta,
        })
        .map_err(lib_err)
    })
}
