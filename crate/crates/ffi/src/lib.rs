//! C ABI for wavenet.
//!
//! Every fallible call returns a [`WvStatus`]. On failure the message is
//! available from [`wv_last_error`] on the same thread. Panics never cross
//! the boundary; they surface as `WV_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::ptr;
use std::slice;

use wavenet::data::Vocab;
use wavenet::model::{model_forward, ForwardCtx, SequenceBatch};
use wavenet::train::Checkpoint;
use wavenet::wave::{self, CombineMode, ComplexRepr, EmbeddingMatrix};
use wavenet::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WvStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Data = 4,
    /// Checkpoint corrupt, wrong version, or paired with the wrong vocabulary.
    Artifact = 5,
    Numeric = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WvCombineMode {
    Interference = 0,
    Modulation = 1,
}

impl From<WvCombineMode> for CombineMode {
    fn from(m: WvCombineMode) -> Self {
        match m {
            WvCombineMode::Interference => CombineMode::Interference,
            WvCombineMode::Modulation => CombineMode::Modulation,
        }
    }
}

/// A loaded checkpoint with its vocabulary. Opaque to C.
pub struct WvModel {
    checkpoint: Checkpoint,
    vocab: Vocab,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(err: &Error) -> WvStatus {
    match err {
        Error::InvalidArgument(_) | Error::Shape { .. } => WvStatus::InvalidArgument,
        Error::Config { .. } => WvStatus::Config,
        Error::Data(_) | Error::LabelOutOfRange { .. } | Error::Io { .. } => WvStatus::Data,
        Error::Integrity(_) | Error::Version { .. } | Error::Mismatch(_) => WvStatus::Artifact,
        Error::NonFinite(_) => WvStatus::Numeric,
    }
}

struct Fail(WvStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(WvStatus::NullPointer, format!("`{what}` is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> WvStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => WvStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            WvStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(WvStatus::InvalidArgument, format!("`{what}` is not valid UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn slice_out<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

/// Message for the last failed call on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn wv_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn wv_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint. `vocab_path` may be null, in which case the
/// vocabulary recorded in the checkpoint is read from the same directory.
/// On success `*out` owns a model that must be released with
/// [`wv_model_free`].
///
/// # Safety
/// Paths must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wv_model_load(
    checkpoint_path: *const c_char,
    vocab_path: *const c_char,
    out: *mut *mut WvModel,
) -> WvStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let ck_path = Path::new(str_arg(checkpoint_path, "checkpoint_path")?);
        let checkpoint = Checkpoint::load(ck_path)?;
        let vocab_path = if vocab_path.is_null() {
            ck_path.parent().unwrap_or(Path::new(".")).join(&checkpoint.vocab_ref)
        } else {
            PathBuf::from(str_arg(vocab_path, "vocab_path")?)
        };
        let vocab = Vocab::load(&vocab_path)?;
        if vocab.fingerprint() != checkpoint.vocab_fingerprint || vocab.len() != checkpoint.config.vocab_size {
            return Err(Error::Mismatch(format!(
                "vocabulary {} does not belong to this checkpoint",
                vocab_path.display()
            ))
            .into());
        }
        *out = Box::into_raw(Box::new(WvModel { checkpoint, vocab }));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from [`wv_model_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn wv_model_free(model: *mut WvModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of output classes, or 0 for a null model.
///
/// # Safety
/// `model` must be null or a live model.
#[no_mangle]
pub unsafe extern "C" fn wv_model_n_classes(model: *const WvModel) -> usize {
    model.as_ref().map_or(0, |m| m.checkpoint.config.n_classes)
}

/// Embedding width, or 0 for a null model.
///
/// # Safety
/// `model` must be null or a live model.
#[no_mangle]
pub unsafe extern "C" fn wv_model_dim(model: *const WvModel) -> usize {
    model.as_ref().map_or(0, |m| m.checkpoint.config.d)
}

/// Classifies one text. Writes the arg-max class to `*label` and, if
/// `probs` is non-null, the softmax probabilities to `probs[0..n_classes]`
/// (`probs_len` must be at least the class count).
///
/// # Safety
/// `model` must be live, `text` NUL-terminated, `label` writable and
/// `probs` null or valid for `probs_len` writes.
#[no_mangle]
pub unsafe extern "C" fn wv_model_classify(
    model: *const WvModel,
    text: *const c_char,
    probs: *mut f64,
    probs_len: usize,
    label: *mut usize,
) -> WvStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let text = str_arg(text, "text")?;
        if label.is_null() {
            return Err(null("label"));
        }
        let config = &m.checkpoint.config;
        let enc = m.vocab.encode(text, config.max_len);
        let batch = SequenceBatch::from_sequences([(enc.ids.as_slice(), 0)]);
        let out = model_forward(&batch, &m.checkpoint.params, config, &ForwardCtx::inference())?;
        let logits = out.logits.data();
        let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = logits.iter().map(|z| (z - top).exp()).collect();
        let total: f64 = exp.iter().sum();
        if !probs.is_null() {
            if probs_len < exp.len() {
                return Err(Fail(
                    WvStatus::InvalidArgument,
                    format!("probs holds {probs_len} values, model has {} classes", exp.len()),
                ));
            }
            let dst = slice::from_raw_parts_mut(probs, exp.len());
            dst.iter_mut().zip(&exp).for_each(|(d, e)| *d = e / total);
        }
        *label = out.predictions()[0];
        Ok(())
    })
}

/// Complex representation of an `n × d` row-major embedding matrix.
/// `mask` is null (every row real) or `n` bytes, nonzero for real rows.
/// Writes the global semantics to `g[0..d]` and the real and imaginary
/// planes to `re[0..n*d]`, `im[0..n*d]`.
///
/// # Safety
/// Every non-null pointer must be valid for the stated length.
#[no_mangle]
pub unsafe extern "C" fn wv_to_complex(
    embeddings: *const f64,
    n: usize,
    d: usize,
    mask: *const u8,
    g: *mut f64,
    re: *mut f64,
    im: *mut f64,
) -> WvStatus {
    guard(|| {
        let len = n.checked_mul(d).ok_or_else(|| Fail(WvStatus::InvalidArgument, "n * d overflows".into()))?;
        let e = EmbeddingMatrix::new(n, d, slice_arg(embeddings, len, "embeddings")?.to_vec())?;
        let mask: Vec<bool> = if mask.is_null() {
            vec![true; n]
        } else {
            slice_arg(mask, n, "mask")?.iter().map(|&b| b != 0).collect()
        };
        let gv = wave::global_semantics(&e, &mask)?;
        let z = wave::to_complex(&e, &gv, &mask)?;
        slice_out(g, d, "g")?.copy_from_slice(gv.as_slice());
        slice_out(re, len, "re")?.copy_from_slice(&z.re);
        slice_out(im, len, "im")?.copy_from_slice(&z.im);
        Ok(())
    })
}

/// Combines two complex arrays of `len` values elementwise. The output
/// may alias either input.
///
/// # Safety
/// Every pointer must be valid for `len` values.
#[no_mangle]
pub unsafe extern "C" fn wv_combine(
    mode: WvCombineMode,
    re_a: *const f64,
    im_a: *const f64,
    re_b: *const f64,
    im_b: *const f64,
    len: usize,
    re_out: *mut f64,
    im_out: *mut f64,
) -> WvStatus {
    guard(|| {
        let planes = |re, im, what| -> Result<ComplexRepr, Fail> {
            Ok(ComplexRepr {
                n: 1,
                d: len,
                re: slice_arg(re, len, what)?.to_vec(),
                im: slice_arg(im, len, what)?.to_vec(),
            })
        };
        let a = planes(re_a, im_a, "a")?;
        let b = planes(re_b, im_b, "b")?;
        let z = wave::combine(mode.into(), &a, &b)?;
        slice_out(re_out, len, "re_out")?.copy_from_slice(&z.re);
        slice_out(im_out, len, "im_out")?.copy_from_slice(&z.im);
        Ok(())
    })
}
