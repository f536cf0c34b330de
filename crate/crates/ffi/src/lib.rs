//! C ABI over the `seqvae` library.
//!
//! Every fallible function returns a [`SeqvaeStatus`]; on failure a
//! description is available from [`seqvae_last_error`] on the same thread.
//! Text results are written NUL-terminated into caller buffers: the number
//! of bytes required (terminator included) is always stored in `*needed`,
//! and `SEQVAE_BUFFER_TOO_SMALL` is returned when `capacity` is short.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use seqvae::checkpoint::Checkpoint;
use seqvae::metrics;
use seqvae::probes::Generator;
use seqvae::rng::Rng;
use seqvae::seq2seq::Seq2SeqModel;
use seqvae::text::Vocabulary;
use seqvae::Error;

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeqvaeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Checkpoint = 4,
    InvalidArgument = 5,
    BufferTooSmall = 6,
    Numeric = 7,
    Panic = 8,
}

/// Opaque handle to a loaded model.
pub struct SeqvaeModel {
    model: Seq2SeqModel,
    vocab: Vocabulary,
    max_len: usize,
}

impl SeqvaeModel {
    fn generator(&self) -> Generator<'_> {
        Generator::new(&self.model, &self.vocab, self.max_len)
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(SeqvaeStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => SeqvaeStatus::Io,
            Error::Checkpoint(_) => SeqvaeStatus::Checkpoint,
            Error::NonFinite { .. } => SeqvaeStatus::Numeric,
            _ => SeqvaeStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SeqvaeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            SeqvaeStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SeqvaeStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(SeqvaeStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(SeqvaeStatus::InvalidUtf8, format!("`{what}` is not UTF-8")))
}

unsafe fn model_arg<'a>(p: *const SeqvaeModel) -> Result<&'a SeqvaeModel, Failure> {
    p.as_ref().ok_or_else(|| null("model"))
}

unsafe fn write_text(text: &str, buf: *mut c_char, capacity: usize, needed: *mut usize) -> Result<(), Failure> {
    if needed.is_null() {
        return Err(null("needed"));
    }
    let n = text.len() + 1;
    *needed = n;
    if capacity < n {
        return Err(Failure(
            SeqvaeStatus::BufferTooSmall,
            format!("buffer holds {capacity} bytes, {n} needed"),
        ));
    }
    if buf.is_null() {
        return Err(null("buf"));
    }
    std::ptr::copy_nonoverlapping(text.as_ptr(), buf.cast::<u8>(), text.len());
    *buf.add(text.len()) = 0;
    Ok(())
}

unsafe fn sentence_set(sentences: *const *const c_char, count: usize) -> Result<Vec<Vec<String>>, Failure> {
    if sentences.is_null() && count > 0 {
        return Err(null("sentences"));
    }
    (0..count)
        .map(|i| {
            let s = str_arg(*sentences.add(i), "sentences[i]")?;
            Ok(s.split_whitespace().map(String::from).collect())
        })
        .collect()
}

/// Message for the most recent failure on this thread; empty after a
/// success. Valid until the next call into this library on the thread.
#[no_mangle]
pub extern "C" fn seqvae_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn seqvae_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Load a checkpoint written by the `seqvae` tool.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn seqvae_model_load(path: *const c_char, out: *mut *mut SeqvaeModel) -> SeqvaeStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let ck = Checkpoint::load(Path::new(path))?;
        let handle = SeqvaeModel {
            model: ck.model()?,
            max_len: ck.config.max_len()?,
            vocab: ck.vocab,
        };
        *out = Box::into_raw(Box::new(handle));
        Ok(())
    })
}

/// Release a model. Null is ignored.
///
/// # Safety
/// `model` must come from `seqvae_model_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn seqvae_model_free(model: *mut SeqvaeModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Size of the sentence code (0 for models without one).
///
/// # Safety
/// `model` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn seqvae_model_latent_dim(model: *const SeqvaeModel, out: *mut usize) -> SeqvaeStatus {
    guard(|| {
        let m = model_arg(model)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = if m.model.spec.latent {
            m.model.spec.latent_dim
        } else {
            0
        };
        Ok(())
    })
}

/// MAP reconstruction of `sentence`, space-separated.
///
/// # Safety
/// Pointers must be valid; `buf` must hold `capacity` bytes.
#[no_mangle]
pub unsafe extern "C" fn seqvae_model_reconstruct(
    model: *const SeqvaeModel,
    sentence: *const c_char,
    buf: *mut c_char,
    capacity: usize,
    needed: *mut usize,
) -> SeqvaeStatus {
    guard(|| {
        let m = model_arg(model)?;
        let text = m.generator().map_reconstruct(str_arg(sentence, "sentence")?)?.join(" ");
        write_text(&text, buf, capacity, needed)
    })
}

/// Decode a code drawn from the prior with the given seed.
///
/// # Safety
/// Pointers must be valid; `buf` must hold `capacity` bytes.
#[no_mangle]
pub unsafe extern "C" fn seqvae_model_sample(
    model: *const SeqvaeModel,
    seed: u64,
    buf: *mut c_char,
    capacity: usize,
    needed: *mut usize,
) -> SeqvaeStatus {
    guard(|| {
        let m = model_arg(model)?;
        let text = m.generator().random_sample(&mut Rng::new(seed))?.join(" ");
        write_text(&text, buf, capacity, needed)
    })
}

/// Decode `mu + scale * sigma * eps` around `sentence`'s code.
///
/// # Safety
/// Pointers must be valid; `buf` must hold `capacity` bytes.
#[no_mangle]
pub unsafe extern "C" fn seqvae_model_neighborhood(
    model: *const SeqvaeModel,
    sentence: *const c_char,
    scale: f64,
    seed: u64,
    buf: *mut c_char,
    capacity: usize,
    needed: *mut usize,
) -> SeqvaeStatus {
    guard(|| {
        let m = model_arg(model)?;
        if !scale.is_finite() || scale <= 0.0 {
            return Err(Failure(
                SeqvaeStatus::InvalidArgument,
                format!("scale must be > 0, got {scale}"),
            ));
        }
        let text = m
            .generator()
            .neighborhood_sample(str_arg(sentence, "sentence")?, scale, &mut Rng::new(seed))?
            .join(" ");
        write_text(&text, buf, capacity, needed)
    })
}

/// BLEU-`order` of whitespace-tokenized `generated` against `reference`.
///
/// # Safety
/// Strings must be NUL-terminated; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn seqvae_bleu(
    generated: *const c_char,
    reference: *const c_char,
    order: u32,
    out: *mut f64,
) -> SeqvaeStatus {
    guard(|| {
        let g: Vec<&str> = str_arg(generated, "generated")?.split_whitespace().collect();
        let r: Vec<&str> = str_arg(reference, "reference")?.split_whitespace().collect();
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = metrics::bleu_j(&g, &r, order as usize)?;
        Ok(())
    })
}

/// Unigram entropy in nats over `count` whitespace-tokenized sentences.
///
/// # Safety
/// `sentences` must point to `count` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn seqvae_entropy(sentences: *const *const c_char, count: usize, out: *mut f64) -> SeqvaeStatus {
    guard(|| {
        let set = sentence_set(sentences, count)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = metrics::entropy(&set)?;
        Ok(())
    })
}

/// Distinct-`n` over `count` whitespace-tokenized sentences.
///
/// # Safety
/// `sentences` must point to `count` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn seqvae_distinct_n(
    sentences: *const *const c_char,
    count: usize,
    n: u32,
    out: *mut f64,
) -> SeqvaeStatus {
    guard(|| {
        let set = sentence_set(sentences, count)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = metrics::distinct_n(&set, n as usize)?;
        Ok(())
    })
}
