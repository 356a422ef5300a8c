//! C ABI over the core library: opaque handles, integer status codes, and
//! UTF-8 strings (JSON for structured payloads) so other languages can bind.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::ptr;

use equityguard::trainer::model::EmbeddingModel;
use equityguard::{Category, Lexicon};

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EgStatus {
    Ok = 0,
    InternalError = 1,
    InvalidArgument = 2,
    ParseError = 3,
    NotFound = 4,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let message = message.into();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(message).ok();
    });
}

fn clear_error() {
    LAST_ERROR.with(|slot| slot.borrow_mut().take());
}

/// Opaque lexicon handle.
pub struct EgLexicon {
    inner: Lexicon,
}

/// Opaque embedding-model handle.
pub struct EgModel {
    inner: EmbeddingModel,
}

unsafe fn str_arg<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, EgStatus> {
    if ptr.is_null() {
        set_error(format!("{name} is null"));
        return Err(EgStatus::InvalidArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error(format!("{name} is not valid UTF-8"));
        EgStatus::InvalidArgument
    })
}

fn string_out(value: String, out: *mut *mut c_char) -> EgStatus {
    match CString::new(value) {
        Ok(c) => {
            unsafe { *out = c.into_raw() };
            clear_error();
            EgStatus::Ok
        }
        Err(_) => {
            set_error("output contained an interior NUL byte");
            EgStatus::InternalError
        }
    }
}

/// Last error message for this thread, or null when the previous call
/// succeeded. The pointer stays valid until the next failing call.
#[no_mangle]
pub extern "C" fn eg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map(|c| c.as_ptr())
            .unwrap_or(ptr::null())
    })
}

/// Free a string returned by this library.
#[no_mangle]
pub extern "C" fn eg_string_free(s: *mut c_char) {
    if !s.is_null() {
        unsafe {
            drop(CString::from_raw(s));
        }
    }
}

/// Load the embedded default lexicon. Returns null on failure.
#[no_mangle]
pub extern "C" fn eg_lexicon_default() -> *mut EgLexicon {
    match Lexicon::default_lexicon() {
        Ok(inner) => {
            clear_error();
            Box::into_raw(Box::new(EgLexicon { inner }))
        }
        Err(e) => {
            set_error(e.to_string());
            ptr::null_mut()
        }
    }
}

/// Load a lexicon from a JSON file path. Returns null on failure.
///
/// # Safety
/// `path` must be a valid NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn eg_lexicon_load(path: *const c_char) -> *mut EgLexicon {
    let path = match str_arg(path, "path") {
        Ok(p) => p,
        Err(_) => return ptr::null_mut(),
    };
    match Lexicon::from_path(std::path::Path::new(path)) {
        Ok(inner) => {
            clear_error();
            Box::into_raw(Box::new(EgLexicon { inner }))
        }
        Err(e) => {
            set_error(e.to_string());
            ptr::null_mut()
        }
    }
}

/// # Safety
/// `lexicon` must be a pointer returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn eg_lexicon_free(lexicon: *mut EgLexicon) {
    if !lexicon.is_null() {
        drop(Box::from_raw(lexicon));
    }
}

/// Detect SDOH attribute spans; `out_json` receives a JSON array of
/// `{category, start, end, text}` objects.
///
/// # Safety
/// `lexicon` must be a live handle; `text` a valid C string; `out_json` a
/// valid destination pointer.
#[no_mangle]
pub unsafe extern "C" fn eg_detect_attributes(
    lexicon: *const EgLexicon,
    text: *const c_char,
    out_json: *mut *mut c_char,
) -> EgStatus {
    if lexicon.is_null() || out_json.is_null() {
        set_error("lexicon/out_json is null");
        return EgStatus::InvalidArgument;
    }
    let text = match str_arg(text, "text") {
        Ok(t) => t,
        Err(s) => return s,
    };
    let spans = equityguard::perturb::detect_attributes(text, &(*lexicon).inner);
    match serde_json::to_string(&spans) {
        Ok(json) => string_out(json, out_json),
        Err(e) => {
            set_error(e.to_string());
            EgStatus::InternalError
        }
    }
}

/// Neutralize a text: every detected attribute replaced by its neutral form.
///
/// # Safety
/// See [`eg_detect_attributes`].
#[no_mangle]
pub unsafe extern "C" fn eg_neutralize(
    lexicon: *const EgLexicon,
    text: *const c_char,
    out_text: *mut *mut c_char,
) -> EgStatus {
    if lexicon.is_null() || out_text.is_null() {
        set_error("lexicon/out_text is null");
        return EgStatus::InvalidArgument;
    }
    let text = match str_arg(text, "text") {
        Ok(t) => t,
        Err(s) => return s,
    };
    match equityguard::perturb::neutralize_full(text, &(*lexicon).inner) {
        Ok((neutral, _)) => string_out(neutral, out_text),
        Err(e) => {
            set_error(e.to_string());
            EgStatus::ParseError
        }
    }
}

/// Inject a category descriptor into a neutral text. `category` is the
/// snake_case key (for example `low_income`).
///
/// # Safety
/// See [`eg_detect_attributes`].
#[no_mangle]
pub unsafe extern "C" fn eg_inject(
    lexicon: *const EgLexicon,
    text: *const c_char,
    category: *const c_char,
    seed: u64,
    out_text: *mut *mut c_char,
) -> EgStatus {
    if lexicon.is_null() || out_text.is_null() {
        set_error("lexicon/out_text is null");
        return EgStatus::InvalidArgument;
    }
    let text = match str_arg(text, "text") {
        Ok(t) => t,
        Err(s) => return s,
    };
    let category_key = match str_arg(category, "category") {
        Ok(c) => c,
        Err(s) => return s,
    };
    let category = match Category::from_key(category_key) {
        Some(c) => c,
        None => {
            set_error(format!("unknown category `{category_key}`"));
            return EgStatus::NotFound;
        }
    };
    match equityguard::perturb::inject("ffi", text, category, &(*lexicon).inner, seed) {
        Ok(variant) => string_out(variant.text, out_text),
        Err(e) => {
            set_error(e.to_string());
            EgStatus::InvalidArgument
        }
    }
}

/// NDCG@k for a ranking against qrels lines (`topic 0 trial grade`, one per
/// `\n`). `ranking_json` is a JSON array of trial-id strings.
///
/// # Safety
/// All pointer arguments must be valid C strings / destinations.
#[no_mangle]
pub unsafe extern "C" fn eg_ndcg_at_k(
    ranking_json: *const c_char,
    qrels_text: *const c_char,
    topic: *const c_char,
    k: usize,
    out_value: *mut f64,
) -> EgStatus {
    if out_value.is_null() {
        set_error("out_value is null");
        return EgStatus::InvalidArgument;
    }
    let ranking_json = match str_arg(ranking_json, "ranking_json") {
        Ok(v) => v,
        Err(s) => return s,
    };
    let qrels_text = match str_arg(qrels_text, "qrels_text") {
        Ok(v) => v,
        Err(s) => return s,
    };
    let topic = match str_arg(topic, "topic") {
        Ok(v) => v,
        Err(s) => return s,
    };
    let ranking: Vec<String> = match serde_json::from_str(ranking_json) {
        Ok(r) => r,
        Err(e) => {
            set_error(format!("ranking_json: {e}"));
            return EgStatus::ParseError;
        }
    };
    let mut qrels = equityguard::corpus::Qrels::default();
    for (idx, line) in qrels_text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            set_error(format!("qrels line {} malformed", idx + 1));
            return EgStatus::ParseError;
        }
        let grade: u8 = match fields[3].parse() {
            Ok(g) if g <= 2 => g,
            _ => {
                set_error(format!("qrels line {} grade outside 0..=2", idx + 1));
                return EgStatus::ParseError;
            }
        };
        qrels
            .grades
            .insert((fields[0].to_string(), fields[2].to_string()), grade);
    }
    match equityguard::metrics::ndcg_at_k(&ranking, &qrels, topic, k) {
        Ok(v) => {
            *out_value = v;
            clear_error();
            EgStatus::Ok
        }
        Err(e) => {
            set_error(e.to_string());
            EgStatus::InvalidArgument
        }
    }
}

/// Triplet loss max(0, margin + d(a,p) - d(a,n)) over raw unit vectors.
///
/// # Safety
/// The three vector pointers must reference `dim` readable doubles each.
#[no_mangle]
pub unsafe extern "C" fn eg_triplet_loss(
    anchor: *const f64,
    positive: *const f64,
    negative: *const f64,
    dim: usize,
    margin: f64,
    out_value: *mut f64,
) -> EgStatus {
    if anchor.is_null() || positive.is_null() || negative.is_null() || out_value.is_null() || dim == 0
    {
        set_error("null vector or zero dimension");
        return EgStatus::InvalidArgument;
    }
    let a = std::slice::from_raw_parts(anchor, dim);
    let p = std::slice::from_raw_parts(positive, dim);
    let n = std::slice::from_raw_parts(negative, dim);
    let d_ap = match equityguard::trainer::loss::cosine_distance(a, p) {
        Ok(d) => d,
        Err(e) => {
            set_error(e.to_string());
            return EgStatus::InvalidArgument;
        }
    };
    let d_an = match equityguard::trainer::loss::cosine_distance(a, n) {
        Ok(d) => d,
        Err(e) => {
            set_error(e.to_string());
            return EgStatus::InvalidArgument;
        }
    };
    *out_value = equityguard::trainer::loss::triplet_loss_value(d_ap, d_an, margin);
    clear_error();
    EgStatus::Ok
}

/// Create a fresh embedding model with seeded deterministic parameters.
#[no_mangle]
pub extern "C" fn eg_model_new(vocab_dim: usize, embed_dim: usize, seed: u64) -> *mut EgModel {
    if vocab_dim == 0 || embed_dim == 0 {
        set_error("dimensions must be positive");
        return ptr::null_mut();
    }
    clear_error();
    Box::into_raw(Box::new(EgModel {
        inner: EmbeddingModel::new(vocab_dim, embed_dim, seed),
    }))
}

/// Load a model checkpoint written by the trainer.
///
/// # Safety
/// `path` must be a valid NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn eg_model_load(path: *const c_char) -> *mut EgModel {
    let path = match str_arg(path, "path") {
        Ok(p) => p,
        Err(_) => return ptr::null_mut(),
    };
    match EmbeddingModel::load(std::path::Path::new(path)) {
        Ok(inner) => {
            clear_error();
            Box::into_raw(Box::new(EgModel { inner }))
        }
        Err(e) => {
            set_error(e.to_string());
            ptr::null_mut()
        }
    }
}

/// Embedding dimension of a model handle.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn eg_model_dim(model: *const EgModel) -> usize {
    if model.is_null() {
        return 0;
    }
    (*model).inner.embed_dim
}

/// Embed a text into `out` (length `dim` as returned by [`eg_model_dim`]).
///
/// # Safety
/// `model` must be a live handle, `text` a valid C string, and `out` must
/// have space for the model's embedding dimension.
#[no_mangle]
pub unsafe extern "C" fn eg_model_embed(
    model: *const EgModel,
    text: *const c_char,
    out: *mut f64,
    out_len: usize,
) -> EgStatus {
    if model.is_null() || out.is_null() {
        set_error("model/out is null");
        return EgStatus::InvalidArgument;
    }
    let text = match str_arg(text, "text") {
        Ok(t) => t,
        Err(s) => return s,
    };
    let inner = &(*model).inner;
    if out_len < inner.embed_dim {
        set_error(format!(
            "out_len {} smaller than embedding dimension {}",
            out_len, inner.embed_dim
        ));
        return EgStatus::InvalidArgument;
    }
    match inner.embed(text) {
        Ok(e) => {
            std::ptr::copy_nonoverlapping(e.as_ptr(), out, inner.embed_dim);
            clear_error();
            EgStatus::Ok
        }
        Err(e) => {
            set_error(e.to_string());
            EgStatus::InvalidArgument
        }
    }
}

/// # Safety
/// `model` must be a pointer returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn eg_model_free(model: *mut EgModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
