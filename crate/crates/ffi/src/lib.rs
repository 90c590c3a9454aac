//! C ABI over the personakit core.
//!
//! Objects cross the boundary as opaque handles created by a `pk_*_new` or
//! `pk_*_parse` function and released by the matching `pk_*_free`. Every
//! fallible call returns a [`PkStatus`]; on failure the message is available
//! from [`pk_last_error`] on the same thread. Strings returned through
//! `char **` out-parameters are owned by the caller and released with
//! [`pk_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use personakit::encoding::{assemble_sequence, build_unilm_mask, EncoderConfig, Tokenizer, WordVocab};
use personakit::eval::{distinct_n, NliLabel};
use personakit::extract::{default_rule_specs, ExtractorBackend, RuleExtractor};
use personakit::filter::{filter_one, tfidf_hash_similarity, FilterConfig, FilterReason, HashedTfIdf};
use personakit::persona::{AttributeRegistry, PersonaSummary, TripleStyle};
use personakit::profile::TrainingExample;
use personakit::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PkStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Data = 4,
    Format = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Outcome of the quality rules for one summary.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PkFilterReason {
    Kept = 0,
    NoneSummary = 1,
    BadFormat = 2,
    UnknownAttribute = 3,
    SubjectTooLong = 4,
    LowSimilarity = 5,
}

impl From<FilterReason> for PkFilterReason {
    fn from(r: FilterReason) -> Self {
        match r {
            FilterReason::Ok => Self::Kept,
            FilterReason::NoneSummary => Self::NoneSummary,
            FilterReason::BadFormat => Self::BadFormat,
            FilterReason::UnknownAttribute => Self::UnknownAttribute,
            FilterReason::SubjectTooLong => Self::SubjectTooLong,
            FilterReason::LowSimilarity => Self::LowSimilarity,
        }
    }
}

/// NLI judgement of a response against one profile triple.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PkNliLabel {
    Neutral = 0,
    Entail = 1,
    Contradict = 2,
}

fn nli_label(code: i32) -> Result<NliLabel, Failure> {
    match code {
        c if c == PkNliLabel::Neutral as i32 => Ok(NliLabel::Neutral),
        c if c == PkNliLabel::Entail as i32 => Ok(NliLabel::Entail),
        c if c == PkNliLabel::Contradict as i32 => Ok(NliLabel::Contradict),
        c => Err(Failure(PkStatus::Data, format!("unknown label code {c}"))),
    }
}

pub struct PkRegistry(AttributeRegistry);
pub struct PkExtractor(RuleExtractor);
pub struct PkFilter(FilterConfig);
pub struct PkVocab(WordVocab);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(PkStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Config(_) => PkStatus::Config,
            Error::Format(_) => PkStatus::Format,
            _ => PkStatus::Data,
        };
        Failure(status, e.to_string())
    }
}

impl From<personakit::ConfigError> for Failure {
    fn from(e: personakit::ConfigError) -> Self {
        Failure(PkStatus::Config, e.to_string())
    }
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PkStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            PkStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("panic inside personakit");
            PkStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(PkStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(PkStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure(PkStatus::NullArgument, format!("{name} is null")))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| Failure(PkStatus::NullArgument, format!("{name} is null")))
}

fn c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure(PkStatus::Data, "string contains NUL".into()))
}

fn into_handle<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

unsafe fn free_handle<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn pk_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn pk_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// The built-in attribute list.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pk_registry_builtin(out: *mut *mut PkRegistry) -> PkStatus {
    guard(|| {
        *out_arg(out, "out")? = into_handle(PkRegistry(AttributeRegistry::builtin()));
        Ok(())
    })
}

/// Parses an attribute list, one symbol per line.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pk_registry_parse(text: *const c_char, out: *mut *mut PkRegistry) -> PkStatus {
    guard(|| {
        let r = AttributeRegistry::parse(str_arg(text, "text")?)?;
        *out_arg(out, "out")? = into_handle(PkRegistry(r));
        Ok(())
    })
}

/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pk_registry_contains(
    registry: *const PkRegistry,
    attribute: *const c_char,
    out: *mut bool,
) -> PkStatus {
    guard(|| {
        let r = ref_arg(registry, "registry")?;
        *out_arg(out, "out")? = r.0.contains(str_arg(attribute, "attribute")?);
        Ok(())
    })
}

/// # Safety
/// `registry` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn pk_registry_free(registry: *mut PkRegistry) {
    free_handle(registry);
}

/// Pattern extractor with the built-in rules, restricted to `registry`.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pk_extractor_new(registry: *const PkRegistry, out: *mut *mut PkExtractor) -> PkStatus {
    guard(|| {
        let r = ref_arg(registry, "registry")?;
        let ex = RuleExtractor::from_specs(&default_rule_specs(), &r.0)?;
        *out_arg(out, "out")? = into_handle(PkExtractor(ex));
        Ok(())
    })
}

/// Summarizes one utterance as `e1 [SEP] r [SEP] e2` or `[None]`.
///
/// # Safety
/// All pointers must be valid; free the result with [`pk_string_free`].
#[no_mangle]
pub unsafe extern "C" fn pk_extractor_extract(
    extractor: *const PkExtractor,
    utterance: *const c_char,
    out: *mut *mut c_char,
) -> PkStatus {
    guard(|| {
        let ex = ref_arg(extractor, "extractor")?;
        let summary = ex.0.extract(str_arg(utterance, "utterance")?);
        *out_arg(out, "out")? = c_string(summary.0)?;
        Ok(())
    })
}

/// # Safety
/// `extractor` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn pk_extractor_free(extractor: *mut PkExtractor) {
    free_handle(extractor);
}

/// Quality rules with the hashed TF-IDF similarity over `hash_dims`
/// dimensions.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pk_filter_new(
    registry: *const PkRegistry,
    max_subject_tokens: usize,
    min_similarity: f64,
    hash_dims: usize,
    out: *mut *mut PkFilter,
) -> PkStatus {
    guard(|| {
        let r = ref_arg(registry, "registry")?;
        if hash_dims == 0 {
            return Err(Failure(PkStatus::Config, "hash_dims must be positive".into()));
        }
        let sim = Arc::new(HashedTfIdf {
            dims: hash_dims,
            stats: None,
        });
        let cfg = FilterConfig::new(max_subject_tokens, min_similarity, r.0.clone(), sim)?;
        *out_arg(out, "out")? = into_handle(PkFilter(cfg));
        Ok(())
    })
}

/// Checks one summary against the utterance it came from. When kept and
/// `out_triple` is non-null, the normalized triple is written there;
/// otherwise it is set to null.
///
/// # Safety
/// All non-optional pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pk_filter_check(
    filter: *const PkFilter,
    summary: *const c_char,
    utterance: *const c_char,
    out_reason: *mut PkFilterReason,
    out_triple: *mut *mut c_char,
) -> PkStatus {
    guard(|| {
        let f = ref_arg(filter, "filter")?;
        let summary = PersonaSummary(str_arg(summary, "summary")?.to_string());
        let (triple, verdict) = filter_one(&summary, str_arg(utterance, "utterance")?, &f.0);
        *out_arg(out_reason, "out_reason")? = verdict.reason.into();
        if let Some(slot) = out_triple.as_mut() {
            *slot = match triple {
                Some(t) => c_string(t.serialize(TripleStyle::SepDelimited))?,
                None => ptr::null_mut(),
            };
        }
        Ok(())
    })
}

/// # Safety
/// `filter` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn pk_filter_free(filter: *mut PkFilter) {
    free_handle(filter);
}

/// Hashed TF-IDF cosine similarity of two texts.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pk_similarity(a: *const c_char, b: *const c_char, hash_dims: usize, out: *mut f64) -> PkStatus {
    guard(|| {
        if hash_dims == 0 {
            return Err(Failure(PkStatus::Config, "hash_dims must be positive".into()));
        }
        *out_arg(out, "out")? = tfidf_hash_similarity(str_arg(a, "a")?, str_arg(b, "b")?, hash_dims, None);
        Ok(())
    })
}

/// Parses a vocabulary file, one token per line.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pk_vocab_parse(text: *const c_char, out: *mut *mut PkVocab) -> PkStatus {
    guard(|| {
        let v = WordVocab::parse(str_arg(text, "text")?)?;
        *out_arg(out, "out")? = into_handle(PkVocab(v));
        Ok(())
    })
}

/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pk_vocab_size(vocab: *const PkVocab, out: *mut usize) -> PkStatus {
    guard(|| {
        *out_arg(out, "out")? = ref_arg(vocab, "vocab")?.0.vocab_size();
        Ok(())
    })
}

/// Token ids of `text`. Writes at most `capacity` ids to `ids` and the full
/// count to `out_len`; returns `BufferTooSmall` when they do not fit, so a
/// first call with `capacity` 0 sizes the buffer.
///
/// # Safety
/// `ids` must hold `capacity` elements (it may be null when `capacity` is
/// 0); the other pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pk_vocab_encode(
    vocab: *const PkVocab,
    text: *const c_char,
    ids: *mut u32,
    capacity: usize,
    out_len: *mut usize,
) -> PkStatus {
    guard(|| {
        let v = ref_arg(vocab, "vocab")?;
        let enc = v.0.encode(str_arg(text, "text")?);
        *out_arg(out_len, "out_len")? = enc.len();
        if enc.len() > capacity {
            return Err(Failure(
                PkStatus::BufferTooSmall,
                format!("{} ids do not fit in {capacity}", enc.len()),
            ));
        }
        if !enc.is_empty() {
            if ids.is_null() {
                return Err(Failure(PkStatus::NullArgument, "ids is null".into()));
            }
            ptr::copy_nonoverlapping(enc.as_ptr(), ids, enc.len());
        }
        Ok(())
    })
}

/// Encodes one training example given as JSON into the model input
/// channels, returned as JSON with default encoder limits.
///
/// # Safety
/// All pointers must be valid; free the result with [`pk_string_free`].
#[no_mangle]
pub unsafe extern "C" fn pk_vocab_encode_example(
    vocab: *const PkVocab,
    example_json: *const c_char,
    out_json: *mut *mut c_char,
) -> PkStatus {
    guard(|| {
        let v = ref_arg(vocab, "vocab")?;
        let x: TrainingExample = serde_json::from_str(str_arg(example_json, "example_json")?)
            .map_err(|e| Failure(PkStatus::Data, e.to_string()))?;
        let enc = assemble_sequence(&x, &v.0, &EncoderConfig::default())
            .map_err(|e| Failure(PkStatus::Data, e.to_string()))?;
        let json = serde_json::to_string(&enc).map_err(|e| Failure(PkStatus::Data, e.to_string()))?;
        *out_arg(out_json, "out_json")? = c_string(json)?;
        Ok(())
    })
}

/// # Safety
/// `vocab` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn pk_vocab_free(vocab: *mut PkVocab) {
    free_handle(vocab);
}

/// Whether position `i` may attend to `j` in a sequence of `source_len`
/// source and `target_len` target tokens.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pk_mask_allowed(
    source_len: usize,
    target_len: usize,
    i: usize,
    j: usize,
    out: *mut bool,
) -> PkStatus {
    guard(|| {
        let m = build_unilm_mask(source_len, target_len);
        if i >= m.size() || j >= m.size() {
            return Err(Failure(PkStatus::Data, format!("({i}, {j}) outside a {0}x{0} mask", m.size())));
        }
        *out_arg(out, "out")? = m.allowed(i, j);
        Ok(())
    })
}

/// Writes the full mask row-major as 0/1 bytes; `out` must hold
/// `(source_len + target_len)^2` bytes.
///
/// # Safety
/// `out` must hold `capacity` bytes.
#[no_mangle]
pub unsafe extern "C" fn pk_mask_fill(source_len: usize, target_len: usize, out: *mut u8, capacity: usize) -> PkStatus {
    guard(|| {
        let m = build_unilm_mask(source_len, target_len);
        let n = m.size();
        if n * n > capacity {
            return Err(Failure(PkStatus::BufferTooSmall, format!("mask needs {} bytes", n * n)));
        }
        if n == 0 {
            return Ok(());
        }
        if out.is_null() {
            return Err(Failure(PkStatus::NullArgument, "out is null".into()));
        }
        let buf = std::slice::from_raw_parts_mut(out, n * n);
        for i in 0..n {
            for j in 0..n {
                buf[i * n + j] = u8::from(m.allowed(i, j));
            }
        }
        Ok(())
    })
}

/// distinct-n over the whitespace tokens of `count` responses.
///
/// # Safety
/// `responses` must hold `count` valid strings; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pk_distinct_n(
    responses: *const *const c_char,
    count: usize,
    n: usize,
    out: *mut f64,
) -> PkStatus {
    guard(|| {
        if count > 0 && responses.is_null() {
            return Err(Failure(PkStatus::NullArgument, "responses is null".into()));
        }
        let mut toks = Vec::with_capacity(count);
        for k in 0..count {
            toks.push(str_arg(*responses.add(k), "response")?.split_whitespace().collect::<Vec<_>>());
        }
        *out_arg(out, "out")? = distinct_n(&toks, n)?;
        Ok(())
    })
}

/// Consistency score of one response from its per-triple labels, given as
/// [`PkNliLabel`] codes: +1 per entailment, -1 per contradiction.
///
/// # Safety
/// `labels` must hold `count` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pk_consistency_score(labels: *const i32, count: usize, out: *mut i64) -> PkStatus {
    guard(|| {
        if count > 0 && labels.is_null() {
            return Err(Failure(PkStatus::NullArgument, "labels is null".into()));
        }
        let ls = if count == 0 { &[][..] } else { std::slice::from_raw_parts(labels, count) };
        let mut score = 0;
        for &code in ls {
            score += nli_label(code)?.verdict();
        }
        *out_arg(out, "out")? = score;
        Ok(())
    })
}
