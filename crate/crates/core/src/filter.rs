//! Persona quality filter.
//!
//! Rules run in a fixed order and the first failure is reported:
//! `[None]` summary, bad format, attribute outside the registry, subject
//! longer than the limit, and finally similarity to the source utterance
//! below the threshold. Boundary values (exactly the limit, exactly the
//! threshold) are kept.

use std::collections::HashMap;
use std::fmt;
use std::hash::Hasher;
use std::sync::Arc;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::extract::AnnotatedSession;
use crate::ingest::DialogueSession;
use crate::persona::{parse_summary, AttributeRegistry, PersonaSummary, PersonaTriple};

/// Cosine similarity between two texts.
pub trait SimilarityBackend: Send + Sync {
    fn similarity(&self, a: &str, b: &str) -> f64;
}

/// Tokens used by the hashed bag-of-words: lowercase whitespace split with
/// surrounding punctuation trimmed.
pub fn bow_tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().filter_map(|w| {
        let t = w.trim_matches(|c: char| c.is_ascii_punctuation()).to_lowercase();
        (!t.is_empty()).then_some(t)
    })
}

/// 64-bit FNV-1a over the token's UTF-8 bytes. This is the bucket hash of
/// the hashed vectors and must stay stable across releases.
pub fn token_hash(token: &str) -> u64 {
    let mut h = FnvHasher::default();
    h.write(token.as_bytes());
    h.finish()
}

/// Document frequencies for inverse-document-frequency weighting.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DocFreq {
    pub docs: u64,
    pub counts: HashMap<String, u64>,
}

impl DocFreq {
    pub fn add_document(&mut self, text: &str) {
        self.docs += 1;
        let mut seen: Vec<String> = bow_tokens(text).collect();
        seen.sort();
        seen.dedup();
        for t in seen {
            *self.counts.entry(t).or_insert(0) += 1;
        }
    }

    pub fn merge(&mut self, other: &DocFreq) {
        self.docs += other.docs;
        for (k, v) in &other.counts {
            *self.counts.entry(k.clone()).or_insert(0) += v;
        }
    }

    /// Smoothed idf, always positive: `ln((1 + N) / (1 + df)) + 1`.
    pub fn idf(&self, token: &str) -> f64 {
        let df = self.counts.get(token).copied().unwrap_or(0);
        ((1.0 + self.docs as f64) / (1.0 + df as f64)).ln() + 1.0
    }
}

fn hashed_vector(text: &str, dims: usize, stats: Option<&DocFreq>) -> HashMap<usize, f64> {
    let mut v: HashMap<usize, f64> = HashMap::new();
    for tok in bow_tokens(text) {
        let w = stats.map_or(1.0, |s| s.idf(&tok));
        *v.entry((token_hash(&tok) % dims as u64) as usize).or_insert(0.0) += w;
    }
    v
}

/// Cosine of hashed term-frequency vectors, idf-weighted when `stats` is
/// given. Returns 0 when either side has no tokens.
pub fn tfidf_hash_similarity(a: &str, b: &str, dims: usize, stats: Option<&DocFreq>) -> f64 {
    assert!(dims >= 64, "hashed similarity needs at least 64 dimensions");
    let va = hashed_vector(a, dims, stats);
    let vb = hashed_vector(b, dims, stats);
    if va.is_empty() || vb.is_empty() {
        return 0.0;
    }
    let (small, large) = if va.len() <= vb.len() { (&va, &vb) } else { (&vb, &va) };
    let dot: f64 = small.iter().filter_map(|(k, x)| large.get(k).map(|y| x * y)).sum();
    let na: f64 = va.values().map(|x| x * x).sum();
    let nb: f64 = vb.values().map(|x| x * x).sum();
    (dot / (na * nb).sqrt()).min(1.0)
}

/// Baseline similarity backend.
#[derive(Debug, Clone)]
pub struct HashedTfIdf {
    pub dims: usize,
    pub stats: Option<Arc<DocFreq>>,
}

impl Default for HashedTfIdf {
    fn default() -> Self {
        Self {
            dims: 4096,
            stats: None,
        }
    }
}

impl SimilarityBackend for HashedTfIdf {
    fn similarity(&self, a: &str, b: &str) -> f64 {
        tfidf_hash_similarity(a, b, self.dims, self.stats.as_deref())
    }
}

#[derive(Clone)]
pub struct FilterConfig {
    max_subject_tokens: usize,
    min_similarity: f64,
    registry: AttributeRegistry,
    similarity: Arc<dyn SimilarityBackend>,
}

impl fmt::Debug for FilterConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FilterConfig")
            .field("max_subject_tokens", &self.max_subject_tokens)
            .field("min_similarity", &self.min_similarity)
            .field("registry", &self.registry.len())
            .finish()
    }
}

impl FilterConfig {
    pub const DEFAULT_MAX_SUBJECT_TOKENS: usize = 5;
    pub const DEFAULT_MIN_SIMILARITY: f64 = 0.1;

    pub fn new(
        max_subject_tokens: usize,
        min_similarity: f64,
        registry: AttributeRegistry,
        similarity: Arc<dyn SimilarityBackend>,
    ) -> Result<Self, ConfigError> {
        if max_subject_tokens < 1 {
            return Err(ConfigError::new("max_subject_tokens must be at least 1"));
        }
        if !(0.0..=1.0).contains(&min_similarity) {
            return Err(ConfigError::new("min_similarity must lie in [0, 1]"));
        }
        Ok(Self {
            max_subject_tokens,
            min_similarity,
            registry,
            similarity,
        })
    }

    /// Default thresholds with the baseline similarity backend.
    pub fn with_registry(registry: AttributeRegistry) -> Self {
        Self::new(
            Self::DEFAULT_MAX_SUBJECT_TOKENS,
            Self::DEFAULT_MIN_SIMILARITY,
            registry,
            Arc::new(HashedTfIdf::default()),
        )
        .unwrap()
    }

    pub fn max_subject_tokens(&self) -> usize {
        self.max_subject_tokens
    }

    pub fn min_similarity(&self) -> f64 {
        self.min_similarity
    }

    pub fn registry(&self) -> &AttributeRegistry {
        &self.registry
    }

    pub fn similarity(&self) -> &dyn SimilarityBackend {
        self.similarity.as_ref()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterReason {
    Ok,
    NoneSummary,
    BadFormat,
    UnknownAttribute,
    SubjectTooLong,
    LowSimilarity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FilterVerdict {
    pub reason: FilterReason,
}

impl FilterVerdict {
    pub fn kept(&self) -> bool {
        self.reason == FilterReason::Ok
    }
}

pub fn filter_one(
    summary: &PersonaSummary,
    source_utterance: &str,
    cfg: &FilterConfig,
) -> (Option<PersonaTriple>, FilterVerdict) {
    let reject = |reason| (None, FilterVerdict { reason });
    if summary.is_none() {
        return reject(FilterReason::NoneSummary);
    }
    let triple = match parse_summary(summary) {
        Ok(Some(t)) => t,
        Ok(None) => return reject(FilterReason::NoneSummary),
        Err(_) => return reject(FilterReason::BadFormat),
    };
    if !cfg.registry.contains(triple.attribute()) {
        return reject(FilterReason::UnknownAttribute);
    }
    if triple.subject().len() > cfg.max_subject_tokens {
        return reject(FilterReason::SubjectTooLong);
    }
    if cfg.similarity.similarity(source_utterance, &triple.surface()) < cfg.min_similarity {
        return reject(FilterReason::LowSimilarity);
    }
    (Some(triple), FilterVerdict { reason: FilterReason::Ok })
}

/// Verdict counts by reason.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterStats {
    pub ok: u64,
    pub none_summary: u64,
    pub bad_format: u64,
    pub unknown_attribute: u64,
    pub subject_too_long: u64,
    pub low_similarity: u64,
}

impl FilterStats {
    pub fn record(&mut self, reason: FilterReason) {
        *match reason {
            FilterReason::Ok => &mut self.ok,
            FilterReason::NoneSummary => &mut self.none_summary,
            FilterReason::BadFormat => &mut self.bad_format,
            FilterReason::UnknownAttribute => &mut self.unknown_attribute,
            FilterReason::SubjectTooLong => &mut self.subject_too_long,
            FilterReason::LowSimilarity => &mut self.low_similarity,
        } += 1;
    }

    pub fn total(&self) -> u64 {
        self.ok + self.none_summary + self.bad_format + self.unknown_attribute + self.subject_too_long + self.low_similarity
    }

    pub fn merge(&mut self, o: &FilterStats) {
        self.ok += o.ok;
        self.none_summary += o.none_summary;
        self.bad_format += o.bad_format;
        self.unknown_attribute += o.unknown_attribute;
        self.subject_too_long += o.subject_too_long;
        self.low_similarity += o.low_similarity;
    }
}

/// A session with the kept triple (if any) of each utterance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilteredSession {
    #[serde(flatten)]
    pub session: DialogueSession,
    pub triples: Vec<Option<PersonaTriple>>,
}

/// One rejected summary, for the optional audit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub session_id: String,
    pub utterance: usize,
    pub summary: String,
    pub reason: FilterReason,
}

pub fn filter_session(
    annotated: AnnotatedSession,
    cfg: &FilterConfig,
    stats: &mut FilterStats,
    mut audit: Option<&mut dyn FnMut(AuditEntry)>,
) -> FilteredSession {
    let AnnotatedSession { session, summaries } = annotated;
    let mut triples = Vec::with_capacity(summaries.len());
    for (i, (summary, utt)) in summaries.iter().zip(&session.utterances).enumerate() {
        let (triple, verdict) = filter_one(summary, &utt.text, cfg);
        stats.record(verdict.reason);
        if !verdict.kept() && verdict.reason != FilterReason::NoneSummary {
            if let Some(sink) = audit.as_mut() {
                sink(AuditEntry {
                    session_id: session.session_id.clone(),
                    utterance: i,
                    summary: summary.0.clone(),
                    reason: verdict.reason,
                });
            }
        }
        triples.push(triple);
    }
    FilteredSession { session, triples }
}

pub fn filter_stream<I>(annotated: I, cfg: &FilterConfig) -> (Vec<FilteredSession>, FilterStats)
where
    I: IntoIterator<Item = AnnotatedSession>,
{
    let mut stats = FilterStats::default();
    let out = annotated
        .into_iter()
        .map(|a| filter_session(a, cfg, &mut stats, None))
        .collect();
    (out, stats)
}
