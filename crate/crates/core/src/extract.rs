//! Persona extraction backends.
//!
//! Every backend maps an utterance to a [`PersonaSummary`], either a
//! `[SEP]`-delimited triple or `[None]`. The rule backend is a deterministic
//! pattern matcher; the remote backend forwards batches to an HTTP service
//! that hosts a trained summarization model.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::ingest::DialogueSession;
use crate::persona::{tokenize_lower, AttributeRegistry, PersonaSummary, SEP};

/// Produces one summary per utterance. Implementations are total: failures
/// degrade to `[None]`.
pub trait ExtractorBackend: Send + Sync {
    fn extract(&self, text: &str) -> PersonaSummary;

    fn extract_batch(&self, texts: &[String]) -> Vec<PersonaSummary> {
        texts.iter().map(|t| self.extract(t)).collect()
    }
}

/// Words and punctuation that end the clause a capture may span.
const CLAUSE_BOUNDARIES: &[&str] = &[
    ",", ".", "!", "?", ";", ":", "and", "but", "or", "so", "because", "though", "although", "while",
];

/// Longest capture kept from a pattern match.
pub const MAX_CAPTURE_TOKENS: usize = 8;

const SLOT: &str = "{X}";

/// Splits lowercased text into words, separating leading and trailing
/// punctuation into their own tokens.
pub fn pattern_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in tokenize_lower(text) {
        let lead: Vec<char> = word.chars().take_while(|c| is_punct(*c)).collect();
        let rest: String = word.chars().skip(lead.len()).collect();
        let core_len = rest.trim_end_matches(is_punct).len();
        let (core, trail) = rest.split_at(core_len);
        out.extend(lead.iter().map(|c| c.to_string()));
        if !core.is_empty() {
            out.push(core.to_string());
        }
        out.extend(trail.chars().map(|c| c.to_string()));
    }
    out
}

fn is_punct(c: char) -> bool {
    matches!(c, ',' | '.' | '!' | '?' | ';' | ':' | '"' | '(' | ')')
}

/// A surface template with one capture slot, e.g. `i like {X}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatternRule {
    prefix: Vec<String>,
    suffix: Vec<String>,
    attribute: String,
    subject: Vec<String>,
}

/// Serialized form of a rule, as written in config files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternRuleSpec {
    pub pattern: String,
    pub attribute: String,
    pub subject: String,
}

impl PatternRule {
    pub fn new(pattern: &str, attribute: &str, subject: &str, registry: &AttributeRegistry) -> Result<Self, ConfigError> {
        if pattern.matches(SLOT).count() != 1 {
            return Err(ConfigError::new(format!(
                "pattern {pattern:?} must contain exactly one {SLOT} slot"
            )));
        }
        let (before, after) = pattern.split_once(SLOT).unwrap();
        let attribute = tokenize_lower(attribute).join(" ");
        if !registry.contains(&attribute) {
            return Err(ConfigError::new(format!(
                "pattern {pattern:?}: attribute {attribute:?} is not in the registry"
            )));
        }
        let subject = tokenize_lower(subject);
        if subject.is_empty() {
            return Err(ConfigError::new(format!("pattern {pattern:?}: empty subject")));
        }
        let prefix = pattern_tokens(before);
        if prefix.is_empty() {
            return Err(ConfigError::new(format!("pattern {pattern:?}: slot needs a leading anchor")));
        }
        Ok(Self {
            prefix,
            suffix: pattern_tokens(after),
            attribute,
            subject,
        })
    }

    pub fn from_spec(spec: &PatternRuleSpec, registry: &AttributeRegistry) -> Result<Self, ConfigError> {
        Self::new(&spec.pattern, &spec.attribute, &spec.subject, registry)
    }

    pub fn attribute(&self) -> &str {
        &self.attribute
    }

    /// Returns the captured object tokens of the first match, if any.
    fn capture<'a>(&self, tokens: &'a [String]) -> Option<&'a [String]> {
        let n = self.prefix.len();
        if tokens.len() <= n {
            return None;
        }
        for start in 0..=tokens.len() - n {
            if tokens[start..start + n] != self.prefix[..] {
                continue;
            }
            let rest = &tokens[start + n..];
            let clause_end = rest
                .iter()
                .position(|t| CLAUSE_BOUNDARIES.contains(&t.as_str()))
                .unwrap_or(rest.len());
            let clause = &rest[..clause_end];
            let cap = if self.suffix.is_empty() {
                clause
            } else {
                match find(clause, &self.suffix) {
                    Some(at) => &clause[..at],
                    None => continue,
                }
            };
            let cap = &cap[..cap.len().min(MAX_CAPTURE_TOKENS)];
            if !cap.is_empty() {
                return Some(cap);
            }
        }
        None
    }

    fn summary(&self, object: &[String]) -> PersonaSummary {
        PersonaSummary(format!(
            "{} {SEP} {} {SEP} {}",
            self.subject.join(" "),
            self.attribute,
            object.join(" ")
        ))
    }
}

fn find(hay: &[String], needle: &[String]) -> Option<usize> {
    if needle.len() > hay.len() {
        return None;
    }
    (0..=hay.len() - needle.len()).find(|&i| hay[i..i + needle.len()] == *needle)
}

/// First matching rule in document order wins; no match yields `[None]`.
pub fn rule_extract(text: &str, rules: &[PatternRule]) -> PersonaSummary {
    let tokens = pattern_tokens(text);
    rules
        .iter()
        .find_map(|r| r.capture(&tokens).map(|cap| r.summary(cap)))
        .unwrap_or_else(PersonaSummary::none)
}

#[derive(Debug, Clone)]
pub struct RuleExtractor {
    rules: Vec<PatternRule>,
}

impl RuleExtractor {
    pub fn new(rules: Vec<PatternRule>) -> Self {
        Self { rules }
    }

    pub fn from_specs(specs: &[PatternRuleSpec], registry: &AttributeRegistry) -> Result<Self, ConfigError> {
        let rules = specs
            .iter()
            .map(|s| PatternRule::from_spec(s, registry))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::new(rules))
    }

    pub fn rules(&self) -> &[PatternRule] {
        &self.rules
    }
}

impl ExtractorBackend for RuleExtractor {
    fn extract(&self, text: &str) -> PersonaSummary {
        rule_extract(text, &self.rules)
    }
}

/// Built-in first-person templates over the shipped attribute list.
pub fn default_rule_specs() -> Vec<PatternRuleSpec> {
    const RULES: &[(&str, &str)] = &[
        ("i like to drink {X}", "like_drink"),
        ("i love to drink {X}", "like_drink"),
        ("my favorite drink is {X}", "favorite_drink"),
        ("my favorite color is {X}", "favorite_color"),
        ("my favorite food is {X}", "favorite_food"),
        ("my favorite sport is {X}", "favorite_sport"),
        ("i have a pet {X}", "have_pet"),
        ("i have two {X}", "have"),
        ("i live in {X}", "live_in_citystatecountry"),
        ("i am from {X}", "place_origin"),
        ("i work as a {X}", "has_profession"),
        ("i work as an {X}", "has_profession"),
        ("i am a {X} by trade", "has_profession"),
        ("i play {X}", "like_sports"),
        ("i like to {X}", "like_activity"),
        ("i like {X}", "like_general"),
        ("i love {X}", "like_general"),
        ("i hate {X}", "dislike"),
        ("i have a {X}", "have"),
        ("i have an {X}", "have"),
        ("i am married to {X}", "marital_status"),
        ("i drive a {X}", "have_vehicle"),
        ("i want to {X}", "want_do"),
    ];
    RULES
        .iter()
        .map(|(p, a)| PatternRuleSpec {
            pattern: p.to_string(),
            attribute: a.to_string(),
            subject: "i".into(),
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtractRequest {
    pub utterances: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtractResponse {
    pub summaries: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    /// Base address, e.g. `http://127.0.0.1:8080`.
    pub endpoint: String,
    pub timeout_ms: u64,
    pub retries: u32,
    pub batch_size: usize,
    pub max_in_flight: usize,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8080".into(),
            timeout_ms: 10_000,
            retries: 2,
            batch_size: 64,
            max_in_flight: 4,
        }
    }
}

/// Counters shared across clones of a remote backend.
#[derive(Debug, Default)]
pub struct RemoteCounters {
    pub requests: AtomicU64,
    pub attempts: AtomicU64,
    pub failed_batches: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemoteStats {
    pub requests: u64,
    pub attempts: u64,
    pub failed_batches: u64,
}

/// Client for the `POST /extract` service.
#[derive(Clone)]
pub struct RemoteExtractor {
    cfg: RemoteConfig,
    agent: ureq::Agent,
    counters: Arc<RemoteCounters>,
}

impl RemoteExtractor {
    pub fn new(cfg: RemoteConfig) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_millis(cfg.timeout_ms))
            .build();
        Self {
            cfg,
            agent,
            counters: Arc::new(RemoteCounters::default()),
        }
    }

    pub fn stats(&self) -> RemoteStats {
        RemoteStats {
            requests: self.counters.requests.load(Ordering::Relaxed),
            attempts: self.counters.attempts.load(Ordering::Relaxed),
            failed_batches: self.counters.failed_batches.load(Ordering::Relaxed),
        }
    }

    fn url(&self) -> String {
        format!("{}/extract", self.cfg.endpoint.trim_end_matches('/'))
    }

    fn call(&self, texts: &[String]) -> Result<Vec<PersonaSummary>, String> {
        let body = ExtractRequest {
            utterances: texts.to_vec(),
        };
        let resp = self.agent.post(&self.url()).send_json(&body).map_err(|e| e.to_string())?;
        if resp.status() != 200 {
            return Err(format!("status {}", resp.status()));
        }
        let parsed: ExtractResponse = resp.into_json().map_err(|e| e.to_string())?;
        if parsed.summaries.len() != texts.len() {
            return Err(format!(
                "expected {} summaries, got {}",
                texts.len(),
                parsed.summaries.len()
            ));
        }
        Ok(parsed.summaries.into_iter().map(PersonaSummary).collect())
    }

    /// One batch with retries. Exhausted retries degrade every element to
    /// `[None]`.
    fn run_batch(&self, texts: &[String]) -> Vec<PersonaSummary> {
        self.counters.requests.fetch_add(1, Ordering::Relaxed);
        let mut last_err = String::new();
        for attempt in 0..=self.cfg.retries {
            self.counters.attempts.fetch_add(1, Ordering::Relaxed);
            match self.call(texts) {
                Ok(s) => return s,
                Err(e) => {
                    log::debug!("extract attempt {} failed: {e}", attempt + 1);
                    last_err = e;
                }
            }
        }
        log::warn!("extract batch of {} degraded to [None]: {last_err}", texts.len());
        self.counters.failed_batches.fetch_add(1, Ordering::Relaxed);
        vec![PersonaSummary::none(); texts.len()]
    }
}

impl ExtractorBackend for RemoteExtractor {
    fn extract(&self, text: &str) -> PersonaSummary {
        self.run_batch(&[text.to_string()]).pop().unwrap()
    }

    fn extract_batch(&self, texts: &[String]) -> Vec<PersonaSummary> {
        remote_extract_with(self, texts)
    }
}

fn remote_extract_with(client: &RemoteExtractor, texts: &[String]) -> Vec<PersonaSummary> {
    let batch = client.cfg.batch_size.max(1);
    let chunks: Vec<&[String]> = texts.chunks(batch).collect();
    let mut out = Vec::with_capacity(texts.len());
    for wave in chunks.chunks(client.cfg.max_in_flight.max(1)) {
        let results: Vec<Vec<PersonaSummary>> = thread::scope(|s| {
            let handles: Vec<_> = wave.iter().map(|c| s.spawn(|| client.run_batch(c))).collect();
            handles.into_iter().map(|h| h.join().expect("extract worker panicked")).collect()
        });
        for r in results {
            out.extend(r);
        }
    }
    out
}

/// Sends `texts` to the extraction service in batches, preserving order.
pub fn remote_extract(texts: &[String], cfg: &RemoteConfig) -> (Vec<PersonaSummary>, RemoteStats) {
    let client = RemoteExtractor::new(cfg.clone());
    let out = remote_extract_with(&client, texts);
    (out, client.stats())
}

/// A session with one summary per utterance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedSession {
    #[serde(flatten)]
    pub session: DialogueSession,
    pub summaries: Vec<PersonaSummary>,
}

pub fn annotate_session(session: DialogueSession, backend: &dyn ExtractorBackend) -> AnnotatedSession {
    let texts: Vec<String> = session.utterances.iter().map(|u| u.text.clone()).collect();
    let summaries = backend.extract_batch(&texts);
    assert_eq!(summaries.len(), texts.len(), "extractor backend broke arity");
    AnnotatedSession { session, summaries }
}

pub fn annotate_sessions<'a, I>(sessions: I, backend: &'a dyn ExtractorBackend) -> impl Iterator<Item = AnnotatedSession> + 'a
where
    I: IntoIterator<Item = DialogueSession>,
    I::IntoIter: 'a,
{
    sessions.into_iter().map(move |s| annotate_session(s, backend))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Utterance;

    fn registry() -> AttributeRegistry {
        AttributeRegistry::parse("like\nhave\nlive_in\n").unwrap()
    }

    fn rules() -> Vec<PatternRule> {
        let r = registry();
        vec![
            PatternRule::new("i like {X}", "like", "i", &r).unwrap(),
            PatternRule::new("i have a {X}", "have", "i", &r).unwrap(),
        ]
    }

    #[test]
    fn simple_match() {
        assert_eq!(rule_extract("i like swimming", &rules()).as_str(), "i [SEP] like [SEP] swimming");
    }

    #[test]
    fn no_match_is_none() {
        assert!(rule_extract("the weather is nice", &rules()).is_none());
    }

    #[test]
    fn first_rule_wins() {
        let s = rule_extract("i like swimming and i have a dog", &rules());
        assert_eq!(s.as_str(), "i [SEP] like [SEP] swimming");
        let s = rule_extract("i have a dog and i like swimming", &rules());
        assert_eq!(s.as_str(), "i [SEP] like [SEP] swimming");
    }

    #[test]
    fn capture_stops_at_punctuation_and_cap() {
        assert_eq!(rule_extract("well, i like tea. you?", &rules()).as_str(), "i [SEP] like [SEP] tea");
        let long = "i like a b c d e f g h i j k";
        assert_eq!(rule_extract(long, &rules()).as_str(), "i [SEP] like [SEP] a b c d e f g h");
    }

    #[test]
    fn empty_capture_falls_through() {
        assert_eq!(rule_extract("i like, i have a cat", &rules()).as_str(), "i [SEP] have [SEP] cat");
    }

    #[test]
    fn suffix_pattern() {
        let r = AttributeRegistry::parse("job\n").unwrap();
        let rule = PatternRule::new("i am a {X} by trade", "job", "i", &r).unwrap();
        assert_eq!(rule_extract("i am a baker by trade", std::slice::from_ref(&rule)).as_str(), "i [SEP] job [SEP] baker");
        assert!(rule_extract("i am a baker", &[rule]).is_none());
    }

    #[test]
    fn rule_validation() {
        let r = registry();
        assert!(PatternRule::new("i like", "like", "i", &r).is_err());
        assert!(PatternRule::new("{X} and {X}", "like", "i", &r).is_err());
        assert!(PatternRule::new("i enjoy {X}", "enjoy", "i", &r).is_err());
        assert!(PatternRule::new("{X} rocks", "like", "i", &r).is_err());
    }

    #[test]
    fn default_rules_validate() {
        let ex = RuleExtractor::from_specs(&default_rule_specs(), &AttributeRegistry::builtin()).unwrap();
        assert_eq!(ex.extract("i live in paris").as_str(), "i [SEP] live_in_citystatecountry [SEP] paris");
        assert_eq!(ex.extract("i like to drink tea").as_str(), "i [SEP] like_drink [SEP] tea");
    }

    #[test]
    fn annotate_arity_and_elementwise() {
        let ex = RuleExtractor::new(rules());
        let session = DialogueSession {
            session_id: "s".into(),
            utterances: vec![
                Utterance::new("a", "hello"),
                Utterance::new("b", "i like tea"),
                Utterance::new("a", "i have a cat"),
            ],
        };
        let out: Vec<_> = annotate_sessions(vec![session.clone()], &ex).collect();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].session, session);
        let expected: Vec<_> = session.utterances.iter().map(|u| rule_extract(&u.text, &rules())).collect();
        assert_eq!(out[0].summaries, expected);
        assert!(annotate_sessions(Vec::new(), &ex).next().is_none());
    }

    #[test]
    fn pattern_tokenization() {
        assert_eq!(pattern_tokens("Well, I like tea!"), ["well", ",", "i", "like", "tea", "!"]);
        assert_eq!(pattern_tokens("(really)"), ["(", "really", ")"]);
    }
}
