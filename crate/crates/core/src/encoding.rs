//! Model input encoding.
//!
//! An example becomes one flat sequence
//!
//! ```text
//! [BOS] p1 [SEP] p2 [SEP] ... | c1 [SEP] ... cN [SEP] | r1 ... rT [EOS]
//! ```
//!
//! with four aligned channels: token id, position within its unit, turn
//! distance to the response, and speaker type (0 responder, 1 other speaker,
//! 2 persona). Persona and context form the source; the response plus
//! `[EOS]` is the target.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::ConfigError;
use crate::profile::TrainingExample;

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const SEP_TOKEN: &str = "[SEP]";
pub const BOS: &str = "[BOS]";
pub const EOS: &str = "[EOS]";
pub const SPECIALS: [&str; 5] = [PAD, UNK, SEP_TOKEN, BOS, EOS];

pub const TYPE_RESPONDER: u32 = 0;
pub const TYPE_OTHER: u32 = 1;
pub const TYPE_PERSONA: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpecialIds {
    pub pad: u32,
    pub unk: u32,
    pub sep: u32,
    pub bos: u32,
    pub eos: u32,
}

pub trait Tokenizer: Send + Sync {
    fn encode(&self, text: &str) -> Vec<u32>;
    fn decode(&self, ids: &[u32]) -> String;
    fn specials(&self) -> SpecialIds;
    fn vocab_size(&self) -> usize;
}

/// Whitespace/lowercase word vocabulary with the specials pinned at ids 0-4.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordVocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl WordVocab {
    fn from_ranked(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Self { tokens, index }
    }

    pub fn specials_only() -> Self {
        Self::from_ranked(SPECIALS.iter().map(|s| s.to_string()).collect())
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    /// Vocabulary file: one token per line in rank order, specials first.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        if tokens.len() < SPECIALS.len() || tokens[..SPECIALS.len()] != SPECIALS {
            return Err(ConfigError::new("vocabulary file must start with the special tokens"));
        }
        let v = Self::from_ranked(tokens);
        if v.index.len() != v.tokens.len() {
            return Err(ConfigError::new("vocabulary file has duplicate tokens"));
        }
        Ok(v)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ConfigError::new(format!("cannot read vocabulary {}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().map(str::to_lowercase)
}

impl Tokenizer for WordVocab {
    fn encode(&self, text: &str) -> Vec<u32> {
        words(text).map(|w| self.id(&w).unwrap_or(1)).collect()
    }

    fn decode(&self, ids: &[u32]) -> String {
        ids.iter()
            .map(|&i| self.tokens.get(i as usize).map_or(UNK, String::as_str))
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn specials(&self) -> SpecialIds {
        SpecialIds {
            pad: 0,
            unk: 1,
            sep: 2,
            bos: 3,
            eos: 4,
        }
    }

    fn vocab_size(&self) -> usize {
        self.tokens.len()
    }
}

/// Mergeable word-frequency counts.
#[derive(Debug, Clone, Default)]
pub struct WordCounts(HashMap<String, u64>);

impl WordCounts {
    pub fn add_text(&mut self, text: &str) {
        for w in words(text) {
            *self.0.entry(w).or_insert(0) += 1;
        }
    }

    pub fn add_example(&mut self, x: &TrainingExample) {
        for t in x.profile.triples() {
            self.add_text(&t.surface());
        }
        for u in &x.context {
            self.add_text(&u.text);
        }
        self.add_text(&x.response.text);
    }

    pub fn merge(&mut self, other: &WordCounts) {
        for (k, v) in &other.0 {
            *self.0.entry(k.clone()).or_insert(0) += v;
        }
    }

    /// Most frequent words first, ties broken lexicographically. `max_size`
    /// counts the specials.
    pub fn finalize(&self, max_size: usize) -> WordVocab {
        let mut ranked: Vec<(&String, u64)> = self
            .0
            .iter()
            .filter(|(w, _)| !SPECIALS.contains(&w.as_str()))
            .map(|(w, c)| (w, *c))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let room = max_size.saturating_sub(SPECIALS.len());
        let tokens = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().take(room).map(|(w, _)| w.clone()))
            .collect();
        WordVocab::from_ranked(tokens)
    }
}

pub fn build_vocab<'a, I>(corpus: I, max_size: usize) -> WordVocab
where
    I: IntoIterator<Item = &'a str>,
{
    let mut counts = WordCounts::default();
    for text in corpus {
        counts.add_text(text);
    }
    counts.finalize(max_size)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    /// Cap on the persona segment, `[BOS]` and separators included.
    pub max_persona_tokens: usize,
    /// Cap on the context segment, separators included.
    pub max_context_tokens: usize,
    /// Cap on the target segment, `[EOS]` included.
    pub max_response_tokens: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            max_persona_tokens: 128,
            max_context_tokens: 128,
            max_response_tokens: 128,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.max_persona_tokens < 2 || self.max_context_tokens < 2 || self.max_response_tokens < 2 {
            return Err(ConfigError::new("encoder caps must be at least 2"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("response is empty after tokenization")]
    EmptyResponse,
    #[error("context is empty")]
    EmptyContext,
}

/// One encoded example. The attention mask is not stored; see
/// [`EncodedExample::mask`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedExample {
    pub tokens: Vec<u32>,
    pub positions: Vec<u32>,
    pub turns: Vec<u32>,
    pub types: Vec<u32>,
    pub source_len: usize,
    pub target_len: usize,
}

impl EncodedExample {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn mask(&self) -> UnilmMask {
        build_unilm_mask(self.source_len, self.target_len)
    }

    /// Length of the persona segment (the leading run of type 2).
    pub fn persona_len(&self) -> usize {
        self.types.iter().take_while(|&&t| t == TYPE_PERSONA).count()
    }

    /// The source part only, for decoding.
    pub fn source(&self) -> EncodedExample {
        let s = self.source_len;
        EncodedExample {
            tokens: self.tokens[..s].to_vec(),
            positions: self.positions[..s].to_vec(),
            turns: self.turns[..s].to_vec(),
            types: self.types[..s].to_vec(),
            source_len: s,
            target_len: 0,
        }
    }

    fn push(&mut self, token: u32, position: u32, turn: u32, kind: u32) {
        self.tokens.push(token);
        self.positions.push(position);
        self.turns.push(turn);
        self.types.push(kind);
    }

    /// Appends one response token to the target segment.
    pub fn push_target(&mut self, token: u32) {
        let position = self.target_len as u32;
        self.push(token, position, 0, TYPE_RESPONDER);
        self.target_len += 1;
    }
}

/// Turn channel of the context: utterance `i` (1-based) of `N` carries
/// `N - i + 1` on each of its tokens, so the last utterance gets 1.
pub fn turn_indices(utterance_lengths: &[usize]) -> Vec<u32> {
    let n = utterance_lengths.len();
    utterance_lengths
        .iter()
        .enumerate()
        .flat_map(|(i, &len)| std::iter::repeat_n((n - i) as u32, len))
        .collect()
}

/// Bidirectional over the source, causal over the target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnilmMask {
    pub source_len: usize,
    pub target_len: usize,
}

impl UnilmMask {
    pub fn size(&self) -> usize {
        self.source_len + self.target_len
    }

    #[inline]
    pub fn allowed(&self, i: usize, j: usize) -> bool {
        j < self.source_len || j <= i
    }

    /// Exclusive end of the contiguous allowed column range for row `i`.
    #[inline]
    pub fn row_end(&self, i: usize) -> usize {
        if i < self.source_len {
            self.source_len
        } else {
            i + 1
        }
    }

    pub fn to_matrix(&self) -> Vec<Vec<bool>> {
        let n = self.size();
        (0..n).map(|i| (0..n).map(|j| self.allowed(i, j)).collect()).collect()
    }
}

pub fn build_unilm_mask(source_len: usize, target_len: usize) -> UnilmMask {
    UnilmMask {
        source_len,
        target_len,
    }
}

/// Lays out an example per the segment rules, truncating whole persona
/// triples from the end and whole context utterances from the start.
pub fn assemble_sequence(
    x: &TrainingExample,
    tok: &dyn Tokenizer,
    cfg: &EncoderConfig,
) -> Result<EncodedExample, EncodeError> {
    let sp = tok.specials();
    if x.context.is_empty() {
        return Err(EncodeError::EmptyContext);
    }
    let mut response = tok.encode(&x.response.text);
    if response.is_empty() {
        return Err(EncodeError::EmptyResponse);
    }
    response.truncate(cfg.max_response_tokens - 1);

    let mut out = EncodedExample {
        tokens: Vec::new(),
        positions: Vec::new(),
        turns: Vec::new(),
        types: Vec::new(),
        source_len: 0,
        target_len: 0,
    };

    out.push(sp.bos, 0, 0, TYPE_PERSONA);
    let mut persona_used = 1;
    for t in x.profile.triples() {
        let ids = tok.encode(&t.surface());
        if ids.is_empty() {
            continue;
        }
        if persona_used + ids.len() + 1 > cfg.max_persona_tokens {
            break;
        }
        persona_used += ids.len() + 1;
        for (p, &id) in ids.iter().enumerate() {
            out.push(id, p as u32, 0, TYPE_PERSONA);
        }
        out.push(sp.sep, ids.len() as u32, 0, TYPE_PERSONA);
    }

    // Newest utterances first until the context budget is spent.
    let mut kept: Vec<(Vec<u32>, u32)> = Vec::new();
    let mut context_used = 0;
    for u in x.context.iter().rev() {
        let ids = tok.encode(&u.text);
        let kind = if u.speaker == x.response.speaker {
            TYPE_RESPONDER
        } else {
            TYPE_OTHER
        };
        if context_used + ids.len() + 1 > cfg.max_context_tokens {
            if kept.is_empty() {
                let mut ids = ids;
                ids.truncate(cfg.max_context_tokens - 1);
                kept.push((ids, kind));
            }
            break;
        }
        context_used += ids.len() + 1;
        kept.push((ids, kind));
    }
    kept.reverse();
    let lengths: Vec<usize> = kept.iter().map(|(ids, _)| ids.len() + 1).collect();
    let mut turns = turn_indices(&lengths).into_iter();
    for (ids, kind) in &kept {
        for (p, &id) in ids.iter().enumerate() {
            out.push(id, p as u32, turns.next().unwrap(), *kind);
        }
        out.push(sp.sep, ids.len() as u32, turns.next().unwrap(), *kind);
    }
    out.source_len = out.tokens.len();

    for &id in &response {
        out.push_target(id);
    }
    out.push_target(sp.eos);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Utterance;
    use crate::persona::PersonaTriple;
    use crate::profile::PersonaProfile;

    fn vocab() -> WordVocab {
        build_vocab(["hi hello i like tea have a dog how are you"], 100)
    }

    fn example(profile: Vec<PersonaTriple>, context: &[(&str, &str)], response: &str) -> TrainingExample {
        TrainingExample {
            profile: PersonaProfile::from_triples("bot", profile),
            context: context.iter().map(|(s, t)| Utterance::new(*s, *t)).collect(),
            response: Utterance::new("bot", response),
            marker: None,
        }
    }

    #[test]
    fn minimal_layout() {
        let v = vocab();
        let e = assemble_sequence(&example(vec![], &[("user", "hi")], "hello"), &v, &EncoderConfig::default()).unwrap();
        assert_eq!(v.decode(&e.tokens), "[BOS] hi [SEP] hello [EOS]");
        assert_eq!(e.types, [2, 1, 1, 0, 0]);
        assert_eq!(e.turns, [0, 1, 1, 0, 0]);
        assert_eq!(e.positions, [0, 0, 1, 0, 1]);
        assert_eq!((e.source_len, e.target_len), (3, 2));
    }

    #[test]
    fn persona_segment_layout() {
        let v = vocab();
        let p = vec![
            PersonaTriple::new("i", "like", "tea").unwrap(),
            PersonaTriple::new("i", "have", "a dog").unwrap(),
        ];
        let e = assemble_sequence(&example(p, &[("user", "hi")], "hello"), &v, &EncoderConfig::default()).unwrap();
        let persona = e.persona_len();
        assert_eq!(v.decode(&e.tokens[..persona]), "[BOS] i like tea [SEP] i have a dog [SEP]");
        assert!(e.types[..persona].iter().all(|&t| t == 2));
        assert!(e.turns[..persona].iter().all(|&t| t == 0));
        assert_eq!(&e.positions[..persona], &[0, 0, 1, 2, 3, 0, 1, 2, 3, 4]);
    }

    #[test]
    fn turns_count_down_and_types_follow_speaker() {
        let v = vocab();
        let ctx = [("user", "how are you"), ("bot", "hi"), ("user", "i like tea")];
        let e = assemble_sequence(&example(vec![], &ctx, "hello"), &v, &EncoderConfig::default()).unwrap();
        let ctx_turns: Vec<u32> = e.turns[1..e.source_len].to_vec();
        assert_eq!(ctx_turns, [3, 3, 3, 3, 2, 2, 1, 1, 1, 1]);
        let ctx_types: Vec<u32> = e.types[1..e.source_len].to_vec();
        assert_eq!(ctx_types, [1, 1, 1, 1, 0, 0, 1, 1, 1, 1]);
    }

    #[test]
    fn turn_indices_rule() {
        assert_eq!(turn_indices(&[1, 1, 1]), [3, 2, 1]);
        assert_eq!(turn_indices(&[2]), [1, 1]);
        assert!(turn_indices(&[]).is_empty());
    }

    #[test]
    fn truncation_drops_whole_units() {
        let v = vocab();
        let cfg = EncoderConfig {
            max_persona_tokens: 6,
            max_context_tokens: 5,
            max_response_tokens: 3,
        };
        let p = vec![
            PersonaTriple::new("i", "like", "tea").unwrap(),
            PersonaTriple::new("i", "have", "a dog").unwrap(),
        ];
        let ctx = [("user", "how are you"), ("bot", "hi"), ("user", "i like tea")];
        let e = assemble_sequence(&example(p, &ctx, "i like tea"), &v, &cfg).unwrap();
        assert_eq!(v.decode(&e.tokens), "[BOS] i like tea [SEP] i like tea [SEP] i like [EOS]");
        assert_eq!(e.persona_len(), 5);
        assert_eq!(e.source_len - e.persona_len(), 4);
        assert_eq!(e.target_len, 3);
    }

    #[test]
    fn oversized_last_utterance_is_cut() {
        let v = vocab();
        let cfg = EncoderConfig {
            max_context_tokens: 3,
            ..Default::default()
        };
        let e = assemble_sequence(&example(vec![], &[("u", "how are you i")], "hi"), &v, &cfg).unwrap();
        assert_eq!(v.decode(&e.tokens), "[BOS] how are [SEP] hi [EOS]");
    }

    #[test]
    fn empty_response_rejected() {
        let v = vocab();
        let err = assemble_sequence(&example(vec![], &[("u", "hi")], "   "), &v, &EncoderConfig::default()).unwrap_err();
        assert_eq!(err, EncodeError::EmptyResponse);
    }

    #[test]
    fn mask_small_case() {
        let m = build_unilm_mask(2, 2).to_matrix();
        let expect = [
            [true, true, false, false],
            [true, true, false, false],
            [true, true, true, false],
            [true, true, true, true],
        ];
        for (row, exp) in m.iter().zip(expect.iter()) {
            assert_eq!(row.as_slice(), exp.as_slice());
        }
        let m = build_unilm_mask(3, 1);
        assert!((0..4).all(|j| m.allowed(3, j)));
    }

    #[test]
    fn vocab_ranking_and_round_trip() {
        let v = build_vocab(["a a b"], 10);
        assert_eq!(&v.tokens()[5..], &["a", "b"]);
        assert_eq!(v.encode("zzz"), [1]);
        assert_eq!(v.decode(&v.encode("a b")), "a b");
        let tie = build_vocab(["c b a"], 10);
        assert_eq!(&tie.tokens()[5..], &["a", "b", "c"]);
        assert_eq!(build_vocab(std::iter::empty(), 10).vocab_size(), 5);
        assert_eq!(build_vocab(["a b c d"], 6).vocab_size(), 6);
    }

    #[test]
    fn vocab_file_round_trip() {
        let v = vocab();
        let back = WordVocab::parse(&v.to_file_string()).unwrap();
        assert_eq!(back, v);
        assert!(WordVocab::parse("a\nb\n").is_err());
        assert!(WordVocab::parse("[PAD]\n[UNK]\n[SEP]\n[BOS]\n[EOS]\nx\nx\n").is_err());
    }
}
