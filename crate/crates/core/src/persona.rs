//! Persona triples, extractor summaries and the attribute registry.
//!
//! A persona is a `(subject, attribute, object)` triple such as
//! `(i, like, swimming)`. Extractors emit it as the text
//! `subject [SEP] attribute [SEP] object`, or the sentinel `[None]` when an
//! utterance carries no persona.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, FormatError, FormatReason};

/// Delimiter between the parts of a serialized triple.
pub const SEP: &str = "[SEP]";
/// Summary emitted for utterances without a persona.
pub const NONE_SUMMARY: &str = "[None]";

/// Attribute list shipped with the crate (DNLI-style relation symbols).
pub const DEFAULT_ATTRIBUTES: &str = include_str!("../data/attributes.txt");

/// Splits on whitespace after lowercasing. This is the tokenization used for
/// triple parts everywhere in the pipeline.
pub fn tokenize_lower(text: &str) -> Vec<String> {
    text.split_whitespace().map(|t| t.to_lowercase()).collect()
}

/// One persona fact about a speaker.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PersonaTriple {
    subject: Vec<String>,
    attribute: String,
    object: Vec<String>,
}

impl PersonaTriple {
    /// Builds a triple from raw text parts. Each part is lowercased and split
    /// on whitespace; `None` is returned if any part ends up empty.
    pub fn new(subject: &str, attribute: &str, object: &str) -> Option<Self> {
        let subject = tokenize_lower(subject);
        let attribute = tokenize_lower(attribute).join(" ");
        let object = tokenize_lower(object);
        if subject.is_empty() || attribute.is_empty() || object.is_empty() {
            return None;
        }
        Some(Self {
            subject,
            attribute,
            object,
        })
    }

    pub fn subject(&self) -> &[String] {
        &self.subject
    }

    pub fn attribute(&self) -> &str {
        &self.attribute
    }

    pub fn object(&self) -> &[String] {
        &self.object
    }

    pub fn subject_text(&self) -> String {
        self.subject.join(" ")
    }

    pub fn object_text(&self) -> String {
        self.object.join(" ")
    }

    /// Renders the triple in the given style.
    pub fn serialize(&self, style: TripleStyle) -> String {
        serialize_triple(self, style)
    }

    /// `"{head} {relation} {tail}"`, the form fed to the model and to the
    /// similarity check.
    pub fn surface(&self) -> String {
        serialize_triple(self, TripleStyle::Surface)
    }
}

impl fmt::Display for PersonaTriple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, {})",
            self.subject_text(),
            self.attribute,
            self.object_text()
        )
    }
}

/// On-disk record form: `{subject, attribute, object}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripleRecord {
    pub subject: String,
    pub attribute: String,
    pub object: String,
}

impl From<&PersonaTriple> for TripleRecord {
    fn from(t: &PersonaTriple) -> Self {
        TripleRecord {
            subject: t.subject_text(),
            attribute: t.attribute.clone(),
            object: t.object_text(),
        }
    }
}

impl TryFrom<TripleRecord> for PersonaTriple {
    type Error = FormatError;

    fn try_from(r: TripleRecord) -> Result<Self, Self::Error> {
        PersonaTriple::new(&r.subject, &r.attribute, &r.object).ok_or_else(|| FormatError {
            input: format!("{} / {} / {}", r.subject, r.attribute, r.object),
            reason: FormatReason::EmptyPart,
        })
    }
}

impl Serialize for PersonaTriple {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        TripleRecord::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for PersonaTriple {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let rec = TripleRecord::deserialize(d)?;
        PersonaTriple::try_from(rec).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TripleStyle {
    /// `e1 [SEP] r [SEP] e2`
    SepDelimited,
    /// `e1 r e2`
    Surface,
}

pub fn serialize_triple(p: &PersonaTriple, style: TripleStyle) -> String {
    let subject = p.subject_text();
    let object = p.object_text();
    match style {
        TripleStyle::SepDelimited => format!("{subject} {SEP} {} {SEP} {object}", p.attribute),
        TripleStyle::Surface => format!("{subject} {} {object}", p.attribute),
    }
}

/// Raw, unvalidated extractor output.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PersonaSummary(pub String);

impl PersonaSummary {
    pub fn none() -> Self {
        PersonaSummary(NONE_SUMMARY.to_string())
    }

    pub fn from_triple(t: &PersonaTriple) -> Self {
        PersonaSummary(serialize_triple(t, TripleStyle::SepDelimited))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Exact match on the sentinel after trimming.
    pub fn is_none(&self) -> bool {
        self.0.trim() == NONE_SUMMARY
    }
}

/// Parses an extractor summary.
///
/// Returns `Ok(None)` for `[None]`, `Ok(Some(triple))` for a well-formed
/// three-part string. Attribute membership is not checked here.
pub fn parse_summary(s: &PersonaSummary) -> Result<Option<PersonaTriple>, FormatError> {
    let raw = s.0.trim();
    if raw == NONE_SUMMARY {
        return Ok(None);
    }
    let parts: Vec<&str> = raw.split(SEP).map(str::trim).collect();
    if parts.len() != 3 {
        return Err(FormatError {
            input: s.0.clone(),
            reason: FormatReason::WrongPartCount(parts.len()),
        });
    }
    PersonaTriple::new(parts[0], parts[1], parts[2])
        .map(Some)
        .ok_or_else(|| FormatError {
            input: s.0.clone(),
            reason: FormatReason::EmptyPart,
        })
}

/// Ordered set of attribute symbols.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeRegistry {
    symbols: Vec<String>,
}

impl AttributeRegistry {
    /// Builds a registry from symbols, dropping duplicates and keeping first
    /// occurrence order.
    pub fn from_symbols<I, S>(symbols: I) -> Result<Self, ConfigError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut out: Vec<String> = Vec::new();
        for s in symbols {
            let sym = normalize_symbol(s.as_ref());
            if sym.is_empty() {
                continue;
            }
            if !out.contains(&sym) {
                out.push(sym);
            }
        }
        if out.is_empty() {
            return Err(ConfigError::new("attribute registry is empty"));
        }
        Ok(Self { symbols: out })
    }

    /// Parses the registry file format: one symbol per line, `#` starts a
    /// comment, blank lines ignored.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let lines = text.lines().map(|line| match line.find('#') {
            Some(i) => &line[..i],
            None => line,
        });
        Self::from_symbols(lines)
    }

    pub fn builtin() -> Self {
        Self::parse(DEFAULT_ATTRIBUTES).expect("builtin registry is non-empty")
    }

    pub fn contains(&self, attribute: &str) -> bool {
        let sym = normalize_symbol(attribute);
        self.symbols.contains(&sym)
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for sym in &self.symbols {
            s.push_str(sym);
            s.push('\n');
        }
        s
    }
}

fn normalize_symbol(s: &str) -> String {
    tokenize_lower(s).join(" ")
}

pub fn load_registry(path: &Path) -> Result<AttributeRegistry, ConfigError> {
    let text = fs::read_to_string(path)
        .map_err(|e| ConfigError::new(format!("cannot read registry {}: {e}", path.display())))?;
    AttributeRegistry::parse(&text)
        .map_err(|e| ConfigError::new(format!("{}: {}", path.display(), e.message)))
}
