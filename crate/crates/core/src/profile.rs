//! Per-session persona profiles and training-example assembly.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::filter::FilteredSession;
use crate::ingest::{DialogueSession, Utterance};
use crate::persona::PersonaTriple;

pub const DEFAULT_PROFILE_CAP: usize = 10;

/// Deduplicated persona triples of one speaker, in first-appearance order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PersonaProfile {
    pub owner: String,
    triples: Vec<PersonaTriple>,
}

impl PersonaProfile {
    pub fn new(owner: impl Into<String>) -> Self {
        Self {
            owner: owner.into(),
            triples: Vec::new(),
        }
    }

    /// Builds a profile from triples, collapsing exact duplicates.
    pub fn from_triples(owner: impl Into<String>, triples: impl IntoIterator<Item = PersonaTriple>) -> Self {
        let mut p = Self::new(owner);
        for t in triples {
            p.push(t, usize::MAX);
        }
        p
    }

    /// Appends unless the triple is already present or the cap is reached.
    /// Returns whether it was added.
    pub fn push(&mut self, t: PersonaTriple, cap: usize) -> bool {
        if self.triples.len() >= cap || self.triples.contains(&t) {
            return false;
        }
        self.triples.push(t);
        true
    }

    pub fn triples(&self) -> &[PersonaTriple] {
        &self.triples
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn has_attribute(&self, attribute: &str) -> bool {
        self.triples.iter().any(|t| t.attribute() == attribute)
    }
}

/// Marker carried by augmented records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentMarker {
    pub augmented: bool,
    pub added_count: usize,
}

/// (profile, context, response) with the response spoken by the profile
/// owner.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "DatasetRecord", try_from = "DatasetRecord")]
pub struct TrainingExample {
    pub profile: PersonaProfile,
    pub context: Vec<Utterance>,
    pub response: Utterance,
    pub marker: Option<AugmentMarker>,
}

impl TrainingExample {
    pub fn responder(&self) -> &str {
        &self.response.speaker
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Turn {
    speaker: String,
    text: String,
}

impl From<&Utterance> for Turn {
    fn from(u: &Utterance) -> Self {
        Turn {
            speaker: u.speaker.clone(),
            text: u.text.clone(),
        }
    }
}

/// Canonical line-delimited dataset record.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct DatasetRecord {
    profile: Vec<PersonaTriple>,
    context: Vec<Turn>,
    response: Turn,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    augmented: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    added_count: Option<usize>,
}

impl From<TrainingExample> for DatasetRecord {
    fn from(x: TrainingExample) -> Self {
        DatasetRecord {
            profile: x.profile.triples,
            context: x.context.iter().map(Turn::from).collect(),
            response: Turn::from(&x.response),
            augmented: x.marker.map(|m| m.augmented),
            added_count: x.marker.map(|m| m.added_count),
        }
    }
}

impl TryFrom<DatasetRecord> for TrainingExample {
    type Error = String;

    fn try_from(r: DatasetRecord) -> Result<Self, Self::Error> {
        if r.context.is_empty() {
            return Err("dataset record has an empty context".into());
        }
        let marker = match (r.augmented, r.added_count) {
            (None, None) => None,
            (a, k) => Some(AugmentMarker {
                augmented: a.unwrap_or(true),
                added_count: k.unwrap_or(0),
            }),
        };
        Ok(TrainingExample {
            profile: PersonaProfile::from_triples(r.response.speaker.clone(), r.profile),
            context: r.context.into_iter().map(|t| Utterance::new(t.speaker, t.text)).collect(),
            response: Utterance::new(r.response.speaker, r.response.text),
            marker,
        })
    }
}

/// Merges each speaker's kept triples, in utterance order, up to `cap`.
pub fn build_profiles(
    session: &DialogueSession,
    triples: &[Option<PersonaTriple>],
    cap: usize,
) -> BTreeMap<String, PersonaProfile> {
    assert_eq!(session.utterances.len(), triples.len(), "triples must align with utterances");
    let mut out: BTreeMap<String, PersonaProfile> = BTreeMap::new();
    for (u, t) in session.utterances.iter().zip(triples) {
        let profile = out.entry(u.speaker.clone()).or_insert_with(|| PersonaProfile::new(&u.speaker));
        if let Some(t) = t {
            profile.push(t.clone(), cap);
        }
    }
    out
}

/// One example per response turn (every utterance after the first).
pub fn build_examples(session: &DialogueSession, profiles: &BTreeMap<String, PersonaProfile>) -> Vec<TrainingExample> {
    (1..session.utterances.len())
        .map(|i| {
            let response = session.utterances[i].clone();
            let profile = profiles
                .get(&response.speaker)
                .cloned()
                .unwrap_or_else(|| PersonaProfile::new(&response.speaker));
            TrainingExample {
                profile,
                context: session.utterances[..i].to_vec(),
                response,
                marker: None,
            }
        })
        .collect()
}

/// Profiles and examples of a filtered session.
pub fn session_examples(fs: &FilteredSession, cap: usize) -> Vec<TrainingExample> {
    let profiles = build_profiles(&fs.session, &fs.triples, cap);
    build_examples(&fs.session, &profiles)
}

/// Corpus size summary.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub sessions: u64,
    pub utterances: u64,
    pub personas: u64,
    pub tokens: u64,
    pub tokens_per_utterance: f64,
}

impl CorpusStats {
    pub fn add_session(&mut self, session: &DialogueSession, kept_personas: usize) {
        self.sessions += 1;
        self.utterances += session.utterances.len() as u64;
        self.tokens += session
            .utterances
            .iter()
            .map(|u| u.text.split_whitespace().count() as u64)
            .sum::<u64>();
        self.personas += kept_personas as u64;
        self.refresh();
    }

    pub fn add_filtered(&mut self, fs: &FilteredSession) {
        self.add_session(&fs.session, fs.triples.iter().flatten().count());
    }

    pub fn merge(&mut self, o: &CorpusStats) {
        self.sessions += o.sessions;
        self.utterances += o.utterances;
        self.personas += o.personas;
        self.tokens += o.tokens;
        self.refresh();
    }

    fn refresh(&mut self) {
        self.tokens_per_utterance = if self.utterances > 0 {
            self.tokens as f64 / self.utterances as f64
        } else {
            0.0
        };
    }
}

pub fn corpus_stats<'a, I>(sessions: I) -> CorpusStats
where
    I: IntoIterator<Item = &'a FilteredSession>,
{
    let mut s = CorpusStats::default();
    for fs in sessions {
        s.add_filtered(fs);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str, r: &str, o: &str) -> PersonaTriple {
        PersonaTriple::new(s, r, o).unwrap()
    }

    fn session(speakers: &[&str]) -> DialogueSession {
        DialogueSession {
            session_id: "s".into(),
            utterances: speakers
                .iter()
                .enumerate()
                .map(|(i, sp)| Utterance::new(*sp, format!("u{i} a b c")))
                .collect(),
        }
    }

    #[test]
    fn duplicate_triples_collapse() {
        let s = session(&["a", "b", "a"]);
        let tr = vec![Some(t("i", "like", "swimming")), None, Some(t("i", "like", "swimming"))];
        let p = build_profiles(&s, &tr, DEFAULT_PROFILE_CAP);
        assert_eq!(p["a"].len(), 1);
        assert!(p["b"].is_empty());
    }

    #[test]
    fn partition_by_speaker() {
        let s = session(&["a", "b"]);
        let tr = vec![Some(t("i", "like", "tea")), Some(t("i", "have", "dog"))];
        let p = build_profiles(&s, &tr, DEFAULT_PROFILE_CAP);
        assert_eq!(p["a"].triples(), &[t("i", "like", "tea")]);
        assert_eq!(p["b"].triples(), &[t("i", "have", "dog")]);
    }

    #[test]
    fn cap_keeps_first() {
        let speakers = vec!["a"; 12];
        let s = session(&speakers);
        let tr: Vec<_> = (0..12).map(|i| Some(t("i", "like", &format!("thing{i}")))).collect();
        let p = build_profiles(&s, &tr, 10);
        assert_eq!(p["a"].len(), 10);
        assert_eq!(p["a"].triples()[9], t("i", "like", "thing9"));
    }

    #[test]
    fn examples_enumerate_prefixes() {
        let s = session(&["a", "b", "a"]);
        let tr = vec![Some(t("i", "like", "tea")), None, None];
        let p = build_profiles(&s, &tr, 10);
        let ex = build_examples(&s, &p);
        assert_eq!(ex.len(), 2);
        assert_eq!(ex[0].context.len(), 1);
        assert_eq!(ex[1].context.len(), 2);
        assert!(ex[0].profile.is_empty());
        assert_eq!(ex[0].responder(), "b");
        assert_eq!(ex[1].profile.len(), 1);
        assert_eq!(ex[1].profile.owner, "a");

        let two = session(&["a", "b"]);
        let ex = build_examples(&two, &build_profiles(&two, &[None, None], 10));
        assert_eq!(ex.len(), 1);
        assert_eq!(ex[0].context, vec![two.utterances[0].clone()]);
    }

    #[test]
    fn stats_count_by_hand() {
        let s = session(&["a", "b", "a"]);
        let fs = FilteredSession {
            session: s,
            triples: vec![Some(t("i", "like", "tea")), None, Some(t("i", "have", "dog"))],
        };
        let st = corpus_stats([&fs]);
        assert_eq!((st.sessions, st.utterances, st.personas, st.tokens), (1, 3, 2, 12));
        assert_eq!(st.tokens_per_utterance, 4.0);
        assert_eq!(corpus_stats(std::iter::empty()), CorpusStats::default());
    }

    #[test]
    fn stats_merge_is_additive() {
        let a = FilteredSession {
            session: session(&["a", "b"]),
            triples: vec![None, Some(t("i", "like", "tea"))],
        };
        let b = FilteredSession {
            session: session(&["a", "b", "c"]),
            triples: vec![None, None, None],
        };
        let mut left = corpus_stats([&a]);
        left.merge(&corpus_stats([&b]));
        assert_eq!(left, corpus_stats([&a, &b]));
    }

    #[test]
    fn record_round_trip() {
        let s = session(&["a", "b"]);
        let tr = vec![None, Some(t("i", "like", "tea"))];
        let ex = session_examples(&FilteredSession { session: s, triples: tr }, 10).remove(0);
        let json = serde_json::to_string(&ex).unwrap();
        assert_eq!(
            json,
            r#"{"profile":[{"subject":"i","attribute":"like","object":"tea"}],"context":[{"speaker":"a","text":"u0 a b c"}],"response":{"speaker":"b","text":"u1 a b c"}}"#
        );
        let back: TrainingExample = serde_json::from_str(&json).unwrap();
        assert_eq!(back, ex);
        assert!(serde_json::from_str::<TrainingExample>(r#"{"profile":[],"context":[],"response":{"speaker":"b","text":"x"}}"#).is_err());
    }
}
