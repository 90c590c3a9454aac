//! A small deterministic persona-dialogue world.
//!
//! Every attribute has a statement template whose wording matches the
//! default extraction rules, a question that elicits it, and a closed set of
//! alternative objects. Responses either state a profile fact, state a
//! different object for a profile attribute, or come from a fixed list of
//! persona-free replies, so the label of any generated response can be read
//! back from its surface form.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, Error, Result};
use crate::eval::NliLabel;
use crate::ingest::{RawComment, Utterance};
use crate::persona::{tokenize_lower, AttributeRegistry, PersonaTriple};
use crate::profile::{PersonaProfile, TrainingExample};
use crate::rng::{derive_rng, StreamRng};

pub const RESPONDER: &str = "bot";
pub const PARTNER: &str = "user";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldAttribute {
    pub symbol: String,
    /// Statement with a single `{X}` slot for the object.
    pub statement: String,
    pub question: String,
    pub objects: Vec<String>,
}

impl WorldAttribute {
    pub fn realize(&self, object: &str) -> String {
        self.statement.replace("{X}", object)
    }

    fn prefix_tokens(&self) -> Vec<String> {
        let (prefix, _) = self.statement.split_once("{X}").unwrap_or((&self.statement, ""));
        tokenize_lower(prefix)
    }
}

/// A persona-free prompt and its reply.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChitChat {
    pub prompt: String,
    pub reply: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticWorld {
    pub attributes: Vec<WorldAttribute>,
    pub chit_chat: Vec<ChitChat>,
    pub openers: Vec<String>,
    pub seed: u64,
}

fn owned(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

impl SyntheticWorld {
    pub fn standard(seed: u64) -> Self {
        let attr = |symbol: &str, statement: &str, question: &str, objects: &[&str]| WorldAttribute {
            symbol: symbol.into(),
            statement: statement.into(),
            question: question.into(),
            objects: owned(objects),
        };
        let chat = |prompt: &str, reply: &str| ChitChat {
            prompt: prompt.into(),
            reply: reply.into(),
        };
        Self {
            attributes: vec![
                attr("like_drink", "i like to drink {X}", "what do you like to drink ?", &["tea", "coffee", "milk", "juice", "soda"]),
                attr("have_pet", "i have a pet {X}", "do you have any pets ?", &["dog", "cat", "parrot", "rabbit", "hamster"]),
                attr("live_in_citystatecountry", "i live in {X}", "where do you live ?", &["paris", "london", "tokyo", "boston", "berlin"]),
                attr("has_profession", "i work as a {X}", "what do you do for work ?", &["teacher", "nurse", "chef", "pilot", "farmer"]),
                attr("like_sports", "i play {X}", "do you play any sports ?", &["soccer", "tennis", "golf", "hockey", "chess"]),
                attr("favorite_color", "my favorite color is {X}", "what is your favorite color ?", &["red", "blue", "green", "yellow", "purple"]),
            ],
            chit_chat: vec![
                chat("how is your day going ?", "it is going well thanks"),
                chat("did you watch the game last night ?", "no i missed it sadly"),
                chat("what nice weather today", "yes it is very sunny"),
                chat("any plans for the weekend ?", "just relaxing at home"),
                chat("have you read any good books lately ?", "not really i have been busy"),
                chat("i just got back from the store", "oh what did you buy there"),
                chat("that movie was so long", "i fell asleep halfway through"),
                chat("are you hungry yet ?", "a little bit yes"),
            ],
            openers: owned(&["hi there", "hello friend", "hey how are you", "good morning"]),
            seed,
        }
    }

    pub fn validate(&self, registry: &AttributeRegistry) -> Result<(), ConfigError> {
        if self.attributes.is_empty() || self.chit_chat.is_empty() {
            return Err(ConfigError::new("world needs at least one attribute and one chit-chat pair"));
        }
        for a in &self.attributes {
            if !registry.contains(&a.symbol) {
                return Err(ConfigError::new(format!("world attribute {} is not in the registry", a.symbol)));
            }
            if a.objects.len() < 2 {
                return Err(ConfigError::new(format!("world attribute {} needs at least two objects", a.symbol)));
            }
            if a.statement.matches("{X}").count() != 1 || !a.statement.ends_with("{X}") {
                return Err(ConfigError::new(format!("statement of {} must end with its only {{X}} slot", a.symbol)));
            }
            if a.objects.iter().any(|o| tokenize_lower(o).len() != 1) {
                return Err(ConfigError::new(format!("objects of {} must be single words", a.symbol)));
            }
        }
        for (i, a) in self.attributes.iter().enumerate() {
            for b in &self.attributes[i + 1..] {
                if a.prefix_tokens() == b.prefix_tokens() {
                    return Err(ConfigError::new(format!("{} and {} share a statement prefix", a.symbol, b.symbol)));
                }
            }
        }
        Ok(())
    }

    pub fn attribute(&self, symbol: &str) -> Option<&WorldAttribute> {
        self.attributes.iter().find(|a| a.symbol == symbol)
    }

    pub fn triple(&self, attribute: &str, object: &str) -> PersonaTriple {
        PersonaTriple::new("i", attribute, object).expect("world symbols are non-empty")
    }

    /// All `(attribute, object)` facts stated in `text`.
    pub fn realizations(&self, text: &str) -> Vec<(String, String)> {
        let toks = tokenize_lower(text);
        let mut out = Vec::new();
        for a in &self.attributes {
            let prefix = a.prefix_tokens();
            if prefix.is_empty() || toks.len() <= prefix.len() {
                continue;
            }
            for start in 0..toks.len() - prefix.len() {
                if toks[start..start + prefix.len()] != prefix[..] {
                    continue;
                }
                let obj = &toks[start + prefix.len()];
                if a.objects.iter().any(|o| o == obj) {
                    out.push((a.symbol.clone(), obj.clone()));
                }
            }
        }
        out
    }

    /// The label of `hypothesis` against one triple.
    pub fn classify(&self, premise: &PersonaTriple, hypothesis: &str) -> NliLabel {
        let mut label = NliLabel::Neutral;
        for (attr, obj) in self.realizations(hypothesis) {
            if attr != premise.attribute() {
                continue;
            }
            if obj == premise.object_text() {
                label = label.max(NliLabel::Entail);
            } else {
                return NliLabel::Contradict;
            }
        }
        label
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::data(format!("{}: {e}", path.display())))
    }

    fn sample_persona(&self, size: usize, rng: &mut StreamRng) -> Vec<PersonaTriple> {
        let size = size.min(self.attributes.len());
        self.attributes
            .choose_multiple(rng, size)
            .map(|a| self.triple(&a.symbol, a.objects.choose(rng).unwrap()))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_sessions: usize,
    /// Probability that a response states a profile fact.
    pub persona_rate: f64,
    /// Probability that a response states a conflicting fact.
    pub contradiction_rate: f64,
    /// Attach only the facts the response states, as extraction would.
    pub biased: bool,
    pub persona_size: usize,
    /// Probability of a greeting turn before the prompt.
    pub opener_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_sessions: 1000,
            persona_rate: 0.5,
            contradiction_rate: 0.0,
            biased: true,
            persona_size: 3,
            opener_rate: 0.5,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let ok = |p: f64| (0.0..=1.0).contains(&p);
        if !ok(self.persona_rate) || !ok(self.contradiction_rate) || !ok(self.opener_rate) {
            return Err(ConfigError::new("synthetic rates must lie in [0, 1]"));
        }
        if self.persona_rate + self.contradiction_rate > 1.0 {
            return Err(ConfigError::new("persona_rate + contradiction_rate exceeds 1"));
        }
        if self.persona_size == 0 {
            return Err(ConfigError::new("persona_size must be at least 1"));
        }
        Ok(())
    }
}

/// A generated example and the label its construction implies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedExample {
    pub example: TrainingExample,
    pub intended: NliLabel,
    /// The responder's full persona, whatever the attached profile.
    pub persona: Vec<PersonaTriple>,
}

/// One session per index, each from its own `(seed, "synthetic", i)` stream.
pub fn generate_corpus(world: &SyntheticWorld, cfg: &SyntheticConfig) -> Result<Vec<GeneratedExample>> {
    cfg.validate()?;
    if world.attributes.is_empty() || world.chit_chat.is_empty() {
        return Err(Error::Config(ConfigError::new("world is empty")));
    }
    Ok((0..cfg.n_sessions)
        .map(|i| generate_one(world, cfg, &mut derive_rng(cfg.seed ^ world.seed, "synthetic", i as u64)))
        .collect())
}

fn generate_one(world: &SyntheticWorld, cfg: &SyntheticConfig, rng: &mut StreamRng) -> GeneratedExample {
    let persona = world.sample_persona(cfg.persona_size, rng);
    let mut context = Vec::new();
    if rng.gen_bool(cfg.opener_rate) {
        context.push(Utterance::new(PARTNER, world.openers.choose(rng).unwrap().clone()));
    }
    let u: f64 = rng.gen();
    let (prompt, reply, intended, stated) = if u < cfg.persona_rate + cfg.contradiction_rate {
        let t = persona.choose(rng).unwrap();
        let attr = world.attribute(t.attribute()).expect("persona drawn from world");
        if u < cfg.persona_rate {
            (attr.question.clone(), attr.realize(&t.object_text()), NliLabel::Entail, Some(t.clone()))
        } else {
            let other = attr
                .objects
                .iter()
                .filter(|o| **o != t.object_text())
                .collect::<Vec<_>>()
                .choose(rng)
                .map(|o| o.to_string())
                .unwrap();
            let said = world.triple(&attr.symbol, &other);
            (attr.question.clone(), attr.realize(&other), NliLabel::Contradict, Some(said))
        }
    } else {
        let c = world.chit_chat.choose(rng).unwrap();
        (c.prompt.clone(), c.reply.clone(), NliLabel::Neutral, None)
    };
    context.push(Utterance::new(PARTNER, prompt));

    // Extraction only sees what the responder said, so a contradicting
    // statement becomes its own (entailed) profile fact.
    let (profile, intended) = if cfg.biased {
        match stated {
            Some(t) => (vec![t], NliLabel::Entail),
            None => (Vec::new(), NliLabel::Neutral),
        }
    } else {
        (persona.clone(), intended)
    };
    GeneratedExample {
        example: TrainingExample {
            profile: PersonaProfile::from_triples(RESPONDER, profile),
            context,
            response: Utterance::new(RESPONDER, reply),
            marker: None,
        },
        intended,
        persona,
    }
}

/// Raw comment dump for the ingestion pipeline: threads of alternating
/// replies between users who each hold a fixed persona.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DumpConfig {
    pub n_comments: usize,
    pub n_users: usize,
    /// Comments per thread are drawn from 1..=max_thread.
    pub max_thread: usize,
    /// Probability that a reply branches off an earlier comment instead of
    /// continuing the chain.
    pub branch_rate: f64,
    pub persona_rate: f64,
    pub seed: u64,
}

impl Default for DumpConfig {
    fn default() -> Self {
        Self {
            n_comments: 10_000,
            n_users: 500,
            max_thread: 8,
            branch_rate: 0.2,
            persona_rate: 0.4,
            seed: 0,
        }
    }
}

#[derive(Serialize)]
struct DumpLine<'a> {
    id: String,
    parent_id: String,
    link_id: String,
    author: &'a str,
    body: &'a str,
    created_utc: i64,
}

/// Generates `n_comments` comments. Thread `k` draws from its own
/// `(seed, "dump", k)` stream.
pub fn generate_comments(world: &SyntheticWorld, cfg: &DumpConfig) -> Vec<RawComment> {
    let users: Vec<(String, Vec<PersonaTriple>)> = (0..cfg.n_users.max(2))
        .map(|u| {
            let mut rng = derive_rng(cfg.seed, "dump-user", u as u64);
            (format!("user{u}"), world.sample_persona(3, &mut rng))
        })
        .collect();
    let mut out = Vec::with_capacity(cfg.n_comments);
    let mut thread = 0u64;
    while out.len() < cfg.n_comments {
        let mut rng = derive_rng(cfg.seed, "dump", thread);
        let size = rng.gen_range(1..=cfg.max_thread.max(1)).min(cfg.n_comments - out.len());
        let a = rng.gen_range(0..users.len());
        let b = (a + rng.gen_range(1..users.len())) % users.len();
        let thread_id = format!("th{thread}");
        let base = 1_600_000_000 + thread as i64 * 100;
        let mut ids: Vec<String> = Vec::new();
        for k in 0..size {
            let (author, persona) = &users[if k % 2 == 0 { a } else { b }];
            let body = if rng.gen_bool(cfg.persona_rate) {
                let t = persona.choose(&mut rng).unwrap();
                world.attribute(t.attribute()).unwrap().realize(&t.object_text())
            } else if k % 2 == 0 {
                world.chit_chat.choose(&mut rng).unwrap().prompt.clone()
            } else {
                world.chit_chat.choose(&mut rng).unwrap().reply.clone()
            };
            let parent_id = if k == 0 {
                None
            } else if k >= 2 && rng.gen_bool(cfg.branch_rate) {
                Some(ids[rng.gen_range(0..k - 1)].clone())
            } else {
                Some(ids[k - 1].clone())
            };
            let id = format!("c{thread}x{k}");
            ids.push(id.clone());
            out.push(RawComment {
                id,
                parent_id,
                thread_id: thread_id.clone(),
                author: author.clone(),
                body,
                created_at: base + k as i64,
            });
        }
        thread += 1;
    }
    out
}

/// One dump line per comment, in the public-dump field layout.
pub fn comment_to_dump_line(c: &RawComment) -> String {
    serde_json::to_string(&DumpLine {
        id: format!("t1_{}", c.id),
        parent_id: match &c.parent_id {
            Some(p) => format!("t1_{p}"),
            None => format!("t3_{}", c.thread_id),
        },
        link_id: format!("t3_{}", c.thread_id),
        author: &c.author,
        body: &c.body,
        created_utc: c.created_at,
    })
    .expect("dump lines serialize")
}

/// Counts of intended labels, keyed by label name.
pub fn label_counts(data: &[GeneratedExample]) -> BTreeMap<NliLabel, usize> {
    let mut m = BTreeMap::new();
    for g in data {
        *m.entry(g.intended).or_insert(0) += 1;
    }
    m
}
