//! Comment-dump ingestion: parse line-delimited records, clean bodies and
//! thread reply trees into linear dialogue sessions.
//!
//! A session is one root-to-leaf path through the surviving comments of a
//! thread. Threads are independent; all counters merge by addition.

use std::collections::HashMap;
use std::io::{self, BufRead};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

/// A comment as it appears in a dump.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RawComment {
    pub id: String,
    pub parent_id: Option<String>,
    pub thread_id: String,
    pub author: String,
    pub body: String,
    pub created_at: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<Vec<u32>>,
}

impl Utterance {
    pub fn new(speaker: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            speaker: speaker.into(),
            text: text.into(),
            tokens: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueSession {
    pub session_id: String,
    pub utterances: Vec<Utterance>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DumpFormat {
    #[default]
    Jsonl,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum Timestamp {
    Int(i64),
    Float(f64),
    Text(String),
}

impl Timestamp {
    fn seconds(&self) -> Option<i64> {
        match self {
            Timestamp::Int(v) => Some(*v),
            Timestamp::Float(v) if v.is_finite() => Some(*v as i64),
            Timestamp::Float(_) => None,
            Timestamp::Text(s) => s.trim().parse().ok(),
        }
    }
}

/// Field layout of public comment dumps (`link_id`, `created_utc`), with the
/// neutral names accepted as aliases.
#[derive(Debug, Deserialize)]
struct DumpRecord {
    id: String,
    #[serde(default)]
    parent_id: Option<String>,
    #[serde(alias = "thread_id")]
    link_id: String,
    author: String,
    body: String,
    #[serde(alias = "created_at")]
    created_utc: Timestamp,
}

fn strip_kind_prefix(s: &str) -> &str {
    // t1_ = comment, t3_ = link
    match s.get(..3) {
        Some(p) if p.len() == 3 && p.starts_with('t') && p.ends_with('_') => &s[3..],
        _ => s,
    }
}

impl DumpRecord {
    fn into_comment(self) -> Option<RawComment> {
        let created_at = self.created_utc.seconds()?;
        let id = strip_kind_prefix(self.id.trim()).to_string();
        let thread_id = strip_kind_prefix(self.link_id.trim()).to_string();
        if id.is_empty() || thread_id.is_empty() {
            return None;
        }
        // A parent of kind t3 is the submission itself, so the comment is a root.
        let parent_id = self.parent_id.and_then(|p| {
            let p = p.trim();
            if p.is_empty() || p.starts_with("t3_") {
                None
            } else {
                let p = strip_kind_prefix(p);
                (p != thread_id).then(|| p.to_string())
            }
        });
        Some(RawComment {
            id,
            parent_id,
            thread_id,
            author: self.author,
            body: self.body,
            created_at,
        })
    }
}

/// Counters for [`DumpReader`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseStats {
    pub lines: u64,
    pub parsed: u64,
    pub malformed: u64,
}

impl ParseStats {
    pub fn merge(&mut self, other: &ParseStats) {
        self.lines += other.lines;
        self.parsed += other.parsed;
        self.malformed += other.malformed;
    }
}

/// Streaming parser over a line-delimited dump. Malformed lines are counted
/// and skipped; only read failures surface as errors.
pub struct DumpReader<R> {
    reader: R,
    buf: Vec<u8>,
    stats: ParseStats,
}

impl<R: BufRead> DumpReader<R> {
    pub fn new(reader: R) -> Self {
        Self {
            reader,
            buf: Vec::with_capacity(1024),
            stats: ParseStats::default(),
        }
    }

    pub fn stats(&self) -> ParseStats {
        self.stats
    }
}

impl<R: BufRead> Iterator for DumpReader<R> {
    type Item = io::Result<RawComment>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buf.clear();
            match self.reader.read_until(b'\n', &mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => return Some(Err(e)),
            }
            let line = match std::str::from_utf8(&self.buf) {
                Ok(l) => l.trim(),
                Err(_) => {
                    self.stats.lines += 1;
                    self.stats.malformed += 1;
                    continue;
                }
            };
            if line.is_empty() {
                continue;
            }
            self.stats.lines += 1;
            let parsed = serde_json::from_str::<DumpRecord>(line)
                .ok()
                .and_then(DumpRecord::into_comment);
            match parsed {
                Some(c) => {
                    self.stats.parsed += 1;
                    return Some(Ok(c));
                }
                None => self.stats.malformed += 1,
            }
        }
    }
}

pub fn parse_dump<R: BufRead>(reader: R, format: DumpFormat) -> DumpReader<R> {
    match format {
        DumpFormat::Jsonl => DumpReader::new(reader),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CleaningConfig {
    /// Bodies dropped verbatim (after trimming).
    pub drop_bodies: Vec<String>,
    /// Authors whose name ends with this suffix (case-insensitive) are dropped.
    pub bot_suffix: Option<String>,
    pub strip_markup: bool,
    pub lowercase: bool,
    pub min_tokens: usize,
    pub max_tokens: usize,
    /// Minimum fraction of printable ASCII characters.
    pub min_ascii_ratio: f64,
    /// Replace author names by per-session labels `spk0`, `spk1`, ...
    pub relabel_speakers: bool,
}

impl Default for CleaningConfig {
    fn default() -> Self {
        Self {
            drop_bodies: vec!["[deleted]".into(), "[removed]".into()],
            bot_suffix: Some("bot".into()),
            strip_markup: true,
            lowercase: true,
            min_tokens: 1,
            max_tokens: 128,
            min_ascii_ratio: 0.7,
            relabel_speakers: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropReason {
    DeletedBody,
    BotAuthor,
    EmptyAuthor,
    TooShort,
    TooLong,
    NonAscii,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanStats {
    pub kept: u64,
    pub deleted_body: u64,
    pub bot_author: u64,
    pub empty_author: u64,
    pub too_short: u64,
    pub too_long: u64,
    pub non_ascii: u64,
}

impl CleanStats {
    pub fn record(&mut self, outcome: Result<(), DropReason>) {
        let slot = match outcome {
            Ok(()) => &mut self.kept,
            Err(DropReason::DeletedBody) => &mut self.deleted_body,
            Err(DropReason::BotAuthor) => &mut self.bot_author,
            Err(DropReason::EmptyAuthor) => &mut self.empty_author,
            Err(DropReason::TooShort) => &mut self.too_short,
            Err(DropReason::TooLong) => &mut self.too_long,
            Err(DropReason::NonAscii) => &mut self.non_ascii,
        };
        *slot += 1;
    }

    pub fn dropped(&self) -> u64 {
        self.deleted_body + self.bot_author + self.empty_author + self.too_short + self.too_long + self.non_ascii
    }

    pub fn merge(&mut self, o: &CleanStats) {
        self.kept += o.kept;
        self.deleted_body += o.deleted_body;
        self.bot_author += o.bot_author;
        self.empty_author += o.empty_author;
        self.too_short += o.too_short;
        self.too_long += o.too_long;
        self.non_ascii += o.non_ascii;
    }
}

struct MarkupPatterns {
    md_link: Regex,
    url: Regex,
    line_prefix: Regex,
    emphasis: Regex,
}

fn markup() -> &'static MarkupPatterns {
    static PATTERNS: OnceLock<MarkupPatterns> = OnceLock::new();
    PATTERNS.get_or_init(|| MarkupPatterns {
        md_link: Regex::new(r"\[([^\]]*)\]\([^)]*\)").unwrap(),
        url: Regex::new(r"(?i)\b(?:https?://|www\.)\S+").unwrap(),
        line_prefix: Regex::new(r"(?m)^[ \t]*(?:>+|#+)[ \t]?").unwrap(),
        emphasis: Regex::new(r"[*`~^]+").unwrap(),
    })
}

/// Normalizes a comment body: markup and URLs removed, entities decoded,
/// whitespace collapsed, optionally lowercased.
pub fn normalize_text(body: &str, rules: &CleaningConfig) -> String {
    let mut text = body.to_string();
    if rules.strip_markup {
        let p = markup();
        text = text
            .replace("&amp;", "&")
            .replace("&gt;", ">")
            .replace("&lt;", "<")
            .replace("&nbsp;", " ")
            .replace("&#x200B;", "");
        text = p.md_link.replace_all(&text, "$1").into_owned();
        text = p.url.replace_all(&text, " ").into_owned();
        text = p.line_prefix.replace_all(&text, "").into_owned();
        text = p.emphasis.replace_all(&text, "").into_owned();
    }
    let mut collapsed = text.split_whitespace().collect::<Vec<_>>().join(" ");
    if rules.lowercase {
        collapsed = collapsed.to_lowercase();
    }
    collapsed
}

/// Applies the drop rules and normalization. `Err` carries the first rule
/// that fired.
pub fn clean_checked(c: &RawComment, rules: &CleaningConfig) -> Result<Utterance, DropReason> {
    let body = c.body.trim();
    if rules.drop_bodies.iter().any(|d| d == body) {
        return Err(DropReason::DeletedBody);
    }
    let author = c.author.trim();
    if author.is_empty() {
        return Err(DropReason::EmptyAuthor);
    }
    if let Some(suffix) = &rules.bot_suffix {
        if !suffix.is_empty() && author.to_lowercase().ends_with(&suffix.to_lowercase()) {
            return Err(DropReason::BotAuthor);
        }
    }
    let text = normalize_text(body, rules);
    let n_tokens = text.split_whitespace().count();
    if n_tokens < rules.min_tokens.max(1) {
        return Err(DropReason::TooShort);
    }
    if n_tokens > rules.max_tokens {
        return Err(DropReason::TooLong);
    }
    let total = text.chars().count();
    let ascii = text.chars().filter(|ch| (' '..='~').contains(ch)).count();
    if (ascii as f64) < rules.min_ascii_ratio * total as f64 {
        return Err(DropReason::NonAscii);
    }
    Ok(Utterance::new(author, text))
}

pub fn clean_comment(c: &RawComment, rules: &CleaningConfig) -> Option<Utterance> {
    clean_checked(c, rules).ok()
}

/// Counters for [`thread_sessions`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThreadStats {
    pub comments: u64,
    pub duplicate_ids: u64,
    pub orphans: u64,
    pub threads: u64,
    pub sessions: u64,
    pub cleaning: CleanStats,
}

impl ThreadStats {
    pub fn merge(&mut self, o: &ThreadStats) {
        self.comments += o.comments;
        self.duplicate_ids += o.duplicate_ids;
        self.orphans += o.orphans;
        self.threads += o.threads;
        self.sessions += o.sessions;
        self.cleaning.merge(&o.cleaning);
    }
}

/// Groups comments by thread, keeping threads in first-seen order.
#[derive(Debug, Default)]
pub struct ThreadIndex {
    order: Vec<String>,
    threads: HashMap<String, Vec<RawComment>>,
}

impl ThreadIndex {
    pub fn push(&mut self, c: RawComment) {
        match self.threads.get_mut(&c.thread_id) {
            Some(v) => v.push(c),
            None => {
                self.order.push(c.thread_id.clone());
                self.threads.insert(c.thread_id.clone(), vec![c]);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Threads in first-seen order.
    pub fn into_threads(mut self) -> impl Iterator<Item = (String, Vec<RawComment>)> {
        let order = std::mem::take(&mut self.order);
        order.into_iter().map(move |id| {
            let comments = self.threads.remove(&id).unwrap_or_default();
            (id, comments)
        })
    }
}

impl FromIterator<RawComment> for ThreadIndex {
    fn from_iter<I: IntoIterator<Item = RawComment>>(iter: I) -> Self {
        let mut idx = ThreadIndex::default();
        for c in iter {
            idx.push(c);
        }
        idx
    }
}

/// Sessions of a single thread: every root-to-leaf path of surviving
/// comments with at least two utterances.
pub fn thread_to_sessions(
    thread_id: &str,
    comments: Vec<RawComment>,
    rules: &CleaningConfig,
    stats: &mut ThreadStats,
) -> Vec<DialogueSession> {
    stats.threads += 1;
    stats.comments += comments.len() as u64;

    struct Node {
        id: String,
        parent: Option<String>,
        created_at: i64,
        utterance: Utterance,
    }

    let mut nodes: Vec<Node> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut seen: HashMap<String, ()> = HashMap::new();
    for c in comments {
        if seen.insert(c.id.clone(), ()).is_some() {
            stats.duplicate_ids += 1;
            continue;
        }
        let outcome = clean_checked(&c, rules);
        stats.cleaning.record(outcome.as_ref().map(|_| ()).map_err(|r| *r));
        if let Ok(utterance) = outcome {
            index.insert(c.id.clone(), nodes.len());
            nodes.push(Node {
                id: c.id,
                parent: c.parent_id,
                created_at: c.created_at,
                utterance,
            });
        }
    }

    let mut roots: Vec<usize> = Vec::new();
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
    for (i, n) in nodes.iter().enumerate() {
        match n.parent.as_ref().and_then(|p| index.get(p)).copied() {
            Some(p) if p != i => children[p].push(i),
            _ => {
                if n.parent.is_some() {
                    stats.orphans += 1;
                }
                roots.push(i);
            }
        }
    }
    let key = |&i: &usize| (nodes[i].created_at, nodes[i].id.clone());
    roots.sort_by_key(key);
    for c in children.iter_mut() {
        c.sort_by_key(key);
    }

    let mut sessions = Vec::new();
    let mut path: Vec<usize> = Vec::new();
    // (node, next child cursor)
    let mut stack: Vec<(usize, usize)> = Vec::new();
    for &root in &roots {
        stack.push((root, 0));
        path.push(root);
        while let Some(&mut (node, ref mut cursor)) = stack.last_mut() {
            if children[node].is_empty() && *cursor == 0 && path.len() >= 2 {
                let leaf = &nodes[node];
                sessions.push(DialogueSession {
                    session_id: format!("{thread_id}/{}", leaf.id),
                    utterances: path.iter().map(|&i| nodes[i].utterance.clone()).collect(),
                });
            }
            if *cursor < children[node].len() {
                let child = children[node][*cursor];
                *cursor += 1;
                stack.push((child, 0));
                path.push(child);
            } else {
                stack.pop();
                path.pop();
            }
        }
    }

    if rules.relabel_speakers {
        for s in &mut sessions {
            relabel(s);
        }
    }
    stats.sessions += sessions.len() as u64;
    sessions
}

fn relabel(s: &mut DialogueSession) {
    let mut names: Vec<String> = Vec::new();
    for u in &mut s.utterances {
        let idx = match names.iter().position(|n| *n == u.speaker) {
            Some(i) => i,
            None => {
                names.push(u.speaker.clone());
                names.len() - 1
            }
        };
        u.speaker = format!("spk{idx}");
    }
}

/// Threads an entire comment stream. Comments are grouped by thread first
/// (dumps are not sorted by thread); sessions are then produced thread by
/// thread in first-seen order.
pub fn thread_sessions<I>(comments: I, rules: &CleaningConfig) -> (Vec<DialogueSession>, ThreadStats)
where
    I: IntoIterator<Item = RawComment>,
{
    let index: ThreadIndex = comments.into_iter().collect();
    let mut stats = ThreadStats::default();
    let mut out = Vec::new();
    for (tid, comments) in index.into_threads() {
        out.extend(thread_to_sessions(&tid, comments, rules, &mut stats));
    }
    (out, stats)
}
