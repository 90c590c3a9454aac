//! Response metrics: Dist-n, entail/neutral/contradict ratios and the
//! consistency score.

use std::collections::HashSet;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::persona::PersonaTriple;
use crate::profile::{PersonaProfile, TrainingExample};
use crate::synthetic::SyntheticWorld;

/// NLI outcome. Ordered by precedence when aggregating over a profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NliLabel {
    #[serde(alias = "neutrality")]
    Neutral,
    #[serde(alias = "entailment")]
    Entail,
    #[serde(alias = "contradiction")]
    Contradict,
}

impl NliLabel {
    /// entail +1, neutral 0, contradict -1.
    pub fn verdict(self) -> i64 {
        match self {
            NliLabel::Entail => 1,
            NliLabel::Neutral => 0,
            NliLabel::Contradict => -1,
        }
    }
}

pub trait NliBackend: Send + Sync {
    fn classify(&self, premise: &PersonaTriple, hypothesis: &str) -> Result<NliLabel>;
}

/// Rule-based judge over a [`SyntheticWorld`].
#[derive(Debug, Clone)]
pub struct OracleNli {
    world: SyntheticWorld,
}

impl OracleNli {
    pub fn new(world: SyntheticWorld) -> Self {
        Self { world }
    }

    pub fn world(&self) -> &SyntheticWorld {
        &self.world
    }
}

impl NliBackend for OracleNli {
    fn classify(&self, premise: &PersonaTriple, hypothesis: &str) -> Result<NliLabel> {
        Ok(self.world.classify(premise, hypothesis))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemoteNliConfig {
    pub endpoint: String,
    pub timeout_ms: u64,
    pub retries: u32,
}

impl Default for RemoteNliConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8081".into(),
            timeout_ms: 10_000,
            retries: 2,
        }
    }
}

#[derive(Debug, Serialize)]
struct NliRequest<'a> {
    premise: &'a str,
    hypothesis: &'a str,
}

#[derive(Debug, Deserialize)]
struct NliResponse {
    label: NliLabel,
}

/// HTTP client for `POST {endpoint}/nli`. The premise is sent as the
/// triple's surface text.
pub struct RemoteNli {
    cfg: RemoteNliConfig,
    agent: ureq::Agent,
}

impl RemoteNli {
    pub fn new(cfg: RemoteNliConfig) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_millis(cfg.timeout_ms))
            .build();
        Self { cfg, agent }
    }
}

impl NliBackend for RemoteNli {
    fn classify(&self, premise: &PersonaTriple, hypothesis: &str) -> Result<NliLabel> {
        let url = format!("{}/nli", self.cfg.endpoint.trim_end_matches('/'));
        let surface = premise.surface();
        let body = NliRequest {
            premise: &surface,
            hypothesis,
        };
        let mut last = String::new();
        for _ in 0..=self.cfg.retries {
            match self.agent.post(&url).send_json(&body) {
                Ok(resp) => match resp.into_json::<NliResponse>() {
                    Ok(r) => return Ok(r.label),
                    Err(e) => last = e.to_string(),
                },
                Err(e) => last = e.to_string(),
            }
        }
        Err(Error::Service(format!("nli request to {url} failed: {last}")))
    }
}

/// Pooled distinct n-gram ratio over all responses.
pub fn distinct_n<S: AsRef<str>>(responses: &[Vec<S>], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::data("distinct_n needs n >= 1"));
    }
    let mut seen: HashSet<Vec<&str>> = HashSet::new();
    let mut total = 0usize;
    for r in responses {
        let toks: Vec<&str> = r.iter().map(|s| s.as_ref()).collect();
        for w in toks.windows(n) {
            total += 1;
            seen.insert(w.to_vec());
        }
    }
    if total == 0 {
        return Err(Error::data(format!("no {n}-grams in the responses")));
    }
    Ok(seen.len() as f64 / total as f64)
}

/// Per-triple labels of a response against a profile.
pub fn profile_labels(response: &str, profile: &PersonaProfile, nli: &dyn NliBackend) -> Result<Vec<NliLabel>> {
    profile.triples().iter().map(|t| nli.classify(t, response)).collect()
}

/// Sum of verdicts over the profile; 0 for an empty profile.
pub fn consistency_score(response: &str, profile: &PersonaProfile, nli: &dyn NliBackend) -> Result<i64> {
    Ok(profile_labels(response, profile, nli)?.iter().map(|l| l.verdict()).sum())
}

/// Contradict if any label contradicts, else entail if any entails.
pub fn aggregate_labels(labels: &[NliLabel]) -> NliLabel {
    labels.iter().copied().max().unwrap_or(NliLabel::Neutral)
}

/// Response-level label, or `None` for an empty profile.
pub fn response_label(response: &str, profile: &PersonaProfile, nli: &dyn NliBackend) -> Result<Option<NliLabel>> {
    if profile.is_empty() {
        return Ok(None);
    }
    Ok(Some(aggregate_labels(&profile_labels(response, profile, nli)?)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncRatios {
    pub entail: f64,
    pub neutral: f64,
    pub contradict: f64,
    /// Responses with a non-empty profile.
    pub comparisons: usize,
}

impl EncRatios {
    pub fn from_labels(labels: &[NliLabel]) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::data("no persona-bearing responses to compare"));
        }
        let n = labels.len();
        let count = |l: NliLabel| labels.iter().filter(|&&x| x == l).count();
        let (e, c) = (count(NliLabel::Entail), count(NliLabel::Contradict));
        let entail = e as f64 / n as f64;
        let contradict = c as f64 / n as f64;
        Ok(Self {
            entail,
            // Computed from counts so the three sum to 1 up to rounding.
            neutral: (n - e - c) as f64 / n as f64,
            contradict,
            comparisons: n,
        })
    }
}

pub fn enc_ratios(pairs: &[(String, PersonaProfile)], nli: &dyn NliBackend) -> Result<EncRatios> {
    let mut labels = Vec::new();
    for (resp, profile) in pairs {
        if let Some(l) = response_label(resp, profile, nli)? {
            labels.push(l);
        }
    }
    EncRatios::from_labels(&labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_responses: usize,
    pub dist1: f64,
    pub dist2: f64,
    pub entail_ratio: f64,
    pub neutral_ratio: f64,
    pub contradict_ratio: f64,
    /// Mean consistency score over persona-bearing responses.
    pub mean_cs: f64,
    pub comparisons: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ppl: Option<f64>,
}

impl EvalReport {
    pub const TABLE_HEADER: &'static str = "| PPL | Dist-1/2 | E | N | C | CS |";

    /// One table row, with ratios and scores scaled by 100.
    pub fn table_row(&self) -> String {
        let ppl = self.ppl.map_or_else(|| "-".to_string(), |p| format!("{p:.2}"));
        format!(
            "| {ppl} | {:.2}/{:.2} | {:.1} | {:.1} | {:.1} | {:.1} |",
            self.dist1 * 100.0,
            self.dist2 * 100.0,
            self.entail_ratio * 100.0,
            self.neutral_ratio * 100.0,
            self.contradict_ratio * 100.0,
            self.mean_cs * 100.0
        )
    }
}

/// Scores `responses[i]` against the profile of `dataset[i]`.
pub fn evaluate(
    responses: &[String],
    dataset: &[TrainingExample],
    nli: &dyn NliBackend,
    ppl: Option<f64>,
) -> Result<EvalReport> {
    if responses.len() != dataset.len() {
        return Err(Error::data(format!(
            "{} responses for {} dataset records",
            responses.len(),
            dataset.len()
        )));
    }
    let tokens: Vec<Vec<&str>> = responses.iter().map(|r| r.split_whitespace().collect()).collect();
    let mut labels = Vec::new();
    let mut cs_total = 0i64;
    for (r, x) in responses.iter().zip(dataset) {
        if x.profile.is_empty() {
            continue;
        }
        let per = profile_labels(r, &x.profile, nli)?;
        cs_total += per.iter().map(|l| l.verdict()).sum::<i64>();
        labels.push(aggregate_labels(&per));
    }
    let ratios = EncRatios::from_labels(&labels)?;
    Ok(EvalReport {
        n_responses: responses.len(),
        dist1: distinct_n(&tokens, 1)?,
        dist2: distinct_n(&tokens, 2)?,
        entail_ratio: ratios.entail,
        neutral_ratio: ratios.neutral,
        contradict_ratio: ratios.contradict,
        mean_cs: cs_total as f64 / labels.len() as f64,
        comparisons: labels.len(),
        ppl,
    })
}
