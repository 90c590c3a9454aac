//! File-to-file pipeline steps behind the command-line tool.
//!
//! Each step reads line-delimited JSON from its predecessor, writes its own
//! output through a `.partial` file that is renamed on success, and leaves a
//! `<output>.manifest.json` next to it with the configuration hash, input
//! and output digests, and step counters.

mod config;

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use config::{
    hex_digest, BuildSection, EvalSection, ExtractBackendKind, ExtractSection, FilterSection, GenerateSection,
    NliBackendKind, PipelineConfig, VocabSection,
};

use crate::augment::{augment_dataset, build_pool, merge_datasets};
use crate::encoding::{assemble_sequence, EncodedExample, Tokenizer, WordCounts, WordVocab};
use crate::error::{ConfigError, Error, Result};
use crate::eval::{evaluate, NliBackend, OracleNli, RemoteNli};
use crate::extract::{
    annotate_session, default_rule_specs, AnnotatedSession, ExtractorBackend, RemoteExtractor, RuleExtractor,
};
use crate::filter::{filter_session, FilterConfig, FilterStats, FilteredSession, HashedTfIdf};
use crate::ingest::{parse_dump, thread_sessions, DialogueSession, DumpFormat};
use crate::model::{train, ModelConfig, ModelParams};
use crate::persona::{load_registry, AttributeRegistry};
use crate::profile::{corpus_stats, session_examples, CorpusStats, TrainingExample};
use crate::rng::derive_rng;
use crate::synthetic::{comment_to_dump_line, generate_comments, generate_corpus, SyntheticWorld};

/// Step counters, serialized in key order.
pub type Counters = BTreeMap<String, Value>;

fn counters<T: Serialize>(v: &T) -> Counters {
    match serde_json::to_value(v).expect("counters serialize") {
        Value::Object(m) => m.into_iter().collect(),
        other => BTreeMap::from([("value".to_string(), other)]),
    }
}

/// Writes to `<path>.partial` and renames into place on [`commit`].
///
/// [`commit`]: AtomicFile::commit
pub struct AtomicFile {
    path: PathBuf,
    partial: PathBuf,
    writer: Option<BufWriter<File>>,
}

impl AtomicFile {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let mut partial = path.as_os_str().to_owned();
        partial.push(".partial");
        let partial = PathBuf::from(partial);
        let writer = BufWriter::new(File::create(&partial)?);
        Ok(Self {
            path: path.to_path_buf(),
            partial,
            writer: Some(writer),
        })
    }

    pub fn writer(&mut self) -> &mut BufWriter<File> {
        self.writer.as_mut().expect("not committed")
    }

    pub fn write_json_line<T: Serialize>(&mut self, v: &T) -> Result<()> {
        let w = self.writer();
        serde_json::to_writer(&mut *w, v)?;
        w.write_all(b"\n")?;
        Ok(())
    }

    pub fn commit(mut self) -> Result<()> {
        let w = self.writer.take().expect("not committed");
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        fs::rename(&self.partial, &self.path)?;
        Ok(())
    }
}

impl Drop for AtomicFile {
    fn drop(&mut self) {
        if self.writer.is_some() {
            let _ = fs::remove_file(&self.partial);
        }
    }
}

pub fn write_jsonl<'a, T: Serialize + 'a>(path: &Path, items: impl IntoIterator<Item = &'a T>) -> Result<u64> {
    let mut f = AtomicFile::create(path)?;
    let mut n = 0;
    for it in items {
        f.write_json_line(it)?;
        n += 1;
    }
    f.commit()?;
    Ok(n)
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = AtomicFile::create(path)?;
    f.writer().write_all(bytes)?;
    f.commit()
}

/// Reads a line-delimited JSON file; errors name the file and line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = File::open(path).map_err(|e| Error::data(format!("cannot open {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line)
            .map_err(|e| Error::data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(v);
    }
    Ok(out)
}

fn file_digest(path: &Path) -> Result<String> {
    Ok(hex_digest(&fs::read(path)?))
}

fn basename(p: &Path) -> String {
    p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub step: String,
    pub tool_version: String,
    pub config_sha256: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub counters: Counters,
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut p = output.as_os_str().to_owned();
    p.push(".manifest.json");
    PathBuf::from(p)
}

/// Hashes inputs and outputs and writes the manifest beside the first
/// output.
pub fn write_manifest(
    step: &str,
    cfg: &PipelineConfig,
    inputs: &[&Path],
    outputs: &[&Path],
    counters: Counters,
) -> Result<Manifest> {
    let digests = |ps: &[&Path]| -> Result<BTreeMap<String, String>> {
        ps.iter().map(|p| Ok((basename(p), file_digest(p)?))).collect()
    };
    let m = Manifest {
        step: step.to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_sha256: cfg.hash(),
        inputs: digests(inputs)?,
        outputs: digests(outputs)?,
        counters,
    };
    let first = outputs.first().ok_or_else(|| Error::data("step produced no output"))?;
    write_bytes(&manifest_path(first), (serde_json::to_string_pretty(&m)? + "\n").as_bytes())?;
    Ok(m)
}

fn registry(cfg: &PipelineConfig) -> Result<AttributeRegistry> {
    match &cfg.filter.registry {
        Some(p) => load_registry(p).map_err(Error::from),
        None => Ok(AttributeRegistry::builtin()),
    }
}

fn world(cfg: &PipelineConfig) -> Result<SyntheticWorld> {
    match &cfg.eval.world {
        Some(p) => SyntheticWorld::load(p),
        None => Ok(SyntheticWorld::standard(0)),
    }
}

pub fn ingest(cfg: &PipelineConfig, input: &Path, output: &Path) -> Result<Manifest> {
    let f = File::open(input).map_err(|e| Error::data(format!("cannot open {}: {e}", input.display())))?;
    let mut reader = parse_dump(BufReader::with_capacity(1 << 20, f), DumpFormat::Jsonl);
    let mut comments = Vec::new();
    for c in reader.by_ref() {
        comments.push(c?);
    }
    let parse = reader.stats();
    let (sessions, stats) = thread_sessions(comments, &cfg.cleaning);
    write_jsonl(output, &sessions)?;
    let mut c = counters(&stats);
    c.insert("parse".into(), serde_json::to_value(parse)?);
    write_manifest("ingest", cfg, &[input], &[output], c)
}

fn extractor(cfg: &PipelineConfig) -> Result<(Box<dyn ExtractorBackend>, Option<RemoteExtractor>)> {
    match cfg.extract.backend {
        ExtractBackendKind::Rules => {
            let mut specs = cfg.extract.rules.clone();
            specs.extend(default_rule_specs());
            Ok((Box::new(RuleExtractor::from_specs(&specs, &registry(cfg)?)?), None))
        }
        ExtractBackendKind::Remote => {
            let r = RemoteExtractor::new(cfg.extract.remote.clone());
            Ok((Box::new(r.clone()), Some(r)))
        }
    }
}

pub fn extract(cfg: &PipelineConfig, input: &Path, output: &Path) -> Result<Manifest> {
    let sessions: Vec<DialogueSession> = read_jsonl(input)?;
    let (backend, remote) = extractor(cfg)?;
    let mut f = AtomicFile::create(output)?;
    let (mut utterances, mut with_persona) = (0u64, 0u64);
    for s in sessions {
        let a = annotate_session(s, backend.as_ref());
        utterances += a.summaries.len() as u64;
        with_persona += a.summaries.iter().filter(|s| !s.is_none()).count() as u64;
        f.write_json_line(&a)?;
    }
    let mut c = Counters::new();
    c.insert("utterances".into(), json!(utterances));
    c.insert("non_none_summaries".into(), json!(with_persona));
    if let Some(r) = remote {
        let st = r.stats();
        c.insert("remote".into(), serde_json::to_value(st)?);
        if st.requests > 0 && st.failed_batches == st.requests {
            return Err(Error::Service(format!(
                "all {} extraction requests failed",
                st.requests
            )));
        }
    }
    f.commit()?;
    write_manifest("extract", cfg, &[input], &[output], c)
}

pub fn filter(cfg: &PipelineConfig, input: &Path, output: &Path, audit: Option<&Path>) -> Result<Manifest> {
    let annotated: Vec<AnnotatedSession> = read_jsonl(input)?;
    let fc = FilterConfig::new(
        cfg.filter.max_subject_tokens,
        cfg.filter.min_similarity,
        registry(cfg)?,
        Arc::new(HashedTfIdf {
            dims: cfg.filter.hash_dims,
            stats: None,
        }),
    )?;
    let mut stats = FilterStats::default();
    let mut out = AtomicFile::create(output)?;
    let mut audit_file = audit.map(AtomicFile::create).transpose()?;
    let mut audit_err = None;
    for a in annotated {
        let fs = match audit_file.as_mut() {
            Some(af) => {
                let mut sink = |e: crate::filter::AuditEntry| {
                    if let Err(err) = af.write_json_line(&e) {
                        audit_err.get_or_insert(err);
                    }
                };
                filter_session(a, &fc, &mut stats, Some(&mut sink))
            }
            None => filter_session(a, &fc, &mut stats, None),
        };
        out.write_json_line(&fs)?;
    }
    if let Some(e) = audit_err {
        return Err(e);
    }
    out.commit()?;
    let mut outputs = vec![output];
    if let (Some(af), Some(p)) = (audit_file, audit) {
        af.commit()?;
        outputs.push(p);
    }
    write_manifest("filter", cfg, &[input], &outputs, counters(&stats))
}

pub fn build(cfg: &PipelineConfig, input: &Path, output: &Path) -> Result<(Manifest, CorpusStats)> {
    let filtered: Vec<FilteredSession> = read_jsonl(input)?;
    let stats = corpus_stats(&filtered);
    let mut f = AtomicFile::create(output)?;
    let (mut examples, mut with_profile) = (0u64, 0u64);
    for fs in &filtered {
        for x in session_examples(fs, cfg.build.profile_cap) {
            examples += 1;
            with_profile += u64::from(!x.profile.is_empty());
            f.write_json_line(&x)?;
        }
    }
    f.commit()?;
    let mut c = counters(&stats);
    c.insert("examples".into(), json!(examples));
    c.insert("examples_with_profile".into(), json!(with_profile));
    Ok((write_manifest("build", cfg, &[input], &[output], c)?, stats))
}

pub fn augment(cfg: &PipelineConfig, input: &Path, output: &Path) -> Result<Manifest> {
    let raw: Vec<TrainingExample> = read_jsonl(input)?;
    let pool = build_pool(&raw);
    let aug = augment_dataset(&raw, &pool, &cfg.augmentation);
    let added: usize = aug.iter().filter_map(|x| x.marker).map(|m| m.added_count).sum();
    let n_raw = raw.len();
    let merged = merge_datasets(raw, aug, &cfg.augmentation);
    write_jsonl(output, &merged)?;
    let c = counters(&json!({
        "raw": n_raw,
        "pool": pool.len(),
        "triples_added": added,
        "merged": merged.len(),
        "merged_augmented": merged.iter().filter(|x| x.marker.is_some()).count(),
    }));
    write_manifest("augment", cfg, &[input], &[output], c)
}

/// Encodes a dataset. Builds the vocabulary from the input when
/// `vocab_in` is absent and writes it to `vocab_out`.
pub fn encode(
    cfg: &PipelineConfig,
    input: &Path,
    output: &Path,
    vocab_in: Option<&Path>,
    vocab_out: Option<&Path>,
) -> Result<Manifest> {
    let data: Vec<TrainingExample> = read_jsonl(input)?;
    let vocab = match vocab_in {
        Some(p) => WordVocab::load(p)?,
        None => {
            let mut counts = WordCounts::default();
            for x in &data {
                counts.add_example(x);
            }
            counts.finalize(cfg.vocab.max_size)
        }
    };
    let mut f = AtomicFile::create(output)?;
    let (mut ok, mut skipped, mut tokens) = (0u64, 0u64, 0u64);
    for x in &data {
        match assemble_sequence(x, &vocab, &cfg.encoder) {
            Ok(e) => {
                ok += 1;
                tokens += e.len() as u64;
                f.write_json_line(&e)?;
            }
            Err(err) => {
                log::debug!("skipping record: {err}");
                skipped += 1;
            }
        }
    }
    f.commit()?;
    let mut outputs = vec![output];
    if let Some(p) = vocab_out {
        write_bytes(p, vocab.to_file_string().as_bytes())?;
        outputs.push(p);
    }
    let mut inputs = vec![input];
    inputs.extend(vocab_in);
    let c = counters(&json!({
        "encoded": ok,
        "skipped": skipped,
        "tokens": tokens,
        "vocab_size": vocab.vocab_size(),
    }));
    write_manifest("encode", cfg, &inputs, &outputs, c)
}

#[derive(Serialize)]
struct TraceLine {
    step: usize,
    lr: f64,
    loss: f64,
}

pub fn train_model(
    cfg: &PipelineConfig,
    input: &Path,
    vocab_path: &Path,
    output: &Path,
    trace_path: Option<&Path>,
) -> Result<Manifest> {
    let data: Vec<EncodedExample> = read_jsonl(input)?;
    let vocab = WordVocab::load(vocab_path)?;
    let longest = data.iter().flat_map(|e| e.positions.iter()).copied().max().unwrap_or(0) as usize;
    let deepest = data.iter().flat_map(|e| e.turns.iter()).copied().max().unwrap_or(0) as usize;
    let model_cfg = ModelConfig {
        vocab_size: vocab.vocab_size(),
        max_position: cfg.model.max_position.max(longest + 1),
        max_turn: cfg.model.max_turn.max(deepest + 1),
        ..cfg.model.clone()
    };
    let mut model = ModelParams::init(model_cfg)?;
    let mut trace = Vec::new();
    let report = train(&mut model, &data, &cfg.schedule, &cfg.adam, |e| {
        if e.step % 50 == 0 || e.step == cfg.schedule.total_steps {
            log::info!("step {} lr {:.3e} loss {:.4}", e.step, e.lr, e.loss);
        }
        trace.push(TraceLine {
            step: e.step,
            lr: e.lr,
            loss: e.loss,
        });
    })?;
    let mut buf = Vec::new();
    model.write_checkpoint(&mut buf)?;
    write_bytes(output, &buf)?;
    let mut outputs = vec![output];
    if let Some(p) = trace_path {
        write_jsonl(p, &trace)?;
        outputs.push(p);
    }
    let ppl = model.perplexity(&data)?;
    let c = counters(&json!({
        "examples": data.len(),
        "steps": report.steps,
        "final_loss": report.final_loss,
        "train_ppl": ppl,
        "parameters": model.num_params(),
    }));
    write_manifest("train", cfg, &[input, vocab_path], &outputs, c)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedResponse {
    pub response: String,
}

pub fn generate(cfg: &PipelineConfig, model_path: &Path, vocab_path: &Path, input: &Path, output: &Path) -> Result<Manifest> {
    let model = ModelParams::load(model_path)?;
    let vocab = WordVocab::load(vocab_path)?;
    let data: Vec<TrainingExample> = read_jsonl(input)?;
    let eos = vocab.specials().eos;
    let mut out = Vec::with_capacity(data.len());
    let mut empty = 0u64;
    for (i, x) in data.iter().enumerate() {
        let text = match assemble_sequence(x, &vocab, &cfg.encoder) {
            Ok(enc) => {
                let mut rng = derive_rng(cfg.generate.seed, "generate", i as u64);
                let mut ids = model.generate(&enc.source(), eos, cfg.generate.decoding, cfg.generate.max_len, &mut rng)?;
                if ids.last() == Some(&eos) {
                    ids.pop();
                }
                vocab.decode(&ids)
            }
            Err(_) => String::new(),
        };
        empty += u64::from(text.is_empty());
        out.push(GeneratedResponse { response: text });
    }
    write_jsonl(output, &out)?;
    let c = counters(&json!({ "responses": out.len(), "empty": empty }));
    write_manifest("generate", cfg, &[model_path, vocab_path, input], &[output], c)
}

fn nli_backend(cfg: &PipelineConfig) -> Result<Box<dyn NliBackend>> {
    Ok(match cfg.eval.backend {
        NliBackendKind::Oracle => Box::new(OracleNli::new(world(cfg)?)),
        NliBackendKind::Remote => Box::new(RemoteNli::new(cfg.eval.remote.clone())),
    })
}

/// Scores responses against the dataset profiles. With `ppl_of` set, also
/// reports the model's perplexity on those encoded examples.
pub fn eval(
    cfg: &PipelineConfig,
    dataset: &Path,
    responses: &Path,
    ppl_of: Option<(&Path, &Path)>,
    output: &Path,
) -> Result<(Manifest, crate::eval::EvalReport)> {
    let data: Vec<TrainingExample> = read_jsonl(dataset)?;
    let resp: Vec<GeneratedResponse> = read_jsonl(responses)?;
    let texts: Vec<String> = resp.into_iter().map(|r| r.response).collect();
    let mut inputs = vec![dataset, responses];
    let ppl = match ppl_of {
        Some((model_path, encoded)) => {
            inputs.extend([model_path, encoded]);
            let model = ModelParams::load(model_path)?;
            let enc: Vec<EncodedExample> = read_jsonl(encoded)?;
            Some(model.perplexity(&enc)?)
        }
        None => None,
    };
    let nli = nli_backend(cfg)?;
    let report = evaluate(&texts, &data, nli.as_ref(), ppl)?;
    write_bytes(output, (serde_json::to_string_pretty(&report)? + "\n").as_bytes())?;
    let m = write_manifest("eval", cfg, &inputs, &[output], counters(&report))?;
    Ok((m, report))
}

/// Corpus statistics of a filtered-session file.
pub fn stats(input: &Path) -> Result<CorpusStats> {
    let filtered: Vec<FilteredSession> = read_jsonl(input)?;
    Ok(corpus_stats(&filtered))
}

/// Writes a synthetic dataset, or a raw comment dump when `comments` is
/// set, plus the world description.
pub fn synth(cfg: &PipelineConfig, output: &Path, world_out: &Path, comments: bool) -> Result<Manifest> {
    let w = SyntheticWorld::standard(cfg.synthetic.seed);
    w.validate(&registry(cfg)?)?;
    let c = if comments {
        let cs = generate_comments(&w, &cfg.dump);
        let mut f = AtomicFile::create(output)?;
        for c in &cs {
            f.writer().write_all(comment_to_dump_line(c).as_bytes())?;
            f.writer().write_all(b"\n")?;
        }
        f.commit()?;
        counters(&json!({ "comments": cs.len() }))
    } else {
        let data = generate_corpus(&w, &cfg.synthetic)?;
        write_jsonl(output, data.iter().map(|g| &g.example))?;
        let labels: BTreeMap<String, usize> = crate::synthetic::label_counts(&data)
            .into_iter()
            .map(|(k, v)| (serde_json::to_value(k).unwrap().as_str().unwrap().to_string(), v))
            .collect();
        counters(&json!({ "examples": data.len(), "intended": labels }))
    };
    write_bytes(world_out, (serde_json::to_string_pretty(&w)? + "\n").as_bytes())?;
    write_manifest("synth", cfg, &[], &[output, world_out], c)
}

/// Validates that an optional path argument exists.
pub fn require_file(p: &Path) -> Result<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(Error::Config(ConfigError::new(format!("input file {} does not exist", p.display()))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_file_only_appears_on_commit() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/out.jsonl");
        {
            let mut f = AtomicFile::create(&p).unwrap();
            f.write_json_line(&1).unwrap();
        }
        assert!(!p.exists());
        assert_eq!(fs::read_dir(dir.path().join("sub")).unwrap().count(), 0);
        write_jsonl(&p, &[1, 2]).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "1\n2\n");
    }

    #[test]
    fn read_errors_name_file_and_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.jsonl");
        fs::write(&p, "1\n\n2\noops\n").unwrap();
        let err = read_jsonl::<u32>(&p).unwrap_err().to_string();
        assert!(err.contains("x.jsonl:4"), "{err}");
        assert!(matches!(read_jsonl::<u32>(&dir.path().join("none")), Err(Error::Data(_))));
    }

    #[test]
    fn small_run_is_reproducible_with_manifests() {
        let run = |dir: &Path| {
            let mut cfg = PipelineConfig::default();
            cfg.dump.n_comments = 300;
            let p = |n: &str| dir.join(n);
            synth(&cfg, &p("dump.jsonl"), &p("world.json"), true).unwrap();
            ingest(&cfg, &p("dump.jsonl"), &p("s.jsonl")).unwrap();
            extract(&cfg, &p("s.jsonl"), &p("a.jsonl")).unwrap();
            filter(&cfg, &p("a.jsonl"), &p("f.jsonl"), None).unwrap();
            let (m, stats) = build(&cfg, &p("f.jsonl"), &p("d.jsonl")).unwrap();
            assert_eq!(m.step, "build");
            assert_eq!(m.inputs.keys().collect::<Vec<_>>(), ["f.jsonl"]);
            assert!(stats.sessions > 0);
            fs::read(manifest_path(&p("d.jsonl"))).unwrap()
        };
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        assert_eq!(run(a.path()), run(b.path()));
    }

    #[test]
    fn unreachable_extraction_service_is_a_service_error() {
        let dir = tempfile::tempdir().unwrap();
        let sessions = dir.path().join("s.jsonl");
        let session = DialogueSession {
            session_id: "t".into(),
            utterances: vec![crate::ingest::Utterance::new("a", "i like to drink tea")],
        };
        write_jsonl(&sessions, [&session]).unwrap();
        let mut cfg = PipelineConfig::default();
        cfg.extract.backend = ExtractBackendKind::Remote;
        cfg.extract.remote.endpoint = "http://127.0.0.1:9".into();
        cfg.extract.remote.retries = 0;
        let err = extract(&cfg, &sessions, &dir.path().join("a.jsonl")).unwrap_err();
        assert_eq!(err.exit_code(), 3, "{err}");
        assert!(!dir.path().join("a.jsonl").exists());
    }
}
