//! Acceptance suite: one PASS/FAIL line per criterion. Runs without the
//! test harness so the lines are always shown.

use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;

use personakit::ablation::{run_seed, trend_holds, world_vocab, AblationConfig};
use personakit::augment::{augment_dataset, build_pool, AugmentationConfig};
use personakit::encoding::{
    assemble_sequence, build_unilm_mask, EncodedExample, EncoderConfig, WordCounts, TYPE_PERSONA,
};
use personakit::eval::{consistency_score, distinct_n, evaluate, NliBackend, NliLabel};
use personakit::filter::{filter_one, FilterConfig, FilterReason, HashedTfIdf};
use personakit::ingest::Utterance;
use personakit::model::{softmax_in_place, train, AdamConfig, ModelConfig, ModelParams, TrainSchedule};
use personakit::persona::{parse_summary, AttributeRegistry, PersonaSummary, PersonaTriple, TripleStyle};
use personakit::pipeline::{self, PipelineConfig};
use personakit::profile::{PersonaProfile, TrainingExample};
use personakit::rng::derive_rng;
use personakit::synthetic::{generate_corpus, SyntheticConfig, SyntheticWorld};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn word(rng: &mut impl Rng) -> String {
    let n = rng.gen_range(1..=8);
    (0..n).map(|_| rng.gen_range(b'a'..=b'z') as char).collect()
}

fn words(rng: &mut impl Rng, lo: usize, hi: usize) -> String {
    let n = rng.gen_range(lo..=hi);
    (0..n).map(|_| word(rng)).collect::<Vec<_>>().join(" ")
}

fn c1_triple_round_trip() -> Outcome {
    let registry = AttributeRegistry::builtin();
    let mut rng = derive_rng(1, "acceptance", 1);
    for i in 0..10_000 {
        let attr = registry.symbols().choose(&mut rng).unwrap();
        let t = PersonaTriple::new(&words(&mut rng, 1, 5), attr, &words(&mut rng, 1, 6)).unwrap();
        let s = t.serialize(TripleStyle::SepDelimited);
        let back = parse_summary(&PersonaSummary(s.clone()))
            .map_err(|e| format!("case {i}: {e}"))?
            .ok_or_else(|| format!("case {i}: parsed as [None]"))?;
        ensure(back == t, || format!("case {i}: {s:?} parsed to {back:?}"))?;
        ensure(back.serialize(TripleStyle::SepDelimited) == s, || format!("case {i}: reserialization differs"))?;
    }
    Ok("10000/10000 triples".into())
}

fn c2_filter_rules() -> Outcome {
    let cfg = FilterConfig::new(5, 0.1, AttributeRegistry::builtin(), Arc::new(HashedTfIdf::default()))
        .map_err(|e| e.to_string())?;
    let cases = [
        ("i like to drink tea", "i like tea", FilterReason::BadFormat),
        ("i like to fly kites", "i [SEP] like_flying [SEP] kites", FilterReason::UnknownAttribute),
        (
            "me and my two older brothers like to drink tea",
            "me and my two older brothers [SEP] like_drink [SEP] tea",
            FilterReason::SubjectTooLong,
        ),
        ("what a lovely sunny afternoon", "i [SEP] like_drink [SEP] coffee", FilterReason::LowSimilarity),
        ("i like to drink green tea", "i [SEP] like_drink [SEP] green tea", FilterReason::Ok),
    ];
    for (utt, summary, want) in cases {
        let (triple, verdict) = filter_one(&PersonaSummary(summary.into()), utt, &cfg);
        ensure(verdict.reason == want, || format!("{summary:?}: got {:?}, want {want:?}", verdict.reason))?;
        ensure(triple.is_some() == (want == FilterReason::Ok), || format!("{summary:?}: triple presence"))?;
    }
    Ok("4 rejections with correct reasons, valid fixture kept".into())
}

fn random_example(rng: &mut impl Rng, registry: &AttributeRegistry, max_words: usize) -> TrainingExample {
    let n_ctx = rng.gen_range(1..=6);
    let speakers = ["a", "b", "c"];
    let context = (0..n_ctx)
        .map(|_| Utterance::new(*speakers.choose(rng).unwrap(), words(rng, 0, max_words)))
        .collect();
    let mut profile = PersonaProfile::new("b");
    for _ in 0..rng.gen_range(0..=4) {
        let attr = registry.symbols().choose(rng).unwrap();
        let t = PersonaTriple::new(&words(rng, 1, 3), attr, &words(rng, 1, 3)).unwrap();
        profile.push(t, usize::MAX);
    }
    TrainingExample {
        profile,
        context,
        response: Utterance::new("b", words(rng, 1, max_words)),
        marker: None,
    }
}

fn c3_augmentation() -> Outcome {
    let registry = AttributeRegistry::builtin();
    let mut rng = derive_rng(3, "acceptance", 3);
    let data: Vec<TrainingExample> = (0..10_000).map(|_| random_example(&mut rng, &registry, 4)).collect();
    let pool = build_pool(&data);
    let cfg = AugmentationConfig::default();
    let aug = augment_dataset(&data, &pool, &cfg);
    let mut appended = 0;
    for (i, (x, a)) in data.iter().zip(&aug).enumerate() {
        let orig = x.profile.triples();
        let all = a.profile.triples();
        ensure(all.len() >= orig.len() && &all[..orig.len()] == orig, || {
            format!("record {i}: originals not an ordered prefix")
        })?;
        for t in &all[orig.len()..] {
            appended += 1;
            ensure(orig.iter().all(|o| o.attribute() != t.attribute()), || {
                format!("record {i}: appended {:?} shares an attribute", t.attribute())
            })?;
        }
        ensure(a.context == x.context && a.response == x.response, || format!("record {i}: dialogue changed"))?;
    }
    let rerun = augment_dataset(&data, &pool, &cfg);
    let bytes = |v: &[TrainingExample]| serde_json::to_vec(v).unwrap();
    ensure(bytes(&aug) == bytes(&rerun), || "rerun differs".into())?;
    Ok(format!("10000 records, {appended} appended triples, rerun identical"))
}

fn segment_check(i: usize, e: &EncodedExample, cap: usize) -> Result<(), String> {
    let n = e.tokens.len();
    ensure(
        e.positions.len() == n && e.turns.len() == n && e.types.len() == n,
        || format!("example {i}: channel lengths differ"),
    )?;
    let p = e.persona_len();
    let s = e.source_len;
    ensure(s + e.target_len == n, || format!("example {i}: segment lengths"))?;
    for k in 0..n {
        ensure((e.types[k] == TYPE_PERSONA) == (k < p), || format!("example {i}: type at {k}"))?;
        ensure((e.turns[k] == 0) == (k < p || k >= s), || format!("example {i}: turn at {k}"))?;
    }
    ensure(p <= cap && s - p <= cap && e.target_len <= cap, || format!("example {i}: segment over cap"))?;
    // Context turns: constant within an utterance, decreasing by one per
    // utterance, ending at 1 next to the response.
    let ctx = &e.turns[p..s];
    ensure(ctx.last() == Some(&1), || format!("example {i}: last context turn is not 1"))?;
    for w in ctx.windows(2) {
        ensure(w[1] == w[0] || w[1] + 1 == w[0], || format!("example {i}: turns {w:?}"))?;
    }
    let distinct = ctx.windows(2).filter(|w| w[0] != w[1]).count() + 1;
    ensure(ctx[0] as usize == distinct, || format!("example {i}: first turn {}", ctx[0]))?;
    Ok(())
}

fn c4_encoding() -> Outcome {
    let registry = AttributeRegistry::builtin();
    let mut rng = derive_rng(4, "acceptance", 4);
    let data: Vec<TrainingExample> = (0..10_000).map(|_| random_example(&mut rng, &registry, 60)).collect();
    let mut counts = WordCounts::default();
    for x in data.iter().take(2000) {
        counts.add_example(x);
    }
    let vocab = counts.finalize(5000);
    let cfg = EncoderConfig::default();
    let mut encoded = 0;
    let mut capped = 0;
    for (i, x) in data.iter().enumerate() {
        let e = assemble_sequence(x, &vocab, &cfg).map_err(|err| format!("example {i}: {err}"))?;
        segment_check(i, &e, 128)?;
        encoded += 1;
        capped += usize::from(e.source_len - e.persona_len() >= 100 || e.target_len == 128);
    }
    ensure(capped > 0, || "no example reached a cap".into())?;
    Ok(format!("{encoded} examples, {capped} near or at a cap"))
}

fn c5_mask() -> Outcome {
    let mut cells = 0;
    for s in 0..=16 {
        for t in 0..=16 {
            let m = build_unilm_mask(s, t);
            ensure(m.size() == s + t, || format!("size at S={s} T={t}"))?;
            for i in 0..s + t {
                for j in 0..s + t {
                    let want = j < s || (s <= j && j <= i);
                    ensure(m.allowed(i, j) == want, || format!("S={s} T={t} ({i},{j})"))?;
                    cells += 1;
                }
            }
        }
    }
    Ok(format!("{cells} cells"))
}

fn tiny_seq(src: &[u32], tgt: &[u32]) -> EncodedExample {
    let n = src.len() + tgt.len();
    EncodedExample {
        tokens: src.iter().chain(tgt).copied().collect(),
        positions: (0..src.len() as u32).chain(0..tgt.len() as u32).collect(),
        turns: (0..n).map(|i| if i < 2 || i >= src.len() { 0 } else { 1 }).collect(),
        types: (0..n).map(|i| if i < 2 { TYPE_PERSONA } else if i < src.len() { 1 } else { 0 }).collect(),
        source_len: src.len(),
        target_len: tgt.len(),
    }
}

fn c6_model_numerics() -> Outcome {
    let start = Instant::now();
    let cfg = ModelConfig {
        layers: 2,
        heads: 2,
        model_dim: 8,
        ff_dim: 12,
        vocab_size: 13,
        max_position: 10,
        max_turn: 3,
        max_type: 3,
        init_std: 0.3,
        seed: 6,
    };
    let mut m = ModelParams::init(cfg).map_err(|e| e.to_string())?;
    let mut rng = derive_rng(6, "acceptance", 6);
    for v in m.values_mut() {
        *v += 0.1 * (rng.gen::<f64>() - 0.5);
    }
    let batch = vec![tiny_seq(&[3, 5, 6, 2, 7], &[8, 9, 4]), tiny_seq(&[3, 10, 2], &[11, 12, 6, 4])];

    let mut row = vec![1.5, -2.0, 0.25, 700.0, -700.0];
    softmax_in_place(&mut row);
    ensure((row.iter().sum::<f64>() - 1.0).abs() < 1e-6, || "softmax of extreme logits".into())?;
    for ex in &batch {
        for r in m.forward(ex).map_err(|e| e.to_string())? {
            ensure((r.iter().sum::<f64>() - 1.0).abs() < 1e-6, || "probability row does not sum to 1".into())?;
        }
    }

    let mut uniform = m.clone();
    uniform.fill_block("out_weight", 0.0).map_err(|e| e.to_string())?;
    uniform.fill_block("out_bias", 0.0).map_err(|e| e.to_string())?;
    let l = uniform.nll_loss(&batch).map_err(|e| e.to_string())?;
    ensure((l - 13f64.ln()).abs() < 1e-9, || format!("uniform loss {l}"))?;

    let (_, grad) = m.backward(&batch).map_err(|e| e.to_string())?;
    let h = 1e-5;
    let mut worst = 0.0f64;
    for b in m.blocks().to_vec() {
        let r = b.range();
        let mut idx: Vec<usize> = r.clone().collect();
        idx.sort_by(|&a, &c| grad[c].abs().total_cmp(&grad[a].abs()));
        for &k in idx.iter().take(4) {
            let orig = m.values()[k];
            m.values_mut()[k] = orig + h;
            let lp = m.nll_loss(&batch).map_err(|e| e.to_string())?;
            m.values_mut()[k] = orig - h;
            let lm = m.nll_loss(&batch).map_err(|e| e.to_string())?;
            m.values_mut()[k] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let rel = (fd - grad[k]).abs() / fd.abs().max(grad[k].abs()).max(1e-8);
            if fd.abs().max(grad[k].abs()) > 1e-7 {
                worst = worst.max(rel);
                ensure(rel < 1e-4, || format!("block {} index {k}: analytic {} numeric {fd}", b.name, grad[k]))?;
            }
        }
    }

    let ex = &batch[0];
    let base = m.forward(ex).map_err(|e| e.to_string())?;
    for t in 0..ex.target_len {
        let mut changed = ex.clone();
        let pos = ex.source_len + t;
        changed.tokens[pos] = if changed.tokens[pos] == 12 { 11 } else { 12 };
        let rows = m.forward(&changed).map_err(|e| e.to_string())?;
        // Row r predicts target r from positions up to S - 1 + r.
        for r in 0..=t {
            ensure(rows[r] == base[r], || format!("target {t} changed prediction row {r}"))?;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 300.0, || format!("took {secs:.1}s"))?;
    Ok(format!("{} blocks, worst rel error {worst:.2e}, {secs:.1}s", m.blocks().len()))
}

fn encode_all(data: &[TrainingExample], vocab: &personakit::encoding::WordVocab) -> Vec<EncodedExample> {
    data.iter()
        .map(|x| assemble_sequence(x, vocab, &EncoderConfig::default()).unwrap())
        .collect()
}

fn c7_overfit() -> Outcome {
    let world = SyntheticWorld::standard(0);
    let corpus = generate_corpus(
        &world,
        &SyntheticConfig {
            n_sessions: 200,
            seed: 7,
            ..SyntheticConfig::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let data: Vec<TrainingExample> = corpus.into_iter().map(|g| g.example).collect();
    let vocab = world_vocab(&world);
    let enc = encode_all(&data, &vocab);
    let mut m = ModelParams::init(ModelConfig {
        vocab_size: personakit::encoding::Tokenizer::vocab_size(&vocab),
        ..ModelConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let schedule = TrainSchedule::default();
    ensure(schedule.total_steps == 500, || "default schedule is not 500 steps".into())?;
    train(&mut m, &enc, &schedule, &AdamConfig::default(), |_| {}).map_err(|e| e.to_string())?;
    let ppl = m.perplexity(&enc).map_err(|e| e.to_string())?;
    ensure(ppl < 1.5, || format!("training PPL {ppl:.4}"))?;
    Ok(format!("{} examples, training PPL {ppl:.4}", enc.len()))
}

/// Judges by marker words in the response.
struct MarkerNli;

impl NliBackend for MarkerNli {
    fn classify(&self, premise: &PersonaTriple, hypothesis: &str) -> personakit::Result<NliLabel> {
        let obj = premise.object_text();
        Ok(if hypothesis.contains(&format!("yes {obj}")) {
            NliLabel::Entail
        } else if hypothesis.contains(&format!("no {obj}")) {
            NliLabel::Contradict
        } else {
            NliLabel::Neutral
        })
    }
}

fn c8_metric_oracles() -> Outcome {
    let r = vec![vec!["i", "am", "i"]];
    ensure(distinct_n(&r, 1).unwrap() == 2.0 / 3.0, || "dist-1".into())?;
    ensure(distinct_n(&r, 2).unwrap() == 1.0, || "dist-2".into())?;

    let t = |o: &str| PersonaTriple::new("i", "like", o).unwrap();
    let profile = PersonaProfile::from_triples("b", [t("w"), t("x"), t("y"), t("z")]);
    let cs = consistency_score("yes w no y yes z", &profile, &MarkerNli).map_err(|e| e.to_string())?;
    ensure(cs == 1, || format!("CS of [E,N,C,E] = {cs}"))?;

    // Ten responses: 4 entail, 3 contradict, 3 neutral by hand count.
    let texts = [
        "yes a", "yes a", "yes a", "yes a", "no a", "no a", "no a", "maybe", "hello", "ok",
    ];
    let data: Vec<TrainingExample> = texts
        .iter()
        .map(|_| TrainingExample {
            profile: PersonaProfile::from_triples("b", [t("a")]),
            context: vec![Utterance::new("a", "hi")],
            response: Utterance::new("b", "x"),
            marker: None,
        })
        .collect();
    let responses: Vec<String> = texts.iter().map(|s| s.to_string()).collect();
    let rep = evaluate(&responses, &data, &MarkerNli, None).map_err(|e| e.to_string())?;
    let sum = rep.entail_ratio + rep.neutral_ratio + rep.contradict_ratio;
    ensure((sum - 1.0).abs() < 1e-12, || format!("ratios sum to {sum}"))?;
    ensure(
        (rep.entail_ratio, rep.contradict_ratio, rep.neutral_ratio) == (0.4, 0.3, 0.3),
        || format!("ratios {rep:?}"),
    )?;
    ensure(rep.mean_cs == 0.1, || format!("mean CS {}", rep.mean_cs))?;
    Ok("dist, CS and E/N/C match hand counts".into())
}

fn c9_ablation() -> Outcome {
    let start = Instant::now();
    let cfg = AblationConfig::default();
    let mut held = 0;
    let mut lines = Vec::new();
    for seed in 0..3 {
        let rs = run_seed(&cfg, seed).map_err(|e| e.to_string())?;
        let ok = trend_holds(&rs);
        held += usize::from(ok);
        let cs: Vec<String> = rs
            .iter()
            .map(|r| format!("{}={:.1}/C{:.1}", r.variant.name(), 100.0 * r.report.mean_cs, 100.0 * r.report.contradict_ratio))
            .collect();
        lines.push(format!("seed {seed} [{}] {}", cs.join(" "), if ok { "holds" } else { "fails" }));
    }
    let secs = start.elapsed().as_secs_f64();
    for l in &lines {
        println!("    {l}");
    }
    ensure(held >= 2, || format!("trend held in {held}/3 seeds"))?;
    ensure(secs < 1800.0, || format!("took {secs:.0}s"))?;
    Ok(format!("trend held in {held}/3 seeds, {secs:.0}s"))
}

fn run_pipeline(dir: &Path) -> personakit::Result<()> {
    let mut cfg = PipelineConfig::default();
    cfg.dump.n_comments = 100_000;
    cfg.dump.n_users = 5_000;
    cfg.dump.seed = 10;
    let p = |n: &str| dir.join(n);
    pipeline::synth(&cfg, &p("dump.jsonl"), &p("world.json"), true)?;
    pipeline::ingest(&cfg, &p("dump.jsonl"), &p("sessions.jsonl"))?;
    pipeline::extract(&cfg, &p("sessions.jsonl"), &p("annotated.jsonl"))?;
    pipeline::filter(&cfg, &p("annotated.jsonl"), &p("filtered.jsonl"), Some(&p("audit.jsonl")))?;
    pipeline::build(&cfg, &p("filtered.jsonl"), &p("dataset.jsonl"))?;
    pipeline::augment(&cfg, &p("dataset.jsonl"), &p("augmented.jsonl"))?;
    pipeline::encode(&cfg, &p("augmented.jsonl"), &p("encoded.jsonl"), None, Some(&p("vocab.txt")))?;
    Ok(())
}

fn c10_pipeline() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let start = Instant::now();
    run_pipeline(a.path()).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    run_pipeline(b.path()).map_err(|e| e.to_string())?;
    let mut names: Vec<_> = fs::read_dir(a.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    for n in &names {
        let fa = fs::read(a.path().join(n)).unwrap();
        let fb = fs::read(b.path().join(n)).map_err(|_| format!("{n:?} missing in second run"))?;
        ensure(fa == fb, || format!("{n:?} differs between runs"))?;
    }
    let examples = fs::read_to_string(a.path().join("dataset.jsonl")).unwrap().lines().count();
    ensure(examples > 0, || "no examples built".into())?;
    ensure(secs < 120.0, || format!("first run took {secs:.1}s"))?;
    Ok(format!("{} files identical, {examples} examples, {secs:.1}s", names.len()))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("triple round trip", c1_triple_round_trip),
        ("filter rules", c2_filter_rules),
        ("augmentation invariants", c3_augmentation),
        ("encoding invariants", c4_encoding),
        ("mask correctness", c5_mask),
        ("model numerics", c6_model_numerics),
        ("overfit sanity", c7_overfit),
        ("metric oracles", c8_metric_oracles),
        ("desk-scale ablation", c9_ablation),
        ("pipeline determinism and throughput", c10_pipeline),
    ];
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(detail) => println!("PASS criterion {}: {name} ({detail})", i + 1),
            Err(why) => {
                println!("FAIL criterion {}: {name} ({why})", i + 1);
                failed.push(i + 1);
            }
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
