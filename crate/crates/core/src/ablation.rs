//! Persona ablation on the synthetic world.
//!
//! Three toy models share a training corpus built with profile bias, a seed
//! and a step budget. They differ only in how profiles are presented during
//! training: removed, as extracted, or mixed with augmented copies. Each is
//! then decoded greedily on a held-out set whose profiles carry the
//! responder's full persona, and scored with the oracle judge.

use serde::{Deserialize, Serialize};

use crate::augment::{augment_dataset, build_pool, merge_datasets, AugmentationConfig};
use crate::encoding::{assemble_sequence, EncodedExample, EncoderConfig, Tokenizer, WordCounts, WordVocab};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport, OracleNli};
use crate::model::{train, AdamConfig, ModelConfig, ModelParams, TrainSchedule};
use crate::profile::{PersonaProfile, TrainingExample};
use crate::synthetic::{generate_corpus, GeneratedExample, SyntheticConfig, SyntheticWorld};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    NoPersona,
    RawPersona,
    Augmented,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::NoPersona, Variant::RawPersona, Variant::Augmented];

    pub fn name(self) -> &'static str {
        match self {
            Variant::NoPersona => "no_persona",
            Variant::RawPersona => "raw_persona",
            Variant::Augmented => "augmented",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub train_sessions: usize,
    pub test_sessions: usize,
    pub train_persona_rate: f64,
    pub test_persona_rate: f64,
    pub persona_size: usize,
    pub model: ModelConfig,
    pub schedule: TrainSchedule,
    pub adam: AdamConfig,
    pub augmentation: AugmentationConfig,
    pub encoder: EncoderConfig,
    pub max_decode: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            train_sessions: 600,
            test_sessions: 150,
            train_persona_rate: 0.5,
            test_persona_rate: 0.7,
            persona_size: 3,
            model: ModelConfig {
                model_dim: 32,
                ff_dim: 64,
                max_position: 64,
                max_turn: 8,
                ..ModelConfig::default()
            },
            schedule: TrainSchedule {
                peak_lr: 3e-3,
                warmup_steps: 50,
                total_steps: 1200,
                batch_size: 16,
                seed: 0,
            },
            adam: AdamConfig::default(),
            augmentation: AugmentationConfig::default(),
            encoder: EncoderConfig::default(),
            max_decode: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub variant: Variant,
    pub seed: u64,
    pub train_examples: usize,
    pub final_loss: f64,
    pub report: EvalReport,
}

/// Training and held-out data of one seed.
pub struct AblationData {
    pub world: SyntheticWorld,
    pub train: Vec<GeneratedExample>,
    pub test: Vec<GeneratedExample>,
    pub vocab: WordVocab,
}

pub fn ablation_data(cfg: &AblationConfig, seed: u64) -> Result<AblationData> {
    let world = SyntheticWorld::standard(0);
    let train = generate_corpus(
        &world,
        &SyntheticConfig {
            n_sessions: cfg.train_sessions,
            persona_rate: cfg.train_persona_rate,
            contradiction_rate: 0.0,
            biased: true,
            persona_size: cfg.persona_size,
            seed: seed.wrapping_mul(2),
            ..Default::default()
        },
    )?;
    let test = generate_corpus(
        &world,
        &SyntheticConfig {
            n_sessions: cfg.test_sessions,
            persona_rate: cfg.test_persona_rate,
            contradiction_rate: 0.0,
            biased: false,
            persona_size: cfg.persona_size,
            seed: seed.wrapping_mul(2) + 1,
            ..Default::default()
        },
    )?;
    let vocab = world_vocab(&world);
    Ok(AblationData {
        world,
        train,
        test,
        vocab,
    })
}

/// Every word the world can produce, including profile surface forms.
pub fn world_vocab(world: &SyntheticWorld) -> WordVocab {
    let mut counts = WordCounts::default();
    for a in &world.attributes {
        counts.add_text(&a.question);
        for o in &a.objects {
            counts.add_text(&a.realize(o));
            counts.add_text(&world.triple(&a.symbol, o).surface());
        }
    }
    for c in &world.chit_chat {
        counts.add_text(&c.prompt);
        counts.add_text(&c.reply);
    }
    for o in &world.openers {
        counts.add_text(o);
    }
    counts.finalize(usize::MAX)
}

fn strip_profile(x: &TrainingExample) -> TrainingExample {
    TrainingExample {
        profile: PersonaProfile::new(x.responder()),
        ..x.clone()
    }
}

/// The training records a variant sees.
pub fn variant_dataset(variant: Variant, raw: &[TrainingExample], aug: &AugmentationConfig) -> Vec<TrainingExample> {
    match variant {
        Variant::NoPersona => raw.iter().map(strip_profile).collect(),
        Variant::RawPersona => raw.to_vec(),
        Variant::Augmented => {
            let pool = build_pool(raw);
            let augmented = augment_dataset(raw, &pool, aug);
            merge_datasets(raw.to_vec(), augmented, aug)
        }
    }
}

fn encode_all(data: &[TrainingExample], vocab: &WordVocab, enc: &EncoderConfig) -> Result<Vec<EncodedExample>> {
    data.iter()
        .map(|x| assemble_sequence(x, vocab, enc).map_err(|e| Error::data(e.to_string())))
        .collect()
}

pub fn run_variant(cfg: &AblationConfig, data: &AblationData, variant: Variant, seed: u64) -> Result<VariantResult> {
    let raw: Vec<TrainingExample> = data.train.iter().map(|g| g.example.clone()).collect();
    let aug_cfg = AugmentationConfig {
        seed,
        ..cfg.augmentation.clone()
    };
    let train_set = variant_dataset(variant, &raw, &aug_cfg);
    let encoded = encode_all(&train_set, &data.vocab, &cfg.encoder)?;

    let mut model = ModelParams::init(ModelConfig {
        vocab_size: data.vocab.vocab_size(),
        seed,
        ..cfg.model.clone()
    })?;
    let schedule = TrainSchedule {
        seed,
        ..cfg.schedule.clone()
    };
    let report = train(&mut model, &encoded, &schedule, &cfg.adam, |e| {
        if e.step % 200 == 0 {
            log::debug!("{} seed {seed} step {} loss {:.4}", variant.name(), e.step, e.loss);
        }
    })?;

    let test: Vec<TrainingExample> = data.test.iter().map(|g| g.example.clone()).collect();
    let mut responses = Vec::with_capacity(test.len());
    for x in &test {
        let shown = if variant == Variant::NoPersona { strip_profile(x) } else { x.clone() };
        let source = assemble_sequence(&shown, &data.vocab, &cfg.encoder).map_err(|e| Error::data(e.to_string()))?;
        responses.push(model.generate_text(&source.source(), &data.vocab, cfg.max_decode)?);
    }
    let nli = OracleNli::new(data.world.clone());
    let report_eval = evaluate(&responses, &test, &nli, None)?;
    Ok(VariantResult {
        variant,
        seed,
        train_examples: encoded.len(),
        final_loss: report.final_loss,
        report: report_eval,
    })
}

/// Runs every variant for one seed.
pub fn run_seed(cfg: &AblationConfig, seed: u64) -> Result<Vec<VariantResult>> {
    let data = ablation_data(cfg, seed)?;
    Variant::ALL.iter().map(|&v| run_variant(cfg, &data, v, seed)).collect()
}

/// Whether one seed shows the expected ordering: both persona variants
/// beat the persona-free one on mean CS, and augmentation does not raise
/// the contradiction ratio.
pub fn trend_holds(results: &[VariantResult]) -> bool {
    let get = |v: Variant| results.iter().find(|r| r.variant == v).map(|r| r.report);
    match (get(Variant::NoPersona), get(Variant::RawPersona), get(Variant::Augmented)) {
        (Some(a), Some(b), Some(c)) => {
            c.mean_cs > a.mean_cs && b.mean_cs > a.mean_cs && c.contradict_ratio <= b.contradict_ratio
        }
        _ => false,
    }
}
