//! A small unified transformer over [`EncodedExample`]s.
//!
//! Input vectors are the sum of token, position, turn and type embeddings.
//! Pre-norm blocks attend under the unified-LM mask, and a softmax head
//! predicts each response token from the position before it, so the last
//! source position predicts the first response token and the final label is
//! `[EOS]`.
//!
//! Everything runs in f64 on one thread, which keeps training
//! bit-reproducible and makes finite-difference checks meaningful.

mod kernels;
mod train;

use std::fs;
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::encoding::{build_unilm_mask, EncodedExample, Tokenizer};
use crate::error::{Error, Result};
use crate::rng::{derive_rng, StreamRng};

pub use kernels::softmax_in_place;
pub use train::{lr_at, train, AdamConfig, TraceEntry, TrainFailure, TrainReport, TrainSchedule};

use kernels::*;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub ff_dim: usize,
    pub vocab_size: usize,
    pub max_position: usize,
    pub max_turn: usize,
    pub max_type: usize,
    pub init_std: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 2,
            model_dim: 64,
            ff_dim: 256,
            vocab_size: 0,
            max_position: 130,
            max_turn: 66,
            max_type: 3,
            init_std: 0.02,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.layers,
            self.heads,
            self.model_dim,
            self.ff_dim,
            self.vocab_size,
            self.max_position,
            self.max_turn,
            self.max_type,
        ];
        if dims.contains(&0) {
            return Err(Error::Config(crate::ConfigError::new("model dimensions must all be at least 1")));
        }
        if !self.model_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(crate::ConfigError::new("model_dim must be divisible by heads")));
        }
        Ok(())
    }
}

/// A named slice of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub start: usize,
    pub len: usize,
}

impl Block {
    pub fn range(&self) -> Range<usize> {
        self.start..self.start + self.len
    }
}

#[derive(Debug, Clone)]
struct LayerLayout {
    ln1_g: Range<usize>,
    ln1_b: Range<usize>,
    w_qkv: Range<usize>,
    b_qkv: Range<usize>,
    w_o: Range<usize>,
    b_o: Range<usize>,
    ln2_g: Range<usize>,
    ln2_b: Range<usize>,
    w_ff1: Range<usize>,
    b_ff1: Range<usize>,
    w_ff2: Range<usize>,
    b_ff2: Range<usize>,
}

#[derive(Debug, Clone)]
struct Layout {
    tok: Range<usize>,
    pos: Range<usize>,
    turn: Range<usize>,
    typ: Range<usize>,
    layers: Vec<LayerLayout>,
    lnf_g: Range<usize>,
    lnf_b: Range<usize>,
    w_out: Range<usize>,
    b_out: Range<usize>,
    blocks: Vec<Block>,
    total: usize,
}

impl Layout {
    fn new(c: &ModelConfig) -> Self {
        let d = c.model_dim;
        let mut blocks = Vec::new();
        let mut at = 0;
        let mut take = |name: String, len: usize| {
            blocks.push(Block { name, start: at, len });
            at += len;
            at - len..at
        };
        let tok = take("tok_emb".into(), c.vocab_size * d);
        let pos = take("pos_emb".into(), c.max_position * d);
        let turn = take("turn_emb".into(), c.max_turn * d);
        let typ = take("type_emb".into(), c.max_type * d);
        let layers = (0..c.layers)
            .map(|l| LayerLayout {
                ln1_g: take(format!("layer{l}.ln1_gain"), d),
                ln1_b: take(format!("layer{l}.ln1_bias"), d),
                w_qkv: take(format!("layer{l}.attn_qkv_weight"), d * 3 * d),
                b_qkv: take(format!("layer{l}.attn_qkv_bias"), 3 * d),
                w_o: take(format!("layer{l}.attn_out_weight"), d * d),
                b_o: take(format!("layer{l}.attn_out_bias"), d),
                ln2_g: take(format!("layer{l}.ln2_gain"), d),
                ln2_b: take(format!("layer{l}.ln2_bias"), d),
                w_ff1: take(format!("layer{l}.ff1_weight"), d * c.ff_dim),
                b_ff1: take(format!("layer{l}.ff1_bias"), c.ff_dim),
                w_ff2: take(format!("layer{l}.ff2_weight"), c.ff_dim * d),
                b_ff2: take(format!("layer{l}.ff2_bias"), d),
            })
            .collect();
        let lnf_g = take("final_ln_gain".into(), d);
        let lnf_b = take("final_ln_bias".into(), d);
        let w_out = take("out_weight".into(), d * c.vocab_size);
        let b_out = take("out_bias".into(), c.vocab_size);
        let total = at;
        Layout {
            tok,
            pos,
            turn,
            typ,
            layers,
            lnf_g,
            lnf_b,
            w_out,
            b_out,
            blocks,
            total,
        }
    }
}

/// Model configuration plus all trainable parameters in one flat vector.
#[derive(Debug, Clone)]
pub struct ModelParams {
    config: ModelConfig,
    layout: Layout,
    values: Vec<f64>,
}

struct LayerCache {
    input: Vec<f64>,
    ln1_out: Vec<f64>,
    ln1_xhat: Vec<f64>,
    ln1_rstd: Vec<f64>,
    qkv: Vec<f64>,
    att: Vec<f64>,
    ctx: Vec<f64>,
    mid: Vec<f64>,
    ln2_out: Vec<f64>,
    ln2_xhat: Vec<f64>,
    ln2_rstd: Vec<f64>,
    ff_pre: Vec<f64>,
    ff_act: Vec<f64>,
}

struct ForwardCache {
    layers: Vec<LayerCache>,
    lnf_xhat: Vec<f64>,
    lnf_rstd: Vec<f64>,
    final_out: Vec<f64>,
}

/// Decoding strategy for [`ModelParams::generate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Decoding {
    Greedy,
    TopK { k: usize, temperature: f64 },
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"PKMODEL1";

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    config: ModelConfig,
    byte_order: String,
    dtype: String,
    blocks: Vec<Block>,
}

impl ModelParams {
    /// Random initialization from `config.seed`.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut values = vec![0.0; layout.total];
        let mut rng = derive_rng(config.seed, "init", 0);
        let normal = Normal::new(0.0, config.init_std).expect("finite std");
        let resid = Normal::new(0.0, config.init_std / (2.0 * config.layers as f64).sqrt()).expect("finite std");
        let fill = |v: &mut [f64], dist: &Normal<f64>, rng: &mut StreamRng| {
            for x in v {
                *x = dist.sample(rng);
            }
        };
        for r in [&layout.tok, &layout.pos, &layout.turn, &layout.typ, &layout.w_out] {
            fill(&mut values[r.clone()], &normal, &mut rng);
        }
        for l in &layout.layers {
            values[l.ln1_g.clone()].fill(1.0);
            values[l.ln2_g.clone()].fill(1.0);
            fill(&mut values[l.w_qkv.clone()], &normal, &mut rng);
            fill(&mut values[l.w_ff1.clone()], &normal, &mut rng);
            fill(&mut values[l.w_o.clone()], &resid, &mut rng);
            fill(&mut values[l.w_ff2.clone()], &resid, &mut rng);
        }
        values[layout.lnf_g.clone()].fill(1.0);
        Ok(Self { config, layout, values })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn num_params(&self) -> usize {
        self.values.len()
    }

    pub fn blocks(&self) -> &[Block] {
        &self.layout.blocks
    }

    pub fn block(&self, name: &str) -> Option<&Block> {
        self.layout.blocks.iter().find(|b| b.name == name)
    }

    /// Sets every value of a named block.
    pub fn fill_block(&mut self, name: &str, value: f64) -> Result<()> {
        let r = self
            .block(name)
            .ok_or_else(|| Error::model(format!("no parameter block named {name}")))?
            .range();
        self.values[r].fill(value);
        Ok(())
    }

    fn check_example(&self, ex: &EncodedExample) -> Result<()> {
        let n = ex.tokens.len();
        if ex.positions.len() != n || ex.turns.len() != n || ex.types.len() != n {
            return Err(Error::model("encoded channels differ in length"));
        }
        if ex.source_len + ex.target_len != n {
            return Err(Error::model("source_len + target_len does not match the sequence length"));
        }
        if ex.source_len == 0 {
            return Err(Error::model("example has no source tokens"));
        }
        let c = &self.config;
        let checks: [(&[u32], usize, &str); 4] = [
            (&ex.tokens, c.vocab_size, "token"),
            (&ex.positions, c.max_position, "position"),
            (&ex.turns, c.max_turn, "turn"),
            (&ex.types, c.max_type, "type"),
        ];
        for (vals, limit, what) in checks {
            if let Some(&bad) = vals.iter().find(|&&v| v as usize >= limit) {
                return Err(Error::model(format!("{what} index {bad} out of range (table size {limit})")));
            }
        }
        Ok(())
    }

    fn forward_cache(&self, ex: &EncodedExample) -> ForwardCache {
        let c = &self.config;
        let (d, f, heads) = (c.model_dim, c.ff_dim, c.heads);
        let len = ex.tokens.len();
        let mask = build_unilm_mask(ex.source_len, ex.target_len);
        let p = &self.values;
        let lay = &self.layout;

        let mut x = vec![0.0; len * d];
        for i in 0..len {
            let row = &mut x[i * d..(i + 1) * d];
            let parts = [
                lay.tok.start + ex.tokens[i] as usize * d,
                lay.pos.start + ex.positions[i] as usize * d,
                lay.turn.start + ex.turns[i] as usize * d,
                lay.typ.start + ex.types[i] as usize * d,
            ];
            for off in parts {
                for (r, &e) in row.iter_mut().zip(&p[off..off + d]) {
                    *r += e;
                }
            }
        }

        let mut layers = Vec::with_capacity(c.layers);
        for l in &lay.layers {
            let mut lc = LayerCache {
                input: x,
                ln1_out: vec![0.0; len * d],
                ln1_xhat: vec![0.0; len * d],
                ln1_rstd: vec![0.0; len],
                qkv: vec![0.0; len * 3 * d],
                att: vec![0.0; heads * len * len],
                ctx: vec![0.0; len * d],
                mid: vec![0.0; len * d],
                ln2_out: vec![0.0; len * d],
                ln2_xhat: vec![0.0; len * d],
                ln2_rstd: vec![0.0; len],
                ff_pre: vec![0.0; len * f],
                ff_act: vec![0.0; len * f],
            };
            layernorm_forward(&mut lc.ln1_out, &mut lc.ln1_xhat, &mut lc.ln1_rstd, &lc.input, &p[l.ln1_g.clone()], &p[l.ln1_b.clone()], d);
            matmul_forward(&mut lc.qkv, &lc.ln1_out, &p[l.w_qkv.clone()], &p[l.b_qkv.clone()], len, d, 3 * d);
            attention_forward(&mut lc.ctx, &mut lc.att, &lc.qkv, &mask, heads, d);
            matmul_forward(&mut lc.mid, &lc.ctx, &p[l.w_o.clone()], &p[l.b_o.clone()], len, d, d);
            for (m, &xi) in lc.mid.iter_mut().zip(&lc.input) {
                *m += xi;
            }
            layernorm_forward(&mut lc.ln2_out, &mut lc.ln2_xhat, &mut lc.ln2_rstd, &lc.mid, &p[l.ln2_g.clone()], &p[l.ln2_b.clone()], d);
            matmul_forward(&mut lc.ff_pre, &lc.ln2_out, &p[l.w_ff1.clone()], &p[l.b_ff1.clone()], len, d, f);
            gelu_forward(&mut lc.ff_act, &lc.ff_pre);
            let mut out = vec![0.0; len * d];
            matmul_forward(&mut out, &lc.ff_act, &p[l.w_ff2.clone()], &p[l.b_ff2.clone()], len, f, d);
            for (o, &m) in out.iter_mut().zip(&lc.mid) {
                *o += m;
            }
            x = out;
            layers.push(lc);
        }
        let mut final_out = vec![0.0; len * d];
        let mut lnf_xhat = vec![0.0; len * d];
        let mut lnf_rstd = vec![0.0; len];
        layernorm_forward(&mut final_out, &mut lnf_xhat, &mut lnf_rstd, &x, &p[lay.lnf_g.clone()], &p[lay.lnf_b.clone()], d);
        ForwardCache {
            layers,
            lnf_xhat,
            lnf_rstd,
            final_out,
        }
    }

    /// Output distribution at sequence position `row`.
    fn row_probs(&self, cache: &ForwardCache, row: usize) -> Vec<f64> {
        let d = self.config.model_dim;
        let v = self.config.vocab_size;
        let mut logits = vec![0.0; v];
        matmul_forward(
            &mut logits,
            &cache.final_out[row * d..(row + 1) * d],
            &self.values[self.layout.w_out.clone()],
            &self.values[self.layout.b_out.clone()],
            1,
            d,
            v,
        );
        softmax_in_place(&mut logits);
        logits
    }

    /// Sequence positions whose outputs are scored, and their labels.
    fn prediction_rows(ex: &EncodedExample) -> impl Iterator<Item = (usize, u32)> + '_ {
        (0..ex.target_len).map(move |t| (ex.source_len + t - 1, ex.tokens[ex.source_len + t]))
    }

    /// One probability row per target token: row `t` is the distribution of
    /// target token `t` given the source and target tokens before it.
    pub fn forward(&self, ex: &EncodedExample) -> Result<Vec<Vec<f64>>> {
        self.check_example(ex)?;
        let cache = self.forward_cache(ex);
        Ok(Self::prediction_rows(ex).map(|(row, _)| self.row_probs(&cache, row)).collect())
    }

    /// Summed negative log-likelihood of the example's target tokens.
    fn example_nll(&self, ex: &EncodedExample) -> f64 {
        let cache = self.forward_cache(ex);
        Self::prediction_rows(ex)
            .map(|(row, label)| -self.row_probs(&cache, row)[label as usize].ln())
            .sum()
    }

    fn target_tokens(batch: &[EncodedExample]) -> Result<usize> {
        let n: usize = batch.iter().map(|e| e.target_len).sum();
        if n == 0 {
            return Err(Error::model("batch has no target tokens"));
        }
        Ok(n)
    }

    /// Mean negative log-likelihood per target token over the batch.
    pub fn nll_loss(&self, batch: &[EncodedExample]) -> Result<f64> {
        for ex in batch {
            self.check_example(ex)?;
        }
        let n = Self::target_tokens(batch)?;
        Ok(batch.iter().map(|e| self.example_nll(e)).sum::<f64>() / n as f64)
    }

    /// `exp` of the mean per-token NLL.
    pub fn perplexity(&self, data: &[EncodedExample]) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::model("perplexity of an empty dataset"));
        }
        Ok(self.nll_loss(data)?.exp())
    }

    /// Loss and exact gradient of [`ModelParams::nll_loss`].
    pub fn backward(&self, batch: &[EncodedExample]) -> Result<(f64, Vec<f64>)> {
        for ex in batch {
            self.check_example(ex)?;
        }
        let n = Self::target_tokens(batch)?;
        let scale = 1.0 / n as f64;
        let mut grad = vec![0.0; self.values.len()];
        let mut loss = 0.0;
        for ex in batch {
            loss += self.accumulate_grad(ex, scale, &mut grad);
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            let block = self.layout.blocks.iter().find(|b| b.range().contains(&i)).map_or("?", |b| b.name.as_str());
            return Err(Error::model(format!("non-finite gradient in block {block}")));
        }
        Ok((loss * scale, grad))
    }

    /// Adds `scale * d(nll)/d(params)` for one example into `grad` and
    /// returns the example's summed NLL.
    fn accumulate_grad(&self, ex: &EncodedExample, scale: f64, grad: &mut [f64]) -> f64 {
        let c = &self.config;
        let (d, f, heads, v) = (c.model_dim, c.ff_dim, c.heads, c.vocab_size);
        let len = ex.tokens.len();
        let mask = build_unilm_mask(ex.source_len, ex.target_len);
        let p = &self.values;
        let lay = &self.layout;
        let cache = self.forward_cache(ex);

        let mut loss = 0.0;
        let mut dfinal = vec![0.0; len * d];
        {
            let (dw_out, db_out) = pair_mut(grad, lay.w_out.clone(), lay.b_out.clone());
            for (row, label) in Self::prediction_rows(ex) {
                let mut probs = self.row_probs(&cache, row);
                loss -= probs[label as usize].ln();
                probs[label as usize] -= 1.0;
                for g in probs.iter_mut() {
                    *g *= scale;
                }
                matmul_backward(
                    &mut dfinal[row * d..(row + 1) * d],
                    dw_out,
                    db_out,
                    &probs,
                    &cache.final_out[row * d..(row + 1) * d],
                    &p[lay.w_out.clone()],
                    1,
                    d,
                    v,
                );
            }
        }

        let mut dx = vec![0.0; len * d];
        {
            let (dg, db) = pair_mut(grad, lay.lnf_g.clone(), lay.lnf_b.clone());
            layernorm_backward(&mut dx, dg, db, &dfinal, &cache.lnf_xhat, &cache.lnf_rstd, &p[lay.lnf_g.clone()], d);
        }

        for (l, lc) in lay.layers.iter().zip(&cache.layers).rev() {
            // Feed-forward half: out = mid + ff2(gelu(ff1(ln2(mid))))
            let mut dmid = dx.clone();
            let mut dact = vec![0.0; len * f];
            {
                let (dw, db) = pair_mut(grad, l.w_ff2.clone(), l.b_ff2.clone());
                matmul_backward(&mut dact, dw, db, &dx, &lc.ff_act, &p[l.w_ff2.clone()], len, f, d);
            }
            let mut dpre = vec![0.0; len * f];
            gelu_backward(&mut dpre, &lc.ff_pre, &dact);
            let mut dln2 = vec![0.0; len * d];
            {
                let (dw, db) = pair_mut(grad, l.w_ff1.clone(), l.b_ff1.clone());
                matmul_backward(&mut dln2, dw, db, &dpre, &lc.ln2_out, &p[l.w_ff1.clone()], len, d, f);
            }
            {
                let (dg, db) = pair_mut(grad, l.ln2_g.clone(), l.ln2_b.clone());
                layernorm_backward(&mut dmid, dg, db, &dln2, &lc.ln2_xhat, &lc.ln2_rstd, &p[l.ln2_g.clone()], d);
            }

            // Attention half: mid = input + out_proj(attn(qkv(ln1(input))))
            let mut dinput = dmid.clone();
            let mut dctx = vec![0.0; len * d];
            {
                let (dw, db) = pair_mut(grad, l.w_o.clone(), l.b_o.clone());
                matmul_backward(&mut dctx, dw, db, &dmid, &lc.ctx, &p[l.w_o.clone()], len, d, d);
            }
            let mut dqkv = vec![0.0; len * 3 * d];
            attention_backward(&mut dqkv, &dctx, &lc.att, &lc.qkv, &mask, heads, d);
            let mut dln1 = vec![0.0; len * d];
            {
                let (dw, db) = pair_mut(grad, l.w_qkv.clone(), l.b_qkv.clone());
                matmul_backward(&mut dln1, dw, db, &dqkv, &lc.ln1_out, &p[l.w_qkv.clone()], len, d, 3 * d);
            }
            {
                let (dg, db) = pair_mut(grad, l.ln1_g.clone(), l.ln1_b.clone());
                layernorm_backward(&mut dinput, dg, db, &dln1, &lc.ln1_xhat, &lc.ln1_rstd, &p[l.ln1_g.clone()], d);
            }
            dx = dinput;
        }

        for i in 0..len {
            let dr = &dx[i * d..(i + 1) * d];
            let offs = [
                lay.tok.start + ex.tokens[i] as usize * d,
                lay.pos.start + ex.positions[i] as usize * d,
                lay.turn.start + ex.turns[i] as usize * d,
                lay.typ.start + ex.types[i] as usize * d,
            ];
            for off in offs {
                for (g, &v) in grad[off..off + d].iter_mut().zip(dr) {
                    *g += v;
                }
            }
        }
        loss
    }

    /// Autoregressive decoding from a source-only example. Stops after
    /// `[EOS]` (included in the output) or `max_len` tokens.
    pub fn generate(
        &self,
        source: &EncodedExample,
        eos: u32,
        decoding: Decoding,
        max_len: usize,
        rng: &mut StreamRng,
    ) -> Result<Vec<u32>> {
        let mut seq = source.source();
        self.check_example(&seq)?;
        let limit = max_len.min(self.config.max_position);
        let mut out = Vec::new();
        while out.len() < limit {
            let cache = self.forward_cache(&seq);
            let probs = self.row_probs(&cache, seq.len() - 1);
            let next = match decoding {
                Decoding::Greedy => argmax(&probs),
                Decoding::TopK { k, temperature } => sample_top_k(&probs, k.max(1), temperature, rng),
            };
            out.push(next);
            if next == eos {
                break;
            }
            seq.push_target(next);
        }
        Ok(out)
    }

    /// Greedy response text for a source, without `[EOS]`.
    pub fn generate_text(&self, source: &EncodedExample, tok: &dyn Tokenizer, max_len: usize) -> Result<String> {
        let eos = tok.specials().eos;
        let mut rng = derive_rng(0, "greedy", 0);
        let mut ids = self.generate(source, eos, Decoding::Greedy, max_len, &mut rng)?;
        if ids.last() == Some(&eos) {
            ids.pop();
        }
        Ok(tok.decode(&ids))
    }

    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        let header = CheckpointHeader {
            config: self.config.clone(),
            byte_order: "little-endian".into(),
            dtype: "f64".into(),
            blocks: self.layout.blocks.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        let mut buf = Vec::with_capacity(self.values.len() * 8);
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::data("not a model checkpoint"));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
        r.read_exact(&mut json)?;
        let header: CheckpointHeader = serde_json::from_slice(&json)?;
        if header.byte_order != "little-endian" || header.dtype != "f64" {
            return Err(Error::data("unsupported checkpoint encoding"));
        }
        header.config.validate()?;
        let layout = Layout::new(&header.config);
        if layout.blocks != header.blocks {
            return Err(Error::data("checkpoint block table does not match its config"));
        }
        let mut raw = Vec::new();
        r.read_to_end(&mut raw)?;
        if raw.len() != layout.total * 8 {
            return Err(Error::data(format!(
                "checkpoint holds {} bytes of parameters, expected {}",
                raw.len(),
                layout.total * 8
            )));
        }
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            config: header.config,
            layout,
            values,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_checkpoint(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_checkpoint(fs::File::open(path)?)
    }
}

fn argmax(p: &[f64]) -> u32 {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best as u32
}

fn sample_top_k(p: &[f64], k: usize, temperature: f64, rng: &mut StreamRng) -> u32 {
    let mut idx: Vec<usize> = (0..p.len()).collect();
    idx.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    idx.truncate(k);
    let t = if temperature > 0.0 { temperature } else { 1.0 };
    let weights: Vec<f64> = idx.iter().map(|&i| p[i].max(1e-300).powf(1.0 / t)).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (w, &i) in weights.iter().zip(&idx) {
        if u < *w {
            return i as u32;
        }
        u -= w;
    }
    *idx.last().unwrap() as u32
}

/// Two disjoint mutable sub-slices of `v`, `a` before `b`.
fn pair_mut(v: &mut [f64], a: Range<usize>, b: Range<usize>) -> (&mut [f64], &mut [f64]) {
    assert!(a.end <= b.start);
    let (left, right) = v.split_at_mut(b.start);
    (&mut left[a], &mut right[..b.end - b.start])
}

#[cfg(test)]
mod tests;
