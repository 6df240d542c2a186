//! Pre-norm transformer stack with token, position and speaker embeddings.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, NodeId};
use super::params::{Init, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::textproc::SPEAKER_CHANNELS;

const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    pub dropout_p: f64,
    pub causal: bool,
}

impl ModelConfig {
    /// Desk-scale default: 2 layers, 2 heads, d_model 64, d_ff 256.
    pub fn desk(vocab_size: usize, max_len: usize, causal: bool) -> Self {
        Self {
            n_layers: 2,
            n_heads: 2,
            d_model: 64,
            d_ff: 256,
            vocab_size,
            max_len,
            dropout_p: 0.1,
            causal,
        }
    }

    /// The full-size reference shape: 12 layers, 12 heads, 768 wide.
    pub fn reference(vocab_size: usize, max_len: usize, causal: bool) -> Self {
        Self {
            n_layers: 12,
            n_heads: 12,
            d_model: 768,
            d_ff: 3072,
            ..Self::desk(vocab_size, max_len, causal)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.n_heads == 0 || self.d_model == 0 || self.d_ff == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} not divisible by {} heads",
                self.d_model, self.n_heads
            )));
        }
        if self.vocab_size == 0 || self.max_len == 0 {
            return Err(Error::Config("vocab_size and max_len must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!("dropout {} outside [0,1)", self.dropout_p)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Block {
    ln1_g: ParamId,
    ln1_b: ParamId,
    w_qkv: ParamId,
    b_qkv: ParamId,
    w_o: ParamId,
    b_o: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
    w_fc: ParamId,
    b_fc: ParamId,
    w_proj: ParamId,
    b_proj: ParamId,
}

/// Parameter layout of one transformer; the values live in a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Transformer {
    cfg: ModelConfig,
    tok_emb: ParamId,
    pos_emb: ParamId,
    spk_emb: ParamId,
    blocks: Vec<Block>,
    lnf_g: ParamId,
    lnf_b: ParamId,
}

impl Transformer {
    /// Register freshly initialized parameters under `prefix` and return the layout.
    pub fn init<R: Rng + ?Sized>(cfg: ModelConfig, store: &mut ParamStore, prefix: &str, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let n = |s: &str| format!("{prefix}{s}");
        store.add(&n("tok_emb"), cfg.vocab_size, d, Init::Normal(INIT_STD), false, rng);
        store.add(&n("pos_emb"), cfg.max_len, d, Init::Normal(INIT_STD), false, rng);
        store.add(&n("spk_emb"), SPEAKER_CHANNELS, d, Init::Normal(INIT_STD), false, rng);
        for l in 0..cfg.n_layers {
            let b = |s: &str| format!("{prefix}h{l}.{s}");
            store.add(&b("ln1.g"), 1, d, Init::Ones, false, rng);
            store.add(&b("ln1.b"), 1, d, Init::Zeros, false, rng);
            store.add(&b("attn.w_qkv"), d, 3 * d, Init::Normal(INIT_STD), true, rng);
            store.add(&b("attn.b_qkv"), 1, 3 * d, Init::Zeros, false, rng);
            store.add(&b("attn.w_o"), d, d, Init::Normal(INIT_STD), true, rng);
            store.add(&b("attn.b_o"), 1, d, Init::Zeros, false, rng);
            store.add(&b("ln2.g"), 1, d, Init::Ones, false, rng);
            store.add(&b("ln2.b"), 1, d, Init::Zeros, false, rng);
            store.add(&b("mlp.w_fc"), d, cfg.d_ff, Init::Normal(INIT_STD), true, rng);
            store.add(&b("mlp.b_fc"), 1, cfg.d_ff, Init::Zeros, false, rng);
            store.add(&b("mlp.w_proj"), cfg.d_ff, d, Init::Normal(INIT_STD), true, rng);
            store.add(&b("mlp.b_proj"), 1, d, Init::Zeros, false, rng);
        }
        store.add(&n("ln_f.g"), 1, d, Init::Ones, false, rng);
        store.add(&n("ln_f.b"), 1, d, Init::Zeros, false, rng);
        Self::bind(cfg, store, prefix)
    }

    /// Resolve the layout against parameters already present in `store`.
    pub fn bind(cfg: ModelConfig, store: &ParamStore, prefix: &str) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let get = |name: String, rows: usize, cols: usize| -> Result<ParamId> {
            let id = store
                .id(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            let p = store.get(id);
            if (p.rows, p.cols) != (rows, cols) {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} is {}×{}, expected {rows}×{cols}",
                    p.rows, p.cols
                )));
            }
            Ok(id)
        };
        let n = |s: &str| format!("{prefix}{s}");
        let mut blocks = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let b = |s: &str| format!("{prefix}h{l}.{s}");
            blocks.push(Block {
                ln1_g: get(b("ln1.g"), 1, d)?,
                ln1_b: get(b("ln1.b"), 1, d)?,
                w_qkv: get(b("attn.w_qkv"), d, 3 * d)?,
                b_qkv: get(b("attn.b_qkv"), 1, 3 * d)?,
                w_o: get(b("attn.w_o"), d, d)?,
                b_o: get(b("attn.b_o"), 1, d)?,
                ln2_g: get(b("ln2.g"), 1, d)?,
                ln2_b: get(b("ln2.b"), 1, d)?,
                w_fc: get(b("mlp.w_fc"), d, cfg.d_ff)?,
                b_fc: get(b("mlp.b_fc"), 1, cfg.d_ff)?,
                w_proj: get(b("mlp.w_proj"), cfg.d_ff, d)?,
                b_proj: get(b("mlp.b_proj"), 1, d)?,
            });
        }
        Ok(Self {
            cfg,
            tok_emb: get(n("tok_emb"), cfg.vocab_size, d)?,
            pos_emb: get(n("pos_emb"), cfg.max_len, d)?,
            spk_emb: get(n("spk_emb"), SPEAKER_CHANNELS, d)?,
            blocks,
            lnf_g: get(n("ln_f.g"), 1, d)?,
            lnf_b: get(n("ln_f.b"), 1, d)?,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn token_embedding(&self) -> ParamId {
        self.tok_emb
    }

    pub fn check_input(&self, tokens: &[u32], speakers: &[u8]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::InvalidInput("empty input sequence".into()));
        }
        if tokens.len() != speakers.len() {
            return Err(Error::Shape("token and speaker sequences differ in length".into()));
        }
        if tokens.len() > self.cfg.max_len {
            return Err(Error::TooLong {
                len: tokens.len(),
                max_len: self.cfg.max_len,
            });
        }
        if let Some(t) = tokens.iter().find(|&&t| t as usize >= self.cfg.vocab_size) {
            return Err(Error::InvalidInput(format!("token id {t} outside vocabulary")));
        }
        if let Some(s) = speakers.iter().find(|&&s| s as usize >= SPEAKER_CHANNELS) {
            return Err(Error::InvalidInput(format!("speaker id {s} outside channels")));
        }
        Ok(())
    }

    /// `tok_emb[id_t] + pos_emb[t] + spk_emb[speaker_t]`
    pub fn embed(&self, g: &mut Graph, tokens: &[u32], speakers: &[u8]) -> Result<NodeId> {
        self.check_input(tokens, speakers)?;
        let ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
        let pos: Vec<usize> = (0..tokens.len()).collect();
        let spk: Vec<usize> = speakers.iter().map(|&s| s as usize).collect();
        let te = g.param(self.tok_emb);
        let pe = g.param(self.pos_emb);
        let se = g.param(self.spk_emb);
        let a = g.gather(te, &ids);
        let b = g.gather(pe, &pos);
        let c = g.gather(se, &spk);
        let ab = g.add(a, b);
        Ok(g.add(ab, c))
    }

    fn linear(g: &mut Graph, x: NodeId, w: ParamId, b: ParamId) -> NodeId {
        let wn = g.param(w);
        let bn = g.param(b);
        let y = g.matmul(x, wn);
        g.add_row(y, bn)
    }

    /// Multi-head self-attention sublayer on already-normalized input.
    /// Returns the attention node (for inspection) and the projected output.
    pub fn attention_sublayer(&self, g: &mut Graph, layer: usize, x: NodeId) -> (NodeId, NodeId) {
        let blk = &self.blocks[layer];
        let qkv = Self::linear(g, x, blk.w_qkv, blk.b_qkv);
        let att = g.attention(qkv, self.cfg.n_heads, self.cfg.causal);
        let out = Self::linear(g, att, blk.w_o, blk.b_o);
        (att, out)
    }

    fn block(&self, g: &mut Graph, layer: usize, x: NodeId) -> NodeId {
        let blk = self.blocks[layer].clone();
        let p = self.cfg.dropout_p;
        let (g1, b1) = (g.param(blk.ln1_g), g.param(blk.ln1_b));
        let h = g.layer_norm(x, g1, b1);
        let (_, a) = self.attention_sublayer(g, layer, h);
        let a = g.dropout(a, p);
        let x = g.add(x, a);
        let (g2, b2) = (g.param(blk.ln2_g), g.param(blk.ln2_b));
        let h = g.layer_norm(x, g2, b2);
        let f = Self::linear(g, h, blk.w_fc, blk.b_fc);
        let f = g.gelu(f);
        let f = Self::linear(g, f, blk.w_proj, blk.b_proj);
        let f = g.dropout(f, p);
        g.add(x, f)
    }

    /// Final normalized hidden states, `len × d_model`.
    pub fn forward(&self, g: &mut Graph, tokens: &[u32], speakers: &[u8]) -> Result<NodeId> {
        let x = self.embed(g, tokens, speakers)?;
        let mut x = g.dropout(x, self.cfg.dropout_p);
        for l in 0..self.blocks.len() {
            x = self.block(g, l, x);
        }
        let (gf, bf) = (g.param(self.lnf_g), g.param(self.lnf_b));
        Ok(g.layer_norm(x, gf, bf))
    }

    /// Vocabulary logits through the tied token embedding, `len × vocab`.
    pub fn lm_head(&self, g: &mut Graph, hidden: NodeId) -> NodeId {
        let te = g.param(self.tok_emb);
        g.matmul_bt(hidden, te)
    }
}
