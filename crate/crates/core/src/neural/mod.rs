//! Dense tensor tape, transformer layers, AdamW and checkpoints shared by
//! the emotion encoder and the response generator. All arithmetic is `f64`.

mod checkpoint;
mod graph;
mod kernels;
mod optim;
mod params;
mod trainer;
mod transformer;

pub use checkpoint::{
    decode_checkpoint, load_checkpoint, BlockEntry, Checkpoint, CheckpointHeader, CheckpointWriter,
    DType, OptimizerEntry, MAGIC, VERSION,
};
pub use graph::{log_softmax, masked_softmax, Graph, NodeId, Reduction};
pub use optim::{AdamW, AdamWConfig, LrSchedule, DEFAULT_ACCUMULATION, DEFAULT_MAX_LR};
pub use params::{Gradients, Init, Param, ParamId, ParamStore};
pub use trainer::{fit, CurvePoint, FitConfig, FitReport};
pub use transformer::{ModelConfig, Transformer};

use crate::error::Result;
use crate::textproc::EncodedExample;

/// Next-token logits for every position, `len × vocab`.
pub fn forward_lm(g: &mut Graph, model: &Transformer, ex: &EncodedExample) -> Result<NodeId> {
    let h = model.forward(g, &ex.token_ids, &ex.speaker_ids)?;
    Ok(model.lm_head(g, h))
}

/// Encoder hidden states, `len × d_model`.
pub fn forward_encoder(g: &mut Graph, model: &Transformer, ex: &EncodedExample) -> Result<NodeId> {
    model.forward(g, &ex.token_ids, &ex.speaker_ids)
}

/// Mean negative log-likelihood of loss-masked tokens given their prefix.
pub fn lm_loss(g: &mut Graph, logits: NodeId, ex: &EncodedExample) -> Result<NodeId> {
    let n = ex.len();
    let targets: Vec<usize> = (0..n)
        .map(|t| if t + 1 < n { ex.token_ids[t + 1] as usize } else { 0 })
        .collect();
    let mask: Vec<bool> = (0..n).map(|t| t + 1 < n && ex.loss_mask[t + 1]).collect();
    g.cross_entropy(logits, &targets, &mask, None, Reduction::Mean)
}
