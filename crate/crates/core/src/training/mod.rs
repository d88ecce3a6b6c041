//! Loss, optimizers, the deterministic training loop and checkpoints.
//!
//! The loss is the batch mean of `−log softmax(logits)[label]`, computed with
//! a max-shifted log-sum-exp by [`Graph::cross_entropy`](crate::numerics::Graph::cross_entropy).

mod checkpoint;
mod optimizer;
mod trainer;

pub use checkpoint::{BlobInfo, Checkpoint, EpochRecord, NamedBlob, CKPT_MAGIC, CKPT_VERSION};
pub use optimizer::{decays, LrSchedule, Optimizer, OptimizerConfig, OptimizerKind};
pub use trainer::{train, TrainConfig, TrainOutcome, Trainer};

use crate::error::Result;
use crate::numerics::{Float, Graph, Tensor};

/// Mean cross-entropy of `(batch, C)` logits, evaluated without a tape.
pub fn cross_entropy<F: Float>(logits: &Tensor<F>, labels: &[usize]) -> Result<F> {
    let mut g = Graph::new();
    let x = g.input(logits.clone());
    let loss = g.cross_entropy(x, labels)?;
    Ok(g.value(loss).item())
}

/// One JSON object per line.
pub fn history_jsonl(history: &[EpochRecord]) -> String {
    history
        .iter()
        .map(|r| serde_json::to_string(r).expect("history serializes") + "\n")
        .collect()
}
