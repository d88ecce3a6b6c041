use serde::{Deserialize, Serialize};

use super::{dropout, Ctx, Linear};
use crate::error::{config_err, dim_err, Result};
use crate::numerics::{Float, ParamId, ParamStore, RngState, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionSpec {
    pub model_dim: usize,
    pub num_heads: usize,
    /// Dropout applied to the attention weights in training mode.
    pub dropout: f64,
}

impl AttentionSpec {
    pub fn new(model_dim: usize, num_heads: usize) -> Result<Self> {
        if num_heads == 0 || model_dim == 0 || !model_dim.is_multiple_of(num_heads) {
            return Err(config_err!(
                "model dimension {model_dim} is not divisible by {num_heads} heads"
            ));
        }
        Ok(AttentionSpec {
            model_dim,
            num_heads,
            dropout: 0.0,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.num_heads
    }

    /// Projections `4·L·D²` plus score and mixing products `2·L²·D`, per sequence.
    pub fn mult_adds(&self, batch: usize, len: usize) -> u64 {
        let d = self.model_dim;
        (batch * (4 * len * d * d + 2 * len * len * d)) as u64
    }
}

/// Unmasked multi-head self-attention over `(batch, L, D)`.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub name: String,
    pub spec: AttentionSpec,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
}

impl MultiHeadAttention {
    pub fn new<F: Float>(
        store: &mut ParamStore<F>,
        rng: &mut RngState,
        name: &str,
        spec: AttentionSpec,
    ) -> Result<Self> {
        AttentionSpec::new(spec.model_dim, spec.num_heads)?;
        let d = spec.model_dim;
        Ok(MultiHeadAttention {
            name: name.to_string(),
            spec,
            query: Linear::new(store, rng, &format!("{name}.query"), d, d, true)?,
            key: Linear::new(store, rng, &format!("{name}.key"), d, d, true)?,
            value: Linear::new(store, rng, &format!("{name}.value"), d, d, true)?,
            output: Linear::new(store, rng, &format!("{name}.output"), d, d, true)?,
        })
    }

    pub fn forward<F: Float>(&self, ctx: &mut Ctx<'_, F>, x: Var) -> Result<Var> {
        Ok(self.forward_with_weights(ctx, x)?.0)
    }

    /// Also returns the attention weights, shaped `(batch·heads, L, L)`,
    /// before dropout.
    pub fn forward_with_weights<F: Float>(&self, ctx: &mut Ctx<'_, F>, x: Var) -> Result<(Var, Var)> {
        let s = ctx.graph.shape(x).to_vec();
        let (batch, len) = match s.as_slice() {
            &[b, l, d] if d == self.spec.model_dim => (b, l),
            _ => {
                return Err(dim_err!(
                    "{}: expected (batch, L, {}) input, got {s:?}",
                    self.name,
                    self.spec.model_dim
                ))
            }
        };
        let heads = self.spec.num_heads;
        let hd = self.spec.head_dim();
        let q = self.query.forward(ctx, x)?;
        let k = self.key.forward(ctx, x)?;
        let v = self.value.forward(ctx, x)?;
        let split = |ctx: &mut Ctx<'_, F>, t: Var| -> Result<Var> {
            let t = ctx.graph.reshape(t, &[batch, len, heads, hd])?;
            let t = ctx.graph.permute(t, &[0, 2, 1, 3])?;
            ctx.graph.reshape(t, &[batch * heads, len, hd])
        };
        let (q, k, v) = (split(ctx, q)?, split(ctx, k)?, split(ctx, v)?);
        let scores = ctx.graph.bmm(q, k, true)?;
        let scores = ctx.graph.scale(scores, F::of(1.0 / (hd as f64).sqrt()))?;
        let weights = ctx.graph.softmax(scores)?;
        let dropped = dropout(ctx, weights, self.spec.dropout)?;
        let mixed = ctx.graph.bmm(dropped, v, false)?;
        let mixed = ctx.graph.reshape(mixed, &[batch, heads, len, hd])?;
        let mixed = ctx.graph.permute(mixed, &[0, 2, 1, 3])?;
        let mixed = ctx.graph.reshape(mixed, &[batch, len, self.spec.model_dim])?;
        Ok((self.output.forward(ctx, mixed)?, weights))
    }

    pub fn params(&self) -> Vec<ParamId> {
        [&self.query, &self.key, &self.value, &self.output]
            .iter()
            .flat_map(|l| l.params())
            .collect()
    }
}
