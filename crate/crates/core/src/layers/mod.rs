//! Network primitives: grouped 1-D convolution, batch/layer normalization,
//! GELU, softmax, linear maps, multi-head self-attention and the
//! position/class-token embedding.
//!
//! Layers own only [`ParamId`]s; values live in a [`ParamStore`]. A forward
//! pass threads a [`Ctx`] through every layer, which carries the tape, the
//! mode and the random stream.

mod attention;
mod conv;
mod embedding;
mod linear;
mod norm;

use serde::{Deserialize, Serialize};

pub use attention::{AttentionSpec, MultiHeadAttention};
pub use conv::{Conv1d, Conv1dSpec};
pub use embedding::PositionClassEmbedding;
pub use linear::Linear;
pub use norm::{BatchNorm1d, ChannelNorm, LayerNorm, NormKind, NormSpec};

use crate::error::Result;
use crate::numerics::{BatchStats, Float, Graph, ParamId, ParamStore, RngState, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// Pending running-statistics update from a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct StatUpdate<F> {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
    pub stats: BatchStats<F>,
}

/// State threaded through one forward pass.
///
/// Parameters are read-only during the pass; batch-norm running statistics
/// are collected in [`Ctx::take_stat_updates`] and applied by the caller
/// with [`apply_stat_updates`] once the step is committed.
pub struct Ctx<'a, F> {
    pub graph: Graph<F>,
    pub store: &'a ParamStore<F>,
    pub mode: Mode,
    pub rng: &'a mut RngState,
    updates: Vec<StatUpdate<F>>,
}

impl<'a, F: Float> Ctx<'a, F> {
    pub fn new(store: &'a ParamStore<F>, mode: Mode, rng: &'a mut RngState) -> Self {
        Ctx {
            graph: Graph::new(),
            store,
            mode,
            rng,
            updates: Vec::new(),
        }
    }

    pub fn training(&self) -> bool {
        self.mode == Mode::Train
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.graph.param(self.store, id)
    }

    pub fn input(&mut self, t: Tensor<F>) -> Var {
        self.graph.input(t)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        self.graph.value(v)
    }

    pub(crate) fn push_stat_update(&mut self, u: StatUpdate<F>) {
        self.updates.push(u);
    }

    pub fn take_stat_updates(&mut self) -> Vec<StatUpdate<F>> {
        std::mem::take(&mut self.updates)
    }

    pub fn into_parts(self) -> (Graph<F>, Vec<StatUpdate<F>>) {
        (self.graph, self.updates)
    }
}

/// Folds batch statistics into running estimates:
/// `running = (1 − momentum)·running + momentum·batch`, with the unbiased
/// batch variance.
pub fn apply_stat_updates<F: Float>(store: &mut ParamStore<F>, updates: &[StatUpdate<F>]) {
    for u in updates {
        let m = F::of(u.momentum);
        let keep = F::one() - m;
        let n = u.stats.count as f64;
        let unbias = F::of(if n > 1.0 { n / (n - 1.0) } else { 1.0 });
        for (r, &b) in store.value_mut(u.running_mean).data_mut().iter_mut().zip(&u.stats.mean) {
            *r = keep * *r + m * b;
        }
        for (r, &b) in store.value_mut(u.running_var).data_mut().iter_mut().zip(&u.stats.var) {
            *r = keep * *r + m * b * unbias;
        }
    }
}

/// Elementwise `x·Φ(x)` with the exact Gaussian CDF.
pub fn gelu<F: Float>(ctx: &mut Ctx<'_, F>, x: Var) -> Result<Var> {
    ctx.graph.gelu(x)
}

/// Numerically stable softmax over the last axis.
pub fn softmax<F: Float>(ctx: &mut Ctx<'_, F>, x: Var) -> Result<Var> {
    ctx.graph.softmax(x)
}

/// Inverted dropout: zeroes each element with probability `rate` in training
/// mode and rescales survivors by `1/(1 − rate)`. Identity in eval mode.
pub fn dropout<F: Float>(ctx: &mut Ctx<'_, F>, x: Var, rate: f64) -> Result<Var> {
    if !ctx.training() || rate <= 0.0 {
        return Ok(x);
    }
    let keep = 1.0 - rate;
    let scale = F::of(1.0 / keep);
    let shape = ctx.graph.shape(x).to_vec();
    let n: usize = shape.iter().product();
    let mask: Vec<F> = (0..n)
        .map(|_| if ctx.rng.bernoulli(keep) { scale } else { F::zero() })
        .collect();
    let m = ctx.graph.input(Tensor::new(shape, mask)?);
    ctx.graph.mul(x, m)
}

/// Kaiming (He) normal initializer: `N(0, 2/fan_in)`.
pub(crate) fn kaiming_normal<F: Float>(shape: &[usize], fan_in: usize, rng: &mut RngState) -> Tensor<F> {
    let std = (2.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| F::of(rng.normal() * std)).collect();
    Tensor::new(shape.to_vec(), data).expect("initializer shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_reference_values() {
        use crate::numerics::kernels::gelu as g;
        assert_eq!(g(0.0f64), 0.0);
        assert!((g(10.0f64) - 10.0).abs() < 1e-6);
        // 1·Φ(1) = 0.5·(1 + erf(1/√2)) = 0.841344746...
        assert!((g(1.0f64) - 0.841_344_746).abs() < 1e-6);
    }

    #[test]
    fn tanh_approximation_is_within_1e3_of_exact() {
        use crate::numerics::kernels::{gelu, gelu_tanh};
        for i in -600..=600 {
            let x = f64::from(i) / 100.0;
            assert!((gelu(x) - gelu_tanh(x)).abs() < 1e-3, "x = {x}");
        }
    }

    #[test]
    fn softmax_examples() {
        let store = ParamStore::<f64>::new();
        let mut rng = RngState::new(0);
        let mut ctx = Ctx::new(&store, Mode::Eval, &mut rng);
        let x = ctx.input(Tensor::from_f64([2], &[0.0, 0.0]).unwrap());
        let y = softmax(&mut ctx, x).unwrap();
        assert_eq!(ctx.value(y).data(), &[0.5, 0.5]);
        let x = ctx.input(Tensor::from_f64([2], &[1000.0, 0.0]).unwrap());
        let y = softmax(&mut ctx, x).unwrap();
        let v = ctx.value(y).data();
        assert!((v[0] - 1.0).abs() < 1e-12 && v[1].abs() < 1e-12 && v[1] >= 0.0);
    }

    #[test]
    fn dropout_is_identity_in_eval() {
        let store = ParamStore::<f32>::new();
        let mut rng = RngState::new(0);
        let mut ctx = Ctx::new(&store, Mode::Eval, &mut rng);
        let x = ctx.input(Tensor::ones([4, 4]));
        assert_eq!(dropout(&mut ctx, x, 0.5).unwrap(), x);
    }
}
