//! Lightweight sensor residual (LSR) blocks, the downsample layer and the
//! four-stage LSR stack.
//!
//! One block computes
//!
//! ```text
//! residual = pwconv2(gelu(pwconv1(norm(dwconv(x))))) · diag(λ)
//! out      = x + b · residual,   b ~ Bernoulli(survival_prob) per sample (training)
//! out      = x + residual                                               (eval)
//! ```
//!
//! where `dwconv` is a kernel-3 depthwise convolution (groups = channels),
//! `pwconv1` expands the channels 4× and `pwconv2` projects back. The block has
//! exactly one normalization and one activation.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, dim_err, Result};
use crate::evaluation::LayerCost;
use crate::layers::{BatchNorm1d, ChannelNorm, Conv1d, Conv1dSpec, Ctx, NormKind, NormSpec};
use crate::numerics::{Float, ParamId, ParamStore, RngState, Tensor, Var};

/// Inverted-bottleneck expansion inside every block.
pub const EXPANSION: usize = 4;
/// Kernel of the depthwise convolution.
pub const DW_KERNEL: usize = 3;
/// Number of stages in a stack.
pub const STAGES: usize = 4;

/// How the residual branch is treated outside training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalResidual {
    /// `x + residual`; the layer scale absorbs any expectation mismatch.
    #[default]
    Keep,
    /// `x + survival_prob · residual`, the expectation of the training output.
    Rescale,
}

/// Options shared by every block of a stack.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlockOptions {
    pub norm: NormKind,
    pub layer_scale_init: f64,
    /// Survival probability of the last block; the first block always survives
    /// and probabilities fall linearly in between.
    pub final_survival: f64,
    pub eval_residual: EvalResidual,
    /// Depthwise (`true`) or dense (`false`) kernel-3 convolution. Dense is
    /// only meant for cost comparisons.
    pub grouped: bool,
}

impl Default for BlockOptions {
    fn default() -> Self {
        BlockOptions {
            norm: NormKind::Batch,
            layer_scale_init: 1e-6,
            final_survival: 0.5,
            eval_residual: EvalResidual::Keep,
            grouped: true,
        }
    }
}

/// Survival probability of block `index` out of `total` under the linear schedule.
pub fn survival_schedule(index: usize, total: usize, final_survival: f64) -> f64 {
    if total <= 1 {
        return 1.0;
    }
    1.0 - (1.0 - final_survival) * index as f64 / (total - 1) as f64
}

#[derive(Clone, Debug)]
pub struct LsrBlock {
    pub name: String,
    pub channels: usize,
    pub dwconv: Conv1d,
    pub norm: ChannelNorm,
    pub pwconv1: Conv1d,
    pub pwconv2: Conv1d,
    pub layer_scale: ParamId,
    pub survival_prob: f64,
    pub eval_residual: EvalResidual,
}

impl LsrBlock {
    pub fn new<F: Float>(
        store: &mut ParamStore<F>,
        rng: &mut RngState,
        name: &str,
        channels: usize,
        survival_prob: f64,
        opts: &BlockOptions,
    ) -> Result<Self> {
        if !(survival_prob > 0.0 && survival_prob <= 1.0) {
            return Err(config_err!(
                "{name}: survival probability {survival_prob} outside (0, 1]"
            ));
        }
        let groups = if opts.grouped { channels } else { 1 };
        let hidden = EXPANSION * channels;
        let dwconv = Conv1d::new(
            store,
            rng,
            &format!("{name}.dwconv"),
            Conv1dSpec::new(channels, channels, DW_KERNEL).padding(1).groups(groups),
        )?;
        let norm = ChannelNorm::new(store, &format!("{name}.norm"), opts.norm, channels)?;
        let pwconv1 = Conv1d::new(
            store,
            rng,
            &format!("{name}.pwconv1"),
            Conv1dSpec::new(channels, hidden, 1),
        )?;
        let pwconv2 = Conv1d::new(
            store,
            rng,
            &format!("{name}.pwconv2"),
            Conv1dSpec::new(hidden, channels, 1),
        )?;
        let layer_scale = store.add(
            format!("{name}.layer_scale"),
            Tensor::full([channels], F::of(opts.layer_scale_init)),
            true,
        )?;
        Ok(LsrBlock {
            name: name.to_string(),
            channels,
            dwconv,
            norm,
            pwconv1,
            pwconv2,
            layer_scale,
            survival_prob,
            eval_residual: opts.eval_residual,
        })
    }

    /// The scaled residual branch `f(x) · diag(λ)`, before stochastic depth.
    pub fn residual<F: Float>(&self, ctx: &mut Ctx<'_, F>, x: Var) -> Result<Var> {
        let r = self.dwconv.forward(ctx, x)?;
        let r = self.norm.forward(ctx, r)?;
        let r = self.pwconv1.forward(ctx, r)?;
        let r = ctx.graph.gelu(r)?;
        let r = self.pwconv2.forward(ctx, r)?;
        let lambda = ctx.param(self.layer_scale);
        let lambda = ctx.graph.reshape(lambda, &[self.channels, 1])?;
        ctx.graph.mul(r, lambda)
    }

    pub fn forward<F: Float>(&self, ctx: &mut Ctx<'_, F>, x: Var) -> Result<Var> {
        let s = ctx.graph.shape(x).to_vec();
        if s.len() != 3 || s[1] != self.channels {
            return Err(dim_err!(
                "{}: expected (batch, {}, T) input, got {s:?}",
                self.name,
                self.channels
            ));
        }
        let mut r = self.residual(ctx, x)?;
        if ctx.training() {
            let batch = s[0];
            let keep: Vec<bool> = (0..batch).map(|_| ctx.rng.bernoulli(self.survival_prob)).collect();
            if keep.iter().any(|k| !k) {
                let mask = keep.iter().map(|&k| if k { F::one() } else { F::zero() }).collect();
                let m = ctx.input(Tensor::new([batch, 1, 1], mask)?);
                r = ctx.graph.mul(r, m)?;
            }
        } else if self.eval_residual == EvalResidual::Rescale && self.survival_prob < 1.0 {
            r = ctx.graph.scale(r, F::of(self.survival_prob))?;
        }
        ctx.graph.add(x, r)
    }

    pub fn cost<F: Float>(
        &self,
        store: &ParamStore<F>,
        batch: usize,
        len: usize,
        rows: &mut Vec<LayerCost>,
    ) -> Result<()> {
        rows.push(LayerCost::conv(store, &self.dwconv, batch, len)?);
        rows.push(LayerCost::of_params(store, self.norm.name(), &self.norm.params(), 0));
        rows.push(LayerCost::conv(store, &self.pwconv1, batch, len)?);
        rows.push(LayerCost::conv(store, &self.pwconv2, batch, len)?);
        rows.push(LayerCost::of_params(
            store,
            &format!("{}.layer_scale", self.name),
            &[self.layer_scale],
            0,
        ));
        Ok(())
    }
}

/// Batch norm followed by a kernel-2 stride-2 convolution; halves the length.
#[derive(Clone, Debug)]
pub struct Downsample {
    pub name: String,
    pub norm: BatchNorm1d,
    pub conv: Conv1d,
}

impl Downsample {
    pub fn new<F: Float>(
        store: &mut ParamStore<F>,
        rng: &mut RngState,
        name: &str,
        c_in: usize,
        c_out: usize,
    ) -> Result<Self> {
        Ok(Downsample {
            name: name.to_string(),
            norm: BatchNorm1d::new(store, &format!("{name}.norm"), NormSpec::batch(c_in))?,
            conv: Conv1d::new(
                store,
                rng,
                &format!("{name}.conv"),
                Conv1dSpec::new(c_in, c_out, 2).stride(2),
            )?,
        })
    }

    pub fn forward<F: Float>(&self, ctx: &mut Ctx<'_, F>, x: Var) -> Result<Var> {
        let s = ctx.graph.shape(x);
        if s.len() != 3 || !s[2].is_multiple_of(2) {
            return Err(dim_err!("{}: input length must be even, got shape {s:?}", self.name));
        }
        let y = self.norm.forward(ctx, x)?;
        self.conv.forward(ctx, y)
    }

    pub fn cost<F: Float>(
        &self,
        store: &ParamStore<F>,
        batch: usize,
        len: usize,
        rows: &mut Vec<LayerCost>,
    ) -> Result<usize> {
        rows.push(LayerCost::of_params(store, &self.norm.name, &self.norm.params(), 0));
        rows.push(LayerCost::conv(store, &self.conv, batch, len)?);
        self.conv.spec.output_len(len)
    }
}

/// Block counts and channel widths of the four stages.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageConfig {
    pub depths: [usize; STAGES],
    pub widths: [usize; STAGES],
    pub input_channels: usize,
}

impl StageConfig {
    pub fn total_blocks(&self) -> usize {
        self.depths.iter().sum()
    }

    /// Shortest input length that survives the three downsamples.
    pub fn min_len() -> usize {
        1 << (STAGES - 1)
    }

    pub fn validate(&self, input_len: usize) -> Result<()> {
        if self.depths.contains(&0) || self.widths.contains(&0) || self.input_channels == 0 {
            return Err(config_err!("stage config has a zero entry: {self:?}"));
        }
        let div = Self::min_len();
        if input_len < div || !input_len.is_multiple_of(div) {
            return Err(config_err!(
                "input length {input_len} cannot pass {} halvings (needs a positive multiple of {div})",
                STAGES - 1
            ));
        }
        Ok(())
    }
}

/// Stem (kernel-1 convolution) followed by four block stages with a
/// downsample between consecutive stages.
#[derive(Clone, Debug)]
pub struct LsrStack {
    pub name: String,
    pub config: StageConfig,
    pub input_len: usize,
    pub stem: Conv1d,
    pub stages: Vec<Vec<LsrBlock>>,
    pub downsamples: Vec<Downsample>,
}

impl LsrStack {
    pub fn new<F: Float>(
        store: &mut ParamStore<F>,
        rng: &mut RngState,
        name: &str,
        config: StageConfig,
        input_len: usize,
        opts: &BlockOptions,
    ) -> Result<Self> {
        config.validate(input_len)?;
        let prefix = |s: &str| {
            if name.is_empty() {
                s.to_string()
            } else {
                format!("{name}.{s}")
            }
        };
        let stem = Conv1d::new(
            store,
            rng,
            &prefix("stem"),
            Conv1dSpec::new(config.input_channels, config.widths[0], 1),
        )?;
        let total = config.total_blocks();
        let mut index = 0;
        let mut stages = Vec::with_capacity(STAGES);
        let mut downsamples = Vec::with_capacity(STAGES - 1);
        for s in 0..STAGES {
            if s > 0 {
                downsamples.push(Downsample::new(
                    store,
                    rng,
                    &prefix(&format!("downsample{s}")),
                    config.widths[s - 1],
                    config.widths[s],
                )?);
            }
            let mut blocks = Vec::with_capacity(config.depths[s]);
            for b in 0..config.depths[s] {
                let p = survival_schedule(index, total, opts.final_survival);
                blocks.push(LsrBlock::new(
                    store,
                    rng,
                    &prefix(&format!("stage{}.block{b}", s + 1)),
                    config.widths[s],
                    p,
                    opts,
                )?);
                index += 1;
            }
            stages.push(blocks);
        }
        Ok(LsrStack {
            name: name.to_string(),
            config,
            input_len,
            stem,
            stages,
            downsamples,
        })
    }

    pub fn output_len(&self) -> usize {
        self.input_len >> (STAGES - 1)
    }

    pub fn blocks(&self) -> impl Iterator<Item = &LsrBlock> {
        self.stages.iter().flatten()
    }

    pub fn forward<F: Float>(&self, ctx: &mut Ctx<'_, F>, x: Var) -> Result<Var> {
        let s = ctx.graph.shape(x);
        if s.len() != 3 || s[1] != self.config.input_channels || s[2] != self.input_len {
            return Err(dim_err!(
                "{}: expected (batch, {}, {}) input, got {s:?}",
                self.name,
                self.config.input_channels,
                self.input_len
            ));
        }
        let mut h = self.stem.forward(ctx, x)?;
        for (s, blocks) in self.stages.iter().enumerate() {
            if s > 0 {
                h = self.downsamples[s - 1].forward(ctx, h)?;
            }
            for block in blocks {
                h = block.forward(ctx, h)?;
            }
        }
        Ok(h)
    }

    /// Appends one row per layer and returns the output length.
    pub fn cost<F: Float>(&self, store: &ParamStore<F>, batch: usize, rows: &mut Vec<LayerCost>) -> Result<usize> {
        let mut len = self.input_len;
        rows.push(LayerCost::conv(store, &self.stem, batch, len)?);
        for (s, blocks) in self.stages.iter().enumerate() {
            if s > 0 {
                len = self.downsamples[s - 1].cost(store, batch, len, rows)?;
            }
            for block in blocks {
                block.cost(store, batch, len, rows)?;
            }
        }
        Ok(len)
    }
}
