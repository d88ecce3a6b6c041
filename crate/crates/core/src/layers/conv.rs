use serde::{Deserialize, Serialize};

use super::{kaiming_normal, Ctx};
use crate::error::{config_err, dim_err, Result};
use crate::numerics::{Float, ParamId, ParamStore, RngState, Tensor, Var};

/// Shape of a 1-D (optionally grouped) convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv1dSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    pub bias: bool,
}

impl Conv1dSpec {
    /// Dense, stride 1, no padding, with bias.
    pub fn new(in_channels: usize, out_channels: usize, kernel_size: usize) -> Self {
        Conv1dSpec {
            in_channels,
            out_channels,
            kernel_size,
            stride: 1,
            padding: 0,
            groups: 1,
            bias: true,
        }
    }

    pub fn stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn padding(mut self, padding: usize) -> Self {
        self.padding = padding;
        self
    }

    pub fn groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn bias(mut self, bias: bool) -> Self {
        self.bias = bias;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.in_channels,
            self.out_channels,
            self.kernel_size,
            self.stride,
            self.groups,
        ];
        if dims.contains(&0) {
            return Err(config_err!("conv spec has a zero field: {self:?}"));
        }
        if !self.in_channels.is_multiple_of(self.groups) || !self.out_channels.is_multiple_of(self.groups) {
            return Err(config_err!(
                "channels {}→{} not divisible by groups {}",
                self.in_channels,
                self.out_channels,
                self.groups
            ));
        }
        Ok(())
    }

    /// Weights excluding bias: `out · (in/groups) · kernel`.
    pub fn weight_count(&self) -> usize {
        self.out_channels * (self.in_channels / self.groups) * self.kernel_size
    }

    pub fn param_count(&self) -> usize {
        self.weight_count() + if self.bias { self.out_channels } else { 0 }
    }

    pub fn output_len(&self, len_in: usize) -> Result<usize> {
        if len_in + 2 * self.padding < self.kernel_size {
            return Err(dim_err!(
                "input length {len_in} (padding {}) shorter than kernel {}",
                self.padding,
                self.kernel_size
            ));
        }
        Ok((len_in + 2 * self.padding - self.kernel_size) / self.stride + 1)
    }

    /// Multiply-accumulates for one pass: `batch · C_out · T_out · (C_in/groups) · k`.
    pub fn mult_adds(&self, batch: usize, len_in: usize) -> Result<u64> {
        let t_out = self.output_len(len_in)?;
        Ok((batch * self.out_channels * t_out * (self.in_channels / self.groups) * self.kernel_size) as u64)
    }
}

/// Convolution layer over `(batch, channels, time)`.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub name: String,
    pub spec: Conv1dSpec,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Conv1d {
    pub fn new<F: Float>(store: &mut ParamStore<F>, rng: &mut RngState, name: &str, spec: Conv1dSpec) -> Result<Self> {
        spec.validate()?;
        let cin_g = spec.in_channels / spec.groups;
        let w = kaiming_normal(
            &[spec.out_channels, cin_g, spec.kernel_size],
            cin_g * spec.kernel_size,
            rng,
        );
        let weight = store.add(format!("{name}.weight"), w, true)?;
        let bias = if spec.bias {
            Some(store.add(format!("{name}.bias"), Tensor::zeros([spec.out_channels]), true)?)
        } else {
            None
        };
        Ok(Conv1d {
            name: name.to_string(),
            spec,
            weight,
            bias,
        })
    }

    pub fn forward<F: Float>(&self, ctx: &mut Ctx<'_, F>, x: Var) -> Result<Var> {
        let sx = ctx.graph.shape(x);
        if sx.len() != 3 || sx[1] != self.spec.in_channels {
            return Err(dim_err!(
                "{}: expected (batch, {}, T) input, got {sx:?}",
                self.name,
                self.spec.in_channels
            ));
        }
        let w = ctx.param(self.weight);
        let b = self.bias.map(|b| ctx.param(b));
        ctx.graph
            .conv1d(x, w, b, self.spec.stride, self.spec.padding, self.spec.groups)
    }

    pub fn params(&self) -> Vec<ParamId> {
        std::iter::once(self.weight).chain(self.bias).collect()
    }
}
