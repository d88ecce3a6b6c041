use serde::{Deserialize, Serialize};

use super::{Ctx, Mode, StatUpdate};
use crate::error::{config_err, dim_err, Result};
use crate::numerics::{Float, ParamId, ParamStore, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    Batch,
    Layer,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormSpec {
    pub kind: NormKind,
    pub num_features: usize,
    pub eps: f64,
    /// Running-statistics momentum; batch norm only.
    pub momentum: f64,
}

impl NormSpec {
    pub fn batch(num_features: usize) -> Self {
        NormSpec {
            kind: NormKind::Batch,
            num_features,
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn layer(num_features: usize) -> Self {
        NormSpec {
            kind: NormKind::Layer,
            num_features,
            eps: 1e-5,
            momentum: 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.num_features == 0 || self.eps <= 0.0 || !(0.0..=1.0).contains(&self.momentum) {
            return Err(config_err!("invalid norm spec {self:?}"));
        }
        Ok(())
    }
}

fn affine<F: Float>(store: &mut ParamStore<F>, name: &str, n: usize) -> Result<(ParamId, ParamId)> {
    Ok((
        store.add(format!("{name}.weight"), Tensor::ones([n]), true)?,
        store.add(format!("{name}.bias"), Tensor::zeros([n]), true)?,
    ))
}

/// Batch normalization over `(batch, C, T)`, statistics per channel.
#[derive(Clone, Debug)]
pub struct BatchNorm1d {
    pub name: String,
    pub spec: NormSpec,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm1d {
    pub fn new<F: Float>(store: &mut ParamStore<F>, name: &str, spec: NormSpec) -> Result<Self> {
        spec.validate()?;
        let (gamma, beta) = affine(store, name, spec.num_features)?;
        let running_mean = store.add(
            format!("{name}.running_mean"),
            Tensor::zeros([spec.num_features]),
            false,
        )?;
        let running_var = store.add(format!("{name}.running_var"), Tensor::ones([spec.num_features]), false)?;
        Ok(BatchNorm1d {
            name: name.to_string(),
            spec,
            gamma,
            beta,
            running_mean,
            running_var,
        })
    }

    /// Training mode normalizes with batch statistics and queues a running
    /// update on the context; eval mode uses the running statistics.
    pub fn forward<F: Float>(&self, ctx: &mut Ctx<'_, F>, x: Var) -> Result<Var> {
        let sx = ctx.graph.shape(x);
        if sx.len() != 3 || sx[1] != self.spec.num_features {
            return Err(dim_err!(
                "{}: expected (batch, {}, T) input, got {sx:?}",
                self.name,
                self.spec.num_features
            ));
        }
        let g = ctx.param(self.gamma);
        let b = ctx.param(self.beta);
        let eps = F::of(self.spec.eps);
        match ctx.mode {
            Mode::Train => {
                let (y, stats) = ctx.graph.batch_norm(x, g, b, eps, None)?;
                if let Some(stats) = stats {
                    ctx.push_stat_update(StatUpdate {
                        running_mean: self.running_mean,
                        running_var: self.running_var,
                        momentum: self.spec.momentum,
                        stats,
                    });
                }
                Ok(y)
            }
            Mode::Eval => {
                let store = ctx.store;
                let rm = store.value(self.running_mean).data();
                let rv = store.value(self.running_var).data();
                Ok(ctx.graph.batch_norm(x, g, b, eps, Some((rm, rv)))?.0)
            }
        }
    }

    /// Trainable parameters only.
    pub fn params(&self) -> Vec<ParamId> {
        vec![self.gamma, self.beta]
    }
}

/// Layer normalization over the last axis.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub name: String,
    pub spec: NormSpec,
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<F: Float>(store: &mut ParamStore<F>, name: &str, spec: NormSpec) -> Result<Self> {
        spec.validate()?;
        let (gamma, beta) = affine(store, name, spec.num_features)?;
        Ok(LayerNorm {
            name: name.to_string(),
            spec,
            gamma,
            beta,
        })
    }

    pub fn forward<F: Float>(&self, ctx: &mut Ctx<'_, F>, x: Var) -> Result<Var> {
        if ctx.graph.shape(x).last() != Some(&self.spec.num_features) {
            return Err(dim_err!(
                "{}: last dimension must be {}, got shape {:?}",
                self.name,
                self.spec.num_features,
                ctx.graph.shape(x)
            ));
        }
        let g = ctx.param(self.gamma);
        let b = ctx.param(self.beta);
        ctx.graph.layer_norm(x, g, b, F::of(self.spec.eps))
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.gamma, self.beta]
    }
}

/// Normalization of `(batch, C, T)` feature maps over channels: batch norm,
/// or layer norm across the channel axis at every time step.
#[derive(Clone, Debug)]
pub enum ChannelNorm {
    Batch(BatchNorm1d),
    Layer(LayerNorm),
}

impl ChannelNorm {
    pub fn new<F: Float>(store: &mut ParamStore<F>, name: &str, kind: NormKind, channels: usize) -> Result<Self> {
        Ok(match kind {
            NormKind::Batch => ChannelNorm::Batch(BatchNorm1d::new(store, name, NormSpec::batch(channels))?),
            NormKind::Layer => ChannelNorm::Layer(LayerNorm::new(store, name, NormSpec::layer(channels))?),
        })
    }

    pub fn forward<F: Float>(&self, ctx: &mut Ctx<'_, F>, x: Var) -> Result<Var> {
        match self {
            ChannelNorm::Batch(bn) => bn.forward(ctx, x),
            ChannelNorm::Layer(ln) => {
                let t = ctx.graph.permute(x, &[0, 2, 1])?;
                let y = ln.forward(ctx, t)?;
                ctx.graph.permute(y, &[0, 2, 1])
            }
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        match self {
            ChannelNorm::Batch(bn) => bn.params(),
            ChannelNorm::Layer(ln) => ln.params(),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            ChannelNorm::Batch(bn) => &bn.name,
            ChannelNorm::Layer(ln) => &ln.name,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::apply_stat_updates;
    use crate::numerics::RngState;

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut r = RngState::new(seed);
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| r.normal() * 2.0 + 0.5).collect()).unwrap()
    }

    #[test]
    fn constant_input_normalizes_to_zero() {
        let mut store = ParamStore::<f64>::new();
        let bn = BatchNorm1d::new(&mut store, "bn", NormSpec::batch(2)).unwrap();
        let mut rng = RngState::new(0);
        let mut ctx = Ctx::new(&store, Mode::Train, &mut rng);
        let x = ctx.input(Tensor::full([3, 2, 4], 7.0));
        let y = bn.forward(&mut ctx, x).unwrap();
        assert!(ctx.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batch_stats_match_two_pass_oracle() {
        let mut store = ParamStore::<f64>::new();
        let bn = BatchNorm1d::new(&mut store, "bn", NormSpec::batch(3)).unwrap();
        let xt = random(&[4, 3, 5], 11);
        let mut rng = RngState::new(0);
        let mut ctx = Ctx::new(&store, Mode::Train, &mut rng);
        let x = ctx.input(xt.clone());
        let y = bn.forward(&mut ctx, x).unwrap();
        let yv = ctx.value(y).clone();
        for c in 0..3 {
            let vals: Vec<f64> = (0..4)
                .flat_map(|b| (0..5).map(move |t| (b, t)))
                .map(|(b, t)| xt.at(&[b, c, t]))
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            for b in 0..4 {
                for t in 0..5 {
                    let expect = (xt.at(&[b, c, t]) - mean) / (var + 1e-5).sqrt();
                    assert!((yv.at(&[b, c, t]) - expect).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn running_stats_change_only_in_training() {
        let mut store = ParamStore::<f64>::new();
        let bn = BatchNorm1d::new(&mut store, "bn", NormSpec::batch(2)).unwrap();
        let xt = random(&[2, 2, 4], 3);
        let mut rng = RngState::new(0);
        let updates = {
            let mut ctx = Ctx::new(&store, Mode::Eval, &mut rng);
            let x = ctx.input(xt.clone());
            bn.forward(&mut ctx, x).unwrap();
            ctx.take_stat_updates()
        };
        assert!(updates.is_empty());
        let updates = {
            let mut ctx = Ctx::new(&store, Mode::Train, &mut rng);
            let x = ctx.input(xt);
            bn.forward(&mut ctx, x).unwrap();
            ctx.take_stat_updates()
        };
        assert_eq!(updates.len(), 1);
        apply_stat_updates(&mut store, &updates);
        assert_ne!(store.value(bn.running_mean).data(), &[0.0, 0.0]);
    }

    #[test]
    fn eval_before_training_uses_unit_statistics() {
        let mut store = ParamStore::<f64>::new();
        let bn = BatchNorm1d::new(&mut store, "bn", NormSpec::batch(1)).unwrap();
        let mut rng = RngState::new(0);
        let mut ctx = Ctx::new(&store, Mode::Eval, &mut rng);
        let x = ctx.input(Tensor::from_f64([1, 1, 2], &[1.0, -2.0]).unwrap());
        let y = bn.forward(&mut ctx, x).unwrap();
        let s = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert_eq!(ctx.value(y).data(), &[s, -2.0 * s]);
    }

    #[test]
    fn layer_norm_examples() {
        let mut store = ParamStore::<f64>::new();
        let ln3 = LayerNorm::new(&mut store, "a", NormSpec::layer(3)).unwrap();
        let ln2 = LayerNorm::new(&mut store, "b", NormSpec::layer(2)).unwrap();
        let mut rng = RngState::new(0);
        let mut ctx = Ctx::new(&store, Mode::Eval, &mut rng);
        let x = ctx.input(Tensor::ones([3]));
        let y = ln3.forward(&mut ctx, x).unwrap();
        assert_eq!(ctx.value(y).data(), &[0.0, 0.0, 0.0]);
        let x = ctx.input(Tensor::from_f64([2], &[-1.0, 1.0]).unwrap());
        let y = ln2.forward(&mut ctx, x).unwrap();
        for (v, e) in ctx.value(y).data().iter().zip([-1.0, 1.0]) {
            assert!((v - e).abs() < 1e-5);
        }
        let x = ctx.input(Tensor::zeros([2, 4]));
        assert!(matches!(ln3.forward(&mut ctx, x), Err(crate::Error::Dimension(_))));
    }

    #[test]
    fn layer_norm_matches_direct_statistics() {
        let mut store = ParamStore::<f64>::new();
        let ln = LayerNorm::new(&mut store, "ln", NormSpec::layer(7)).unwrap();
        let xt = random(&[7], 5);
        let mut rng = RngState::new(0);
        let mut ctx = Ctx::new(&store, Mode::Eval, &mut rng);
        let x = ctx.input(xt.clone());
        let y = ln.forward(&mut ctx, x).unwrap();
        let mean = xt.data().iter().sum::<f64>() / 7.0;
        let var = xt.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 7.0;
        for (yv, xv) in ctx.value(y).data().iter().zip(xt.data()) {
            assert!((yv - (xv - mean) / (var + 1e-5).sqrt()).abs() < 1e-6);
        }
    }
}
