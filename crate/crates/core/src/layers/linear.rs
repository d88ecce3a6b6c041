use super::{kaiming_normal, Ctx};
use crate::error::{dim_err, Result};
use crate::numerics::{Float, ParamId, ParamStore, RngState, Tensor, Var};

/// Affine map over the last axis; the weight is stored `(out, in)`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub name: String,
    pub in_features: usize,
    pub out_features: usize,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<F: Float>(
        store: &mut ParamStore<F>,
        rng: &mut RngState,
        name: &str,
        in_features: usize,
        out_features: usize,
        bias: bool,
    ) -> Result<Self> {
        let w = kaiming_normal(&[out_features, in_features], in_features, rng);
        let weight = store.add(format!("{name}.weight"), w, true)?;
        let bias = if bias {
            Some(store.add(format!("{name}.bias"), Tensor::zeros([out_features]), true)?)
        } else {
            None
        };
        Ok(Linear {
            name: name.to_string(),
            in_features,
            out_features,
            weight,
            bias,
        })
    }

    pub fn forward<F: Float>(&self, ctx: &mut Ctx<'_, F>, x: Var) -> Result<Var> {
        if ctx.graph.shape(x).last() != Some(&self.in_features) {
            return Err(dim_err!(
                "{}: trailing dimension must be {}, got shape {:?}",
                self.name,
                self.in_features,
                ctx.graph.shape(x)
            ));
        }
        let w = ctx.param(self.weight);
        let b = self.bias.map(|b| ctx.param(b));
        ctx.graph.linear(x, w, b)
    }

    pub fn params(&self) -> Vec<ParamId> {
        std::iter::once(self.weight).chain(self.bias).collect()
    }

    /// `positions · in · out`, where `positions` counts every row the map is applied to.
    pub fn mult_adds(&self, positions: usize) -> u64 {
        (positions * self.in_features * self.out_features) as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Mode;

    fn layer(w: &[f64], out: usize, inp: usize) -> (ParamStore<f64>, Linear) {
        let mut store = ParamStore::new();
        let mut rng = RngState::new(0);
        let l = Linear::new(&mut store, &mut rng, "fc", inp, out, true).unwrap();
        store
            .set_value(l.weight, Tensor::from_f64([out, inp], w).unwrap())
            .unwrap();
        (store, l)
    }

    #[test]
    fn identity_weight_passes_through() {
        let (store, l) = layer(&[1., 0., 0., 1.], 2, 2);
        let mut rng = RngState::new(0);
        let mut ctx = Ctx::new(&store, Mode::Eval, &mut rng);
        let x = ctx.input(Tensor::from_f64([3, 2], &[1., 2., 3., 4., 5., 6.]).unwrap());
        let y = l.forward(&mut ctx, x).unwrap();
        assert_eq!(ctx.value(y).data(), &[1., 2., 3., 4., 5., 6.]);
    }

    #[test]
    fn direct_arithmetic() {
        let (store, l) = layer(&[1., 0., 0., 1., 1., 1.], 3, 2);
        let mut rng = RngState::new(0);
        let mut ctx = Ctx::new(&store, Mode::Eval, &mut rng);
        let x = ctx.input(Tensor::from_f64([2], &[1., 2.]).unwrap());
        let y = l.forward(&mut ctx, x).unwrap();
        assert_eq!(ctx.value(y).data(), &[1., 2., 3.]);
        let bad = ctx.input(Tensor::zeros([3]));
        assert!(matches!(l.forward(&mut ctx, bad), Err(crate::Error::Dimension(_))));
    }

    #[test]
    fn parameter_and_mac_counts() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = RngState::new(0);
        let l = Linear::new(&mut store, &mut rng, "fc", 3, 2, true).unwrap();
        assert_eq!(store.num_trainable(), 8);
        assert_eq!(l.mult_adds(1), 6);
    }
}
