use super::Ctx;
use crate::error::{dim_err, Result};
use crate::numerics::{Float, ParamId, ParamStore, RngState, Tensor, Var};

/// Learned position table of `K + 1` rows plus a class token that is
/// prepended to every sequence.
#[derive(Clone, Debug)]
pub struct PositionClassEmbedding {
    pub name: String,
    pub seq_len: usize,
    pub dim: usize,
    pub pos: ParamId,
    pub cls: ParamId,
}

impl PositionClassEmbedding {
    /// Both tables start from a truncated normal with σ = 0.02.
    pub fn new<F: Float>(
        store: &mut ParamStore<F>,
        rng: &mut RngState,
        name: &str,
        seq_len: usize,
        dim: usize,
    ) -> Result<Self> {
        let mut init = |shape: [usize; 2]| {
            let n = shape[0] * shape[1];
            Tensor::new(shape, (0..n).map(|_| F::of(rng.truncated_normal(0.02))).collect())
        };
        let pos = store.add(format!("{name}.pos"), init([seq_len + 1, dim])?, true)?;
        let cls = store.add(format!("{name}.cls"), init([1, dim])?, true)?;
        Ok(PositionClassEmbedding {
            name: name.to_string(),
            seq_len,
            dim,
            pos,
            cls,
        })
    }

    /// `(batch, K, D) → (batch, K + 1, D)`: row 0 is `cls + pos[0]`, row `k`
    /// is `tokens[k − 1] + pos[k]`.
    pub fn forward<F: Float>(&self, ctx: &mut Ctx<'_, F>, tokens: Var) -> Result<Var> {
        let s = ctx.graph.shape(tokens);
        if s.len() != 3 || s[1] != self.seq_len || s[2] != self.dim {
            return Err(dim_err!(
                "{}: expected (batch, {}, {}) tokens, got {s:?}",
                self.name,
                self.seq_len,
                self.dim
            ));
        }
        let cls = ctx.param(self.cls);
        let pos = ctx.param(self.pos);
        let with_cls = ctx.graph.prepend_row(tokens, cls)?;
        ctx.graph.add(with_cls, pos)
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.pos, self.cls]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Mode;

    fn build(k: usize, d: usize) -> (ParamStore<f64>, PositionClassEmbedding) {
        let mut store = ParamStore::new();
        let mut rng = RngState::new(1);
        let e = PositionClassEmbedding::new(&mut store, &mut rng, "emb", k, d).unwrap();
        (store, e)
    }

    #[test]
    fn zero_tables_prepend_a_zero_token() {
        let (mut store, e) = build(2, 3);
        store.set_value(e.pos, Tensor::zeros([3, 3])).unwrap();
        store.set_value(e.cls, Tensor::zeros([1, 3])).unwrap();
        let mut rng = RngState::new(0);
        let mut ctx = Ctx::new(&store, Mode::Eval, &mut rng);
        let t = ctx.input(Tensor::from_f64([1, 2, 3], &[1., 2., 3., 4., 5., 6.]).unwrap());
        let y = e.forward(&mut ctx, t).unwrap();
        assert_eq!(ctx.value(y).data(), &[0., 0., 0., 1., 2., 3., 4., 5., 6.]);
    }

    #[test]
    fn position_rows_add_per_token() {
        let (mut store, e) = build(2, 2);
        store
            .set_value(e.pos, Tensor::from_f64([3, 2], &[0., 0., 1., 1., 2., 2.]).unwrap())
            .unwrap();
        store.set_value(e.cls, Tensor::zeros([1, 2])).unwrap();
        let mut rng = RngState::new(0);
        let mut ctx = Ctx::new(&store, Mode::Eval, &mut rng);
        let t = ctx.input(Tensor::ones([1, 2, 2]));
        let y = e.forward(&mut ctx, t).unwrap();
        assert_eq!(ctx.value(y).data(), &[0., 0., 2., 2., 3., 3.]);
    }

    #[test]
    fn gradients_reach_both_tables() {
        let (store, e) = build(3, 2);
        let mut rng = RngState::new(0);
        let mut ctx = Ctx::new(&store, Mode::Eval, &mut rng);
        let t = ctx.input(Tensor::ones([2, 3, 2]));
        let y = e.forward(&mut ctx, t).unwrap();
        let tok0 = ctx.graph.narrow(y, 1, 0, 1).unwrap();
        let sq = ctx.graph.mul(tok0, tok0).unwrap();
        let loss = ctx.graph.sum(sq).unwrap();
        let grads = ctx.graph.backward(loss).unwrap();
        assert!(grads.param(e.cls).unwrap().data().iter().any(|&g| g != 0.0));
        assert!(grads.param(e.pos).unwrap().data()[..2].iter().any(|&g| g != 0.0));
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let (store, e) = build(3, 2);
        let mut rng = RngState::new(0);
        let mut ctx = Ctx::new(&store, Mode::Eval, &mut rng);
        let t = ctx.input(Tensor::ones([1, 4, 2]));
        assert!(matches!(e.forward(&mut ctx, t), Err(crate::Error::Dimension(_))));
    }
}
