//! Finite-difference checks of every layer in 64-bit precision.

use umsnet::layers::{
    AttentionSpec, BatchNorm1d, Conv1d, Conv1dSpec, Ctx, LayerNorm, Linear, Mode, MultiHeadAttention, NormSpec,
    PositionClassEmbedding,
};
use umsnet::lsr::{BlockOptions, Downsample, LsrBlock};
use umsnet::model::{build_model, DatasetProfile, ModelConfig, Variant};
use umsnet::numerics::{grad_check, GradCheckConfig, Graph, ParamStore, RngState, Tensor, Var};

const LAYER_TOL: f64 = 1e-5;
const END_TO_END_TOL: f64 = 1e-4;

fn random(shape: &[usize], rng: &mut RngState) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal()).collect()).unwrap()
}

/// A fixed random projection of `y` to a scalar, so every output element
/// contributes a distinct weight.
fn project(g: &mut Graph<f64>, y: Var) -> Var {
    let shape = g.shape(y).to_vec();
    let mut rng = RngState::new(99);
    let w = g.input(random(&shape, &mut rng));
    let p = g.mul(y, w).unwrap();
    g.sum(p).unwrap()
}

/// Checks parameters and the input together: the input is registered as a
/// trainable parameter named `input`.
fn check<B>(mut store: ParamStore<f64>, input_shape: &[usize], mode: Mode, body: B) -> f64
where
    B: Fn(&mut Ctx<'_, f64>, Var) -> umsnet::Result<Var>,
{
    let mut rng = RngState::new(5);
    let x = store.add("input", random(input_shape, &mut rng), true).unwrap();
    let report = grad_check(&mut store, GradCheckConfig::default(), |s| {
        let mut r = RngState::new(17);
        let mut ctx = Ctx::new(s, mode, &mut r);
        let xv = ctx.param(x);
        let y = body(&mut ctx, xv)?;
        let (mut g, _) = ctx.into_parts();
        let l = project(&mut g, y);
        Ok((g, l))
    })
    .unwrap();
    assert!(report.checked > 0);
    report.max_rel_error
}

#[test]
fn dense_convolution_with_stride_and_padding() {
    let mut store = ParamStore::new();
    let mut rng = RngState::new(1);
    let conv = Conv1d::new(&mut store, &mut rng, "c", Conv1dSpec::new(3, 4, 3).stride(2).padding(1)).unwrap();
    let err = check(store, &[2, 3, 7], Mode::Train, |ctx, x| conv.forward(ctx, x));
    assert!(err < LAYER_TOL, "{err}");
}

#[test]
fn grouped_convolution() {
    let mut store = ParamStore::new();
    let mut rng = RngState::new(2);
    let conv = Conv1d::new(&mut store, &mut rng, "c", Conv1dSpec::new(4, 4, 3).padding(1).groups(4)).unwrap();
    let err = check(store, &[2, 4, 5], Mode::Train, |ctx, x| conv.forward(ctx, x));
    assert!(err < LAYER_TOL, "{err}");
    let mut store = ParamStore::new();
    let conv = Conv1d::new(&mut store, &mut rng, "c", Conv1dSpec::new(4, 6, 1).groups(2)).unwrap();
    let err = check(store, &[2, 4, 5], Mode::Train, |ctx, x| conv.forward(ctx, x));
    assert!(err < LAYER_TOL, "{err}");
}

#[test]
fn linear_map() {
    let mut store = ParamStore::new();
    let mut rng = RngState::new(3);
    let lin = Linear::new(&mut store, &mut rng, "l", 5, 3, true).unwrap();
    let err = check(store, &[2, 4, 5], Mode::Train, |ctx, x| lin.forward(ctx, x));
    assert!(err < LAYER_TOL, "{err}");
}

#[test]
fn batch_norm_in_training_mode() {
    let mut store = ParamStore::new();
    let bn = BatchNorm1d::new(&mut store, "bn", NormSpec::batch(3)).unwrap();
    let err = check(store, &[4, 3, 5], Mode::Train, |ctx, x| bn.forward(ctx, x));
    assert!(err < LAYER_TOL, "{err}");
}

#[test]
fn batch_norm_in_eval_mode() {
    let mut store = ParamStore::new();
    let bn = BatchNorm1d::new(&mut store, "bn", NormSpec::batch(3)).unwrap();
    let err = check(store, &[2, 3, 4], Mode::Eval, |ctx, x| bn.forward(ctx, x));
    assert!(err < LAYER_TOL, "{err}");
}

#[test]
fn layer_norm() {
    let mut store = ParamStore::new();
    let ln = LayerNorm::new(&mut store, "ln", NormSpec::layer(6)).unwrap();
    let err = check(store, &[2, 3, 6], Mode::Train, |ctx, x| ln.forward(ctx, x));
    assert!(err < LAYER_TOL, "{err}");
}

#[test]
fn gelu_and_softmax() {
    let err = check(ParamStore::new(), &[3, 5], Mode::Train, |ctx, x| ctx.graph.gelu(x));
    assert!(err < LAYER_TOL, "gelu {err}");
    let err = check(ParamStore::new(), &[3, 5], Mode::Train, |ctx, x| ctx.graph.softmax(x));
    assert!(err < LAYER_TOL, "softmax {err}");
}

#[test]
fn cross_entropy_loss() {
    let mut store = ParamStore::new();
    let mut rng = RngState::new(4);
    let x = store.add("logits", random(&[4, 5], &mut rng), true).unwrap();
    let report = grad_check(&mut store, GradCheckConfig::default(), |s| {
        let mut g = Graph::new();
        let v = g.param(s, x);
        let l = g.cross_entropy(v, &[0, 4, 2, 2])?;
        Ok((g, l))
    })
    .unwrap();
    assert!(report.max_rel_error < LAYER_TOL, "{report:?}");
}

#[test]
fn multi_head_attention() {
    let mut store = ParamStore::new();
    let mut rng = RngState::new(6);
    let mha = MultiHeadAttention::new(&mut store, &mut rng, "attn", AttentionSpec::new(6, 2).unwrap()).unwrap();
    let err = check(store, &[2, 4, 6], Mode::Train, |ctx, x| mha.forward(ctx, x));
    assert!(err < LAYER_TOL, "{err}");
}

#[test]
fn position_and_class_embedding() {
    let mut store = ParamStore::new();
    let mut rng = RngState::new(7);
    let emb = PositionClassEmbedding::new(&mut store, &mut rng, "embed", 3, 4).unwrap();
    let err = check(store, &[2, 3, 4], Mode::Train, |ctx, x| emb.forward(ctx, x));
    assert!(err < LAYER_TOL, "{err}");
}

#[test]
fn lsr_block_with_stochastic_depth() {
    let opts = BlockOptions {
        layer_scale_init: 0.5,
        ..BlockOptions::default()
    };
    let mut store = ParamStore::new();
    let mut rng = RngState::new(8);
    let block = LsrBlock::new(&mut store, &mut rng, "b", 3, 0.5, &opts).unwrap();
    let err = check(store, &[4, 3, 5], Mode::Train, |ctx, x| block.forward(ctx, x));
    assert!(err < LAYER_TOL, "{err}");
}

#[test]
fn downsample_layer() {
    let mut store = ParamStore::new();
    let mut rng = RngState::new(9);
    let ds = Downsample::new(&mut store, &mut rng, "ds", 3, 5).unwrap();
    let err = check(store, &[2, 3, 8], Mode::Train, |ctx, x| ds.forward(ctx, x));
    assert!(err < LAYER_TOL, "{err}");
}

#[test]
fn tiny_model_end_to_end() {
    let mut cfg = ModelConfig::preset(Variant::A, &DatasetProfile::hhar(8), 3)
        .unwrap()
        .with_widths([2, 2, 2, 8], [2, 2, 2, 2], 4, 2);
    cfg.dropout = 0.0;
    cfg.block.layer_scale_init = 0.5;
    cfg.block.final_survival = 1.0;
    let (model, mut store) = build_model::<f64>(cfg, 3).unwrap();
    let mut rng = RngState::new(10);
    let inputs: Vec<Tensor<f64>> = model
        .config
        .sensors
        .iter()
        .map(|s| random(&[2 * 3, s.channels, s.samples_per_slice], &mut rng))
        .collect();
    // Near-init embeddings feed a 4-wide layer norm, which makes the loss
    // sharply curved in them; central-difference truncation error scales
    // with ε², so a smaller step is needed than for single layers.
    let config = GradCheckConfig {
        epsilon: 1e-6,
        ..GradCheckConfig::default()
    };
    let started = std::time::Instant::now();
    let report = grad_check(&mut store, config, |s| {
        let mut r = RngState::new(0);
        let mut ctx = Ctx::new(s, Mode::Train, &mut r);
        let logits = model.forward_tensors(&mut ctx, &inputs)?;
        let (mut g, _) = ctx.into_parts();
        let l = g.cross_entropy(logits, &[1, 4])?;
        Ok((g, l))
    })
    .unwrap();
    assert!(report.max_rel_error < END_TO_END_TOL, "{report:?}");
    assert!(started.elapsed().as_secs() < 120);
}
