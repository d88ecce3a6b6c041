use proptest::prelude::*;
use umsnet::layers::{AttentionSpec, Conv1d, Conv1dSpec, Ctx, Linear, Mode, MultiHeadAttention};
use umsnet::numerics::{ParamStore, RngState, Tensor};

fn random(shape: &[usize], rng: &mut RngState) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal()).collect()).unwrap()
}

fn conv_out(conv: &Conv1d, store: &ParamStore<f64>, x: &Tensor<f64>) -> Tensor<f64> {
    let mut rng = RngState::new(0);
    let mut ctx = Ctx::new(store, Mode::Eval, &mut rng);
    let v = ctx.input(x.clone());
    let y = conv.forward(&mut ctx, v).unwrap();
    ctx.value(y).clone()
}

#[test]
fn depthwise_output_channel_sees_only_its_input_channel() {
    let c = 5;
    let mut store = ParamStore::new();
    let conv = Conv1d::new(
        &mut store,
        &mut RngState::new(1),
        "dw",
        Conv1dSpec::new(c, c, 3).padding(1).groups(c),
    )
    .unwrap();
    let x = random(&[2, c, 7], &mut RngState::new(2));
    let base = conv_out(&conv, &store, &x);
    for j in 0..c {
        let mut xp = x.clone();
        for b in 0..2 {
            for t in 0..7 {
                let v = xp.at(&[b, j, t]);
                xp.set(&[b, j, t], v + 1.0);
            }
        }
        let y = conv_out(&conv, &store, &xp);
        for b in 0..2 {
            for o in 0..c {
                let changed = (0..7).any(|t| y.at(&[b, o, t]) != base.at(&[b, o, t]));
                assert_eq!(changed, o == j, "perturbing {j} changed {o}");
            }
        }
    }
}

#[test]
fn attention_rows_sum_to_one() {
    let mut store = ParamStore::new();
    let mut rng = RngState::new(3);
    let mha = MultiHeadAttention::new(&mut store, &mut rng, "a", AttentionSpec::new(8, 2).unwrap()).unwrap();
    let x = random(&[3, 5, 8], &mut rng);
    let mut ctx = Ctx::new(&store, Mode::Eval, &mut rng);
    let v = ctx.input(x);
    let (_, w) = mha.forward_with_weights(&mut ctx, v).unwrap();
    let w = ctx.value(w);
    let len = *w.shape().last().unwrap();
    assert_eq!(len, 5);
    for row in w.data().chunks(len) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn heads_must_divide_model_width() {
    assert!(AttentionSpec::new(6, 4).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_output_shape_follows_the_spec(
        batch in 1usize..3,
        group_in in 1usize..4,
        group_out in 1usize..4,
        groups in 1usize..4,
        kernel in 1usize..5,
        stride in 1usize..3,
        padding in 0usize..3,
        len in 1usize..12,
    ) {
        let spec = Conv1dSpec::new(group_in * groups, group_out * groups, kernel)
            .stride(stride)
            .padding(padding)
            .groups(groups);
        let expected = (len + 2 * padding).checked_sub(kernel).map(|n| n / stride + 1);
        prop_assert_eq!(spec.output_len(len).ok(), expected);
        if let Some(t_out) = expected {
            let mut store = ParamStore::new();
            let conv = Conv1d::new(&mut store, &mut RngState::new(0), "c", spec).unwrap();
            let x = random(&[batch, spec.in_channels, len], &mut RngState::new(1));
            let y = conv_out(&conv, &store, &x);
            prop_assert_eq!(y.shape(), &[batch, spec.out_channels, t_out]);
        }
    }

    #[test]
    fn linear_keeps_leading_axes(lead in prop::collection::vec(1usize..4, 1..3), fin in 1usize..6, fout in 1usize..6) {
        let mut store = ParamStore::new();
        let mut rng = RngState::new(0);
        let lin = Linear::new(&mut store, &mut rng, "l", fin, fout, true).unwrap();
        let mut shape = lead.clone();
        shape.push(fin);
        let x = random(&shape, &mut rng);
        let mut ctx = Ctx::new(&store, Mode::Eval, &mut rng);
        let v = ctx.input(x);
        let y = lin.forward(&mut ctx, v).unwrap();
        let mut expected = lead;
        expected.push(fout);
        prop_assert_eq!(ctx.value(y).shape(), expected.as_slice());
    }
}
