use proptest::prelude::*;
use umsnet::evaluation::{count_mult_adds, count_params, LayerCost};
use umsnet::layers::{AttentionSpec, Conv1d, Conv1dSpec, Linear};
use umsnet::lsr::{BlockOptions, LsrBlock};
use umsnet::model::{build_model, DatasetProfile, ModelConfig, Variant};
use umsnet::numerics::{ParamStore, RngState};

fn conv_row(spec: Conv1dSpec, batch: usize, len: usize) -> LayerCost {
    let mut store = ParamStore::<f32>::new();
    let conv = Conv1d::new(&mut store, &mut RngState::new(0), "c", spec).unwrap();
    LayerCost::conv(&store, &conv, batch, len).unwrap()
}

#[test]
fn linear_three_to_two() {
    let mut store = ParamStore::<f32>::new();
    let l = Linear::new(&mut store, &mut RngState::new(0), "l", 3, 2, true).unwrap();
    let row = LayerCost::linear(&store, &l, 1);
    assert_eq!((row.params, row.mult_adds), (3 * 2 + 2, 3 * 2));
}

#[test]
fn dense_convolution() {
    // T_out = 6 − 3 + 1 = 4
    let row = conv_row(Conv1dSpec::new(2, 2, 3), 1, 6);
    assert_eq!(row.mult_adds, 2 * 4 * 2 * 3);
    assert_eq!(row.params, 2 * 2 * 3 + 2);
}

#[test]
fn strided_depthwise_convolution() {
    // T_out = (9 + 2 − 3)/2 + 1 = 5
    let row = conv_row(Conv1dSpec::new(4, 4, 3).padding(1).stride(2).groups(4), 2, 9);
    assert_eq!(row.mult_adds, 2 * 4 * 5 * 3);
}

#[test]
fn attention_layer() {
    let spec = AttentionSpec::new(4, 2).unwrap();
    // four D×D projections per position plus QKᵀ and weights·V
    assert_eq!(spec.mult_adds(2, 3), 2 * (4 * 3 * 4 * 4 + 2 * 3 * 3 * 4));
}

#[test]
fn lsr_block() {
    let mut store = ParamStore::<f32>::new();
    let b = LsrBlock::new(&mut store, &mut RngState::new(0), "b", 2, 1.0, &BlockOptions::default()).unwrap();
    let mut rows = Vec::new();
    b.cost(&store, 1, 4, &mut rows).unwrap();
    let (c, t) = (2, 4);
    let dw = c * t * 3;
    let pw1 = 4 * c * t * c;
    let pw2 = c * t * 4 * c;
    assert_eq!(rows.iter().map(|r| r.mult_adds).sum::<u64>(), (dw + pw1 + pw2) as u64);
    let params = (c * 3 + c) + 2 * c + (4 * c * c + 4 * c) + (c * 4 * c + c) + c;
    assert_eq!(rows.iter().map(|r| r.params).sum::<u64>(), params as u64);
    assert_eq!(count_params(&store), params as u64);
}

#[test]
fn depthwise_weights_are_one_over_c_of_dense() {
    for c in [2usize, 8, 16, 64] {
        let count = |groups| {
            let mut store = ParamStore::<f32>::new();
            let spec = Conv1dSpec::new(c, c, 3).padding(1).groups(groups).bias(false);
            Conv1d::new(&mut store, &mut RngState::new(0), "c", spec).unwrap();
            count_params(&store)
        };
        let (grouped, dense) = (count(c), count(1));
        assert_eq!(grouped * c as u64, dense, "C={c}");
        assert_eq!(grouped as f64 / dense as f64, 1.0 / c as f64);
        let macs = |groups| conv_row(Conv1dSpec::new(c, c, 3).padding(1).groups(groups), 1, 8).mult_adds;
        assert_eq!(macs(c) * c as u64, macs(1));
    }
}

fn tiny(variant: Variant) -> ModelConfig {
    ModelConfig::preset(variant, &DatasetProfile::hhar(8), 3)
        .unwrap()
        .with_widths([4, 4, 8, 8], [4, 4, 8, 8], 8, 2)
}

#[test]
fn model_breakdown_adds_up() {
    let (model, store) = build_model::<f32>(tiny(Variant::B), 0).unwrap();
    let report = model.cost(&store, 1).unwrap();
    assert_eq!(report.params, count_params(&store));
    assert_eq!(report.params, report.layers.iter().map(|r| r.params).sum::<u64>());
    assert_eq!(count_mult_adds(&model, &store, 1).unwrap(), report.mult_adds);
    assert!(count_mult_adds(&model, &store, 0).is_err());
}

#[test]
fn smaller_variants_cost_less() {
    let macs: Vec<u64> = [Variant::A, Variant::B, Variant::C]
        .into_iter()
        .map(|v| {
            let (m, s) = build_model::<f32>(tiny(v), 0).unwrap();
            count_mult_adds(&m, &s, 1).unwrap()
        })
        .collect();
    assert!(macs[0] < macs[1] && macs[1] < macs[2]);
}

proptest! {
    #[test]
    fn mult_adds_scale_linearly_in_batch(batch in 1usize..6) {
        let (m, s) = build_model::<f32>(tiny(Variant::A), 0).unwrap();
        prop_assert_eq!(count_mult_adds(&m, &s, batch).unwrap(), batch as u64 * count_mult_adds(&m, &s, 1).unwrap());
    }

    #[test]
    fn conv_mult_adds_scale_linearly_in_output_length(cin in 1usize..5, cout in 1usize..5, k in 1usize..4, t in 1usize..9) {
        let spec = Conv1dSpec::new(cin, cout, k).padding(k / 2);
        let len = t + k - 1 - 2 * (k / 2);
        prop_assume!(spec.output_len(len).unwrap() == t);
        let one = spec.mult_adds(1, len).unwrap();
        prop_assert_eq!(one, (cout * t * cin * k) as u64);
    }
}
