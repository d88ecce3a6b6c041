use proptest::prelude::*;
use umsnet::layers::{Ctx, Mode};
use umsnet::lsr::{BlockOptions, LsrBlock, LsrStack, StageConfig};
use umsnet::numerics::{ParamStore, RngState, Tensor};

fn random(shape: &[usize], rng: &mut RngState) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal()).collect()).unwrap()
}

fn block(channels: usize, survival: f64, layer_scale: f64, seed: u64) -> (LsrBlock, ParamStore<f64>) {
    let opts = BlockOptions {
        layer_scale_init: layer_scale,
        ..BlockOptions::default()
    };
    let mut store = ParamStore::new();
    let mut rng = RngState::new(seed);
    let b = LsrBlock::new(&mut store, &mut rng, "b", channels, survival, &opts).unwrap();
    (b, store)
}

fn run(b: &LsrBlock, store: &ParamStore<f64>, x: &Tensor<f64>, mode: Mode, rng: &mut RngState) -> Tensor<f64> {
    let mut ctx = Ctx::new(store, mode, rng);
    let v = ctx.input(x.clone());
    let y = b.forward(&mut ctx, v).unwrap();
    ctx.value(y).clone()
}

#[test]
fn zero_layer_scale_is_a_bitwise_identity() {
    let mut shapes = RngState::new(2024);
    for case in 0..100 {
        let batch = 1 + shapes.next_u64() as usize % 4;
        let channels = 1 + shapes.next_u64() as usize % 12;
        let len = 1 + shapes.next_u64() as usize % 16;
        let survival = shapes.uniform_in(0.1, 1.0);
        let (b, store) = block(channels, survival, 0.0, case);
        let x = random(&[batch, channels, len], &mut shapes);
        for mode in [Mode::Train, Mode::Eval] {
            let y = run(&b, &store, &x, mode, &mut RngState::new(case));
            let same = x.data().iter().zip(y.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            assert!(same, "case {case} shape {:?} mode {mode:?}", x.shape());
        }
    }
}

#[test]
fn residual_keep_frequency_matches_survival_probability() {
    const DRAWS: usize = 10_000;
    for p in [0.5, 0.9, 1.0] {
        let (b, store) = block(2, p, 1.0, 7);
        let x = random(&[DRAWS, 2, 3], &mut RngState::new(1));
        let y = run(&b, &store, &x, Mode::Train, &mut RngState::new(3));
        let kept = x
            .data()
            .chunks(6)
            .zip(y.data().chunks(6))
            .filter(|(a, b)| a != b)
            .count();
        let freq = kept as f64 / DRAWS as f64;
        let bound = 3.0 * (p * (1.0 - p) / DRAWS as f64).sqrt();
        assert!((freq - p).abs() <= bound, "p={p}: kept {freq}, bound {bound}");
    }
}

#[test]
fn eval_mode_ignores_the_random_stream() {
    let (b, store) = block(4, 0.5, 0.3, 11);
    let x = random(&[3, 4, 6], &mut RngState::new(12));
    let a = run(&b, &store, &x, Mode::Eval, &mut RngState::new(1));
    let c = run(&b, &store, &x, Mode::Eval, &mut RngState::new(999));
    assert!(a.data().iter().zip(c.data()).all(|(u, v)| u.to_bits() == v.to_bits()));
}

#[test]
fn default_init_stays_near_identity() {
    let (b, store) = block(8, 1.0, BlockOptions::default().layer_scale_init, 5);
    let x = random(&[2, 8, 10], &mut RngState::new(6));
    let y = run(&b, &store, &x, Mode::Eval, &mut RngState::new(0));
    let diff = x
        .data()
        .iter()
        .zip(y.data())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    assert!(diff <= 1e-3 * x.max_abs());
}

#[test]
fn transparent_blocks_leave_stem_and_downsamples() {
    let opts = BlockOptions {
        layer_scale_init: 0.0,
        ..BlockOptions::default()
    };
    let config = StageConfig {
        depths: [2, 2, 2, 2],
        widths: [2, 3, 4, 5],
        input_channels: 3,
    };
    let mut store = ParamStore::<f64>::new();
    let stack = LsrStack::new(&mut store, &mut RngState::new(0), "s", config, 8, &opts).unwrap();
    let x = random(&[2, 3, 8], &mut RngState::new(1));
    let mut rng = RngState::new(2);
    let mut ctx = Ctx::new(&store, Mode::Eval, &mut rng);
    let v = ctx.input(x.clone());
    let full = stack.forward(&mut ctx, v).unwrap();
    let mut h = stack.stem.forward(&mut ctx, v).unwrap();
    for d in &stack.downsamples {
        h = d.forward(&mut ctx, h).unwrap();
    }
    assert_eq!(ctx.value(full).shape(), &[2, 5, 1]);
    assert_eq!(ctx.value(full), ctx.value(h));
}

#[test]
fn too_short_input_is_rejected_at_construction() {
    let config = StageConfig {
        depths: [1, 1, 1, 1],
        widths: [2, 2, 2, 2],
        input_channels: 1,
    };
    let mut store = ParamStore::<f64>::new();
    let r = LsrStack::new(
        &mut store,
        &mut RngState::new(0),
        "s",
        config,
        4,
        &BlockOptions::default(),
    );
    assert!(matches!(r, Err(umsnet::Error::Config(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn block_preserves_shape(batch in 1usize..4, channels in 1usize..9, len in 1usize..12, train in any::<bool>()) {
        let (b, store) = block(channels, 0.7, 0.2, 3);
        let x = random(&[batch, channels, len], &mut RngState::new(4));
        let mode = if train { Mode::Train } else { Mode::Eval };
        let y = run(&b, &store, &x, mode, &mut RngState::new(5));
        prop_assert_eq!(y.shape(), x.shape());
    }
}
