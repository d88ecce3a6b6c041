#![allow(dead_code)]

use umsnet::data::{slice_recordings, synth_generate, SlicedDataset, SynthConfig, WindowConfig};
use umsnet::model::{DatasetProfile, ModelConfig, Variant};

/// Small widths that keep every stack valid at 8 samples per slice.
pub fn tiny_config(variant: Variant, slices: usize, classes: usize) -> ModelConfig {
    let mut cfg = ModelConfig::preset(variant, &DatasetProfile::hhar(8), slices)
        .unwrap()
        .with_widths([8, 8, 16, 16], [8, 8, 16, 16], 16, 2);
    cfg.num_classes = classes;
    cfg
}

pub fn synth_dataset(users: usize, classes: usize, seconds: f64, window: f64, seed: u64) -> SlicedDataset {
    let cfg = SynthConfig {
        num_users: users,
        num_classes: classes,
        seconds_per_segment: seconds,
        seed,
        ..SynthConfig::default()
    };
    let recs = synth_generate(&cfg).unwrap();
    slice_recordings(&recs, &WindowConfig::with_window(window)).unwrap()
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}
