use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ConfusionMatrix, CostReport};
use crate::data::{Batch, SlicedDataset, SlicedSample};
use crate::error::{config_err, contract_err, Result};
use crate::layers::{Ctx, Mode};
use crate::model::{ModelConfig, Umsnet};
use crate::numerics::{Float, ParamStore, RngState, Tensor};

/// Warm-up passes run before timed ones.
pub const TIMING_WARMUP: usize = 2;
/// Fewest timed passes accepted by [`time_inference`].
pub const MIN_TIMING_REPEATS: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class_f1: Vec<f64>,
    pub confusion: Vec<Vec<u64>>,
    pub num_samples: usize,
    pub params: u64,
    /// Multiply-accumulates for one window.
    pub mult_adds: u64,
    /// Median single-window eval latency, when timing was requested.
    pub time_ms_median: Option<f64>,
    pub hardware: Option<String>,
    /// Hash of the model configuration.
    pub fingerprint: String,
}

/// First 16 hex digits of the SHA-256 of the configuration's JSON form.
pub fn fingerprint(config: &ModelConfig) -> String {
    let json = serde_json::to_vec(config).expect("model config serializes");
    let digest = Sha256::digest(&json);
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

pub fn hardware_descriptor() -> String {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!(
        "{}-{} ({threads} hardware threads, single-threaded kernels)",
        std::env::consts::ARCH,
        std::env::consts::OS
    )
}

/// Verifies that a dataset's geometry is the one the model was built for.
pub fn check_geometry(config: &ModelConfig, data: &SlicedDataset) -> Result<()> {
    if data.sensors != config.sensors {
        return Err(config_err!(
            "data sensors {:?} do not match model sensors {:?}",
            data.sensors,
            config.sensors
        ));
    }
    if data.slices != config.slices {
        return Err(config_err!(
            "data has {} slices per window, model expects {}",
            data.slices,
            config.slices
        ));
    }
    if data.num_classes() != config.num_classes {
        return Err(config_err!(
            "data has {} classes, model expects {}",
            data.num_classes(),
            config.num_classes
        ));
    }
    Ok(())
}

fn argmax<F: Float>(row: &[F]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Eval-mode arg-max predictions, in sample order.
pub fn predict<F: Float>(
    model: &Umsnet,
    store: &ParamStore<F>,
    meta: &SlicedDataset,
    samples: &[SlicedSample],
    batch_size: usize,
) -> Result<Vec<usize>> {
    let mut rng = RngState::new(0);
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&SlicedSample> = chunk.iter().collect();
        let batch = Batch::<F>::from_samples(meta, &refs)?;
        let mut ctx = Ctx::new(store, Mode::Eval, &mut rng);
        let logits = model.forward_tensors(&mut ctx, &batch.sensors)?;
        let v = ctx.value(logits);
        let c = v.shape()[1];
        out.extend(v.data().chunks(c).map(argmax));
    }
    Ok(out)
}

/// Median wall-clock milliseconds of `f` over `repeats` timed calls, after
/// [`TIMING_WARMUP`] untimed ones.
pub fn time_inference(repeats: usize, mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    if repeats < MIN_TIMING_REPEATS {
        return Err(contract_err!(
            "timing needs at least {MIN_TIMING_REPEATS} repeats, got {repeats}"
        ));
    }
    for _ in 0..TIMING_WARMUP {
        f()?;
    }
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        f()?;
        times.push(start.elapsed().as_secs_f64() * 1e3);
    }
    times.sort_by(f64::total_cmp);
    let mid = times.len() / 2;
    Ok(if times.len() % 2 == 1 {
        times[mid]
    } else {
        0.5 * (times[mid - 1] + times[mid])
    })
}

/// Median latency of a single-window eval forward pass on zero input.
pub fn time_model<F: Float>(model: &Umsnet, store: &ParamStore<F>, repeats: usize) -> Result<f64> {
    let cfg = &model.config;
    let inputs: Vec<Tensor<F>> = cfg
        .sensors
        .iter()
        .map(|s| Tensor::zeros([cfg.slices, s.channels, s.samples_per_slice]))
        .collect();
    let mut rng = RngState::new(0);
    time_inference(repeats, || {
        let mut ctx = Ctx::new(store, Mode::Eval, &mut rng);
        model.forward_tensors(&mut ctx, &inputs).map(|_| ())
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvalOptions {
    pub batch_size: usize,
    /// Timed passes; zero skips timing so the report stays deterministic.
    pub time_repeats: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            batch_size: 64,
            time_repeats: 0,
        }
    }
}

/// Scores `samples` and attaches the model's cost figures.
pub fn evaluate<F: Float>(
    model: &Umsnet,
    store: &ParamStore<F>,
    meta: &SlicedDataset,
    samples: &[SlicedSample],
    options: EvalOptions,
) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(contract_err!("no samples to evaluate"));
    }
    check_geometry(&model.config, meta)?;
    let predictions = predict(model, store, meta, samples, options.batch_size)?;
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let cm = ConfusionMatrix::from_predictions(&predictions, &labels, model.config.num_classes)?;
    let per_class_f1 = cm.per_class_f1();
    let cost: CostReport = model.cost(store, 1)?;
    let (time_ms_median, hardware) = if options.time_repeats > 0 {
        (
            Some(time_model(model, store, options.time_repeats)?),
            Some(hardware_descriptor()),
        )
    } else {
        (None, None)
    };
    Ok(MetricsReport {
        accuracy: cm.accuracy(),
        macro_f1: per_class_f1.iter().sum::<f64>() / per_class_f1.len() as f64,
        per_class_f1,
        confusion: cm.rows(),
        num_samples: samples.len(),
        params: cost.params,
        mult_adds: cost.mult_adds,
        time_ms_median,
        hardware,
        fingerprint: fingerprint(&model.config),
    })
}
