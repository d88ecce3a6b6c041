//! The full network: one LSR stack per sensor applied to every slice, sensor
//! fusion, a shared multi-sensor LSR stack, and a class-token transformer
//! encoder over the slice sequence.
//!
//! Shapes through one forward pass, for `B` windows of `K` slices, `N` sensors
//! and `S` samples per slice:
//!
//! ```text
//! sensor i   (B·K, ch_i, S)  ─ single stack i ─▶ (B·K, C_s, S/8)
//! fuse       N × (B·K, C_s, S/8)                ─▶ (B·K, N, C_s·S/8)
//! multi      (B·K, N, M)     ─ multi stack ─▶ (B·K, C_m, M/8) ─ mean ─▶ (B·K, C_m)
//! project    (B·K, C_m)      ─ linear ─▶ (B, K, D)
//! encoder    (B, K+1, D)     ─ L × pre-norm layer ─▶ LN ─▶ token 0 ─▶ head ─▶ (B, classes)
//! ```

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, dim_err, Error, Result};
use crate::evaluation::{CostReport, LayerCost};
use crate::layers::{
    dropout, AttentionSpec, Ctx, LayerNorm, Linear, MultiHeadAttention, NormSpec, PositionClassEmbedding,
};
use crate::lsr::{BlockOptions, LsrStack, StageConfig, STAGES};
use crate::numerics::{Float, ParamId, ParamStore, RngState, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSpec {
    pub name: String,
    pub channels: usize,
    pub samples_per_slice: usize,
}

impl SensorSpec {
    pub fn new(name: &str, channels: usize, samples_per_slice: usize) -> Self {
        SensorSpec {
            name: name.to_string(),
            channels,
            samples_per_slice,
        }
    }
}

/// Depth presets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    A,
    B,
    C,
    Custom,
}

impl Variant {
    /// `(stage depths, encoder depth)`, shared by the single- and multi-sensor stacks.
    pub fn depths(self) -> Option<([usize; STAGES], usize)> {
        match self {
            Variant::A => Some(([2, 2, 2, 2], 3)),
            Variant::B => Some(([2, 2, 6, 2], 6)),
            Variant::C => Some(([2, 2, 18, 2], 6)),
            Variant::Custom => None,
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "A" => Ok(Variant::A),
            "B" => Ok(Variant::B),
            "C" => Ok(Variant::C),
            "CUSTOM" => Ok(Variant::Custom),
            _ => Err(config_err!("unknown variant {s:?} (expected A, B, C or custom)")),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::A => "A",
            Variant::B => "B",
            Variant::C => "C",
            Variant::Custom => "custom",
        })
    }
}

/// Depths and widths of one four-stage stack; the input channel count comes
/// from the surrounding model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageDims {
    pub depths: [usize; STAGES],
    pub widths: [usize; STAGES],
}

impl StageDims {
    pub fn with_input(self, input_channels: usize) -> StageConfig {
        StageConfig {
            depths: self.depths,
            widths: self.widths,
            input_channels,
        }
    }
}

pub const SINGLE_WIDTHS: [usize; STAGES] = [32, 64, 128, 256];
pub const MULTI_WIDTHS: [usize; STAGES] = [64, 128, 256, 512];

/// Sensor layout and class count of a dataset.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetProfile {
    pub name: String,
    pub sensors: Vec<SensorSpec>,
    pub num_classes: usize,
}

impl DatasetProfile {
    /// Accelerometer and gyroscope, six activities.
    pub fn hhar(samples_per_slice: usize) -> Self {
        DatasetProfile {
            name: "hhar".into(),
            sensors: vec![
                SensorSpec::new("acc", 3, samples_per_slice),
                SensorSpec::new("gyro", 3, samples_per_slice),
            ],
            num_classes: 6,
        }
    }

    /// Accelerometer, gyroscope, magnetometer and two ECG leads, seven activities.
    pub fn mhealth(samples_per_slice: usize) -> Self {
        DatasetProfile {
            name: "mhealth".into(),
            sensors: vec![
                SensorSpec::new("acc", 3, samples_per_slice),
                SensorSpec::new("gyro", 3, samples_per_slice),
                SensorSpec::new("mag", 3, samples_per_slice),
                SensorSpec::new("ecg", 2, samples_per_slice),
            ],
            num_classes: 7,
        }
    }

    pub fn by_name(name: &str, samples_per_slice: usize) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "hhar" => Ok(Self::hhar(samples_per_slice)),
            "mhealth" => Ok(Self::mhealth(samples_per_slice)),
            _ => Err(config_err!(
                "unknown dataset profile {name:?} (expected hhar or mhealth)"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub sensors: Vec<SensorSpec>,
    pub single_stage: StageDims,
    pub multi_stage: StageDims,
    pub transformer_depth: usize,
    pub model_dim: usize,
    pub num_heads: usize,
    pub mlp_ratio: usize,
    pub dropout: f64,
    /// Slices per window.
    pub slices: usize,
    pub num_classes: usize,
    #[serde(default)]
    pub block: BlockOptions,
}

impl ModelConfig {
    /// Preset depths with the default widths and transformer size.
    pub fn preset(variant: Variant, profile: &DatasetProfile, slices: usize) -> Result<Self> {
        let (depths, transformer_depth) = variant
            .depths()
            .ok_or_else(|| config_err!("the custom variant has no preset depths"))?;
        let cfg = ModelConfig {
            variant,
            sensors: profile.sensors.clone(),
            single_stage: StageDims {
                depths,
                widths: SINGLE_WIDTHS,
            },
            multi_stage: StageDims {
                depths,
                widths: MULTI_WIDTHS,
            },
            transformer_depth,
            model_dim: 128,
            num_heads: 4,
            mlp_ratio: 4,
            dropout: 0.1,
            slices,
            num_classes: profile.num_classes,
            block: BlockOptions::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Replaces both stacks' widths and the transformer size, keeping depths.
    pub fn with_widths(
        mut self,
        single: [usize; STAGES],
        multi: [usize; STAGES],
        model_dim: usize,
        num_heads: usize,
    ) -> Self {
        self.single_stage.widths = single;
        self.multi_stage.widths = multi;
        self.model_dim = model_dim;
        self.num_heads = num_heads;
        self
    }

    /// Samples per slice, shared by every sensor.
    pub fn samples_per_slice(&self) -> usize {
        self.sensors.first().map_or(0, |s| s.samples_per_slice)
    }

    /// Length of each fused per-slice feature map.
    pub fn fused_len(&self) -> usize {
        self.single_stage.widths[STAGES - 1] * (self.samples_per_slice() >> (STAGES - 1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.sensors.is_empty() {
            return Err(config_err!("model has no sensors"));
        }
        let s = self.samples_per_slice();
        for (i, sensor) in self.sensors.iter().enumerate() {
            if sensor.channels == 0 {
                return Err(config_err!("sensor {:?} has no channels", sensor.name));
            }
            if sensor.samples_per_slice != s {
                return Err(config_err!(
                    "sensor {:?} has {} samples per slice, sensor {:?} has {s}",
                    sensor.name,
                    sensor.samples_per_slice,
                    self.sensors[0].name
                ));
            }
            if self.sensors[..i].iter().any(|o| o.name == sensor.name) {
                return Err(config_err!("duplicate sensor name {:?}", sensor.name));
            }
        }
        self.single_stage.with_input(1).validate(s)?;
        self.multi_stage
            .with_input(self.sensors.len())
            .validate(self.fused_len())?;
        if let Some((depths, encoder)) = self.variant.depths() {
            if self.single_stage.depths != depths
                || self.multi_stage.depths != depths
                || self.transformer_depth != encoder
            {
                return Err(config_err!(
                    "variant {} requires depths {depths:?} and encoder depth {encoder}",
                    self.variant
                ));
            }
        }
        if self.transformer_depth == 0 || self.slices == 0 || self.num_classes == 0 || self.mlp_ratio == 0 {
            return Err(config_err!(
                "transformer depth, slices, classes and MLP ratio must all be positive"
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(config_err!("dropout {} outside [0, 1)", self.dropout));
        }
        AttentionSpec::new(self.model_dim, self.num_heads)?;
        Ok(())
    }
}

/// Pre-norm encoder layer: `x + attn(ln1(x))`, then `x + mlp(ln2(x))`.
#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub norm1: LayerNorm,
    pub attention: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub mlp_in: Linear,
    pub mlp_out: Linear,
    pub dropout: f64,
}

impl EncoderLayer {
    fn new<F: Float>(store: &mut ParamStore<F>, rng: &mut RngState, name: &str, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.model_dim;
        let mut spec = AttentionSpec::new(d, cfg.num_heads)?;
        spec.dropout = cfg.dropout;
        Ok(EncoderLayer {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), NormSpec::layer(d))?,
            attention: MultiHeadAttention::new(store, rng, &format!("{name}.attn"), spec)?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), NormSpec::layer(d))?,
            mlp_in: Linear::new(store, rng, &format!("{name}.mlp_in"), d, cfg.mlp_ratio * d, true)?,
            mlp_out: Linear::new(store, rng, &format!("{name}.mlp_out"), cfg.mlp_ratio * d, d, true)?,
            dropout: cfg.dropout,
        })
    }

    pub fn forward<F: Float>(&self, ctx: &mut Ctx<'_, F>, x: Var) -> Result<Var> {
        let h = self.norm1.forward(ctx, x)?;
        let h = self.attention.forward(ctx, h)?;
        let h = dropout(ctx, h, self.dropout)?;
        let x = ctx.graph.add(x, h)?;
        let h = self.norm2.forward(ctx, x)?;
        let h = self.mlp_in.forward(ctx, h)?;
        let h = ctx.graph.gelu(h)?;
        let h = self.mlp_out.forward(ctx, h)?;
        let h = dropout(ctx, h, self.dropout)?;
        ctx.graph.add(x, h)
    }

    fn cost<F: Float>(&self, store: &ParamStore<F>, batch: usize, len: usize, rows: &mut Vec<LayerCost>) {
        rows.push(LayerCost::of_params(store, &self.norm1.name, &self.norm1.params(), 0));
        let attn = &self.attention;
        rows.push(LayerCost::of_params(
            store,
            &attn.name,
            &attn.params(),
            attn.spec.mult_adds(batch, len),
        ));
        rows.push(LayerCost::of_params(store, &self.norm2.name, &self.norm2.params(), 0));
        rows.push(LayerCost::linear(store, &self.mlp_in, batch * len));
        rows.push(LayerCost::linear(store, &self.mlp_out, batch * len));
    }
}

/// A built network. Parameters live in the [`ParamStore`] it was built into.
#[derive(Clone, Debug)]
pub struct Umsnet {
    pub config: ModelConfig,
    pub single: Vec<LsrStack>,
    pub multi: LsrStack,
    pub slice_proj: Linear,
    pub embedding: PositionClassEmbedding,
    pub encoder: Vec<EncoderLayer>,
    pub final_norm: LayerNorm,
    pub head: Linear,
}

impl Umsnet {
    pub fn new<F: Float>(store: &mut ParamStore<F>, rng: &mut RngState, config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let opts = config.block;
        let s = config.samples_per_slice();
        let single = config
            .sensors
            .iter()
            .map(|sensor| {
                let stage = config.single_stage.with_input(sensor.channels);
                LsrStack::new(store, rng, &format!("single.{}", sensor.name), stage, s, &opts)
            })
            .collect::<Result<Vec<_>>>()?;
        let multi_stage = config.multi_stage.with_input(config.sensors.len());
        let multi = LsrStack::new(store, rng, "multi", multi_stage, config.fused_len(), &opts)?;
        let d = config.model_dim;
        let slice_proj = Linear::new(store, rng, "slice_proj", config.multi_stage.widths[STAGES - 1], d, true)?;
        let embedding = PositionClassEmbedding::new(store, rng, "embed", config.slices, d)?;
        let encoder = (0..config.transformer_depth)
            .map(|i| EncoderLayer::new(store, rng, &format!("encoder{i}"), &config))
            .collect::<Result<Vec<_>>>()?;
        let final_norm = LayerNorm::new(store, "final_norm", NormSpec::layer(d))?;
        let head = Linear::new(store, rng, "head", d, config.num_classes, true)?;
        Ok(Umsnet {
            config,
            single,
            multi,
            slice_proj,
            embedding,
            encoder,
            final_norm,
            head,
        })
    }

    /// `(single-stack blocks per sensor, multi-stack blocks, encoder layers)`.
    pub fn block_counts(&self) -> (usize, usize, usize) {
        (
            self.single.first().map_or(0, |s| s.blocks().count()),
            self.multi.blocks().count(),
            self.encoder.len(),
        )
    }

    /// Checks per-sensor inputs against the configured geometry and returns the batch size.
    pub fn check_inputs(&self, shapes: &[&[usize]]) -> Result<usize> {
        if shapes.len() != self.config.sensors.len() {
            return Err(dim_err!(
                "model expects {} sensors, got {}",
                self.config.sensors.len(),
                shapes.len()
            ));
        }
        let k = self.config.slices;
        let mut batch = None;
        for (sensor, shape) in self.config.sensors.iter().zip(shapes) {
            let ok = shape.len() == 3
                && shape[0] % k == 0
                && shape[1] == sensor.channels
                && shape[2] == sensor.samples_per_slice;
            if !ok {
                return Err(dim_err!(
                    "sensor {:?}: expected (batch·{k}, {}, {}) slices, got {shape:?}",
                    sensor.name,
                    sensor.channels,
                    sensor.samples_per_slice
                ));
            }
            let b = shape[0] / k;
            if *batch.get_or_insert(b) != b {
                return Err(dim_err!("sensor {:?} has a different batch size", sensor.name));
            }
        }
        Ok(batch.unwrap_or(0))
    }

    /// Stage-1 features of one sensor: `(B·K, ch, S) → (B·K, C_s, S/8)`.
    pub fn single_sensor_features<F: Float>(&self, ctx: &mut Ctx<'_, F>, slices: Var, sensor: usize) -> Result<Var> {
        let stack = self
            .single
            .get(sensor)
            .ok_or_else(|| config_err!("sensor index {sensor} out of range ({} sensors)", self.single.len()))?;
        stack.forward(ctx, slices)
    }

    /// Flattens each sensor map and stacks the sensors as channels:
    /// `N × (B·K, C_s, L) → (B·K, N, C_s·L)`.
    pub fn fuse_sensors<F: Float>(ctx: &mut Ctx<'_, F>, per_sensor: &[Var]) -> Result<Var> {
        let first = per_sensor
            .first()
            .map(|&v| ctx.graph.shape(v).to_vec())
            .ok_or_else(|| dim_err!("no sensor features to fuse"))?;
        if first.len() != 3 {
            return Err(dim_err!("sensor features must be (B·K, C, L), got {first:?}"));
        }
        let mut flat = Vec::with_capacity(per_sensor.len());
        for (i, &v) in per_sensor.iter().enumerate() {
            if ctx.graph.shape(v) != first.as_slice() {
                return Err(dim_err!(
                    "sensor {i} features have shape {:?}, sensor 0 has {first:?}",
                    ctx.graph.shape(v)
                ));
            }
            flat.push(ctx.graph.reshape(v, &[first[0], 1, first[1] * first[2]])?);
        }
        ctx.graph.concat(&flat, 1)
    }

    /// Multi-sensor stack, average over the spatial axis, then projection:
    /// `(B·K, N, M) → (B·K, D)`.
    pub fn multi_sensor_features<F: Float>(&self, ctx: &mut Ctx<'_, F>, fused: Var) -> Result<Var> {
        let h = self.multi.forward(ctx, fused)?;
        let h = ctx.graph.mean_last(h)?;
        self.slice_proj.forward(ctx, h)
    }

    /// Class-token transformer over slice embeddings: `(B, K, D) → (B, classes)`.
    pub fn classify_sequence<F: Float>(&self, ctx: &mut Ctx<'_, F>, embeddings: Var) -> Result<Var> {
        let mut h = self.embedding.forward(ctx, embeddings)?;
        for layer in &self.encoder {
            h = layer.forward(ctx, h)?;
        }
        let h = self.final_norm.forward(ctx, h)?;
        let batch = ctx.graph.shape(h)[0];
        let token = ctx.graph.narrow(h, 1, 0, 1)?;
        let token = ctx.graph.reshape(token, &[batch, self.config.model_dim])?;
        self.head.forward(ctx, token)
    }

    /// Logits `(B, classes)` from per-sensor slices shaped `(B·K, ch_i, S)`.
    pub fn forward<F: Float>(&self, ctx: &mut Ctx<'_, F>, sensors: &[Var]) -> Result<Var> {
        let shapes: Vec<Vec<usize>> = sensors.iter().map(|&v| ctx.graph.shape(v).to_vec()).collect();
        let refs: Vec<&[usize]> = shapes.iter().map(Vec::as_slice).collect();
        let batch = self.check_inputs(&refs)?;
        let feats = sensors
            .iter()
            .enumerate()
            .map(|(i, &x)| self.single_sensor_features(ctx, x, i))
            .collect::<Result<Vec<_>>>()?;
        let fused = Self::fuse_sensors(ctx, &feats)?;
        let slice_emb = self.multi_sensor_features(ctx, fused)?;
        let seq = ctx
            .graph
            .reshape(slice_emb, &[batch, self.config.slices, self.config.model_dim])?;
        self.classify_sequence(ctx, seq)
    }

    /// Feeds tensors into the tape and runs [`Umsnet::forward`].
    pub fn forward_tensors<F: Float>(&self, ctx: &mut Ctx<'_, F>, sensors: &[Tensor<F>]) -> Result<Var> {
        let vars: Vec<Var> = sensors.iter().map(|t| ctx.input(t.clone())).collect();
        self.forward(ctx, &vars)
    }

    /// Per-layer parameter and multiply-accumulate counts for `batch` windows.
    pub fn cost<F: Float>(&self, store: &ParamStore<F>, batch: usize) -> Result<CostReport> {
        let mut rows = Vec::new();
        let bk = batch * self.config.slices;
        for stack in &self.single {
            stack.cost(store, bk, &mut rows)?;
        }
        self.multi.cost(store, bk, &mut rows)?;
        rows.push(LayerCost::linear(store, &self.slice_proj, bk));
        rows.push(LayerCost::of_params(
            store,
            &self.embedding.name,
            &self.embedding.params(),
            0,
        ));
        let len = self.config.slices + 1;
        for layer in &self.encoder {
            layer.cost(store, batch, len, &mut rows);
        }
        rows.push(LayerCost::of_params(
            store,
            &self.final_norm.name,
            &self.final_norm.params(),
            0,
        ));
        rows.push(LayerCost::linear(store, &self.head, batch));
        Ok(CostReport::from_rows(rows))
    }

    /// Trainable parameters of sensor `i`'s stack.
    pub fn sensor_params<F: Float>(&self, store: &ParamStore<F>, sensor: usize) -> Vec<ParamId> {
        let prefix = format!("{}.", self.single[sensor].name);
        store
            .iter()
            .filter(|(_, p)| p.trainable && p.name.starts_with(&prefix))
            .map(|(id, _)| id)
            .collect()
    }
}

/// Builds and initializes a model in a fresh store from a seed.
pub fn build_model<F: Float>(config: ModelConfig, seed: u64) -> Result<(Umsnet, ParamStore<F>)> {
    let mut store = ParamStore::new();
    let mut rng = RngState::new(seed);
    let model = Umsnet::new(&mut store, &mut rng, config)?;
    Ok((model, store))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Mode;

    fn tiny(variant: Variant) -> ModelConfig {
        ModelConfig::preset(variant, &DatasetProfile::hhar(8), 3)
            .unwrap()
            .with_widths([2, 2, 2, 8], [2, 2, 2, 2], 4, 2)
    }

    fn random_inputs(cfg: &ModelConfig, batch: usize, seed: u64) -> Vec<Tensor<f64>> {
        let mut rng = RngState::new(seed);
        cfg.sensors
            .iter()
            .map(|s| {
                let shape = [batch * cfg.slices, s.channels, s.samples_per_slice];
                let n = shape.iter().product();
                Tensor::new(shape, (0..n).map(|_| rng.normal()).collect()).unwrap()
            })
            .collect()
    }

    #[test]
    fn presets_follow_depth_table() {
        for (v, d, e) in [
            (Variant::A, [2, 2, 2, 2], 3),
            (Variant::B, [2, 2, 6, 2], 6),
            (Variant::C, [2, 2, 18, 2], 6),
        ] {
            let cfg = ModelConfig::preset(v, &DatasetProfile::hhar(8), 6).unwrap();
            assert_eq!(cfg.single_stage.depths, d);
            assert_eq!(cfg.multi_stage.depths, d);
            assert_eq!(cfg.transformer_depth, e);
        }
        assert!(ModelConfig::preset(Variant::Custom, &DatasetProfile::hhar(8), 6).is_err());
        assert!("D".parse::<Variant>().is_err());
    }

    #[test]
    fn profiles() {
        let h = DatasetProfile::hhar(8);
        assert_eq!((h.sensors.len(), h.num_classes), (2, 6));
        let m = DatasetProfile::mhealth(8);
        let ch: Vec<usize> = m.sensors.iter().map(|s| s.channels).collect();
        assert_eq!((ch, m.num_classes), (vec![3, 3, 3, 2], 7));
    }

    #[test]
    fn logits_shape() {
        let cfg = tiny(Variant::A);
        let (model, store) = build_model::<f64>(cfg.clone(), 1).unwrap();
        let mut rng = RngState::new(0);
        let mut ctx = Ctx::new(&store, Mode::Eval, &mut rng);
        let y = model.forward_tensors(&mut ctx, &random_inputs(&cfg, 4, 2)).unwrap();
        assert_eq!(ctx.graph.shape(y), &[4, 6]);
    }

    #[test]
    fn fuse_places_each_sensor_in_its_own_channel() {
        let store = ParamStore::<f64>::new();
        let mut rng = RngState::new(0);
        let mut ctx = Ctx::new(&store, Mode::Eval, &mut rng);
        let a = ctx.input(Tensor::from_f64([1, 2, 2], &[1., 2., 3., 4.]).unwrap());
        let b = ctx.input(Tensor::from_f64([1, 2, 2], &[5., 6., 7., 8.]).unwrap());
        let f = Umsnet::fuse_sensors(&mut ctx, &[a, b]).unwrap();
        assert_eq!(ctx.graph.shape(f), &[1, 2, 4]);
        assert_eq!(ctx.value(f).to_f64_vec(), vec![1., 2., 3., 4., 5., 6., 7., 8.]);
        let c = ctx.input(Tensor::zeros([1, 2, 1]));
        assert!(matches!(
            Umsnet::fuse_sensors(&mut ctx, &[a, c]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn geometry_mismatch_names_sensor() {
        let cfg = tiny(Variant::A);
        let (model, store) = build_model::<f64>(cfg.clone(), 1).unwrap();
        let mut inputs = random_inputs(&cfg, 1, 0);
        inputs[1] = Tensor::zeros([3, 2, 8]);
        let mut rng = RngState::new(0);
        let mut ctx = Ctx::new(&store, Mode::Eval, &mut rng);
        match model.forward_tensors(&mut ctx, &inputs) {
            Err(Error::Dimension(msg)) => assert!(msg.contains("gyro"), "{msg}"),
            other => panic!("expected dimension error, got {other:?}"),
        }
    }

    #[test]
    fn unequal_slice_lengths_are_rejected() {
        let mut cfg = tiny(Variant::A);
        cfg.sensors[1].samples_per_slice = 16;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn block_counts_per_variant() {
        for (v, counts) in [
            (Variant::A, (8, 8, 3)),
            (Variant::B, (12, 12, 6)),
            (Variant::C, (24, 24, 6)),
        ] {
            let (model, _) = build_model::<f32>(tiny(v), 0).unwrap();
            assert_eq!(model.block_counts(), counts);
        }
    }

    #[test]
    fn cost_rows_cover_every_parameter() {
        let (model, store) = build_model::<f32>(tiny(Variant::B), 0).unwrap();
        let report = model.cost(&store, 1).unwrap();
        assert_eq!(report.params, crate::evaluation::count_params(&store));
        assert_eq!(model.cost(&store, 3).unwrap().mult_adds, 3 * report.mult_adds);
    }
}
