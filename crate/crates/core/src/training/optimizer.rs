use serde::{Deserialize, Serialize};

use crate::numerics::{Float, ParamId, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    AdamW,
    Sgd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Constant,
    /// `base · ½(1 + cos(π · step / total))`.
    Cosine,
}

impl LrSchedule {
    pub fn lr(self, base: f64, step: u64, total: u64) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine => {
                let frac = if total == 0 { 0.0 } else { step as f64 / total as f64 };
                base * 0.5 * (1.0 + (std::f64::consts::PI * frac.min(1.0)).cos())
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// SGD momentum.
    pub momentum: f64,
}

impl OptimizerConfig {
    pub fn adamw(weight_decay: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::AdamW,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            momentum: 0.9,
        }
    }

    pub fn sgd(momentum: f64, weight_decay: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Sgd,
            momentum,
            ..Self::adamw(weight_decay)
        }
    }
}

/// Weight decay applies to matrices and kernels only; biases, norm affines,
/// layer scales and embeddings are exempt.
pub fn decays<F: Float>(name: &str, value: &Tensor<F>) -> bool {
    name.ends_with(".weight") && value.ndim() >= 2
}

/// AdamW with decoupled weight decay, or SGD with heavy-ball momentum and
/// decay folded into the gradient.
#[derive(Clone, Debug)]
pub struct Optimizer<F> {
    pub config: OptimizerConfig,
    /// Completed steps.
    pub step: u64,
    /// Per-parameter slots indexed by `ParamId`: `[m, v]` for AdamW,
    /// `[velocity]` for SGD; empty for frozen parameters.
    pub slots: Vec<Vec<Tensor<F>>>,
}

impl<F: Float> Optimizer<F> {
    pub fn new(config: OptimizerConfig, store: &ParamStore<F>) -> Self {
        let per = Self::slot_names_for(config.kind).len();
        let slots = store
            .iter()
            .map(|(_, p)| {
                if p.trainable {
                    vec![Tensor::zeros(p.value.shape().to_vec()); per]
                } else {
                    Vec::new()
                }
            })
            .collect();
        Optimizer { config, step: 0, slots }
    }

    pub fn slot_names_for(kind: OptimizerKind) -> &'static [&'static str] {
        match kind {
            OptimizerKind::AdamW => &["m", "v"],
            OptimizerKind::Sgd => &["velocity"],
        }
    }

    pub fn slot_names(&self) -> &'static [&'static str] {
        Self::slot_names_for(self.config.kind)
    }

    /// Applies one update from the gradients held in `store`.
    pub fn step(&mut self, store: &mut ParamStore<F>, lr: f64) {
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let ids: Vec<ParamId> = store.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
        for id in ids {
            let slots = &mut self.slots[id.index()];
            let p = store.get_mut(id);
            let decay = if decays(&p.name, &p.value) { c.weight_decay } else { 0.0 };
            let w = p.value.data_mut();
            let g = p.grad.data();
            match c.kind {
                OptimizerKind::AdamW => {
                    let (b1, b2) = (F::of(c.beta1), F::of(c.beta2));
                    let (one_b1, one_b2) = (F::of(1.0 - c.beta1), F::of(1.0 - c.beta2));
                    let (m_slot, v_slot) = slots.split_at_mut(1);
                    let m = m_slot[0].data_mut();
                    let v = v_slot[0].data_mut();
                    let shrink = F::of(1.0 - lr * decay);
                    let (lr_f, eps) = (F::of(lr), F::of(c.eps));
                    let (bc1, bc2) = (F::of(bc1), F::of(bc2));
                    for i in 0..w.len() {
                        m[i] = b1 * m[i] + one_b1 * g[i];
                        v[i] = b2 * v[i] + one_b2 * g[i] * g[i];
                        let m_hat = m[i] / bc1;
                        let v_hat = v[i] / bc2;
                        w[i] = w[i] * shrink - lr_f * m_hat / (v_hat.sqrt() + eps);
                    }
                }
                OptimizerKind::Sgd => {
                    let vel = slots[0].data_mut();
                    let (mu, wd, lr_f) = (F::of(c.momentum), F::of(decay), F::of(lr));
                    for i in 0..w.len() {
                        let gi = g[i] + wd * w[i];
                        vel[i] = mu * vel[i] + gi;
                        w[i] -= lr_f * vel[i];
                    }
                }
            }
        }
    }
}
