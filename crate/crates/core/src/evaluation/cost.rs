use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::layers::{Conv1d, Linear};
use crate::model::Umsnet;
use crate::numerics::{Float, ParamId, ParamStore};

/// One row of a cost breakdown. Multiply-accumulates count one per MAC;
/// normalizations, activations and softmax contribute nothing.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCost {
    pub name: String,
    pub params: u64,
    pub mult_adds: u64,
}

impl LayerCost {
    /// Sums the element counts of the trainable ids among `ids`.
    pub fn of_params<F: Float>(store: &ParamStore<F>, name: &str, ids: &[ParamId], mult_adds: u64) -> Self {
        let params = ids
            .iter()
            .map(|&id| store.get(id))
            .filter(|p| p.trainable)
            .map(|p| p.value.len() as u64)
            .sum();
        LayerCost {
            name: name.to_string(),
            params,
            mult_adds,
        }
    }

    pub fn conv<F: Float>(store: &ParamStore<F>, conv: &Conv1d, batch: usize, len_in: usize) -> Result<Self> {
        let macs = conv.spec.mult_adds(batch, len_in)?;
        Ok(Self::of_params(store, &conv.name, &conv.params(), macs))
    }

    pub fn linear<F: Float>(store: &ParamStore<F>, linear: &Linear, positions: usize) -> Self {
        Self::of_params(store, &linear.name, &linear.params(), linear.mult_adds(positions))
    }
}

/// Per-layer breakdown with totals.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub params: u64,
    pub mult_adds: u64,
    pub layers: Vec<LayerCost>,
}

impl CostReport {
    pub fn from_rows(layers: Vec<LayerCost>) -> Self {
        CostReport {
            params: layers.iter().map(|r| r.params).sum(),
            mult_adds: layers.iter().map(|r| r.mult_adds).sum(),
            layers,
        }
    }

    /// `layer,params,mult_adds` with a header row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,params,mult_adds\n");
        for r in &self.layers {
            let _ = writeln!(out, "{},{},{}", r.name, r.params, r.mult_adds);
        }
        out
    }
}

/// Total element count over trainable parameters in the registry.
pub fn count_params<F: Float>(store: &ParamStore<F>) -> u64 {
    store
        .iter()
        .filter(|(_, p)| p.trainable)
        .map(|(_, p)| p.value.len() as u64)
        .sum()
}

/// Multiply-accumulates of one forward pass over `batch` windows.
pub fn count_mult_adds<F: Float>(model: &Umsnet, store: &ParamStore<F>, batch: usize) -> Result<u64> {
    if batch == 0 {
        return Err(config_err!("cost analysis needs a positive batch size"));
    }
    Ok(model.cost(store, batch)?.mult_adds)
}
