//! Accuracy, macro-F1, parameter and multiply-accumulate accounting, and
//! inference timing.

mod cost;
mod metrics;
mod report;

pub use cost::{count_mult_adds, count_params, CostReport, LayerCost};
pub use metrics::{accuracy, macro_f1, macro_f1_over, ConfusionMatrix};
pub use report::{
    check_geometry, evaluate, fingerprint, hardware_descriptor, predict, time_inference, time_model, EvalOptions,
    MetricsReport, MIN_TIMING_REPEATS, TIMING_WARMUP,
};
