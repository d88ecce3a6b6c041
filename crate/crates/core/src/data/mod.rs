//! Ingestion, resampling, windowing, user splits, normalization, batching and
//! the synthetic generator.
//!
//! Recordings are resampled to a shared grid (32 Hz by default, so a 0.25 s
//! slice holds 8 samples) and cut into non-overlapping windows of `K` slices.

mod container;
mod ingest;
mod recording;
mod split;
mod synth;
mod window;

pub use container::{DataFile, RecordingSet, DATA_MAGIC, DATA_VERSION};
pub use ingest::{
    ingest_csv, ingest_hhar, CsvSchema, GenericSchema, GenericSensor, HHAR_ACTIVITIES, MHEALTH_ACTIVITIES,
    MHEALTH_LABELS,
};
pub use recording::{RawRecording, SensorStream, SlicedDataset, SlicedSample};
pub use split::{leave_one_user_out, normalize_split, Batch, DatasetSplit, NearestCentroid, Normalizer};
pub use synth::{switch_half_period, synth_generate, user_name, SynthConfig, DWELL_JITTER, OFFSET_RANGE};
pub use window::{resample, slice_resampled, window_and_slice, WindowConfig};

use crate::error::{config_err, Result};

/// Slices every recording and collects the windows into one dataset, ordered
/// by user and then by recording order.
pub fn slice_recordings(recordings: &[RawRecording], config: &WindowConfig) -> Result<SlicedDataset> {
    let first = recordings
        .first()
        .ok_or_else(|| config_err!("no recordings to slice"))?;
    let sps = config.samples_per_slice()?;
    let sensors = first.sensor_specs(sps);
    let mut order: Vec<usize> = (0..recordings.len()).collect();
    order.sort_by(|&a, &b| recordings[a].user_id.cmp(&recordings[b].user_id));
    let mut samples = Vec::new();
    for i in order {
        let r = &recordings[i];
        if r.sensor_specs(sps) != sensors || r.activity_set != first.activity_set {
            return Err(config_err!(
                "recording of user {:?} has a different sensor or class layout",
                r.user_id
            ));
        }
        samples.extend(window_and_slice(r, config)?);
    }
    Ok(SlicedDataset {
        sensors,
        slices: config.slices()?,
        window_seconds: config.window_seconds,
        sample_rate_hz: config.target_hz,
        classes: first.activity_set.clone(),
        samples,
    })
}
