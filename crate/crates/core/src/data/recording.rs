use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Result};
use crate::model::SensorSpec;

/// One sensor's samples; `channels[c][i]` was taken at `timestamps[i]` seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorStream {
    pub name: String,
    pub sample_rate_hz: f64,
    pub timestamps: Vec<f64>,
    pub channels: Vec<Vec<f64>>,
}

impl SensorStream {
    pub fn new(name: &str, sample_rate_hz: f64, timestamps: Vec<f64>, channels: Vec<Vec<f64>>) -> Result<Self> {
        if channels.is_empty() {
            return Err(dim_err!("stream {name:?} has no channels"));
        }
        if let Some(c) = channels.iter().position(|c| c.len() != timestamps.len()) {
            return Err(dim_err!(
                "stream {name:?}: channel {c} has {} samples, timestamps have {}",
                channels[c].len(),
                timestamps.len()
            ));
        }
        Ok(SensorStream {
            name: name.to_string(),
            sample_rate_hz,
            timestamps,
            channels,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }
}

/// A continuous capture of one user. `labels[i]` indexes `activity_set` and
/// holds from `label_times[i]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawRecording {
    pub user_id: String,
    pub streams: Vec<SensorStream>,
    pub label_times: Vec<f64>,
    pub labels: Vec<usize>,
    pub activity_set: Vec<String>,
}

impl RawRecording {
    pub fn stream(&self, name: &str) -> Option<&SensorStream> {
        self.streams.iter().find(|s| s.name == name)
    }

    /// Overlap of every stream's time span, `(start, end)`.
    pub fn common_span(&self) -> Option<(f64, f64)> {
        let mut start = f64::NEG_INFINITY;
        let mut end = f64::INFINITY;
        for s in &self.streams {
            start = start.max(*s.timestamps.first()?);
            end = end.min(*s.timestamps.last()?);
        }
        (!self.streams.is_empty() && end >= start).then_some((start, end))
    }

    /// `SensorSpec`s for the given slice length, in stream order.
    pub fn sensor_specs(&self, samples_per_slice: usize) -> Vec<SensorSpec> {
        self.streams
            .iter()
            .map(|s| SensorSpec::new(&s.name, s.num_channels(), samples_per_slice))
            .collect()
    }
}

/// One classification window: `slices[i]` holds sensor `i` laid out as
/// `[slice][channel][sample]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlicedSample {
    pub user_id: String,
    pub label: usize,
    pub window_seconds: f64,
    pub slices: Vec<Vec<f32>>,
}

/// Windows sharing one geometry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlicedDataset {
    pub sensors: Vec<SensorSpec>,
    /// Slices per window.
    pub slices: usize,
    pub window_seconds: f64,
    pub sample_rate_hz: f64,
    pub classes: Vec<String>,
    pub samples: Vec<SlicedSample>,
}

impl SlicedDataset {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Distinct user ids in sorted order.
    pub fn users(&self) -> Vec<String> {
        let mut users: Vec<String> = self.samples.iter().map(|s| s.user_id.clone()).collect();
        users.sort();
        users.dedup();
        users
    }

    /// Same geometry, different samples.
    pub fn with_samples(&self, samples: Vec<SlicedSample>) -> Self {
        SlicedDataset {
            samples,
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> Self {
        SlicedDataset {
            sensors: self.sensors.clone(),
            slices: self.slices,
            window_seconds: self.window_seconds,
            sample_rate_hz: self.sample_rate_hz,
            classes: self.classes.clone(),
            samples: Vec::new(),
        }
    }

    /// Float count of sensor `i` in one sample.
    pub fn sensor_len(&self, i: usize) -> usize {
        self.slices * self.sensors[i].channels * self.sensors[i].samples_per_slice
    }

    pub fn validate(&self) -> Result<()> {
        for (n, s) in self.samples.iter().enumerate() {
            if s.slices.len() != self.sensors.len() {
                return Err(dim_err!(
                    "sample {n} has {} sensors, expected {}",
                    s.slices.len(),
                    self.sensors.len()
                ));
            }
            for (i, block) in s.slices.iter().enumerate() {
                if block.len() != self.sensor_len(i) {
                    return Err(dim_err!(
                        "sample {n}, sensor {:?}: {} values, expected {}",
                        self.sensors[i].name,
                        block.len(),
                        self.sensor_len(i)
                    ));
                }
            }
            if s.label >= self.classes.len() {
                return Err(dim_err!(
                    "sample {n} has label {} of {} classes",
                    s.label,
                    self.classes.len()
                ));
            }
        }
        Ok(())
    }
}
