use serde::{Deserialize, Serialize};

use super::{RawRecording, SensorStream, SlicedSample};
use crate::error::{config_err, contract_err, Result};

/// Tolerance when checking that a duration is a whole number of samples.
const GRID_EPS: f64 = 1e-9;

/// Linear interpolation of every stream onto a shared uniform grid at
/// `target_hz`, spanning the overlap of all streams. Labels take the value of
/// the nearest label timestamp, the earlier one on ties.
pub fn resample(recording: &RawRecording, target_hz: f64) -> Result<RawRecording> {
    if !(target_hz > 0.0 && target_hz.is_finite()) {
        return Err(config_err!("target rate must be positive, got {target_hz}"));
    }
    for s in &recording.streams {
        if s.len() < 2 {
            return Err(contract_err!(
                "stream {:?} of user {:?} has {} sample(s); interpolation needs two",
                s.name,
                recording.user_id,
                s.len()
            ));
        }
    }
    if recording.labels.is_empty() {
        return Err(contract_err!("recording of user {:?} has no labels", recording.user_id));
    }
    let (start, end) = recording
        .common_span()
        .ok_or_else(|| contract_err!("streams of user {:?} do not overlap in time", recording.user_id))?;
    let n = ((end - start) * target_hz + GRID_EPS).floor() as usize + 1;
    let grid: Vec<f64> = (0..n).map(|i| start + i as f64 / target_hz).collect();
    let streams = recording
        .streams
        .iter()
        .map(|s| {
            let channels = s
                .channels
                .iter()
                .map(|c| interpolate(&s.timestamps, c, &grid))
                .collect();
            SensorStream::new(&s.name, target_hz, grid.clone(), channels)
        })
        .collect::<Result<Vec<_>>>()?;
    let labels = grid
        .iter()
        .map(|&t| recording.labels[nearest(&recording.label_times, t)])
        .collect();
    Ok(RawRecording {
        user_id: recording.user_id.clone(),
        streams,
        label_times: grid,
        labels,
        activity_set: recording.activity_set.clone(),
    })
}

/// Piecewise-linear interpolation of `(xs, ys)` at each query, which must lie
/// inside `[xs[0], xs[last]]` and be ascending. `xs` is non-decreasing.
fn interpolate(xs: &[f64], ys: &[f64], queries: &[f64]) -> Vec<f64> {
    let mut j = 0;
    queries
        .iter()
        .map(|&t| {
            while j + 2 < xs.len() && xs[j + 1] <= t {
                j += 1;
            }
            let (x0, x1) = (xs[j], xs[j + 1]);
            if t <= x0 || x1 <= x0 {
                return ys[j];
            }
            if t >= x1 {
                return ys[j + 1];
            }
            let w = (t - x0) / (x1 - x0);
            ys[j] + w * (ys[j + 1] - ys[j])
        })
        .collect()
}

fn nearest(times: &[f64], t: f64) -> usize {
    let i = times.partition_point(|&x| x < t);
    if i == 0 {
        return 0;
    }
    if i == times.len() {
        return i - 1;
    }
    if t - times[i - 1] <= times[i] - t {
        i - 1
    } else {
        i
    }
}

/// Window and slice geometry.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    pub window_seconds: f64,
    pub slice_seconds: f64,
    pub target_hz: f64,
    /// Hop between window starts; `None` means non-overlapping windows.
    pub stride_seconds: Option<f64>,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            window_seconds: 1.5,
            slice_seconds: 0.25,
            target_hz: 32.0,
            stride_seconds: None,
        }
    }
}

fn whole(x: f64, what: &str) -> Result<usize> {
    let r = x.round();
    if r < 1.0 || (x - r).abs() > 1e-6 {
        return Err(config_err!("{what} is {x}, not a positive whole number"));
    }
    Ok(r as usize)
}

impl WindowConfig {
    pub fn with_window(window_seconds: f64) -> Self {
        WindowConfig {
            window_seconds,
            ..Default::default()
        }
    }

    pub fn samples_per_slice(&self) -> Result<usize> {
        whole(self.target_hz * self.slice_seconds, "samples per slice")
    }

    /// Slices per window, `K`.
    pub fn slices(&self) -> Result<usize> {
        whole(self.window_seconds / self.slice_seconds, "slices per window")
    }

    pub fn samples_per_window(&self) -> Result<usize> {
        Ok(self.slices()? * self.samples_per_slice()?)
    }

    pub fn stride_samples(&self) -> Result<usize> {
        match self.stride_seconds {
            None => self.samples_per_window(),
            Some(s) => whole(s * self.target_hz, "stride in samples"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.slices()?;
        self.samples_per_slice()?;
        self.stride_samples()?;
        Ok(())
    }
}

/// Cuts a recording into labeled windows of `K` slices each.
///
/// The recording is first resampled to `config.target_hz`. A window takes the
/// label covering the most of its samples, ties going to the lower class
/// index, and is dropped unless that label covers at least half of it.
pub fn window_and_slice(recording: &RawRecording, config: &WindowConfig) -> Result<Vec<SlicedSample>> {
    config.validate()?;
    let too_short = recording
        .common_span()
        .is_none_or(|(a, b)| b - a + 1.0 / config.target_hz < config.window_seconds - GRID_EPS);
    if too_short {
        return Ok(Vec::new());
    }
    let rec = resample(recording, config.target_hz)?;
    slice_resampled(&rec, config)
}

/// [`window_and_slice`] for a recording already on a shared grid at `config.target_hz`.
pub fn slice_resampled(rec: &RawRecording, config: &WindowConfig) -> Result<Vec<SlicedSample>> {
    let k = config.slices()?;
    let sps = config.samples_per_slice()?;
    let spw = k * sps;
    let stride = config.stride_samples()?;
    let n = rec.labels.len();
    if rec.streams.iter().any(|s| s.len() != n) {
        return Err(contract_err!(
            "streams of user {:?} are not on a shared grid",
            rec.user_id
        ));
    }
    let mut out = Vec::new();
    let mut start = 0;
    while start + spw <= n {
        if let Some(label) = majority(&rec.labels[start..start + spw], rec.activity_set.len()) {
            let slices = rec
                .streams
                .iter()
                .map(|s| {
                    let mut block = Vec::with_capacity(spw * s.num_channels());
                    for slice in 0..k {
                        let from = start + slice * sps;
                        for ch in &s.channels {
                            block.extend(ch[from..from + sps].iter().map(|&v| v as f32));
                        }
                    }
                    block
                })
                .collect();
            out.push(SlicedSample {
                user_id: rec.user_id.clone(),
                label,
                window_seconds: config.window_seconds,
                slices,
            });
        }
        start += stride;
    }
    Ok(out)
}

fn majority(labels: &[usize], num_classes: usize) -> Option<usize> {
    let mut counts = vec![0usize; num_classes.max(1 + labels.iter().copied().max().unwrap_or(0))];
    for &l in labels {
        counts[l] += 1;
    }
    let (best, &count) = counts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))?;
    (2 * count >= labels.len()).then_some(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn recording(values: Vec<f64>, rate: f64, labels: Vec<usize>) -> RawRecording {
        let ts: Vec<f64> = (0..values.len()).map(|i| i as f64 / rate).collect();
        RawRecording {
            user_id: "u1".into(),
            streams: vec![SensorStream::new("acc", rate, ts.clone(), vec![values]).unwrap()],
            label_times: ts,
            labels,
            activity_set: vec!["a".into(), "b".into()],
        }
    }

    #[test]
    fn midpoint_interpolation() {
        let r = resample(&recording(vec![0.0, 2.0], 1.0, vec![0, 0]), 2.0).unwrap();
        assert_eq!(r.streams[0].channels[0], vec![0.0, 1.0, 2.0]);
        assert_eq!(r.streams[0].timestamps, vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn identity_resample() {
        let v: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
        let r = resample(&recording(v.clone(), 32.0, vec![1; 40]), 32.0).unwrap();
        assert_eq!(r.streams[0].channels[0], v);
        assert_eq!(r.labels, vec![1; 40]);
    }

    #[test]
    fn single_sample_stream_cannot_be_resampled() {
        assert!(matches!(
            resample(&recording(vec![1.0], 1.0, vec![0]), 2.0),
            Err(crate::Error::Contract(_))
        ));
    }

    #[test]
    fn nearest_label_prefers_earlier_on_tie() {
        assert_eq!(nearest(&[0.0, 1.0], 0.5), 0);
        assert_eq!(nearest(&[0.0, 1.0], 0.6), 1);
        assert_eq!(nearest(&[0.0, 1.0], 7.0), 1);
    }

    #[test]
    fn window_geometry() {
        assert_eq!(WindowConfig::with_window(6.0).slices().unwrap(), 24);
        assert_eq!(WindowConfig::with_window(3.0).slices().unwrap(), 12);
        assert_eq!(WindowConfig::with_window(1.5).slices().unwrap(), 6);
        assert_eq!(WindowConfig::default().samples_per_slice().unwrap(), 8);
        let bad = WindowConfig {
            target_hz: 50.0,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(crate::Error::Config(_))));
    }

    #[test]
    fn ten_seconds_give_one_six_second_window() {
        let rec = recording(vec![0.0; 320], 32.0, vec![0; 320]);
        let cfg = WindowConfig {
            stride_seconds: Some(6.0),
            ..WindowConfig::with_window(6.0)
        };
        let w = window_and_slice(&rec, &cfg).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].slices[0].len(), 24 * 8);
    }

    #[test]
    fn short_recording_gives_no_windows() {
        let rec = recording(vec![0.0; 40], 32.0, vec![0; 40]);
        assert!(window_and_slice(&rec, &WindowConfig::default()).unwrap().is_empty());
        let rec = recording(vec![0.0], 32.0, vec![0]);
        assert!(window_and_slice(&rec, &WindowConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn majority_rule() {
        assert_eq!(majority(&[0, 0, 1, 1], 2), Some(0));
        assert_eq!(majority(&[1, 1, 1, 0], 2), Some(1));
        assert_eq!(majority(&[0, 1, 2, 2], 3), Some(2));
        assert_eq!(majority(&[0, 1, 2, 3, 3], 4), None);
    }

    #[test]
    fn mixed_windows_below_half_are_dropped() {
        // 48 samples: label 0 for 20, label 1 for 28 → label 1
        let mut labels = vec![0; 20];
        labels.extend(vec![1; 28]);
        let rec = recording(vec![0.0; 48], 32.0, labels);
        let w = window_and_slice(&rec, &WindowConfig::default()).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].label, 1);
    }
}
