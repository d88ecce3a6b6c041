//! The `UMSD` dataset container.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "UMSD"
//! 4       4     format version, u32 little-endian
//! 8       8     metadata length L, u64 little-endian
//! 16      L     UTF-8 JSON metadata (ContainerMeta)
//! 16+L    4·n   little-endian f32 payload in the order the metadata declares
//! ```
//!
//! Sliced datasets store, for each sample in order, each sensor's
//! `K × channels × samples_per_slice` block. Recording sets store, for each
//! recording in order, each stream channel by channel.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{RawRecording, SensorStream, SlicedDataset, SlicedSample};
use crate::error::{Error, Result};
use crate::model::SensorSpec;

pub const DATA_MAGIC: &[u8; 4] = b"UMSD";
pub const DATA_VERSION: u32 = 1;

/// Recordings resampled onto one shared grid rate.
#[derive(Clone, Debug, PartialEq)]
pub struct RecordingSet {
    pub sample_rate_hz: f64,
    pub classes: Vec<String>,
    pub recordings: Vec<RawRecording>,
}

impl RecordingSet {
    pub fn users(&self) -> Vec<String> {
        let mut u: Vec<String> = self.recordings.iter().map(|r| r.user_id.clone()).collect();
        u.sort();
        u.dedup();
        u
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DataFile {
    Sliced(SlicedDataset),
    Recordings(RecordingSet),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum ContainerMeta {
    Sliced {
        sensors: Vec<SensorSpec>,
        slices: usize,
        window_seconds: f64,
        sample_rate_hz: f64,
        classes: Vec<String>,
        users: Vec<String>,
        samples: Vec<SampleMeta>,
    },
    Recordings {
        sample_rate_hz: f64,
        classes: Vec<String>,
        users: Vec<String>,
        recordings: Vec<RecordingMeta>,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleMeta {
    user: String,
    label: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordingMeta {
    user: String,
    start_time: f64,
    len: usize,
    /// `(name, channels)` per stream, in payload order.
    streams: Vec<(String, usize)>,
    /// Run-length labels: `(class, count)`.
    labels: Vec<(usize, usize)>,
}

fn encode(meta: &ContainerMeta, payload: &[f32]) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(meta)?;
    let mut out = Vec::with_capacity(16 + json.len() + 4 * payload.len());
    out.extend_from_slice(DATA_MAGIC);
    out.extend_from_slice(&DATA_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn run_lengths(labels: &[usize]) -> Vec<(usize, usize)> {
    labels.chunk_by(|a, b| a == b).map(|r| (r[0], r.len())).collect()
}

impl DataFile {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        match self {
            DataFile::Sliced(d) => {
                d.validate()?;
                let meta = ContainerMeta::Sliced {
                    sensors: d.sensors.clone(),
                    slices: d.slices,
                    window_seconds: d.window_seconds,
                    sample_rate_hz: d.sample_rate_hz,
                    classes: d.classes.clone(),
                    users: d.users(),
                    samples: d
                        .samples
                        .iter()
                        .map(|s| SampleMeta {
                            user: s.user_id.clone(),
                            label: s.label,
                        })
                        .collect(),
                };
                let payload: Vec<f32> = d
                    .samples
                    .iter()
                    .flat_map(|s| s.slices.iter().flatten().copied())
                    .collect();
                encode(&meta, &payload)
            }
            DataFile::Recordings(set) => {
                let mut payload = Vec::new();
                let mut recordings = Vec::with_capacity(set.recordings.len());
                for r in &set.recordings {
                    let len = r.labels.len();
                    if r.streams.iter().any(|s| s.len() != len) || len == 0 {
                        return Err(crate::error::dim_err!(
                            "recording of user {:?} is not on a shared grid",
                            r.user_id
                        ));
                    }
                    for s in &r.streams {
                        for ch in &s.channels {
                            payload.extend(ch.iter().map(|&v| v as f32));
                        }
                    }
                    recordings.push(RecordingMeta {
                        user: r.user_id.clone(),
                        start_time: r.label_times[0],
                        len,
                        streams: r.streams.iter().map(|s| (s.name.clone(), s.num_channels())).collect(),
                        labels: run_lengths(&r.labels),
                    });
                }
                let meta = ContainerMeta::Recordings {
                    sample_rate_hz: set.sample_rate_hz,
                    classes: set.classes.clone(),
                    users: set.users(),
                    recordings,
                };
                encode(&meta, &payload)
            }
        }
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != DATA_MAGIC {
            return Err(Error::Integrity("not a UMSD dataset (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != DATA_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                supported: DATA_VERSION,
            });
        }
        let json_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = &bytes[16..];
        if json_len > body.len() {
            return Err(Error::Integrity(format!(
                "metadata declares {json_len} bytes, only {} present",
                body.len()
            )));
        }
        let meta: ContainerMeta =
            serde_json::from_slice(&body[..json_len]).map_err(|e| Error::Integrity(format!("metadata: {e}")))?;
        let raw = &body[json_len..];
        let mut floats = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()));
        let expected = match &meta {
            ContainerMeta::Sliced {
                sensors,
                slices,
                samples,
                ..
            } => {
                samples.len()
                    * sensors
                        .iter()
                        .map(|s| slices * s.channels * s.samples_per_slice)
                        .sum::<usize>()
            }
            ContainerMeta::Recordings { recordings, .. } => recordings
                .iter()
                .map(|r| r.len * r.streams.iter().map(|s| s.1).sum::<usize>())
                .sum(),
        };
        if raw.len() != 4 * expected {
            return Err(Error::Integrity(format!(
                "payload holds {} bytes, metadata declares {}",
                raw.len(),
                4 * expected
            )));
        }
        let mut take = |n: usize| -> Vec<f32> { floats.by_ref().take(n).collect() };
        Ok(match meta {
            ContainerMeta::Sliced {
                sensors,
                slices,
                window_seconds,
                sample_rate_hz,
                classes,
                samples,
                ..
            } => {
                let samples = samples
                    .into_iter()
                    .map(|m| SlicedSample {
                        user_id: m.user,
                        label: m.label,
                        window_seconds,
                        slices: sensors
                            .iter()
                            .map(|s| take(slices * s.channels * s.samples_per_slice))
                            .collect(),
                    })
                    .collect();
                let d = SlicedDataset {
                    sensors,
                    slices,
                    window_seconds,
                    sample_rate_hz,
                    classes,
                    samples,
                };
                d.validate().map_err(|e| Error::Integrity(e.to_string()))?;
                DataFile::Sliced(d)
            }
            ContainerMeta::Recordings {
                sample_rate_hz,
                classes,
                recordings,
                ..
            } => {
                let mut out = Vec::with_capacity(recordings.len());
                for m in recordings {
                    let ts: Vec<f64> = (0..m.len).map(|i| m.start_time + i as f64 / sample_rate_hz).collect();
                    let streams = m
                        .streams
                        .iter()
                        .map(|(name, ch)| {
                            let channels = (0..*ch)
                                .map(|_| take(m.len).into_iter().map(f64::from).collect())
                                .collect();
                            SensorStream::new(name, sample_rate_hz, ts.clone(), channels)
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let labels: Vec<usize> = m.labels.iter().flat_map(|&(c, n)| std::iter::repeat_n(c, n)).collect();
                    if labels.len() != m.len || labels.iter().any(|&l| l >= classes.len()) {
                        return Err(Error::Integrity(format!(
                            "labels of user {:?} are inconsistent",
                            m.user
                        )));
                    }
                    out.push(RawRecording {
                        user_id: m.user,
                        streams,
                        label_times: ts,
                        labels,
                        activity_set: classes.clone(),
                    });
                }
                DataFile::Recordings(RecordingSet {
                    sample_rate_hz,
                    classes,
                    recordings: out,
                })
            }
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sliced() -> SlicedDataset {
        SlicedDataset {
            sensors: vec![SensorSpec::new("acc", 1, 8), SensorSpec::new("ecg", 2, 8)],
            slices: 2,
            window_seconds: 0.5,
            sample_rate_hz: 32.0,
            classes: vec!["a".into(), "b".into()],
            samples: (0..3)
                .map(|i| SlicedSample {
                    user_id: format!("u{i}"),
                    label: i % 2,
                    window_seconds: 0.5,
                    slices: vec![vec![i as f32; 16], vec![-(i as f32) * 0.5; 32]],
                })
                .collect(),
        }
    }

    #[test]
    fn sliced_round_trip() {
        let f = DataFile::Sliced(sliced());
        let bytes = f.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"UMSD");
        assert_eq!(DataFile::from_bytes(&bytes).unwrap(), f);
    }

    #[test]
    fn recordings_round_trip() {
        let ts: Vec<f64> = (0..4).map(|i| i as f64 / 32.0).collect();
        let set = RecordingSet {
            sample_rate_hz: 32.0,
            classes: vec!["a".into(), "b".into()],
            recordings: vec![RawRecording {
                user_id: "u1".into(),
                streams: vec![SensorStream::new("acc", 32.0, ts.clone(), vec![vec![0.5, 1.0, 1.5, 2.0]]).unwrap()],
                label_times: ts,
                labels: vec![0, 0, 1, 1],
                activity_set: vec!["a".into(), "b".into()],
            }],
        };
        let f = DataFile::Recordings(set);
        assert_eq!(DataFile::from_bytes(&f.to_bytes().unwrap()).unwrap(), f);
    }

    #[test]
    fn damaged_files_are_rejected() {
        let mut bytes = DataFile::Sliced(sliced()).to_bytes().unwrap();
        assert!(matches!(
            DataFile::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Integrity(_))
        ));
        bytes[4] = 9;
        assert!(matches!(
            DataFile::from_bytes(&bytes),
            Err(Error::UnsupportedVersion { found: 9, .. })
        ));
        bytes[0] = b'X';
        assert!(matches!(DataFile::from_bytes(&bytes), Err(Error::Integrity(_))));
    }
}
