use super::{SlicedDataset, SlicedSample};
use crate::error::{contract_err, Error, Result};
use crate::numerics::{Float, Tensor};

/// Train and test sides of one leave-one-user-out fold.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<SlicedSample>,
    pub test: Vec<SlicedSample>,
    pub held_out_user: String,
}

/// Holds out every sample of `held_out_user`; everything else is training data.
pub fn leave_one_user_out(samples: &[SlicedSample], held_out_user: &str) -> Result<DatasetSplit> {
    let (test, train): (Vec<_>, Vec<_>) = samples.iter().cloned().partition(|s| s.user_id == held_out_user);
    if test.is_empty() {
        let mut available: Vec<String> = samples.iter().map(|s| s.user_id.clone()).collect();
        available.sort();
        available.dedup();
        return Err(Error::UnknownUser {
            user: held_out_user.to_string(),
            available,
        });
    }
    if train.is_empty() {
        return Err(contract_err!(
            "holding out {held_out_user:?} leaves no training samples"
        ));
    }
    Ok(DatasetSplit {
        train,
        test,
        held_out_user: held_out_user.to_string(),
    })
}

/// Per-sensor, per-channel mean and standard deviation.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Normalizer {
    pub mean: Vec<Vec<f64>>,
    pub std: Vec<Vec<f64>>,
}

impl Normalizer {
    /// Statistics over every value of `samples`; channels with zero spread get unit std.
    pub fn fit(meta: &SlicedDataset, samples: &[SlicedSample]) -> Result<Self> {
        if samples.is_empty() {
            return Err(contract_err!("cannot fit normalization statistics on no samples"));
        }
        let mut mean = Vec::new();
        let mut std = Vec::new();
        for (i, sensor) in meta.sensors.iter().enumerate() {
            let (c, sps) = (sensor.channels, sensor.samples_per_slice);
            let mut sum = vec![0.0; c];
            let mut sq = vec![0.0; c];
            let mut n = 0usize;
            for s in samples {
                for (j, chunk) in s.slices[i].chunks(sps).enumerate() {
                    let ch = j % c;
                    for &v in chunk {
                        sum[ch] += v as f64;
                        sq[ch] += (v as f64) * (v as f64);
                    }
                }
                n += meta.slices * sps;
            }
            let m: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
            let sd = sq
                .iter()
                .zip(&m)
                .map(|(q, mu)| {
                    let var = (q / n as f64 - mu * mu).max(0.0);
                    if var > 1e-24 {
                        var.sqrt()
                    } else {
                        1.0
                    }
                })
                .collect();
            mean.push(m);
            std.push(sd);
        }
        Ok(Normalizer { mean, std })
    }

    pub fn apply(&self, meta: &SlicedDataset, samples: &mut [SlicedSample]) {
        for s in samples {
            for (i, sensor) in meta.sensors.iter().enumerate() {
                let (c, sps) = (sensor.channels, sensor.samples_per_slice);
                for (j, chunk) in s.slices[i].chunks_mut(sps).enumerate() {
                    let ch = j % c;
                    let (m, sd) = (self.mean[i][ch], self.std[i][ch]);
                    for v in chunk {
                        *v = ((*v as f64 - m) / sd) as f32;
                    }
                }
            }
        }
    }
}

/// Z-scores both sides of a split with statistics of the training side.
pub fn normalize_split(meta: &SlicedDataset, split: &mut DatasetSplit) -> Result<Normalizer> {
    let norm = Normalizer::fit(meta, &split.train)?;
    norm.apply(meta, &mut split.train);
    norm.apply(meta, &mut split.test);
    Ok(norm)
}

/// Model inputs for a batch of windows: one `(B·K, channels, samples)` tensor per sensor.
#[derive(Clone, Debug)]
pub struct Batch<F> {
    pub sensors: Vec<Tensor<F>>,
    pub labels: Vec<usize>,
}

impl<F: Float> Batch<F> {
    pub fn from_samples(meta: &SlicedDataset, samples: &[&SlicedSample]) -> Result<Self> {
        if samples.is_empty() {
            return Err(contract_err!("empty batch"));
        }
        let b = samples.len();
        let sensors = meta
            .sensors
            .iter()
            .enumerate()
            .map(|(i, sensor)| {
                let mut data = Vec::with_capacity(b * meta.sensor_len(i));
                for s in samples {
                    if s.slices[i].len() != meta.sensor_len(i) {
                        return Err(crate::error::dim_err!(
                            "sensor {:?}: sample holds {} values, geometry needs {}",
                            sensor.name,
                            s.slices[i].len(),
                            meta.sensor_len(i)
                        ));
                    }
                    data.extend(s.slices[i].iter().map(|&v| F::of(v as f64)));
                }
                Tensor::new([b * meta.slices, sensor.channels, sensor.samples_per_slice], data)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Batch {
            sensors,
            labels: samples.iter().map(|s| s.label).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Assigns each window to the class whose mean window is closest in
/// Euclidean distance over all raw values.
#[derive(Clone, Debug)]
pub struct NearestCentroid {
    centroids: Vec<Option<Vec<f64>>>,
}

impl NearestCentroid {
    pub fn fit(samples: &[SlicedSample], num_classes: usize) -> Self {
        let mut sums: Vec<Option<Vec<f64>>> = vec![None; num_classes];
        let mut counts = vec![0usize; num_classes];
        for s in samples {
            let acc = sums[s.label].get_or_insert_with(|| vec![0.0; s.slices.iter().map(Vec::len).sum()]);
            for (a, v) in acc.iter_mut().zip(s.slices.iter().flatten()) {
                *a += *v as f64;
            }
            counts[s.label] += 1;
        }
        for (sum, &n) in sums.iter_mut().zip(&counts) {
            if let Some(v) = sum {
                v.iter_mut().for_each(|x| *x /= n as f64);
            }
        }
        NearestCentroid { centroids: sums }
    }

    pub fn predict(&self, sample: &SlicedSample) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (c, centroid) in self.centroids.iter().enumerate() {
            if let Some(mu) = centroid {
                let d: f64 = mu
                    .iter()
                    .zip(sample.slices.iter().flatten())
                    .map(|(m, &v)| (v as f64 - m).powi(2))
                    .sum();
                if d < best.0 {
                    best = (d, c);
                }
            }
        }
        best.1
    }

    pub fn accuracy(&self, samples: &[SlicedSample]) -> f64 {
        let hits = samples.iter().filter(|s| self.predict(s) == s.label).count();
        hits as f64 / samples.len().max(1) as f64
    }
}
