use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use super::{RawRecording, SensorStream};
use crate::error::{config_err, Result};
use crate::numerics::RngState;

/// Sensor layout of a synthetic dataset: `(name, channels)` pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub num_users: usize,
    pub num_classes: usize,
    pub sensors: Vec<(String, usize)>,
    /// Length of each per-(user, class) segment.
    pub seconds_per_segment: f64,
    pub sample_rate_hz: f64,
    pub noise_std: f64,
    /// Class offsets are drawn from `[-offset_range, offset_range]`.
    pub offset_range: f64,
    /// Classes differ only in how often a `±1` level switches, which takes
    /// seconds to observe.
    pub long_horizon: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_users: 6,
            num_classes: 6,
            sensors: vec![("acc".into(), 3), ("gyro".into(), 3)],
            seconds_per_segment: 60.0,
            sample_rate_hz: 32.0,
            noise_std: 0.1,
            offset_range: OFFSET_RANGE,
            long_horizon: false,
            seed: 0,
        }
    }
}

/// Per-class waveform parameters for one channel.
#[derive(Clone, Copy, Debug)]
struct Wave {
    freq: f64,
    phase: f64,
    offset: f64,
}

/// Default half-width of the per-class offset range.
pub const OFFSET_RANGE: f64 = 0.2;

/// Long-horizon dwell times are drawn from `[1 − DWELL_JITTER, 1 + DWELL_JITTER]`
/// times the class's mean dwell.
pub const DWELL_JITTER: f64 = 0.3;

/// Mean time between level switches of class `c` in long-horizon mode, in seconds.
pub fn switch_half_period(class: usize) -> f64 {
    0.5 + 0.5 * class as f64
}

/// User ids `u1, u2, …`.
pub fn user_name(index: usize) -> String {
    format!("u{}", index + 1)
}

/// Level `±1` at each of `n` sample times: a square wave whose dwell times
/// are drawn independently around `mean_dwell`, starting at a random phase.
fn telegraph(rng: &mut RngState, n: usize, rate_hz: f64, mean_dwell: f64) -> Vec<f64> {
    let dwell = |rng: &mut RngState| mean_dwell * rng.uniform_in(1.0 - DWELL_JITTER, 1.0 + DWELL_JITTER);
    let mut level = if rng.bernoulli(0.5) { 1.0 } else { -1.0 };
    let mut next_switch = dwell(rng) * rng.uniform();
    (0..n)
        .map(|i| {
            let t = i as f64 / rate_hz;
            while t >= next_switch {
                level = -level;
                next_switch += dwell(rng);
            }
            level
        })
        .collect()
}

/// One recording per `(user, class)` segment, ordered by user then class.
///
/// By default channel `j` of class `c` is `g_u · (sin(2π f t + φ) + o) + ε`
/// with class-specific `(f, φ, o)` and a class-shared time origin, a per-user
/// gain `g_u ∈ [0.8, 1.2]` and `ε ~ N(0, noise_std²)`.
///
/// In long-horizon mode every channel of a segment carries the same `±1`
/// level, switching after dwell times that average
/// [`switch_half_period`]`(c)`. Only the dwell statistics depend on the
/// class, so several switches must be observed to tell classes apart.
///
/// The output depends only on the config.
pub fn synth_generate(config: &SynthConfig) -> Result<Vec<RawRecording>> {
    if config.num_users == 0 || config.num_classes == 0 || config.sensors.is_empty() {
        return Err(config_err!("synthetic dataset needs users, classes and sensors"));
    }
    if config.sensors.iter().any(|(_, c)| *c == 0) || config.seconds_per_segment <= 0.0 || config.sample_rate_hz <= 0.0
    {
        return Err(config_err!("synthetic dataset has an empty sensor or segment"));
    }
    let root = RngState::new(config.seed);
    let mut class_rng = root.derive(1);
    let channels: usize = config.sensors.iter().map(|(_, c)| c).sum();
    let waves: Vec<(f64, Vec<Wave>)> = (0..config.num_classes)
        .map(|c| {
            let origin = class_rng.uniform_in(0.0, 100.0);
            let waves = (0..channels)
                .map(|j| Wave {
                    freq: 0.5 + 0.4 * c as f64 + 0.15 * j as f64,
                    phase: class_rng.uniform_in(0.0, TAU),
                    offset: class_rng.uniform_in(-config.offset_range, config.offset_range),
                })
                .collect();
            (origin, waves)
        })
        .collect();
    let n = (config.seconds_per_segment * config.sample_rate_hz).round() as usize;
    let ts: Vec<f64> = (0..n).map(|i| i as f64 / config.sample_rate_hz).collect();
    let classes: Vec<String> = (0..config.num_classes).map(|c| format!("class{c}")).collect();
    let mut out = Vec::with_capacity(config.num_users * config.num_classes);
    for u in 0..config.num_users {
        let mut rng = root.derive(100 + u as u64);
        let gain = rng.uniform_in(0.8, 1.2);
        for (c, (origin, class_waves)) in waves.iter().enumerate() {
            let levels = config
                .long_horizon
                .then(|| telegraph(&mut rng, n, config.sample_rate_hz, switch_half_period(c)));
            let mut streams = Vec::with_capacity(config.sensors.len());
            let mut j = 0;
            for (name, ch) in &config.sensors {
                let data = (0..*ch)
                    .map(|_| {
                        let w = class_waves[j];
                        j += 1;
                        ts.iter()
                            .enumerate()
                            .map(|(i, &t)| {
                                let clean = match &levels {
                                    Some(l) => l[i],
                                    None => (TAU * w.freq * (t + origin) + w.phase).sin() + w.offset,
                                };
                                gain * clean + config.noise_std * rng.normal()
                            })
                            .collect()
                    })
                    .collect();
                streams.push(SensorStream::new(name, config.sample_rate_hz, ts.clone(), data)?);
            }
            out.push(RawRecording {
                user_id: user_name(u),
                streams,
                label_times: ts.clone(),
                labels: vec![c; n],
                activity_set: classes.clone(),
            });
        }
    }
    Ok(out)
}
