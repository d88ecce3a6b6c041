//! CSV readers. Every reader drops unlabeled rows and emits one
//! [`RawRecording`] per contiguous run of one label for one user.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{RawRecording, SensorStream};
use crate::error::{Error, Result};

macro_rules! schema_err {
    ($($arg:tt)*) => { Error::Schema(format!($($arg)*)) };
}

/// Activity names of the HHAR release, in class-index order.
pub const HHAR_ACTIVITIES: [&str; 6] = ["bike", "sit", "stand", "walk", "stairsup", "stairsdown"];

/// MHEALTH label codes kept as classes, in class-index order.
pub const MHEALTH_LABELS: [u32; 7] = [1, 2, 3, 4, 5, 9, 10];
pub const MHEALTH_ACTIVITIES: [&str; 7] = [
    "standing",
    "sitting",
    "lying",
    "walking",
    "climbing_stairs",
    "cycling",
    "jogging",
];
pub const MHEALTH_RATE_HZ: f64 = 50.0;
pub const MHEALTH_COLUMNS: usize = 24;
/// Zero-based column ranges of the four MHEALTH streams: chest accelerometer,
/// left-ankle gyroscope, left-ankle magnetometer and the two ECG leads.
pub const MHEALTH_STREAMS: [(&str, &[usize]); 4] = [
    ("acc", &[0, 1, 2]),
    ("gyro", &[8, 9, 10]),
    ("mag", &[11, 12, 13]),
    ("ecg", &[3, 4]),
];

/// Column layout of a user-described CSV file, usually stored next to it as
/// `<file>.schema.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenericSchema {
    #[serde(default = "comma")]
    pub delimiter: char,
    /// Timestamp column; rows are taken as uniformly spaced when absent.
    #[serde(default)]
    pub time_column: Option<String>,
    /// Seconds per timestamp unit.
    #[serde(default = "one")]
    pub time_unit_seconds: f64,
    pub sample_rate_hz: f64,
    pub user_column: String,
    pub label_column: String,
    /// Label values that mark a row as unlabeled.
    #[serde(default = "null_labels")]
    pub null_labels: Vec<String>,
    pub classes: Vec<String>,
    pub sensors: Vec<GenericSensor>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenericSensor {
    pub name: String,
    pub columns: Vec<String>,
}

fn comma() -> char {
    ','
}

fn one() -> f64 {
    1.0
}

fn null_labels() -> Vec<String> {
    vec![String::new(), "null".into()]
}

#[derive(Clone, Debug, PartialEq)]
pub enum CsvSchema {
    /// One HHAR sensor file (`timestamp`/`Creation_Time` in nanoseconds,
    /// `user`, `device`, `gt`, `x`, `y`, `z`); the stream takes `sensor` as its name.
    Hhar {
        sensor: String,
    },
    /// One MHEALTH subject log: 24 whitespace-separated columns, no header.
    Mhealth,
    Generic(GenericSchema),
}

pub fn ingest_csv(path: &Path, schema: &CsvSchema) -> Result<Vec<RawRecording>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match schema {
        CsvSchema::Hhar { sensor } => Ok(hhar_segments(&text, sensor)?
            .into_iter()
            .map(Segment::into_recording)
            .collect()),
        CsvSchema::Mhealth => mhealth(&text, &user_from_path(path)),
        CsvSchema::Generic(s) => generic(&text, s),
    }
}

/// Pairs HHAR accelerometer and gyroscope segments of the same user, device
/// and activity whose time spans overlap.
pub fn ingest_hhar(accel: &Path, gyro: &Path) -> Result<Vec<RawRecording>> {
    let read = |p: &Path| fs::read_to_string(p).map_err(|e| Error::io(p, e));
    let acc = hhar_segments(&read(accel)?, "acc")?;
    let gyr = hhar_segments(&read(gyro)?, "gyro")?;
    let mut out = Vec::new();
    for a in acc {
        let (a0, a1) = a.span();
        let matched = gyr.iter().find(|g| {
            let (g0, g1) = g.span();
            g.user == a.user && g.device == a.device && g.label == a.label && g0 < a1 && a0 < g1
        });
        if let Some(g) = matched {
            let stream = g.stream.clone();
            let mut rec = a.into_recording();
            rec.streams.push(stream);
            out.push(rec);
        }
    }
    Ok(out)
}

fn user_from_path(path: &Path) -> String {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("user");
    stem.strip_prefix("mHealth_").unwrap_or(stem).to_string()
}

struct Segment {
    user: String,
    device: String,
    label: usize,
    classes: Vec<String>,
    stream: SensorStream,
}

impl Segment {
    fn span(&self) -> (f64, f64) {
        let t = &self.stream.timestamps;
        (t[0], t[t.len() - 1])
    }

    fn into_recording(self) -> RawRecording {
        let n = self.stream.len();
        RawRecording {
            user_id: self.user,
            label_times: self.stream.timestamps.clone(),
            labels: vec![self.label; n],
            streams: vec![self.stream],
            activity_set: self.classes,
        }
    }
}

fn column(headers: &csv::StringRecord, names: &[&str]) -> Result<usize> {
    headers
        .iter()
        .position(|h| names.iter().any(|n| h.trim() == *n))
        .ok_or_else(|| schema_err!("missing column {:?}", names[0]))
}

fn parse_f64(field: &str, what: &str, line: usize) -> Result<f64> {
    field
        .trim()
        .parse()
        .map_err(|_| schema_err!("line {line}: {what} value {field:?} is not a number"))
}

/// Median spacing of ascending timestamps, as a rate.
fn estimate_rate(ts: &[f64]) -> f64 {
    let mut d: Vec<f64> = ts.windows(2).map(|w| w[1] - w[0]).filter(|&x| x > 0.0).collect();
    if d.is_empty() {
        return 0.0;
    }
    d.sort_by(f64::total_cmp);
    1.0 / d[d.len() / 2]
}

fn hhar_segments(text: &str, sensor: &str) -> Result<Vec<Segment>> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| schema_err!("{e}"))?.clone();
    let c_time = column(&headers, &["timestamp", "Creation_Time"])?;
    let c_user = column(&headers, &["user", "User"])?;
    let c_dev = column(&headers, &["device", "Device"])?;
    let c_gt = column(&headers, &["gt"])?;
    let c_xyz = [
        column(&headers, &["x"])?,
        column(&headers, &["y"])?,
        column(&headers, &["z"])?,
    ];
    // (user, device) → rows of (time, label, xyz), in file order
    let mut groups: BTreeMap<(String, String), Vec<(f64, usize, [f64; 3])>> = BTreeMap::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| schema_err!("line {line}: {e}"))?;
        let gt = rec.get(c_gt).unwrap_or("").trim();
        if gt.is_empty() || gt == "null" {
            continue;
        }
        let label = HHAR_ACTIVITIES
            .iter()
            .position(|a| *a == gt)
            .ok_or_else(|| schema_err!("line {line}: unknown activity {gt:?}"))?;
        let t = parse_f64(rec.get(c_time).unwrap_or(""), "timestamp", line)? * 1e-9;
        let mut xyz = [0.0; 3];
        for (v, &c) in xyz.iter_mut().zip(&c_xyz) {
            *v = parse_f64(rec.get(c).unwrap_or(""), "axis", line)?;
        }
        let key = (
            rec.get(c_user).unwrap_or("").to_string(),
            rec.get(c_dev).unwrap_or("").to_string(),
        );
        groups.entry(key).or_default().push((t, label, xyz));
    }
    let classes: Vec<String> = HHAR_ACTIVITIES.iter().map(|s| s.to_string()).collect();
    let mut out = Vec::new();
    for ((user, device), mut rows) in groups {
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));
        for run in rows.chunk_by(|a, b| a.1 == b.1) {
            let ts: Vec<f64> = run.iter().map(|r| r.0).collect();
            let channels = (0..3).map(|c| run.iter().map(|r| r.2[c]).collect()).collect();
            out.push(Segment {
                user: user.clone(),
                device: device.clone(),
                label: run[0].1,
                classes: classes.clone(),
                stream: SensorStream::new(sensor, estimate_rate(&ts), ts, channels)?,
            });
        }
    }
    Ok(out)
}

fn mhealth(text: &str, user: &str) -> Result<Vec<RawRecording>> {
    let classes: Vec<String> = MHEALTH_ACTIVITIES.iter().map(|s| s.to_string()).collect();
    // (row index, class, values)
    let mut rows: Vec<(usize, Option<usize>, Vec<f64>)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let values = line
            .split_whitespace()
            .map(|f| parse_f64(f, "column", i + 1))
            .collect::<Result<Vec<_>>>()?;
        if values.len() != MHEALTH_COLUMNS {
            return Err(schema_err!(
                "line {}: expected {MHEALTH_COLUMNS} columns, found {}",
                i + 1,
                values.len()
            ));
        }
        let code = values[MHEALTH_COLUMNS - 1] as u32;
        let class = MHEALTH_LABELS.iter().position(|&l| l == code);
        rows.push((rows.len(), class, values));
    }
    let mut out = Vec::new();
    for run in rows.chunk_by(|a, b| a.1 == b.1) {
        let Some(label) = run[0].1 else { continue };
        let ts: Vec<f64> = run.iter().map(|r| r.0 as f64 / MHEALTH_RATE_HZ).collect();
        let streams = MHEALTH_STREAMS
            .iter()
            .map(|(name, cols)| {
                let channels = cols.iter().map(|&c| run.iter().map(|r| r.2[c]).collect()).collect();
                SensorStream::new(name, MHEALTH_RATE_HZ, ts.clone(), channels)
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(RawRecording {
            user_id: user.to_string(),
            streams,
            label_times: ts.clone(),
            labels: vec![label; ts.len()],
            activity_set: classes.clone(),
        });
    }
    Ok(out)
}

fn generic(text: &str, schema: &GenericSchema) -> Result<Vec<RawRecording>> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    if !schema.delimiter.is_ascii() {
        return Err(schema_err!("delimiter {:?} is not ASCII", schema.delimiter));
    }
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter as u8)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| schema_err!("{e}"))?.clone();
    let c_user = column(&headers, &[schema.user_column.as_str()])?;
    let c_label = column(&headers, &[schema.label_column.as_str()])?;
    let c_time = schema
        .time_column
        .as_deref()
        .map(|c| column(&headers, &[c]))
        .transpose()?;
    let sensor_cols = schema
        .sensors
        .iter()
        .map(|s| {
            s.columns
                .iter()
                .map(|c| column(&headers, &[c.as_str()]))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    // (user, time, class or None, values per sensor)
    let mut rows: Vec<(String, f64, Option<usize>, Vec<Vec<f64>>)> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| schema_err!("line {line}: {e}"))?;
        let raw = rec.get(c_label).unwrap_or("").trim();
        let class = if schema.null_labels.iter().any(|n| n == raw) {
            None
        } else {
            Some(
                schema
                    .classes
                    .iter()
                    .position(|c| c == raw)
                    .ok_or_else(|| schema_err!("line {line}: unknown class {raw:?}"))?,
            )
        };
        let t = match c_time {
            Some(c) => parse_f64(rec.get(c).unwrap_or(""), "time", line)? * schema.time_unit_seconds,
            None => rows.len() as f64 / schema.sample_rate_hz,
        };
        let values = sensor_cols
            .iter()
            .map(|cols| {
                cols.iter()
                    .map(|&c| parse_f64(rec.get(c).unwrap_or(""), "sensor", line))
                    .collect()
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push((rec.get(c_user).unwrap_or("").to_string(), t, class, values));
    }
    let mut out = Vec::new();
    for run in rows.chunk_by(|a, b| a.0 == b.0 && a.2 == b.2) {
        let Some(label) = run[0].2 else { continue };
        let ts: Vec<f64> = run.iter().map(|r| r.1).collect();
        let streams = schema
            .sensors
            .iter()
            .enumerate()
            .map(|(s, sensor)| {
                let channels = (0..sensor.columns.len())
                    .map(|c| run.iter().map(|r| r.3[s][c]).collect())
                    .collect();
                SensorStream::new(&sensor.name, schema.sample_rate_hz, ts.clone(), channels)
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(RawRecording {
            user_id: run[0].0.clone(),
            streams,
            label_times: ts.clone(),
            labels: vec![label; ts.len()],
            activity_set: schema.classes.clone(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    fn schema() -> GenericSchema {
        serde_json::from_str(
            r#"{"sample_rate_hz": 2.0, "time_column": "t", "user_column": "user", "label_column": "label",
                "classes": ["walk", "sit"], "sensors": [{"name": "acc", "columns": ["ax", "ay"]}]}"#,
        )
        .unwrap()
    }

    #[test]
    fn two_row_generic_file() {
        let f = file("t,user,label,ax,ay\n0,u1,walk,1,2\n0.5,u1,walk,3,4\n");
        let recs = ingest_csv(f.path(), &CsvSchema::Generic(schema())).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].streams[0].channels, vec![vec![1.0, 3.0], vec![2.0, 4.0]]);
    }

    #[test]
    fn null_labels_split_and_drop() {
        let f = file("t,user,label,ax,ay\n0,u1,walk,1,2\n1,u1,null,0,0\n2,u1,walk,3,4\n3,u1,sit,3,4\n");
        let recs = ingest_csv(f.path(), &CsvSchema::Generic(schema())).unwrap();
        let lens: Vec<usize> = recs.iter().map(|r| r.labels.len()).collect();
        assert_eq!(lens, vec![1, 1, 1]);
        assert_eq!(recs[2].labels, vec![1]);
    }

    #[test]
    fn missing_column_is_named() {
        let f = file("t,user,label,ax\n0,u1,walk,1\n");
        match ingest_csv(f.path(), &CsvSchema::Generic(schema())) {
            Err(Error::Schema(m)) => assert!(m.contains("ay"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_file_gives_no_recordings() {
        let f = file("");
        assert!(ingest_csv(f.path(), &CsvSchema::Generic(schema())).unwrap().is_empty());
        assert!(ingest_csv(f.path(), &CsvSchema::Mhealth).unwrap().is_empty());
    }

    #[test]
    fn mhealth_streams() {
        let row = |label: u32| {
            let mut v: Vec<String> = (0..23).map(|c| c.to_string()).collect();
            v.push(label.to_string());
            v.join("\t")
        };
        let text = [row(0), row(4), row(4), row(0), row(12)].join("\n");
        let f = file(&text);
        let recs = ingest_csv(f.path(), &CsvSchema::Mhealth).unwrap();
        assert_eq!(recs.len(), 1);
        let chans: Vec<usize> = recs[0].streams.iter().map(|s| s.num_channels()).collect();
        assert_eq!(chans, vec![3, 3, 3, 2]);
        assert_eq!(recs[0].labels, vec![3, 3]);
        assert_eq!(recs[0].stream("ecg").unwrap().channels[1][0], 4.0);
        assert_eq!(recs[0].stream("gyro").unwrap().channels[0][0], 8.0);
    }

    #[test]
    fn hhar_groups_by_user_and_device() {
        let text = "Creation_Time,x,y,z,User,Model,Device,gt\n\
                    0,1,2,3,a,nexus4,nexus4_1,walk\n\
                    20000000,1,2,3,a,nexus4,nexus4_1,walk\n\
                    10000000,1,2,3,a,s3,s3_1,sit\n\
                    40000000,1,2,3,a,nexus4,nexus4_1,null\n";
        let f = file(text);
        let recs = ingest_csv(f.path(), &CsvSchema::Hhar { sensor: "acc".into() }).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].labels, vec![3, 3]);
        assert!((recs[0].streams[0].sample_rate_hz - 50.0).abs() < 1e-9);
    }
}
