//! Command implementations. Each writes its report to `out`; nothing written
//! to `out` depends on wall-clock time unless timing is requested.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Child, Command as Process, Stdio};

use serde::Serialize;
use umsnet::data::{
    ingest_csv, ingest_hhar, resample, slice_recordings, synth_generate, CsvSchema, DataFile, GenericSchema,
    RawRecording, RecordingSet, SlicedDataset, SynthConfig, WindowConfig,
};
use umsnet::evaluation::{check_geometry, evaluate, CostReport, EvalOptions, MetricsReport};
use umsnet::layers::Conv1dSpec;
use umsnet::lsr::DW_KERNEL;
use umsnet::model::{build_model, DatasetProfile, ModelConfig, SensorSpec};
use umsnet::numerics::{DType, Float};
use umsnet::training::{history_jsonl, train, Checkpoint, EpochRecord, TrainConfig, Trainer};
use umsnet::Error;

use crate::config::RunConfig;
use crate::{
    usage, AnalyzeArgs, CliError, Command, EvalArgs, GenerateArgs, IngestArgs, IngestFormat, LoocvArgs, OutputFormat,
    Profile, RunArgs, TrainArgs,
};

type Result<T, E = CliError> = std::result::Result<T, E>;

pub const CHECKPOINT_FILE: &str = "checkpoint.umsn";
pub const BEST_CHECKPOINT_FILE: &str = "best.umsn";
pub const HISTORY_FILE: &str = "history.jsonl";
pub const METRICS_FILE: &str = "metrics.json";
pub const RUN_FILE: &str = "run.json";

pub fn dispatch(command: Command, out: &mut dyn Write, _err: &mut dyn Write) -> Result<()> {
    match command {
        Command::Generate(a) => generate(&a, out),
        Command::Ingest(a) => ingest(&a, out),
        Command::Train(a) => train_cmd(&a, out),
        Command::Eval(a) => eval_cmd(&a, out),
        Command::Analyze(a) => analyze(&a, out),
        Command::Loocv(a) => loocv(&a, out),
    }
}

fn io_err(path: &Path, source: std::io::Error) -> CliError {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
    .into()
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| io_err(Path::new("<stdout>"), e))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes") + "\n"
}

fn window_config(window: f64, rate: f64, stride: Option<f64>) -> Result<WindowConfig> {
    let wc = WindowConfig {
        window_seconds: window,
        target_hz: rate,
        stride_seconds: stride,
        ..WindowConfig::default()
    };
    wc.validate()?;
    Ok(wc)
}

/// `user,class,count` rows in user then class order.
fn count_table(header: &str, counts: &BTreeMap<(String, String), usize>) -> String {
    let mut s = format!("user,class,{header}\n");
    for ((u, c), n) in counts {
        s += &format!("{u},{c},{n}\n");
    }
    s
}

fn store_dataset(
    recordings: Vec<RawRecording>,
    rate: f64,
    window: f64,
    stride: Option<f64>,
    raw: bool,
    path: &Path,
) -> Result<String> {
    let wc = window_config(window, rate, stride)?;
    let mut counts = BTreeMap::new();
    let (file, header) = if raw {
        let classes = recordings
            .first()
            .map(|r| r.activity_set.clone())
            .ok_or_else(|| Error::Config("no recordings to store".into()))?;
        let recordings = recordings
            .iter()
            .map(|r| resample(r, rate))
            .collect::<umsnet::Result<Vec<_>>>()?;
        for r in &recordings {
            for &l in &r.labels {
                *counts.entry((r.user_id.clone(), classes[l].clone())).or_default() += 1;
            }
        }
        let set = RecordingSet {
            sample_rate_hz: rate,
            classes,
            recordings,
        };
        (DataFile::Recordings(set), "frames")
    } else {
        let data = slice_recordings(&recordings, &wc)?;
        for s in &data.samples {
            *counts
                .entry((s.user_id.clone(), data.classes[s.label].clone()))
                .or_default() += 1;
        }
        (DataFile::Sliced(data), "windows")
    };
    file.save(path)?;
    Ok(count_table(header, &counts))
}

fn generate(a: &GenerateArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = SynthConfig {
        num_users: a.users,
        num_classes: a.classes,
        sensors: a.sensors.0.clone(),
        seconds_per_segment: a.seconds,
        sample_rate_hz: a.rate,
        noise_std: a.noise,
        offset_range: a.offset_range,
        long_horizon: a.long_horizon,
        seed: a.seed,
    };
    let recordings = synth_generate(&cfg)?;
    let table = store_dataset(recordings, a.rate, a.window, a.stride, a.raw, &a.out)?;
    emit(out, &table)
}

fn ingest(a: &IngestArgs, out: &mut dyn Write) -> Result<()> {
    let mut recordings = Vec::new();
    match a.format {
        IngestFormat::Hhar => {
            let (Some(acc), Some(gyr)) = (&a.accel, &a.gyro) else {
                return Err(usage("hhar ingestion needs --accel and --gyro"));
            };
            recordings = ingest_hhar(acc, gyr)?;
        }
        IngestFormat::Mhealth | IngestFormat::Generic => {
            if a.inputs.is_empty() {
                return Err(usage("no input files given"));
            }
            let schema = match &a.schema {
                Some(p) if a.format == IngestFormat::Generic => {
                    let text = fs::read_to_string(p).map_err(|e| io_err(p, e))?;
                    let s: GenericSchema =
                        serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", p.display())))?;
                    CsvSchema::Generic(s)
                }
                _ => CsvSchema::Mhealth,
            };
            for p in &a.inputs {
                recordings.extend(ingest_csv(p, &schema)?);
            }
        }
    }
    if recordings.is_empty() {
        return Err(Error::Schema("the input holds no labeled recordings".into()).into());
    }
    let table = store_dataset(recordings, a.rate, a.window, a.stride, a.raw, &a.out)?;
    emit(out, &table)
}

/// Loads a container, slicing raw recordings with `window` seconds per window
/// (1.5 s when unset).
pub fn load_dataset(path: &Path, window: Option<f64>, stride: Option<f64>) -> Result<SlicedDataset> {
    match DataFile::load(path)? {
        DataFile::Sliced(d) => {
            if let Some(w) = window.filter(|w| (w - d.window_seconds).abs() > 1e-9) {
                return Err(Error::Config(format!(
                    "{} holds {} s windows, not {w} s; regenerate it with that window or with --raw",
                    path.display(),
                    d.window_seconds
                ))
                .into());
            }
            if stride.is_some() {
                return Err(Error::Config("a stride only applies to raw recordings".into()).into());
            }
            Ok(d)
        }
        DataFile::Recordings(set) => {
            let wc = window_config(
                window.unwrap_or(WindowConfig::default().window_seconds),
                set.sample_rate_hz,
                stride,
            )?;
            Ok(slice_recordings(&set.recordings, &wc)?)
        }
    }
}

fn profile_of(meta: &SlicedDataset) -> DatasetProfile {
    DatasetProfile {
        name: "data".into(),
        sensors: meta.sensors.clone(),
        num_classes: meta.num_classes(),
    }
}

/// Everything a training run needs, with flags applied over the config file.
#[derive(Clone, Debug)]
pub struct ResolvedRun {
    pub config: RunConfig,
    pub data_path: PathBuf,
    pub meta: SlicedDataset,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

pub fn resolve(args: &RunArgs) -> Result<ResolvedRun> {
    let config = RunConfig::load_or_default(args.config.as_deref())?;
    let data_path = args
        .data
        .clone()
        .or_else(|| config.data.clone())
        .ok_or_else(|| usage("--data is required (or set \"data\" in the config)"))?;
    let window = args.window.or(config.window_seconds);
    let meta = load_dataset(&data_path, window, config.stride_seconds)?;
    let model = config.model.build(args.variant, &profile_of(&meta), meta.slices)?;
    let mut train = config.train.clone();
    if let Some(seed) = args.seed {
        train.seed = seed;
    }
    if let Some(epochs) = args.epochs {
        train.epochs = epochs;
    }
    train.validate()?;
    Ok(ResolvedRun {
        config,
        data_path,
        meta,
        model,
        train,
    })
}

/// The first epoch with the highest test accuracy.
pub fn best_record(history: &[EpochRecord]) -> Option<&EpochRecord> {
    history.iter().fold(None, |best: Option<&EpochRecord>, r| match best {
        Some(b) if b.test_accuracy >= r.test_accuracy => Some(b),
        _ => Some(r),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
struct RunRecord<'a> {
    data: &'a Path,
    holdout_user: &'a str,
    model: &'a ModelConfig,
    train: &'a TrainConfig,
}

/// Trains one fold and, with `dir`, writes its checkpoints, history and report.
pub fn train_fold(run: &ResolvedRun, holdout: &str, dir: Option<&Path>) -> Result<Vec<EpochRecord>> {
    check_geometry(&run.model, &run.meta)?;
    let split = umsnet::data::leave_one_user_out(&run.meta.samples, holdout)?;
    let outcome = match run.train.precision {
        DType::F32 => train::<f32>(run.model.clone(), &run.meta, &split, run.train.clone())?,
        DType::F64 => train::<f64>(run.model.clone(), &run.meta, &split, run.train.clone())?,
    };
    if let Some(dir) = dir {
        create_dir(dir)?;
        outcome.last.save(&dir.join(CHECKPOINT_FILE))?;
        outcome.best.save(&dir.join(BEST_CHECKPOINT_FILE))?;
        write_file(&dir.join(HISTORY_FILE), history_jsonl(&outcome.history))?;
        let report = evaluate_checkpoint(&outcome.last, &run.meta, Some(holdout), 0)?;
        write_file(&dir.join(METRICS_FILE), to_json(&report))?;
        let record = RunRecord {
            data: &run.data_path,
            holdout_user: holdout,
            model: &run.model,
            train: &run.train,
        };
        write_file(&dir.join(RUN_FILE), to_json(&record))?;
    }
    Ok(outcome.history)
}

fn default_holdout(meta: &SlicedDataset) -> Result<String> {
    meta.users()
        .pop()
        .ok_or_else(|| Error::Config("the dataset holds no samples".into()).into())
}

fn train_cmd(a: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let run = resolve(&a.run)?;
    let dir = a
        .run
        .out
        .clone()
        .or_else(|| run.config.output_dir.clone())
        .ok_or_else(|| usage("--out is required (or set \"output_dir\" in the config)"))?;
    let holdout = match a.holdout_user.clone().or_else(|| run.config.holdout_user.clone()) {
        Some(u) => u,
        None => default_holdout(&run.meta)?,
    };
    let history = train_fold(&run, &holdout, Some(&dir))?;
    let summary = match (history.last(), best_record(&history)) {
        (Some(last), Some(best)) => format!(
            "held-out {holdout}: epoch {} accuracy {:.4} macro-F1 {:.4}; best epoch {} accuracy {:.4}\n",
            last.epoch, last.test_accuracy, last.test_macro_f1, best.epoch, best.test_accuracy
        ),
        _ => format!("held-out {holdout}: no epochs run\n"),
    };
    emit(out, &summary)
}

fn eval_with<F: Float>(
    ckpt: &Checkpoint,
    meta: &SlicedDataset,
    test: &[umsnet::data::SlicedSample],
    repeats: usize,
) -> Result<MetricsReport> {
    let trainer = Trainer::<F>::from_checkpoint(ckpt)?;
    let options = EvalOptions {
        batch_size: ckpt.train_config.eval_batch_size,
        time_repeats: repeats,
    };
    Ok(evaluate(&trainer.model, &trainer.store, meta, test, options)?)
}

/// Scores a checkpoint on one user's samples, normalized as during training.
pub fn evaluate_checkpoint(
    ckpt: &Checkpoint,
    meta: &SlicedDataset,
    holdout: Option<&str>,
    repeats: usize,
) -> Result<MetricsReport> {
    check_geometry(&ckpt.model_config, meta)?;
    let user = holdout
        .map(str::to_string)
        .or_else(|| ckpt.held_out_user.clone())
        .ok_or_else(|| usage("--holdout-user is required for this checkpoint"))?;
    let mut test: Vec<_> = meta.samples.iter().filter(|s| s.user_id == user).cloned().collect();
    if test.is_empty() {
        return Err(Error::UnknownUser {
            user,
            available: meta.users(),
        }
        .into());
    }
    if let Some(n) = &ckpt.normalizer {
        n.apply(meta, &mut test);
    }
    match ckpt.dtype {
        DType::F32 => eval_with::<f32>(ckpt, meta, &test, repeats),
        DType::F64 => eval_with::<f64>(ckpt, meta, &test, repeats),
    }
}

fn eval_cmd(a: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let window = ckpt.model_config.slices as f64 * WindowConfig::default().slice_seconds;
    let meta = match DataFile::load(&a.data)? {
        DataFile::Sliced(d) => d,
        DataFile::Recordings(_) => load_dataset(&a.data, Some(window), None)?,
    };
    let report = evaluate_checkpoint(&ckpt, &meta, a.holdout_user.as_deref(), a.time_repeats)?;
    emit(out, &to_json(&report))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Kernel3Row {
    pub name: String,
    pub channels: usize,
    pub depthwise_weights: usize,
    pub dense_weights: usize,
    /// `depthwise_weights / dense_weights`, which is `1 / channels`.
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostAnalysis {
    pub variant: String,
    pub profile: String,
    pub window_seconds: f64,
    pub slices: usize,
    pub batch: usize,
    pub grouped: bool,
    pub fingerprint: String,
    pub params: u64,
    pub mult_adds: u64,
    pub layers: Vec<umsnet::evaluation::LayerCost>,
    pub kernel3_convs: Vec<Kernel3Row>,
}

pub fn analyze_model(a: &AnalyzeArgs) -> Result<CostAnalysis> {
    let wc = window_config(a.window, a.rate, None)?;
    let sps = wc.samples_per_slice()?;
    let profile = match a.profile {
        Profile::Hhar => DatasetProfile::hhar(sps),
        Profile::Mhealth => DatasetProfile::mhealth(sps),
        Profile::Custom => {
            let (Some(sensors), Some(classes)) = (&a.sensors, a.classes) else {
                return Err(usage("the custom profile needs --sensors and --classes"));
            };
            DatasetProfile {
                name: "custom".into(),
                sensors: sensors.0.iter().map(|(n, c)| SensorSpec::new(n, *c, sps)).collect(),
                num_classes: classes,
            }
        }
    };
    let run = RunConfig::load_or_default(a.config.as_deref())?;
    let mut cfg = run.model.build(Some(a.variant), &profile, wc.slices()?)?;
    if a.dense {
        cfg.block.grouped = false;
    }
    if a.batch == 0 {
        return Err(usage("--batch must be positive"));
    }
    let (model, store) = build_model::<f32>(cfg.clone(), 0)?;
    let cost: CostReport = model.cost(&store, a.batch)?;
    let kernel3_convs = model
        .single
        .iter()
        .chain(std::iter::once(&model.multi))
        .flat_map(|stack| stack.blocks())
        .map(|b| {
            let c = b.channels;
            let spec = Conv1dSpec::new(c, c, DW_KERNEL).padding(DW_KERNEL / 2);
            let depthwise = spec.groups(c).weight_count();
            let dense = spec.weight_count();
            Kernel3Row {
                name: b.dwconv.name.clone(),
                channels: c,
                depthwise_weights: depthwise,
                dense_weights: dense,
                ratio: depthwise as f64 / dense as f64,
            }
        })
        .collect();
    Ok(CostAnalysis {
        variant: cfg.variant.to_string(),
        profile: profile.name,
        window_seconds: a.window,
        slices: cfg.slices,
        batch: a.batch,
        grouped: cfg.block.grouped,
        fingerprint: umsnet::evaluation::fingerprint(&cfg),
        params: cost.params,
        mult_adds: cost.mult_adds,
        layers: cost.layers.clone(),
        kernel3_convs,
    })
}

fn analysis_csv(a: &CostAnalysis) -> String {
    let mut s = String::from("layer,params,mult_adds\n");
    for l in &a.layers {
        s += &format!("{},{},{}\n", l.name, l.params, l.mult_adds);
    }
    s += &format!("total,{},{}\n", a.params, a.mult_adds);
    s
}

fn analyze(a: &AnalyzeArgs, out: &mut dyn Write) -> Result<()> {
    let analysis = analyze_model(a)?;
    let json = to_json(&analysis);
    let csv = analysis_csv(&analysis);
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        write_file(&dir.join("cost.json"), &json)?;
        write_file(&dir.join("cost.csv"), &csv)?;
    }
    emit(
        out,
        match a.format {
            OutputFormat::Json => &json,
            OutputFormat::Csv => &csv,
        },
    )
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FoldRow {
    pub user: String,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub best_epoch: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LoocvReport {
    pub folds: Vec<FoldRow>,
    pub mean_accuracy: f64,
    pub mean_macro_f1: f64,
}

impl LoocvReport {
    pub fn from_folds(folds: Vec<FoldRow>) -> Self {
        let n = folds.len() as f64;
        LoocvReport {
            mean_accuracy: folds.iter().map(|f| f.accuracy).sum::<f64>() / n,
            mean_macro_f1: folds.iter().map(|f| f.macro_f1).sum::<f64>() / n,
            folds,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("user,accuracy,macro_f1,best_epoch\n");
        for f in &self.folds {
            s += &format!("{},{},{},{}\n", f.user, f.accuracy, f.macro_f1, f.best_epoch);
        }
        s += &format!("mean,{},{},\n", self.mean_accuracy, self.mean_macro_f1);
        s
    }
}

fn fold_row(user: &str, history: &[EpochRecord]) -> Result<FoldRow> {
    let best = best_record(history).ok_or_else(|| usage("loocv needs at least one epoch"))?;
    Ok(FoldRow {
        user: user.to_string(),
        accuracy: best.test_accuracy,
        macro_f1: best.test_macro_f1,
        best_epoch: best.epoch,
    })
}

fn read_history(path: &Path) -> Result<Vec<EpochRecord>> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    text.lines()
        .map(|l| serde_json::from_str(l).map_err(|e| Error::Integrity(format!("{}: {e}", path.display())).into()))
        .collect()
}

fn spawn_fold(args: &RunArgs, run: &ResolvedRun, user: &str, dir: &Path) -> Result<Child> {
    let exe = std::env::current_exe().map_err(|e| io_err(Path::new("<current executable>"), e))?;
    let mut cmd = Process::new(exe);
    cmd.arg("train")
        .arg("--data")
        .arg(&run.data_path)
        .arg("--holdout-user")
        .arg(user)
        .arg("--out")
        .arg(dir)
        .arg("--seed")
        .arg(run.train.seed.to_string())
        .arg("--epochs")
        .arg(run.train.epochs.to_string());
    if let Some(c) = &args.config {
        cmd.arg("--config").arg(c);
    }
    if let Some(v) = args.variant {
        cmd.arg("--variant").arg(v.to_string());
    }
    if let Some(w) = args.window {
        cmd.arg("--window").arg(w.to_string());
    }
    cmd.stdout(Stdio::null())
        .spawn()
        .map_err(|e| io_err(Path::new("<fold process>"), e))
}

fn wait_fold(user: &str, mut child: Child) -> Result<()> {
    let status = child.wait().map_err(|e| io_err(Path::new("<fold process>"), e))?;
    if !status.success() {
        return Err(Error::Contract(format!("fold for user {user} failed with {status}")).into());
    }
    Ok(())
}

pub fn run_loocv(args: &LoocvArgs) -> Result<LoocvReport> {
    let run = resolve(&args.run)?;
    let users = run.meta.users();
    if users.len() < 2 {
        return Err(usage(format!(
            "loocv needs at least two users, the data has {}",
            users.len()
        )));
    }
    if args.jobs == 0 {
        return Err(usage("--jobs must be at least 1"));
    }
    let out_dir = args.run.out.clone().or_else(|| run.config.output_dir.clone());
    let mut folds = Vec::with_capacity(users.len());
    if args.jobs == 1 {
        for u in &users {
            let history = train_fold(&run, u, out_dir.as_ref().map(|d| d.join(u)).as_deref())?;
            folds.push(fold_row(u, &history)?);
        }
    } else {
        let dir = out_dir.ok_or_else(|| usage("--jobs above 1 needs --out for the fold outputs"))?;
        let mut running: Vec<(String, Child)> = Vec::new();
        for u in &users {
            if running.len() == args.jobs {
                let (user, child) = running.remove(0);
                wait_fold(&user, child)?;
            }
            running.push((u.clone(), spawn_fold(&args.run, &run, u, &dir.join(u))?));
        }
        for (user, child) in running {
            wait_fold(&user, child)?;
        }
        for u in &users {
            folds.push(fold_row(u, &read_history(&dir.join(u).join(HISTORY_FILE))?)?);
        }
    }
    Ok(LoocvReport::from_folds(folds))
}

fn loocv(a: &LoocvArgs, out: &mut dyn Write) -> Result<()> {
    let report = run_loocv(a)?;
    let csv = report.to_csv();
    if let Some(dir) = a.run.out.as_ref() {
        create_dir(dir)?;
        write_file(&dir.join("loocv.csv"), &csv)?;
        write_file(&dir.join("loocv.json"), to_json(&report))?;
    }
    emit(out, &csv)
}
