//! The operations behind each CLI subcommand. Every command writes only
//! under its output directory and is deterministic given its arguments.

use std::fs;
use std::path::{Path, PathBuf};

use logattn_core::annotations::{dataset_stats, filter_min_size, split_train_val};
use logattn_core::attention::{
    discrepancy_report, log_attention_derivative, log_attention_forward, GradientConvention,
};
use logattn_core::detector::{
    train, DetectorError, Sample, TrainConfig, TrainingLog, DEFAULT_CONF_THRESHOLD, DEFAULT_NMS_THRESHOLD, DEFAULT_SEED,
};
use logattn_core::evaluation::{evaluate, EvalConfig, EvalError, ImageEval};
use logattn_core::gradcheck::{finite_diff_grad, relative_error};
use logattn_core::synth::{generate_dataset, SceneSpec, SynthError};
use logattn_core::{AttentionKind, BackboneConfig, Detection, Detector, EvalReport, Scalar, Tensor};
use serde::Serialize;
use thiserror::Error;

use crate::dataset::{self, DatasetError};
use crate::pnm;
use crate::reports::{self, CompareRow, StatsReport};
use crate::weights::{self, WeightsError};

/// Stages that receive attention when `--stages` is not given.
pub const DEFAULT_ATTENTION_STAGES: &[usize] = &[2];
pub const GRADCHECK_TOLERANCE: f64 = 1e-6;
pub const WEIGHTS_STEM: &str = "weights";

#[derive(Debug, Error)]
pub enum CommandError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Weights(#[from] WeightsError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{0}")]
    CheckFailed(String),
}

impl CommandError {
    /// 1 for bad arguments, 2 for bad or unreadable data, 3 for a failed numerical check.
    pub fn exit_code(&self) -> i32 {
        match self {
            CommandError::Usage(_) | CommandError::Eval(_) => 1,
            CommandError::Detector(
                DetectorError::InvalidConfig(_)
                | DetectorError::InvalidStage { .. }
                | DetectorError::InvalidTrainConfig(_),
            ) => 1,
            CommandError::Synth(SynthError::InvalidSpec(_) | SynthError::NoImages) => 1,
            CommandError::CheckFailed(_) => 3,
            _ => 2,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CommandError + '_ {
    move |source| CommandError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CommandError> {
    fs::write(path, contents).map_err(io_err(path))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Debug, Clone)]
pub struct Global {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub precision: Precision,
}

impl Default for Global {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            out_dir: PathBuf::from("out"),
            precision: Precision::F64,
        }
    }
}

impl Global {
    fn ensure_out_dir(&self) -> Result<&Path, CommandError> {
        fs::create_dir_all(&self.out_dir).map_err(io_err(&self.out_dir))?;
        Ok(&self.out_dir)
    }
}

/// Parses `"1,2"` into stage indices; an empty string means no stages.
pub fn parse_stages(s: &str) -> Result<Vec<usize>, CommandError> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| CommandError::Usage(format!("invalid stage index {p:?} in --stages {s:?}")))
        })
        .collect()
}

pub fn parse_seeds(s: &str) -> Result<Vec<u64>, CommandError> {
    let seeds: Vec<u64> = s
        .split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| CommandError::Usage(format!("invalid seed {p:?} in --seeds {s:?}")))
        })
        .collect::<Result<_, _>>()?;
    Ok(seeds)
}

pub fn parse_attention(s: &str) -> Result<AttentionKind, CommandError> {
    AttentionKind::from_name(s.trim()).ok_or_else(|| {
        CommandError::Usage(format!(
            "unknown attention {s:?} (expected log, sigmoid, softmax or none)"
        ))
    })
}

/// `"lo:hi"` with `lo < hi`.
pub fn parse_range(s: &str) -> Result<(f64, f64), CommandError> {
    let bad = || CommandError::Usage(format!("invalid range {s:?} (expected lo:hi with lo < hi)"));
    let (lo, hi) = s.split_once(':').ok_or_else(bad)?;
    let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
    if !(lo < hi && lo.is_finite() && hi.is_finite()) {
        return Err(bad());
    }
    Ok((lo, hi))
}

// ---------------------------------------------------------------- synth

#[derive(Debug, Clone)]
pub struct SynthArgs {
    pub spec: Option<PathBuf>,
    pub n: usize,
}

pub fn read_scene_spec(path: Option<&Path>) -> Result<SceneSpec, CommandError> {
    let Some(path) = path else {
        return Ok(SceneSpec::default());
    };
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| CommandError::Usage(format!("{}: invalid scene spec: {e}", path.display())))
}

pub fn cmd_synth(global: &Global, args: &SynthArgs) -> Result<String, CommandError> {
    let spec = read_scene_spec(args.spec.as_deref())?;
    let images = generate_dataset(&spec, args.n, global.seed)?;
    let out = global.ensure_out_dir()?;
    let manifest = dataset::write_dataset(out, &images)?;
    write(&out.join("scene_spec.json"), reports::to_json(&spec))?;
    let objects: usize = images.iter().map(|i| i.annotation.boxes.len()).sum();
    Ok(format!(
        "wrote {} images with {objects} objects; manifest {}\n",
        images.len(),
        manifest.display()
    ))
}

// ---------------------------------------------------------------- train

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub data: PathBuf,
    pub attention: AttentionKind,
    /// `None` selects [`DEFAULT_ATTENTION_STAGES`] (or nothing for `none`).
    pub stages: Option<Vec<usize>>,
    pub config: TrainConfig,
}

/// The default backbone sized to the given samples, with the requested attention.
pub fn backbone_for(samples: &[Sample], attention: AttentionKind, stages: Option<&[usize]>) -> BackboneConfig {
    let shape = samples[0].image.shape();
    let stages: Vec<usize> = match (attention, stages) {
        (_, Some(s)) => s.to_vec(),
        (AttentionKind::Identity, None) => Vec::new(),
        (_, None) => DEFAULT_ATTENTION_STAGES.to_vec(),
    };
    BackboneConfig {
        input_channels: shape[0],
        input_height: shape[1],
        input_width: shape[2],
        ..BackboneConfig::default()
    }
    .with_attention(attention, stages)
}

fn cast_samples<T: Scalar>(samples: &[Sample]) -> Vec<Sample<T>> {
    samples
        .iter()
        .map(|s| Sample {
            image: s.image.cast(),
            annotation: s.annotation.clone(),
        })
        .collect()
}

/// Trains in the requested precision and writes weights + log into `dir`.
fn train_and_save(
    samples: &[Sample],
    config: &TrainConfig,
    backbone: BackboneConfig,
    precision: Precision,
    dir: &Path,
    stem: &str,
) -> Result<(PathBuf, TrainingLog), CommandError> {
    match precision {
        Precision::F64 => {
            let (det, log) = train(samples, config, backbone)?;
            Ok((weights::save(&det, dir, stem)?, log))
        }
        Precision::F32 => {
            let (det, log) = train(&cast_samples::<f32>(samples), config, backbone)?;
            Ok((weights::save(&det, dir, stem)?, log))
        }
    }
}

pub fn cmd_train(global: &Global, args: &TrainArgs) -> Result<String, CommandError> {
    let samples = dataset::load_samples(&args.data)?;
    let config = TrainConfig {
        seed: global.seed,
        ..args.config
    };
    let backbone = backbone_for(&samples, args.attention, args.stages.as_deref());
    backbone.validate()?;
    config.validate()?;
    let out = global.ensure_out_dir()?;
    let (path, log) = train_and_save(&samples, &config, backbone, global.precision, out, WEIGHTS_STEM)?;
    write(&out.join("train_log.csv"), reports::training_log_csv(&log))?;
    Ok(format!(
        "trained {} epochs on {} images: mean loss {:.4} -> {:.4}; weights {}\n",
        log.epochs.len(),
        samples.len(),
        log.first().unwrap_or(f64::NAN),
        log.last().unwrap_or(f64::NAN),
        path.display()
    ))
}

// ---------------------------------------------------------------- eval

#[derive(Debug, Clone)]
pub struct EvalArgs {
    /// Weights to evaluate; `None` replays the ground truth as detections with score 1.
    pub weights: Option<PathBuf>,
    pub data: PathBuf,
    pub iou_threshold: f64,
    pub conf_threshold: f64,
    pub nms_threshold: f64,
    pub sweep: bool,
}

impl Default for EvalArgs {
    fn default() -> Self {
        Self {
            weights: None,
            data: PathBuf::new(),
            iou_threshold: 0.5,
            conf_threshold: DEFAULT_CONF_THRESHOLD,
            nms_threshold: DEFAULT_NMS_THRESHOLD,
            sweep: false,
        }
    }
}

fn check_unit(name: &str, v: f64, allow_zero: bool) -> Result<(), CommandError> {
    let ok = if allow_zero {
        (0.0..=1.0).contains(&v)
    } else {
        v > 0.0 && v <= 1.0
    };
    if ok {
        Ok(())
    } else {
        Err(CommandError::Usage(format!(
            "{name} must lie in {}, got {v}",
            if allow_zero { "[0, 1]" } else { "(0, 1]" }
        )))
    }
}

fn detect_all<T: Scalar>(
    det: &Detector<T>,
    samples: &[Sample],
    conf: f64,
    nms: f64,
) -> Result<Vec<ImageEval>, CommandError> {
    samples
        .iter()
        .map(|s| {
            Ok(ImageEval {
                detections: det.detect(&s.image.cast::<T>(), conf, nms)?,
                ground_truth: s.annotation.boxes.clone(),
            })
        })
        .collect()
}

/// Runs a stored detector over `samples` and scores it.
pub fn evaluate_weights(
    path: &Path,
    samples: &[Sample],
    precision: Precision,
    conf: f64,
    nms: f64,
    config: &EvalConfig,
) -> Result<EvalReport, CommandError> {
    let images = match precision {
        Precision::F64 => detect_all(&weights::load::<f64>(path)?, samples, conf, nms)?,
        Precision::F32 => detect_all(&weights::load::<f32>(path)?, samples, conf, nms)?,
    };
    Ok(evaluate(&images, config)?)
}

pub fn cmd_eval(global: &Global, args: &EvalArgs) -> Result<String, CommandError> {
    check_unit("--iou-thresh", args.iou_threshold, false)?;
    check_unit("--conf-thresh", args.conf_threshold, true)?;
    check_unit("--nms-thresh", args.nms_threshold, false)?;
    let config = EvalConfig {
        iou_threshold: args.iou_threshold,
        sweep: args.sweep,
        ..EvalConfig::default()
    };
    let report = match &args.weights {
        Some(w) => {
            let samples = dataset::load_samples(&args.data)?;
            evaluate_weights(
                w,
                &samples,
                global.precision,
                args.conf_threshold,
                args.nms_threshold,
                &config,
            )?
        }
        None => {
            let anns = dataset::load_annotations(&args.data)?;
            let images: Vec<ImageEval> = anns
                .iter()
                .map(|a| ImageEval {
                    detections: a.boxes.iter().map(|&b| Detection { bbox: b, score: 1.0 }).collect(),
                    ground_truth: a.boxes.clone(),
                })
                .collect();
            evaluate(&images, &config)?
        }
    };
    let out = global.ensure_out_dir()?;
    write(&out.join("eval_report.json"), reports::to_json(&report))?;
    write(&out.join("pr_curve.csv"), reports::pr_curve_csv(&report.pr_points))?;
    Ok(reports::eval_summary(&report))
}

// ---------------------------------------------------------------- gradcheck

#[derive(Debug, Clone)]
pub struct GradcheckArgs {
    pub samples: usize,
    pub eps: f64,
    pub range: (f64, f64),
}

impl Default for GradcheckArgs {
    fn default() -> Self {
        Self {
            samples: 1000,
            eps: 1e-6,
            range: (0.01, 10.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradcheckRow {
    pub x: f64,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub pass: bool,
    pub samples: usize,
    pub eps: f64,
    pub range: (f64, f64),
    pub tolerance: f64,
    pub max_rel_err: f64,
    /// Largest errors first, at most ten rows.
    pub worst: Vec<GradcheckRow>,
}

/// Checks the log attention gradient against central differences on an
/// evenly spaced grid covering `range` inclusive.
pub fn gradcheck(args: &GradcheckArgs) -> Result<GradcheckReport, CommandError> {
    if args.samples < 2 {
        return Err(CommandError::Usage("--samples must be at least 2".into()));
    }
    if !(args.eps > 0.0 && args.eps.is_finite()) {
        return Err(CommandError::Usage(format!("--eps must be positive, got {}", args.eps)));
    }
    let (lo, hi) = args.range;
    let forward = |t: &Tensor| log_attention_forward(t).map(|y| y.sum()).unwrap_or(f64::NAN);
    let mut rows = Vec::with_capacity(args.samples);
    for i in 0..args.samples {
        let x = lo + (hi - lo) * i as f64 / (args.samples - 1) as f64;
        let numeric = finite_diff_grad(forward, &Tensor::scalar(x), args.eps)
            .map_err(|e| CommandError::CheckFailed(format!("finite differences failed at {x}: {e}")))?
            .data()[0];
        let analytic = log_attention_derivative(x, GradientConvention::Analytic);
        rows.push(GradcheckRow {
            x,
            analytic,
            numeric,
            rel_err: relative_error(analytic, numeric),
        });
    }
    let max_rel_err = rows.iter().map(|r| r.rel_err).fold(0.0, f64::max);
    let mut worst = rows.clone();
    worst.sort_by(|a, b| b.rel_err.total_cmp(&a.rel_err).then(a.x.total_cmp(&b.x)));
    worst.truncate(10);
    Ok(GradcheckReport {
        pass: max_rel_err <= GRADCHECK_TOLERANCE,
        samples: args.samples,
        eps: args.eps,
        range: args.range,
        tolerance: GRADCHECK_TOLERANCE,
        max_rel_err,
        worst,
    })
}

pub fn cmd_gradcheck(global: &Global, args: &GradcheckArgs) -> Result<String, CommandError> {
    let report = gradcheck(args)?;
    let discrepancy = discrepancy_report(0.0, 5.0, 51).expect("fixed grid is valid");
    let out = global.ensure_out_dir()?;
    write(&out.join("gradcheck_report.json"), reports::to_json(&report))?;
    write(&out.join("eq2_discrepancy.csv"), reports::discrepancy_csv(&discrepancy))?;

    let mut text = format!(
        "{}: max relative error {:.3e} over {} points in [{}, {}] (tolerance {:.0e})\n",
        if report.pass { "PASS" } else { "FAIL" },
        report.max_rel_err,
        report.samples,
        report.range.0,
        report.range.1,
        report.tolerance
    );
    text.push_str("worst points:\n           x        analytic         numeric     rel_err\n");
    for r in &report.worst {
        text.push_str(&format!(
            "{:>12.6} {:>15.10} {:>15.10} {:>11.3e}\n",
            r.x, r.analytic, r.numeric, r.rel_err
        ));
    }
    text.push_str("reciprocal-form derivative vs analytic:\n");
    for r in discrepancy.iter().filter(|r| [0.0, 1.0, 2.0, 5.0].contains(&r.f)) {
        text.push_str(&format!(
            "  f={}: analytic {:.12} other {:.12} diff {:.12}\n",
            r.f, r.analytic, r.reciprocal_variant, r.abs_diff
        ));
    }
    if report.pass {
        Ok(text)
    } else {
        Err(CommandError::CheckFailed(text))
    }
}

// ---------------------------------------------------------------- compare

#[derive(Debug, Clone)]
pub struct CompareArgs {
    pub data: PathBuf,
    pub seeds: Vec<u64>,
    pub attention: Vec<AttentionKind>,
    pub stages: Option<Vec<usize>>,
    pub train_ratio: f64,
    pub config: TrainConfig,
    pub conf_threshold: f64,
    pub nms_threshold: f64,
    pub iou_threshold: f64,
}

impl Default for CompareArgs {
    fn default() -> Self {
        Self {
            data: PathBuf::new(),
            seeds: vec![1, 2, 3],
            attention: vec![AttentionKind::LogAttention, AttentionKind::Identity],
            stages: None,
            train_ratio: 0.8,
            config: TrainConfig::default(),
            conf_threshold: DEFAULT_CONF_THRESHOLD,
            nms_threshold: DEFAULT_NMS_THRESHOLD,
            iou_threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub rows: Vec<CompareRow>,
    pub summary: Vec<CompareRow>,
}

/// Splits `samples` with `split_seed`, then trains and evaluates every
/// (variant, seed) pair. Training artifacts go to `dir` when given.
pub fn compare(
    samples: &[Sample],
    args: &CompareArgs,
    split_seed: u64,
    precision: Precision,
    dir: &Path,
) -> Result<Comparison, CommandError> {
    if args.seeds.is_empty() || args.attention.is_empty() {
        return Err(CommandError::Usage(
            "need at least one seed and one attention variant".into(),
        ));
    }
    let (train_set, val_set) = split_train_val(samples, args.train_ratio, split_seed)
        .map_err(|e| CommandError::Usage(format!("--train-ratio: {e}")))?;
    let eval_config = EvalConfig {
        iou_threshold: args.iou_threshold,
        ..EvalConfig::default()
    };
    let runs = dir.join("runs");
    fs::create_dir_all(&runs).map_err(io_err(&runs))?;
    let mut rows = Vec::new();
    for &kind in &args.attention {
        for &seed in &args.seeds {
            let backbone = backbone_for(samples, kind, args.stages.as_deref());
            let config = TrainConfig { seed, ..args.config };
            let stem = format!("{}_seed{seed}", kind.name());
            let (path, log) = train_and_save(&train_set, &config, backbone, precision, &runs, &stem)?;
            write(&runs.join(format!("{stem}_log.csv")), reports::training_log_csv(&log))?;
            let report = evaluate_weights(
                &path,
                &val_set,
                precision,
                args.conf_threshold,
                args.nms_threshold,
                &eval_config,
            )?;
            rows.push(CompareRow::from_report(kind.name(), seed, &report));
        }
    }
    let summary = reports::summarize(&rows);
    Ok(Comparison { rows, summary })
}

pub fn cmd_compare(global: &Global, args: &CompareArgs) -> Result<String, CommandError> {
    let samples = dataset::load_samples(&args.data)?;
    let out = global.ensure_out_dir()?;
    let result = compare(&samples, args, global.seed, global.precision, out)?;
    write(&out.join("compare.csv"), reports::compare_csv(&result.rows))?;
    write(&out.join("compare_summary.csv"), reports::compare_csv(&result.summary))?;
    let mut table = reports::compare_table(&result.rows);
    table.push('\n');
    table.push_str(&reports::compare_table(&result.summary));
    write(&out.join("compare.txt"), &table)?;
    Ok(table)
}

// ---------------------------------------------------------------- stats

pub fn stats(anns: &[logattn_core::Annotation]) -> StatsReport {
    let unfiltered = dataset_stats(anns);
    let filtered = dataset_stats(&filter_min_size(anns));
    StatsReport {
        removed_by_min_size: unfiltered.total_objects - filtered.total_objects,
        unfiltered,
        filtered,
    }
}

pub fn cmd_stats(global: &Global, data: &Path) -> Result<String, CommandError> {
    let report = stats(&dataset::load_annotations(data)?);
    let out = global.ensure_out_dir()?;
    write(&out.join("stats.json"), reports::to_json(&report))?;
    Ok(reports::stats_table(&report))
}

// ---------------------------------------------------------------- dump-activations

#[derive(Debug, Clone)]
pub struct DumpArgs {
    pub weights: PathBuf,
    pub image: PathBuf,
    pub stage: usize,
}

pub fn cmd_dump_activations(global: &Global, args: &DumpArgs) -> Result<String, CommandError> {
    let image = dataset::read_image(&args.image)?;
    let maps = match global.precision {
        Precision::F64 => weights::load::<f64>(&args.weights)?.dump_activations(&image, args.stage)?,
        Precision::F32 => weights::load::<f32>(&args.weights)?.dump_activations(&image.cast(), args.stage)?,
    };
    let dir = global.ensure_out_dir()?.join("activations");
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    for (c, m) in maps.iter().enumerate() {
        write(
            &dir.join(format!("stage{}_ch{c:02}.pgm", args.stage)),
            pnm::encode_gray(m),
        )?;
    }
    Ok(format!("wrote {} maps to {}\n", maps.len(), dir.display()))
}
