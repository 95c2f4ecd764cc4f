//! A tiny single-class, anchor-free grid detector.
//!
//! The backbone is a stack of stages, each `conv3x3 -> bias -> relu`,
//! optionally followed by a 2x2 max-pool. An attention gate may be inserted
//! after any stage; its output replaces the stage output as the input of the
//! next stage. A 1x1 convolution head predicts, for every grid cell, an
//! objectness logit and a box encoded relative to the cell:
//!
//! - channel 0: objectness logit
//! - channels 1-2: box center inside the cell, in cell units (`0.5` is the cell center)
//! - channels 3-4: log of box width / height in cell units
//!
//! Each ground truth is assigned to the cell containing its center.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use thiserror::Error;

use crate::annotations::{Annotation, BoundingBox};
use crate::attention::AttentionKind;
use crate::autodiff::{clip_grad_norm, sgd_step, AutodiffError, Graph, Parameter, Var};
use crate::evaluation::{iou, score_order, Detection};
use crate::rng::Rng;
use crate::tensor::{sigmoid, Scalar, Tensor};

/// Seed used when none is given.
pub const DEFAULT_SEED: u64 = 20_200;
pub const DEFAULT_CONF_THRESHOLD: f64 = 0.3;
pub const DEFAULT_NMS_THRESHOLD: f64 = 0.5;
pub const DEFAULT_MAX_GRAD_NORM: f64 = 1.0;

/// Range the log-size outputs are clamped to before exponentiation.
const LOG_SIZE_LIMIT: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DetectorError {
    #[error("invalid backbone: {0}")]
    InvalidConfig(String),
    #[error("stage {index} does not exist (backbone has {stages} stages)")]
    InvalidStage { index: usize, stages: usize },
    #[error("input shape {got:?} does not match expected {expected:?}")]
    InputShape { expected: Vec<usize>, got: Vec<usize> },
    #[error("ground-truth box {0:?} has zero area")]
    DegenerateBox(BoundingBox),
    #[error("ground-truth box {0:?} lies outside the image")]
    BoxOutOfBounds(BoundingBox),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("invalid training setting: {0}")]
    InvalidTrainConfig(&'static str),
    #[error("expected {expected} parameter tensors, got {got}")]
    ParameterCount { expected: usize, got: usize },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

impl From<crate::tensor::TensorError> for DetectorError {
    fn from(e: crate::tensor::TensorError) -> Self {
        DetectorError::Autodiff(e.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stage {
    pub channels: usize,
    pub downsample: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackboneConfig {
    pub input_channels: usize,
    pub input_height: usize,
    pub input_width: usize,
    pub stages: Vec<Stage>,
    pub attention_after_stage: BTreeSet<usize>,
    pub attention_kind: AttentionKind,
}

impl Default for BackboneConfig {
    /// Grayscale 160x160 input, stride 4, no attention.
    fn default() -> Self {
        Self {
            input_channels: 1,
            input_height: 160,
            input_width: 160,
            stages: vec![
                Stage {
                    channels: 8,
                    downsample: true,
                },
                Stage {
                    channels: 16,
                    downsample: true,
                },
                Stage {
                    channels: 16,
                    downsample: false,
                },
                Stage {
                    channels: 16,
                    downsample: false,
                },
            ],
            attention_after_stage: BTreeSet::new(),
            attention_kind: AttentionKind::Identity,
        }
    }
}

impl BackboneConfig {
    pub fn with_attention(mut self, kind: AttentionKind, stages: impl IntoIterator<Item = usize>) -> Self {
        self.attention_kind = kind;
        self.attention_after_stage = stages.into_iter().collect();
        self
    }

    pub fn validate(&self) -> Result<(), DetectorError> {
        if self.stages.is_empty() {
            return Err(DetectorError::InvalidConfig("at least one stage is required".into()));
        }
        if self.input_channels == 0 || self.stages.iter().any(|s| s.channels == 0) {
            return Err(DetectorError::InvalidConfig("channel counts must be positive".into()));
        }
        if let Some(&index) = self.attention_after_stage.iter().find(|&&i| i >= self.stages.len()) {
            return Err(DetectorError::InvalidStage {
                index,
                stages: self.stages.len(),
            });
        }
        let (gh, gw) = self.grid_size();
        if gh == 0 || gw == 0 {
            return Err(DetectorError::InvalidConfig(format!(
                "{}x{} input is too small for {} downsampling stages",
                self.input_height,
                self.input_width,
                self.downsamples()
            )));
        }
        Ok(())
    }

    pub fn downsamples(&self) -> usize {
        self.stages.iter().filter(|s| s.downsample).count()
    }

    /// Total downsampling factor (input pixels per grid cell).
    pub fn stride(&self) -> usize {
        1 << self.downsamples()
    }

    pub fn grid_size(&self) -> (usize, usize) {
        let (mut h, mut w) = (self.input_height, self.input_width);
        for s in &self.stages {
            if s.downsample {
                h /= 2;
                w /= 2;
            }
        }
        (h, w)
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [self.input_channels, self.input_height, self.input_width]
    }

    /// Names and shapes of every parameter tensor, in storage order.
    pub fn parameter_layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut c_in = self.input_channels;
        for (i, s) in self.stages.iter().enumerate() {
            out.push((format!("stage{i}.weight"), vec![s.channels, c_in, 3, 3]));
            out.push((format!("stage{i}.bias"), vec![s.channels]));
            c_in = s.channels;
        }
        out.push(("head.weight".into(), vec![5, c_in, 1, 1]));
        out.push(("head.bias".into(), vec![5]));
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub objectness_loss_weight: f64,
    pub box_loss_weight: f64,
    /// Joint gradient norm each batch is clipped to before the update.
    pub max_grad_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            momentum: 0.9,
            epochs: 30,
            batch_size: 8,
            seed: DEFAULT_SEED,
            objectness_loss_weight: 1.0,
            box_loss_weight: 1.0,
            max_grad_norm: Some(DEFAULT_MAX_GRAD_NORM),
        }
    }
}

impl TrainConfig {
    /// A zero learning rate is accepted so a run can be made a no-op.
    pub fn validate(&self) -> Result<(), DetectorError> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(DetectorError::InvalidTrainConfig(
                "learning rate must be finite and >= 0",
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(DetectorError::InvalidTrainConfig("momentum must lie in [0, 1)"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(DetectorError::InvalidTrainConfig(
                "epochs and batch size must be at least 1",
            ));
        }
        if !(self.objectness_loss_weight >= 0.0 && self.box_loss_weight >= 0.0) {
            return Err(DetectorError::InvalidTrainConfig("loss weights must be >= 0"));
        }
        if self.max_grad_norm.is_some_and(|m| !(m > 0.0 && m.is_finite())) {
            return Err(DetectorError::InvalidTrainConfig(
                "gradient clip norm must be finite and > 0",
            ));
        }
        Ok(())
    }
}

/// Raw head output for one image: `[5, Gh, Gw]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPrediction<T: Scalar = f64> {
    pub grid: Tensor<T>,
}

impl<T: Scalar> GridPrediction<T> {
    pub fn grid_size(&self) -> (usize, usize) {
        (self.grid.shape()[1], self.grid.shape()[2])
    }
}

/// Handles into a graph built by [`Detector::forward_graph`].
/// Shift and scale an image to zero mean and unit variance over all its
/// values. The network sees this, never the raw pixels, so the same scene
/// gives the same features whatever its brightness. Constant images map to 0.
pub fn standardize<T: Scalar>(image: &Tensor<T>) -> Tensor<T> {
    let n = image.len().max(1) as f64;
    let mean = image.data().iter().map(|v| v.as_f64()).sum::<f64>() / n;
    let var = image.data().iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / n;
    let inv = if var > 1e-12 { 1.0 / var.sqrt() } else { 0.0 };
    image.map(|v| T::of((v.as_f64() - mean) * inv))
}

#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub input: Var,
    pub params: Vec<Var>,
    /// Output of each stage after its attention gate (if any).
    pub stage_outputs: Vec<Var>,
    pub grid: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detector<T: Scalar = f64> {
    config: BackboneConfig,
    params: Vec<Parameter<T>>,
}

impl<T: Scalar> Detector<T> {
    /// Glorot-uniform weights drawn from `seed`, zero biases.
    pub fn new(config: BackboneConfig, seed: u64) -> Result<Self, DetectorError> {
        config.validate()?;
        let mut rng = Rng::new(seed);
        let params = config
            .parameter_layout()
            .into_iter()
            .map(|(_, shape)| {
                let t = if shape.len() == 4 {
                    let receptive = shape[2] * shape[3];
                    let limit = (6.0 / ((shape[0] + shape[1]) * receptive) as f64).sqrt();
                    let n: usize = shape.iter().product();
                    let v: Vec<T> = (0..n).map(|_| T::of(rng.uniform(-limit, limit))).collect();
                    Tensor::new(shape, v).expect("layout shapes are consistent")
                } else {
                    Tensor::zeros(&shape)
                };
                Parameter::new(t)
            })
            .collect();
        Ok(Self { config, params })
    }

    /// Rebuilds a detector from stored parameter tensors (in layout order).
    pub fn from_tensors(config: BackboneConfig, tensors: Vec<Tensor<T>>) -> Result<Self, DetectorError> {
        config.validate()?;
        let layout = config.parameter_layout();
        if layout.len() != tensors.len() {
            return Err(DetectorError::ParameterCount {
                expected: layout.len(),
                got: tensors.len(),
            });
        }
        for ((_, shape), t) in layout.iter().zip(&tensors) {
            if t.shape() != shape.as_slice() {
                return Err(DetectorError::InputShape {
                    expected: shape.clone(),
                    got: t.shape().to_vec(),
                });
            }
        }
        Ok(Self {
            config,
            params: tensors.into_iter().map(Parameter::new).collect(),
        })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn parameters(&self) -> &[Parameter<T>] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.params
    }

    pub fn weights(&self) -> Vec<&Tensor<T>> {
        self.params.iter().map(|p| &p.value).collect()
    }

    pub fn cast<U: Scalar>(&self) -> Detector<U> {
        Detector {
            config: self.config.clone(),
            params: self.params.iter().map(|p| Parameter::new(p.value.cast())).collect(),
        }
    }

    fn check_input(&self, image: &Tensor<T>) -> Result<(), DetectorError> {
        let expected = self.config.input_shape();
        if image.shape() != expected {
            return Err(DetectorError::InputShape {
                expected: expected.to_vec(),
                got: image.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Records the full forward pass on `g`. Parameters enter as tracked leaves.
    pub fn forward_graph(&self, g: &mut Graph<T>, image: &Tensor<T>) -> Result<ForwardTrace, DetectorError> {
        self.check_input(image)?;
        let input = g.constant(standardize(image));
        let params: Vec<Var> = self.params.iter().map(|p| g.variable(p.value.clone())).collect();
        let mut x = input;
        let mut stage_outputs = Vec::with_capacity(self.config.stages.len());
        for (i, stage) in self.config.stages.iter().enumerate() {
            x = g.conv2d(x, params[2 * i], 1, 1)?;
            x = g.channel_bias(x, params[2 * i + 1])?;
            x = g.relu(x)?;
            if stage.downsample {
                x = g.maxpool2d(x, 2, 2)?;
            }
            if self.config.attention_after_stage.contains(&i) {
                x = g.gate(self.config.attention_kind, x)?;
            }
            stage_outputs.push(x);
        }
        let n = self.config.stages.len();
        let head = g.conv2d(x, params[2 * n], 1, 0)?;
        let grid = g.channel_bias(head, params[2 * n + 1])?;
        Ok(ForwardTrace {
            input,
            params,
            stage_outputs,
            grid,
        })
    }

    pub fn forward(&self, image: &Tensor<T>) -> Result<GridPrediction<T>, DetectorError> {
        let mut g = Graph::new();
        let trace = self.forward_graph(&mut g, image)?;
        Ok(GridPrediction {
            grid: g.value(trace.grid).clone(),
        })
    }

    /// Decoded, NMS-filtered detections for one image.
    pub fn detect(
        &self,
        image: &Tensor<T>,
        conf_threshold: f64,
        nms_threshold: f64,
    ) -> Result<Vec<Detection>, DetectorError> {
        let pred = self.forward(image)?;
        let dets = decode(
            &pred,
            conf_threshold,
            (self.config.input_width, self.config.input_height),
        );
        Ok(nms(&dets, nms_threshold))
    }

    /// Per-channel 8-bit maps of the post-attention output of `stage`.
    pub fn dump_activations(&self, image: &Tensor<T>, stage: usize) -> Result<Vec<GrayMap>, DetectorError> {
        if stage >= self.config.stages.len() {
            return Err(DetectorError::InvalidStage {
                index: stage,
                stages: self.config.stages.len(),
            });
        }
        let mut g = Graph::new();
        let trace = self.forward_graph(&mut g, image)?;
        Ok(activation_maps(g.value(trace.stage_outputs[stage])))
    }
}

/// An 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayMap {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

/// Min-max normalizes each channel of a `[C, H, W]` tensor to `0..=255`.
/// Constant channels map to 0.
pub fn activation_maps<T: Scalar>(features: &Tensor<T>) -> Vec<GrayMap> {
    let (c, h, w) = (features.shape()[0], features.shape()[1], features.shape()[2]);
    features
        .data()
        .chunks(h * w)
        .take(c)
        .map(|plane| {
            let lo = plane.iter().fold(f64::INFINITY, |m, v| m.min(v.as_f64()));
            let hi = plane.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
            let pixels = plane
                .iter()
                .map(|v| {
                    if hi > lo {
                        Float::round((v.as_f64() - lo) / (hi - lo) * 255.0) as u8
                    } else {
                        0
                    }
                })
                .collect();
            GrayMap {
                width: w,
                height: h,
                pixels,
            }
        })
        .collect()
}

/// Turns a grid into pixel-space detections for every cell whose score exceeds
/// `conf_threshold`. Boxes are rounded to whole pixels and clipped to the image.
pub fn decode<T: Scalar>(pred: &GridPrediction<T>, conf_threshold: f64, image_size: (usize, usize)) -> Vec<Detection> {
    let (gh, gw) = pred.grid_size();
    let (img_w, img_h) = image_size;
    let sx = img_w as f64 / gw as f64;
    let sy = img_h as f64 / gh as f64;
    let at = |c: usize, y: usize, x: usize| pred.grid.at3(c, y, x).as_f64();
    let mut out = Vec::new();
    for row in 0..gh {
        for col in 0..gw {
            let score = sigmoid(at(0, row, col));
            if score <= conf_threshold {
                continue;
            }
            let cx = (col as f64 + at(1, row, col)) * sx;
            let cy = (row as f64 + at(2, row, col)) * sy;
            let w = at(3, row, col).clamp(-LOG_SIZE_LIMIT, LOG_SIZE_LIMIT).exp() * sx;
            let h = at(4, row, col).clamp(-LOG_SIZE_LIMIT, LOG_SIZE_LIMIT).exp() * sy;
            let (x0, x1) = pixel_span(cx - w / 2.0, cx + w / 2.0, img_w);
            let (y0, y1) = pixel_span(cy - h / 2.0, cy + h / 2.0, img_h);
            out.push(Detection {
                bbox: BoundingBox {
                    xmin: x0,
                    ymin: y0,
                    xmax: x1,
                    ymax: y1,
                },
                score,
            });
        }
    }
    out
}

/// Rounds and clips `[lo, hi]` to a nonempty integer span inside `[0, limit]`.
fn pixel_span(lo: f64, hi: f64, limit: usize) -> (u32, u32) {
    let limit = limit as f64;
    let mut a = Float::round(lo.clamp(0.0, limit));
    let mut b = Float::round(hi.clamp(0.0, limit));
    if b <= a {
        if a < limit {
            b = a + 1.0;
        } else {
            a = b - 1.0;
        }
    }
    (a as u32, b as u32)
}

/// Greedy non-maximum suppression. Keeps detections in descending score
/// order (ties by input index), dropping any whose IoU with an already kept
/// detection exceeds `iou_threshold`.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let order = score_order(dets);
    let mut suppressed = vec![false; dets.len()];
    let mut keep = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        keep.push(dets[i]);
        for &j in &order[pos + 1..] {
            if !suppressed[j] && iou(&dets[i].bbox, &dets[j].bbox) > iou_threshold {
                suppressed[j] = true;
            }
        }
    }
    keep
}

/// Per-cell regression targets for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct GridTargets<T: Scalar = f64> {
    /// `[1, Gh, Gw]`, 1 at cells owning a ground truth.
    pub objectness: Tensor<T>,
    /// `[4, Gh, Gw]` encoded boxes (zero at negative cells).
    pub boxes: Tensor<T>,
    /// `[4, Gh, Gw]`, 1 at positive cells.
    pub box_mask: Tensor<T>,
    pub positives: usize,
}

/// Encodes a pixel box relative to cell `(row, col)` of a grid with the given cell size.
pub fn encode_box(b: &BoundingBox, row: usize, col: usize, cell: (f64, f64)) -> [f64; 4] {
    let (cx, cy) = b.center();
    [
        cx / cell.0 - col as f64,
        cy / cell.1 - row as f64,
        (b.width() as f64 / cell.0).ln(),
        (b.height() as f64 / cell.1).ln(),
    ]
}

/// Cell containing the center of `b`.
pub fn owning_cell(b: &BoundingBox, grid: (usize, usize), cell: (f64, f64)) -> (usize, usize) {
    let (cx, cy) = b.center();
    let row = Float::floor(cy / cell.1) as usize;
    let col = Float::floor(cx / cell.0) as usize;
    (row.min(grid.0 - 1), col.min(grid.1 - 1))
}

/// Assigns every box to the cell holding its center. When two centers share
/// a cell the smaller box wins.
pub fn build_targets<T: Scalar>(truth: &Annotation, grid: (usize, usize)) -> Result<GridTargets<T>, DetectorError> {
    let (gh, gw) = grid;
    let cell = (truth.width as f64 / gw as f64, truth.height as f64 / gh as f64);
    let mut owner: Vec<Option<&BoundingBox>> = vec![None; gh * gw];
    for b in &truth.boxes {
        if b.xmax <= b.xmin || b.ymax <= b.ymin {
            return Err(DetectorError::DegenerateBox(*b));
        }
        if !b.fits_within(truth.width, truth.height) {
            return Err(DetectorError::BoxOutOfBounds(*b));
        }
        let (row, col) = owning_cell(b, grid, cell);
        let slot = &mut owner[row * gw + col];
        if slot.is_none_or(|prev| b.area() < prev.area()) {
            *slot = Some(b);
        }
    }
    let mut objectness = Tensor::zeros(&[1, gh, gw]);
    let mut boxes = Tensor::zeros(&[4, gh, gw]);
    let mut box_mask = Tensor::zeros(&[4, gh, gw]);
    let mut positives = 0;
    for (idx, b) in owner.iter().enumerate() {
        let Some(b) = b else { continue };
        let (row, col) = (idx / gw, idx % gw);
        positives += 1;
        objectness.set3(0, row, col, T::one());
        for (k, v) in encode_box(b, row, col, cell).into_iter().enumerate() {
            boxes.set3(k, row, col, T::of(v));
            box_mask.set3(k, row, col, T::one());
        }
    }
    Ok(GridTargets {
        objectness,
        boxes,
        box_mask,
        positives,
    })
}

/// Loss terms of one image, before weighting.
#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub total: Var,
    pub objectness: Var,
    pub boxes: Option<Var>,
}

/// Detection loss on `grid` (a `[5, Gh, Gw]` node).
///
/// The objectness term is class-balanced binary cross-entropy: the mean over
/// positive cells plus the mean over negative cells, so a handful of objects
/// is not drowned out by the background. The box term is the mean absolute
/// error of the four encoded box channels over positive cells, which keeps it
/// on the same scale as one BCE term.
pub fn loss<T: Scalar>(
    g: &mut Graph<T>,
    grid: Var,
    truth: &Annotation,
    objectness_weight: f64,
    box_weight: f64,
) -> Result<LossParts, DetectorError> {
    let shape = g.value(grid).shape().to_vec();
    let targets: GridTargets<T> = build_targets(truth, (shape[1], shape[2]))?;
    let cells = shape[1] * shape[2];

    let logits = g.channels(grid, 0, 1)?;
    let bce = g.bce_with_logits(logits, targets.objectness.clone())?;
    let neg_mask = g.constant(targets.objectness.map(|t| T::one() - t));
    let neg = g.mul(bce, neg_mask)?;
    let neg_sum = g.sum(neg);
    let mut objectness = g.scale(neg_sum, 1.0 / (cells - targets.positives).max(1) as f64)?;
    let mut boxes = None;
    if targets.positives > 0 {
        let pos_mask = g.constant(targets.objectness.clone());
        let pos = g.mul(bce, pos_mask)?;
        let pos_sum = g.sum(pos);
        let pos_mean = g.scale(pos_sum, 1.0 / targets.positives as f64)?;
        objectness = g.add(objectness, pos_mean)?;

        let pred_boxes = g.channels(grid, 1, 5)?;
        let target = g.constant(targets.boxes);
        let diff = g.sub(pred_boxes, target)?;
        let l1 = g.abs(diff)?;
        let mask = g.constant(targets.box_mask);
        let masked = g.mul(l1, mask)?;
        let s = g.sum(masked);
        boxes = Some(g.scale(s, 1.0 / (4 * targets.positives) as f64)?);
    }
    let mut total = g.scale(objectness, objectness_weight)?;
    if let Some(b) = boxes {
        let wb = g.scale(b, box_weight)?;
        total = g.add(total, wb)?;
    }
    Ok(LossParts {
        total,
        objectness,
        boxes,
    })
}

/// An image and its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T: Scalar = f64> {
    pub image: Tensor<T>,
    pub annotation: Annotation,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainingLog {
    pub fn first(&self) -> Option<f64> {
        self.epochs.first().map(|e| e.mean_loss)
    }

    pub fn last(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.mean_loss)
    }
}

/// Forward, loss and backward for one sample; gradients are added into the
/// detector's parameters after scaling by `grad_scale`. Returns the loss.
pub fn accumulate_sample_gradients<T: Scalar>(
    det: &mut Detector<T>,
    sample: &Sample<T>,
    config: &TrainConfig,
    grad_scale: f64,
) -> Result<f64, DetectorError> {
    let mut g = Graph::new();
    let trace = det.forward_graph(&mut g, &sample.image)?;
    let parts = loss(
        &mut g,
        trace.grid,
        &sample.annotation,
        config.objectness_loss_weight,
        config.box_loss_weight,
    )?;
    let value = g.value(parts.total).data()[0].as_f64();
    let scaled = g.scale(parts.total, grad_scale)?;
    g.backward(scaled)?;
    for (p, &v) in det.params.iter_mut().zip(&trace.params) {
        p.accumulate_grad(&g.gradient(v))?;
    }
    Ok(value)
}

/// Mini-batch SGD with momentum. The sample order is reshuffled every epoch
/// from the seed, so a given (data, config, backbone) always yields the same
/// weights and log.
pub fn train<T: Scalar>(
    dataset: &[Sample<T>],
    config: &TrainConfig,
    backbone: BackboneConfig,
) -> Result<(Detector<T>, TrainingLog), DetectorError> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(DetectorError::EmptyDataset);
    }
    let mut det = Detector::new(backbone, config.seed)?;
    for s in dataset {
        det.check_input(&s.image)?;
    }
    let mut shuffler = Rng::substream(config.seed, 1);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut log = TrainingLog::default();
    for epoch in 1..=config.epochs {
        shuffler.shuffle(&mut order);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                total += accumulate_sample_gradients(&mut det, &dataset[i], config, scale)?;
            }
            if let Some(max) = config.max_grad_norm {
                clip_grad_norm(&mut det.params, max);
            }
            sgd_step(&mut det.params, config.learning_rate, config.momentum)?;
        }
        log.epochs.push(EpochRecord {
            epoch,
            mean_loss: total / dataset.len() as f64,
        });
    }
    Ok((det, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn tiny_config() -> BackboneConfig {
        BackboneConfig {
            input_channels: 1,
            input_height: 64,
            input_width: 64,
            stages: vec![
                Stage {
                    channels: 4,
                    downsample: true,
                },
                Stage {
                    channels: 4,
                    downsample: true,
                },
                Stage {
                    channels: 4,
                    downsample: false,
                },
            ],
            attention_after_stage: BTreeSet::new(),
            attention_kind: AttentionKind::Identity,
        }
    }

    fn image(seed: u64) -> Tensor {
        let mut rng = Rng::new(seed);
        let v: Vec<f64> = (0..64 * 64).map(|_| rng.next_f64()).collect();
        Tensor::<f64>::from_f64(&[1, 64, 64], &v).unwrap()
    }

    fn bx(x0: u32, y0: u32, x1: u32, y1: u32) -> BoundingBox {
        BoundingBox::new(x0, y0, x1, y1).unwrap()
    }

    #[test]
    fn grid_shape_follows_downsampling() {
        let cfg = tiny_config();
        assert_eq!(cfg.grid_size(), (16, 16));
        assert_eq!(cfg.stride(), 4);
        let det = Detector::<f64>::new(cfg, 1).unwrap();
        let pred = det.forward(&image(1)).unwrap();
        assert_eq!(pred.grid.shape(), &[5, 16, 16]);
    }

    #[test]
    fn invalid_stage_rejected() {
        let cfg = tiny_config().with_attention(AttentionKind::LogAttention, [3]);
        assert_eq!(
            Detector::<f64>::new(cfg, 1).unwrap_err(),
            DetectorError::InvalidStage { index: 3, stages: 3 }
        );
        let mut cfg = tiny_config();
        cfg.stages.clear();
        assert!(Detector::<f64>::new(cfg, 1).is_err());
    }

    #[test]
    fn empty_insertion_set_ignores_kind() {
        let a = Detector::<f64>::new(tiny_config(), 5).unwrap();
        let b = Detector::<f64>::new(tiny_config().with_attention(AttentionKind::LogAttention, []), 5).unwrap();
        let img = image(2);
        assert_eq!(a.forward(&img).unwrap(), b.forward(&img).unwrap());
    }

    #[test]
    fn log_attention_changes_output() {
        let a = Detector::<f64>::new(tiny_config(), 5).unwrap();
        let b = Detector::<f64>::new(tiny_config().with_attention(AttentionKind::LogAttention, [0, 1]), 5).unwrap();
        let img = image(2);
        assert_ne!(a.forward(&img).unwrap(), b.forward(&img).unwrap());
    }

    #[test]
    fn zero_weights_give_half_scores() {
        let cfg = tiny_config();
        let tensors = cfg
            .parameter_layout()
            .into_iter()
            .map(|(_, s)| Tensor::zeros(&s))
            .collect();
        let det = Detector::<f64>::from_tensors(cfg, tensors).unwrap();
        let pred = det.forward(&image(3)).unwrap();
        let logits = pred.grid.channels(0, 1).unwrap();
        assert!(logits.data().iter().all(|&v| v == 0.0));
        let dets = decode(&pred, 0.0, (64, 64));
        assert_eq!(dets.len(), 256);
        assert!(dets.iter().all(|d| d.score == 0.5));
    }

    #[test]
    fn forward_is_deterministic_and_sensitive() {
        let det = Detector::<f64>::new(tiny_config(), 9).unwrap();
        let img = image(4);
        let a = det.forward(&img).unwrap();
        assert_eq!(a, det.forward(&img).unwrap());
        let mut tweaked = det.clone();
        let n = tweaked.parameters().len();
        tweaked.parameters_mut()[n - 2].value.data_mut()[0] += 0.5;
        assert_ne!(a, tweaked.forward(&img).unwrap());
    }

    #[test]
    fn wrong_input_shape_rejected() {
        let det = Detector::<f64>::new(tiny_config(), 1).unwrap();
        assert!(matches!(
            det.forward(&Tensor::zeros(&[1, 32, 64])),
            Err(DetectorError::InputShape { .. })
        ));
    }

    fn hot_cell_grid(row: usize, col: usize, offsets: [f64; 4]) -> GridPrediction {
        let mut grid = Tensor::zeros(&[5, 16, 16]);
        for y in 0..16 {
            for x in 0..16 {
                grid.set3(0, y, x, -20.0);
            }
        }
        grid.set3(0, row, col, 20.0);
        for (k, v) in offsets.into_iter().enumerate() {
            grid.set3(k + 1, row, col, v);
        }
        GridPrediction { grid }
    }

    #[test]
    fn decode_hot_cell() {
        // Row 2, col 3 on a 16x16 grid over 64x64: 4 px cells, center (3.5*4, 2.5*4).
        let pred = hot_cell_grid(2, 3, [0.5, 0.5, 0.0, 0.0]);
        let dets = decode(&pred, 0.3, (64, 64));
        assert_eq!(dets.len(), 1);
        assert_eq!(dets[0].bbox, bx(12, 8, 16, 12));
        assert_eq!(dets[0].bbox.center(), (14.0, 10.0));
    }

    #[test]
    fn decode_threshold_one_is_empty() {
        let pred = hot_cell_grid(2, 3, [0.5, 0.5, 0.0, 0.0]);
        assert!(decode(&pred, 1.0, (64, 64)).is_empty());
    }

    #[test]
    fn decode_clips_to_image() {
        let pred = hot_cell_grid(0, 0, [0.0, 0.0, 3.0, 3.0]);
        let d = decode(&pred, 0.3, (64, 64))[0];
        assert_eq!((d.bbox.xmin, d.bbox.ymin), (0, 0));
        assert!(d.bbox.xmax <= 64 && d.bbox.ymax <= 64);
    }

    #[test]
    fn encode_decode_round_trip() {
        let b = bx(20, 9, 33, 30);
        let cell = (4.0, 4.0);
        let (row, col) = owning_cell(&b, (16, 16), cell);
        let enc = encode_box(&b, row, col, cell);
        let pred = hot_cell_grid(row, col, enc);
        let d = decode(&pred, 0.3, (64, 64))[0];
        assert_eq!(d.bbox, b);
    }

    #[test]
    fn nms_examples() {
        let a = Detection::new(bx(0, 0, 10, 10), 0.9).unwrap();
        let b = Detection::new(bx(0, 0, 10, 10), 0.8).unwrap();
        assert_eq!(nms(&[b, a], 0.5), vec![a]);
        let c = Detection::new(bx(20, 20, 30, 30), 0.7).unwrap();
        assert_eq!(nms(&[c, a], 0.5), vec![a, c]);
    }

    #[test]
    fn loss_examples() {
        let cfg = tiny_config();
        let truth = Annotation::new("x", 64, 64, vec![]).unwrap();
        let mut g = Graph::new();
        let grid = g.constant(Tensor::full(&[5, 16, 16], -40.0));
        let parts = loss(&mut g, grid, &truth, 1.0, 1.0).unwrap();
        assert!(g.value(parts.total).data()[0] < 1e-15);
        assert!(parts.boxes.is_none());

        // One positive cell with logit 0, all other cells confidently negative.
        let b = bx(20, 20, 28, 28);
        let truth = Annotation::new("x", 64, 64, vec![b]).unwrap();
        let (row, col) = owning_cell(&b, cfg.grid_size(), (4.0, 4.0));
        let mut t = Tensor::full(&[5, 16, 16], -40.0);
        t.set3(0, row, col, 0.0);
        for (k, v) in encode_box(&b, row, col, (4.0, 4.0)).into_iter().enumerate() {
            t.set3(k + 1, row, col, v);
        }
        let mut g = Graph::new();
        let grid = g.constant(t);
        let parts = loss(&mut g, grid, &truth, 1.0, 1.0).unwrap();
        assert!(g.value(parts.boxes.unwrap()).data()[0].abs() < 1e-15);
        let obj = g.value(parts.objectness).data()[0];
        assert!((obj - core::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn degenerate_truth_rejected() {
        let truth = Annotation {
            image_id: "x".into(),
            width: 64,
            height: 64,
            boxes: vec![BoundingBox {
                xmin: 5,
                ymin: 5,
                xmax: 5,
                ymax: 9,
            }],
            subset: Default::default(),
        };
        assert!(matches!(
            build_targets::<f64>(&truth, (16, 16)),
            Err(DetectorError::DegenerateBox(_))
        ));
    }

    #[test]
    fn shared_cell_keeps_smaller_box() {
        let big = bx(0, 0, 30, 30);
        let small = bx(13, 13, 17, 17);
        let truth = Annotation::new("x", 64, 64, vec![big, small]).unwrap();
        let t: GridTargets = build_targets(&truth, (16, 16)).unwrap();
        assert_eq!(t.positives, 1);
        let w = t.boxes.at3(2, 3, 3).exp() * 4.0;
        assert!((w - 4.0).abs() < 1e-12);
    }

    fn samples(n: usize) -> Vec<Sample> {
        (0..n)
            .map(|i| {
                let mut img = Tensor::zeros(&[1, 64, 64]);
                let x0 = 8 + 8 * (i % 5);
                for y in 20..30 {
                    for x in x0..x0 + 10 {
                        img.set3(0, y, x, 1.0);
                    }
                }
                Sample {
                    image: img,
                    annotation: Annotation::new("s", 64, 64, vec![bx(x0 as u32, 20, x0 as u32 + 10, 30)]).unwrap(),
                }
            })
            .collect()
    }

    #[test]
    fn zero_learning_rate_keeps_initial_weights() {
        let data = samples(4);
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 1,
            ..TrainConfig::default()
        };
        let (det, _) = train(&data, &cfg, tiny_config()).unwrap();
        let init = Detector::<f64>::new(tiny_config(), cfg.seed).unwrap();
        assert_eq!(det.weights(), init.weights());
    }

    #[test]
    fn training_is_deterministic_and_learns() {
        let data = samples(8);
        let cfg = TrainConfig {
            epochs: 15,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let (a, log_a) = train(&data, &cfg, tiny_config()).unwrap();
        let (b, log_b) = train(&data, &cfg, tiny_config()).unwrap();
        assert_eq!(log_a, log_b);
        assert_eq!(a, b);
        assert_eq!(log_a.epochs.len(), 15);
        assert!(log_a.last().unwrap() < log_a.first().unwrap());
    }

    #[test]
    fn train_rejects_empty_and_bad_config() {
        assert_eq!(
            train::<f64>(&[], &TrainConfig::default(), tiny_config()).unwrap_err(),
            DetectorError::EmptyDataset
        );
        let bad = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(train(&samples(1), &bad, tiny_config()).is_err());
    }

    #[test]
    fn f32_training_path_runs() {
        let data: Vec<Sample<f32>> = samples(4)
            .into_iter()
            .map(|s| Sample {
                image: s.image.cast(),
                annotation: s.annotation,
            })
            .collect();
        let cfg = TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        };
        let (_, log) = train(&data, &cfg, tiny_config()).unwrap();
        assert!(log.epochs.iter().all(|e| e.mean_loss.is_finite()));
    }

    #[test]
    fn activation_maps_normalize() {
        let zero = Tensor::<f64>::zeros(&[2, 3, 3]);
        let maps = activation_maps(&zero);
        assert_eq!(maps.len(), 2);
        assert!(maps.iter().all(|m| m.pixels.iter().all(|&p| p == 0)));
        let mut one_hot = Tensor::<f64>::zeros(&[1, 2, 2]);
        one_hot.set3(0, 1, 0, 3.0);
        assert_eq!(activation_maps(&one_hot)[0].pixels, vec![0, 0, 255, 0]);
    }

    #[test]
    fn dump_activations_respects_stage_bounds() {
        let det = Detector::<f64>::new(tiny_config(), 1).unwrap();
        let maps = det.dump_activations(&image(1), 1).unwrap();
        assert_eq!(maps.len(), 4);
        assert_eq!((maps[0].width, maps[0].height), (16, 16));
        assert!(det.dump_activations(&image(1), 3).is_err());
    }

    #[test]
    fn log_attention_changes_activation_maps() {
        let plain = Detector::<f64>::new(tiny_config(), 5).unwrap();
        let gated = Detector::<f64>::new(tiny_config().with_attention(AttentionKind::LogAttention, [1]), 5).unwrap();
        let img = image(6);
        assert_ne!(
            plain.dump_activations(&img, 1).unwrap(),
            gated.dump_activations(&img, 1).unwrap()
        );
    }
}
