//! Log attention gating for small-object detection.
//!
//! Everything in this crate is pure computation and builds without `std`
//! (only `alloc` is required):
//!
//! - [`tensor`] and [`autodiff`]: a dense NCHW tensor type and a tape-based
//!   reverse-mode differentiation graph, just large enough for a small
//!   convolutional detector.
//! - [`attention`]: the parameter-free log attention gate `x * ln(relu(x) + 1)`,
//!   its analytic gradient, and sigmoid/softmax gating baselines.
//! - [`detector`]: a single-class grid detector with configurable attention
//!   insertion points, its loss, SGD training loop, decoding and NMS.
//! - [`annotations`], [`synth`] and [`evaluation`]: ground-truth boxes with COCO
//!   size bins, a deterministic synthetic scene generator, and COCO-style AP.
//!
//! File formats, experiment drivers and the command-line tool live in the
//! `logattn` crate.
#![no_std]

extern crate alloc;

pub mod annotations;
pub mod attention;
pub mod autodiff;
pub mod detector;
pub mod evaluation;
pub mod gradcheck;
pub mod rng;
pub mod synth;
pub mod tensor;

pub use annotations::{Annotation, BoundingBox, SizeBin, Subset};
pub use attention::{AttentionKind, GradientConvention, LogBase};
pub use autodiff::{Graph, Parameter, Var};
pub use detector::{BackboneConfig, Detector, GridPrediction, TrainConfig};
pub use evaluation::{Detection, EvalReport};
pub use rng::Rng;
pub use tensor::{Scalar, Tensor};
