//! Model weights on disk.
//!
//! `<stem>.bin` holds every parameter tensor back to back as little-endian
//! IEEE floats (`f32` or `f64`, see the sidecar) in layout order, with no
//! header. `<stem>.json` is the sidecar: element type, backbone layout and,
//! per tensor, its name, shape, and element offset into the binary file.

use std::fs;
use std::path::{Path, PathBuf};

use logattn_core::detector::{DetectorError, Stage};
use logattn_core::{AttentionKind, BackboneConfig, Detector, Scalar, Tensor};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FORMAT: &str = "logattn-weights";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad sidecar: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("unsupported weights file: {0}")]
    Unsupported(String),
    #[error("binary holds {found} bytes, sidecar describes {expected}")]
    Length { expected: usize, found: usize },
    #[error(transparent)]
    Detector(#[from] DetectorError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub channels: usize,
    pub downsample: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub input_channels: usize,
    pub input_height: usize,
    pub input_width: usize,
    pub stages: Vec<StageSpec>,
    pub attention: String,
    pub attention_after_stage: Vec<usize>,
}

impl From<&BackboneConfig> for BackboneSpec {
    fn from(c: &BackboneConfig) -> Self {
        Self {
            input_channels: c.input_channels,
            input_height: c.input_height,
            input_width: c.input_width,
            stages: c
                .stages
                .iter()
                .map(|s| StageSpec {
                    channels: s.channels,
                    downsample: s.downsample,
                })
                .collect(),
            attention: c.attention_kind.name().to_string(),
            attention_after_stage: c.attention_after_stage.iter().copied().collect(),
        }
    }
}

impl BackboneSpec {
    pub fn to_config(&self) -> Result<BackboneConfig, WeightsError> {
        let kind = AttentionKind::from_name(&self.attention)
            .ok_or_else(|| WeightsError::Unsupported(format!("attention kind {:?}", self.attention)))?;
        Ok(BackboneConfig {
            input_channels: self.input_channels,
            input_height: self.input_height,
            input_width: self.input_width,
            stages: self
                .stages
                .iter()
                .map(|s| Stage {
                    channels: s.channels,
                    downsample: s.downsample,
                })
                .collect(),
            attention_after_stage: self.attention_after_stage.iter().copied().collect(),
            attention_kind: kind,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in elements from the start of the binary file.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sidecar {
    pub format: String,
    pub version: u32,
    pub dtype: String,
    pub byte_order: String,
    pub binary: String,
    pub backbone: BackboneSpec,
    pub tensors: Vec<TensorEntry>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> WeightsError + '_ {
    move |source| WeightsError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn dtype_size(dtype: &str) -> Option<usize> {
    match dtype {
        "f32" => Some(4),
        "f64" => Some(8),
        _ => None,
    }
}

pub fn encode<T: Scalar>(det: &Detector<T>, binary_name: &str) -> (Vec<u8>, Sidecar) {
    let mut bytes = Vec::new();
    let mut tensors = Vec::new();
    let mut offset = 0;
    for ((name, shape), t) in det.config().parameter_layout().into_iter().zip(det.weights()) {
        for &v in t.data() {
            match T::NAME {
                "f32" => bytes.extend_from_slice(&(v.as_f64() as f32).to_le_bytes()),
                _ => bytes.extend_from_slice(&v.as_f64().to_le_bytes()),
            }
        }
        tensors.push(TensorEntry { name, shape, offset });
        offset += t.len();
    }
    let sidecar = Sidecar {
        format: FORMAT.into(),
        version: VERSION,
        dtype: T::NAME.into(),
        byte_order: "little".into(),
        binary: binary_name.into(),
        backbone: det.config().into(),
        tensors,
    };
    (bytes, sidecar)
}

/// Rebuilds a detector in precision `T`, converting from the stored type if needed.
pub fn decode<T: Scalar>(bytes: &[u8], sidecar: &Sidecar) -> Result<Detector<T>, WeightsError> {
    if sidecar.format != FORMAT || sidecar.version != VERSION || sidecar.byte_order != "little" {
        return Err(WeightsError::Unsupported(format!(
            "{} v{} ({})",
            sidecar.format, sidecar.version, sidecar.byte_order
        )));
    }
    let size =
        dtype_size(&sidecar.dtype).ok_or_else(|| WeightsError::Unsupported(format!("dtype {}", sidecar.dtype)))?;
    let total: usize = sidecar.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
    if bytes.len() != total * size {
        return Err(WeightsError::Length {
            expected: total * size,
            found: bytes.len(),
        });
    }
    let value = |i: usize| -> f64 {
        let b = &bytes[i * size..(i + 1) * size];
        if size == 4 {
            f32::from_le_bytes(b.try_into().unwrap()) as f64
        } else {
            f64::from_le_bytes(b.try_into().unwrap())
        }
    };
    let mut tensors = Vec::with_capacity(sidecar.tensors.len());
    for t in &sidecar.tensors {
        let n: usize = t.shape.iter().product();
        if t.offset + n > total {
            return Err(WeightsError::Length {
                expected: (t.offset + n) * size,
                found: bytes.len(),
            });
        }
        let data: Vec<T> = (t.offset..t.offset + n).map(|i| T::of(value(i))).collect();
        tensors.push(Tensor::new(t.shape.clone(), data).map_err(DetectorError::from)?);
    }
    Ok(Detector::from_tensors(sidecar.backbone.to_config()?, tensors)?)
}

/// Writes `<dir>/<stem>.bin` and `<dir>/<stem>.json`; returns the sidecar path.
pub fn save<T: Scalar>(det: &Detector<T>, dir: &Path, stem: &str) -> Result<PathBuf, WeightsError> {
    let bin_name = format!("{stem}.bin");
    let (bytes, sidecar) = encode(det, &bin_name);
    let bin = dir.join(&bin_name);
    fs::write(&bin, bytes).map_err(io_err(&bin))?;
    let json = dir.join(format!("{stem}.json"));
    let text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes") + "\n";
    fs::write(&json, text).map_err(io_err(&json))?;
    Ok(json)
}

/// Loads from either the sidecar or the binary path; the other file is found
/// next to it.
pub fn load<T: Scalar>(path: &Path) -> Result<Detector<T>, WeightsError> {
    let json = path.with_extension("json");
    let text = fs::read_to_string(&json).map_err(io_err(&json))?;
    let sidecar: Sidecar = serde_json::from_str(&text).map_err(|source| WeightsError::Json {
        path: json.clone(),
        source,
    })?;
    let bin = json.with_file_name(&sidecar.binary);
    let bytes = fs::read(&bin).map_err(io_err(&bin))?;
    decode(&bytes, &sidecar)
}
