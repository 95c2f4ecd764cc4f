//! Datasets on disk: a manifest of `image_path<TAB>xml_path` lines, paths
//! relative to the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use logattn_core::detector::Sample;
use logattn_core::synth::LabeledImage;
use logattn_core::{Annotation, Tensor};
use thiserror::Error;

use crate::pnm::{self, PnmError};
use crate::voc::{self, VocError};

pub const MANIFEST_NAME: &str = "manifest.tsv";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: expected `image<TAB>annotation`")]
    ManifestLine { path: PathBuf, line: usize },
    #[error("manifest {0} lists no images")]
    Empty(PathBuf),
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: PnmError,
    },
    #[error("{path}: {source}")]
    Annotation {
        path: PathBuf,
        #[source]
        source: VocError,
    },
    #[error("{path}: image is {image:?} but its annotation says {width}x{height}")]
    SizeMismatch {
        path: PathBuf,
        image: Vec<usize>,
        width: u32,
        height: u32,
    },
    #[error("{path}: all images must share one shape, expected {expected:?}, got {got:?}")]
    MixedShapes {
        path: PathBuf,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
}

pub fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub annotation: PathBuf,
}

/// Parses manifest text. Blank lines are skipped. Returned paths are as written.
pub fn parse_manifest(text: &str, path: &Path) -> Result<Vec<ManifestEntry>, DatasetError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        match (parts.next(), parts.next(), parts.next()) {
            (Some(img), Some(xml), None) if !img.is_empty() && !xml.is_empty() => out.push(ManifestEntry {
                image: img.into(),
                annotation: xml.into(),
            }),
            _ => {
                return Err(DatasetError::ManifestLine {
                    path: path.to_path_buf(),
                    line: i + 1,
                })
            }
        }
    }
    Ok(out)
}

pub fn format_manifest(entries: &[ManifestEntry]) -> String {
    entries
        .iter()
        .map(|e| format!("{}\t{}\n", portable(&e.image), portable(&e.annotation)))
        .collect()
}

fn portable(p: &Path) -> String {
    p.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let entries = parse_manifest(&text, path)?;
    if entries.is_empty() {
        return Err(DatasetError::Empty(path.to_path_buf()));
    }
    Ok(entries
        .into_iter()
        .map(|e| ManifestEntry {
            image: base.join(e.image),
            annotation: base.join(e.annotation),
        })
        .collect())
}

pub fn read_image(path: &Path) -> Result<Tensor, DatasetError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    pnm::decode(&bytes).map_err(|source| DatasetError::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_annotation(path: &Path) -> Result<Annotation, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    voc::parse_voc(&text).map_err(|source| DatasetError::Annotation {
        path: path.to_path_buf(),
        source,
    })
}

/// Annotations only, for statistics.
pub fn load_annotations(manifest: &Path) -> Result<Vec<Annotation>, DatasetError> {
    read_manifest(manifest)?
        .iter()
        .map(|e| read_annotation(&e.annotation))
        .collect()
}

/// Images and annotations. Every image must match its annotation's size and
/// all images must have the same shape.
pub fn load_samples(manifest: &Path) -> Result<Vec<Sample>, DatasetError> {
    let mut out: Vec<Sample> = Vec::new();
    for e in read_manifest(manifest)? {
        let image = read_image(&e.image)?;
        let annotation = read_annotation(&e.annotation)?;
        let shape = image.shape().to_vec();
        if shape[1] != annotation.height as usize || shape[2] != annotation.width as usize {
            return Err(DatasetError::SizeMismatch {
                path: e.image,
                image: shape,
                width: annotation.width,
                height: annotation.height,
            });
        }
        if let Some(first) = out.first() {
            if first.image.shape() != shape.as_slice() {
                return Err(DatasetError::MixedShapes {
                    path: e.image,
                    expected: first.image.shape().to_vec(),
                    got: shape,
                });
            }
        }
        out.push(Sample { image, annotation });
    }
    Ok(out)
}

/// Writes `images/<id>.pgm|ppm`, `annotations/<id>.xml` and the manifest under `dir`.
/// Returns the manifest path.
pub fn write_dataset(dir: &Path, images: &[LabeledImage]) -> Result<PathBuf, DatasetError> {
    let img_dir = dir.join("images");
    let ann_dir = dir.join("annotations");
    fs::create_dir_all(&img_dir).map_err(io_err(&img_dir))?;
    fs::create_dir_all(&ann_dir).map_err(io_err(&ann_dir))?;
    let mut entries = Vec::with_capacity(images.len());
    for img in images {
        let id = &img.annotation.image_id;
        let ext = if img.pixels.shape()[0] == 1 { "pgm" } else { "ppm" };
        let image = PathBuf::from("images").join(format!("{id}.{ext}"));
        let annotation = PathBuf::from("annotations").join(format!("{id}.xml"));
        let bytes = pnm::encode(&img.pixels).map_err(|source| DatasetError::Image {
            path: image.clone(),
            source,
        })?;
        let p = dir.join(&image);
        fs::write(&p, bytes).map_err(io_err(&p))?;
        let p = dir.join(&annotation);
        fs::write(&p, voc::write_voc(&img.annotation)).map_err(io_err(&p))?;
        entries.push(ManifestEntry { image, annotation });
    }
    let manifest = dir.join(MANIFEST_NAME);
    fs::write(&manifest, format_manifest(&entries)).map_err(io_err(&manifest))?;
    Ok(manifest)
}
