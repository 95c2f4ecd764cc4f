//! Ground-truth boxes and the dataset rules applied to them.
//!
//! Coordinates are integer pixels with the origin at the top-left and are
//! taken as-is from VOC files: a box spans `xmax - xmin` by `ymax - ymin`
//! pixels with no `+1` correction, so a 32x32 box has area exactly `32^2`.

use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::Rng;

/// The only object class.
pub const CLASS_NAME: &str = "trash";

/// Upper area bound (inclusive) of the small bin.
pub const SMALL_MAX_AREA: u64 = 32 * 32;
/// Upper area bound (inclusive) of the medium bin.
pub const MEDIUM_MAX_AREA: u64 = 96 * 96;
/// Boxes narrower AND shorter than this are dropped by [`filter_min_size`].
pub const MIN_SIDE: u32 = 7;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnnotationError {
    #[error("inverted or empty box ({xmin},{ymin})-({xmax},{ymax})")]
    InvertedBox { xmin: u32, ymin: u32, xmax: u32, ymax: u32 },
    #[error("box {index} ({xmin},{ymin})-({xmax},{ymax}) outside {width}x{height} image")]
    OutOfBounds {
        index: usize,
        xmin: u32,
        ymin: u32,
        xmax: u32,
        ymax: u32,
        width: u32,
        height: u32,
    },
    #[error("split ratio must lie strictly between 0 and 1, got {0}")]
    BadRatio(f64),
    #[error("cannot split an empty collection")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub xmin: u32,
    pub ymin: u32,
    pub xmax: u32,
    pub ymax: u32,
}

impl BoundingBox {
    pub fn new(xmin: u32, ymin: u32, xmax: u32, ymax: u32) -> Result<Self, AnnotationError> {
        if xmax <= xmin || ymax <= ymin {
            return Err(AnnotationError::InvertedBox { xmin, ymin, xmax, ymax });
        }
        Ok(Self { xmin, ymin, xmax, ymax })
    }

    pub fn width(&self) -> u32 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> u32 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.xmin as f64 + self.xmax as f64) / 2.0,
            (self.ymin as f64 + self.ymax as f64) / 2.0,
        )
    }

    pub fn fits_within(&self, width: u32, height: u32) -> bool {
        self.xmax <= width && self.ymax <= height
    }

    pub fn intersection_area(&self, other: &Self) -> u64 {
        let w = self.xmax.min(other.xmax).saturating_sub(self.xmin.max(other.xmin));
        let h = self.ymax.min(other.ymax).saturating_sub(self.ymin.max(other.ymin));
        w as u64 * h as u64
    }
}

/// Held-out subset tag. Carried as metadata only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Easy,
    Hard,
    #[default]
    None,
}

impl Subset {
    pub fn name(self) -> &'static str {
        match self {
            Subset::Easy => "easy",
            Subset::Hard => "hard",
            Subset::None => "none",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "easy" => Some(Subset::Easy),
            "hard" => Some(Subset::Hard),
            "none" => Some(Subset::None),
            _ => None,
        }
    }
}

/// Ground truth for one image; every box belongs to [`CLASS_NAME`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub boxes: Vec<BoundingBox>,
    pub subset: Subset,
}

impl Annotation {
    pub fn new(
        image_id: impl Into<String>,
        width: u32,
        height: u32,
        boxes: Vec<BoundingBox>,
    ) -> Result<Self, AnnotationError> {
        let ann = Self {
            image_id: image_id.into(),
            width,
            height,
            boxes,
            subset: Subset::None,
        };
        ann.validate()?;
        Ok(ann)
    }

    pub fn validate(&self) -> Result<(), AnnotationError> {
        for (index, b) in self.boxes.iter().enumerate() {
            if b.xmax <= b.xmin || b.ymax <= b.ymin {
                return Err(AnnotationError::InvertedBox {
                    xmin: b.xmin,
                    ymin: b.ymin,
                    xmax: b.xmax,
                    ymax: b.ymax,
                });
            }
            if !b.fits_within(self.width, self.height) {
                return Err(AnnotationError::OutOfBounds {
                    index,
                    xmin: b.xmin,
                    ymin: b.ymin,
                    xmax: b.xmax,
                    ymax: b.ymax,
                    width: self.width,
                    height: self.height,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeBin {
    Small,
    Medium,
    Large,
}

impl SizeBin {
    pub const ALL: [SizeBin; 3] = [SizeBin::Small, SizeBin::Medium, SizeBin::Large];

    pub fn of_area(area: u64) -> Self {
        if area <= SMALL_MAX_AREA {
            SizeBin::Small
        } else if area <= MEDIUM_MAX_AREA {
            SizeBin::Medium
        } else {
            SizeBin::Large
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            SizeBin::Small => "small",
            SizeBin::Medium => "medium",
            SizeBin::Large => "large",
        }
    }
}

pub fn size_bin(b: &BoundingBox) -> SizeBin {
    SizeBin::of_area(b.area())
}

/// True for boxes the annotation protocol leaves out: under 7 px in both dimensions.
pub fn is_below_min_size(b: &BoundingBox) -> bool {
    b.width() < MIN_SIDE && b.height() < MIN_SIDE
}

/// Drops every box narrower AND shorter than 7 px. Images are kept even if they end up empty.
pub fn filter_min_size(anns: &[Annotation]) -> Vec<Annotation> {
    anns.iter()
        .map(|a| Annotation {
            boxes: a.boxes.iter().copied().filter(|b| !is_below_min_size(b)).collect(),
            ..a.clone()
        })
        .collect()
}

/// Seeded shuffle, then the first `ceil(ratio * n)` items go to the first half.
pub fn split_train_val<T: Clone>(items: &[T], ratio: f64, seed: u64) -> Result<(Vec<T>, Vec<T>), AnnotationError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(AnnotationError::BadRatio(ratio));
    }
    if items.is_empty() {
        return Err(AnnotationError::Empty);
    }
    let n = items.len();
    // The small slack keeps e.g. 0.7 * 10 = 7.000000000000001 from rounding up to 8.
    let n_train = Float::ceil(ratio * n as f64 - 1e-9).clamp(0.0, n as f64) as usize;
    let mut order: Vec<usize> = (0..n).collect();
    Rng::new(seed).shuffle(&mut order);
    let train = order[..n_train].iter().map(|&i| items[i].clone()).collect();
    let val = order[n_train..].iter().map(|&i| items[i].clone()).collect();
    Ok((train, val))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinProportions {
    pub small: f64,
    pub medium: f64,
    pub large: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub total_images: usize,
    pub total_objects: usize,
    pub small: usize,
    pub medium: usize,
    pub large: usize,
    pub proportions: BinProportions,
    pub area_min: Option<u64>,
    pub area_max: Option<u64>,
}

impl DatasetStats {
    pub fn count(&self, bin: SizeBin) -> usize {
        match bin {
            SizeBin::Small => self.small,
            SizeBin::Medium => self.medium,
            SizeBin::Large => self.large,
        }
    }
}

pub fn dataset_stats(anns: &[Annotation]) -> DatasetStats {
    let mut counts = [0usize; 3];
    let mut area_min: Option<u64> = None;
    let mut area_max: Option<u64> = None;
    for b in anns.iter().flat_map(|a| &a.boxes) {
        counts[size_bin(b).index()] += 1;
        let area = b.area();
        area_min = Some(area_min.map_or(area, |m| m.min(area)));
        area_max = Some(area_max.map_or(area, |m| m.max(area)));
    }
    let total: usize = counts.iter().sum();
    let frac = |c: usize| if total == 0 { 0.0 } else { c as f64 / total as f64 };
    DatasetStats {
        total_images: anns.len(),
        total_objects: total,
        small: counts[0],
        medium: counts[1],
        large: counts[2],
        proportions: BinProportions {
            small: frac(counts[0]),
            medium: frac(counts[1]),
            large: frac(counts[2]),
        },
        area_min,
        area_max,
    }
}
