#![allow(dead_code)]

use logattn_core::{Annotation, BoundingBox, Rng, Subset};

const ID_CHARS: &[u8] = b"abcXYZ019_-.&<>'\" ";

/// A valid annotation with awkward ids, boundary-touching and tiny boxes.
pub fn random_annotation(rng: &mut Rng) -> Annotation {
    let width = rng.range_inclusive(1, 400) as u32;
    let height = rng.range_inclusive(1, 400) as u32;
    let len = rng.range_inclusive(1, 12);
    let mut id: String = (0..len)
        .map(|_| ID_CHARS[rng.below(ID_CHARS.len() as u64) as usize] as char)
        .collect();
    id = format!("i{}x", id.trim());
    let boxes = (0..rng.below(9))
        .map(|_| {
            let xmin = rng.below(width as u64) as u32;
            let ymin = rng.below(height as u64) as u32;
            let xmax = rng.range_inclusive(xmin as usize + 1, width as usize) as u32;
            let ymax = rng.range_inclusive(ymin as usize + 1, height as usize) as u32;
            BoundingBox::new(xmin, ymin, xmax, ymax).unwrap()
        })
        .collect();
    let mut ann = Annotation::new(id, width, height, boxes).unwrap();
    ann.subset = [Subset::None, Subset::Easy, Subset::Hard][rng.below(3) as usize];
    ann
}
