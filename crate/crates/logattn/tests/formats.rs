mod support;

use logattn::dataset::{self, format_manifest, parse_manifest, ManifestEntry};
use logattn::voc::{parse_voc, write_voc};
use logattn::{pnm, weights};
use logattn_core::annotations::{filter_min_size, is_below_min_size};
use logattn_core::detector::Stage;
use logattn_core::synth::{generate_dataset, ColorMode, SceneSpec};
use logattn_core::{AttentionKind, BackboneConfig, Detector, Rng, Tensor};
use proptest::prelude::*;
use std::path::Path;

#[test]
fn voc_round_trip_on_random_annotations() {
    let mut rng = Rng::new(21);
    for _ in 0..100 {
        let ann = support::random_annotation(&mut rng);
        let text = write_voc(&ann);
        assert_eq!(parse_voc(&text).unwrap(), ann, "{text}");
        assert_eq!(write_voc(&parse_voc(&text).unwrap()), text);
    }
}

#[test]
fn min_size_filter_after_parsing() {
    let mut rng = Rng::new(22);
    for _ in 0..100 {
        let ann = parse_voc(&write_voc(&support::random_annotation(&mut rng))).unwrap();
        let kept = &filter_min_size(std::slice::from_ref(&ann))[0];
        let removed: Vec<_> = ann.boxes.iter().filter(|b| !kept.boxes.contains(b)).collect();
        assert!(removed.iter().all(|b| b.width() < 7 && b.height() < 7));
        assert!(kept.boxes.iter().all(|b| !is_below_min_size(b)));
        assert_eq!(kept.boxes.len() + removed.len(), ann.boxes.len());
    }
}

#[test]
fn malformed_voc_is_rejected() {
    let inverted = "<annotation><size><width>10</width><height>10</height></size>\
        <object><bndbox><xmin>8</xmin><ymin>1</ymin><xmax>2</xmax><ymax>5</ymax></bndbox></object></annotation>";
    assert!(parse_voc(inverted).is_err());
    assert!(parse_voc("<annotation>").is_err());
    assert!(parse_voc("<other/>").is_err());
    let outside = "<annotation><size><width>10</width><height>10</height></size>\
        <object><bndbox><xmin>1</xmin><ymin>1</ymin><xmax>12</xmax><ymax>5</ymax></bndbox></object></annotation>";
    assert!(parse_voc(outside).is_err());
}

proptest! {
    #[test]
    fn pnm_round_trip(c in prop::sample::select(vec![1usize, 3]), h in 1usize..20, w in 1usize..20, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let v: Vec<f64> = (0..c * h * w).map(|_| rng.below(256) as f64 / 255.0).collect();
        let t = Tensor::from_f64(&[c, h, w], &v).unwrap();
        let bytes = pnm::encode(&t).unwrap();
        prop_assert_eq!(&pnm::decode(&bytes).unwrap(), &t);
        prop_assert_eq!(pnm::encode(&pnm::decode(&bytes).unwrap()).unwrap(), bytes);
    }

    #[test]
    fn manifest_round_trip(names in prop::collection::vec("[a-z0-9_]{1,8}", 1..10)) {
        let entries: Vec<ManifestEntry> = names
            .iter()
            .map(|n| ManifestEntry {
                image: Path::new("images").join(format!("{n}.pgm")),
                annotation: Path::new("annotations").join(format!("{n}.xml")),
            })
            .collect();
        let text = format_manifest(&entries);
        prop_assert_eq!(parse_manifest(&text, Path::new("m.tsv")).unwrap(), entries);
    }
}

#[test]
fn dataset_directory_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for color in [ColorMode::Gray, ColorMode::Rgb] {
        let spec = SceneSpec {
            width: 128,
            height: 96,
            objects_per_image: (1, 3),
            bin_mix: [0.5, 0.5, 0.0],
            color,
            ..SceneSpec::default()
        };
        let images = generate_dataset(&spec, 5, 3).unwrap();
        let sub = dir.path().join(format!("{color:?}"));
        let manifest = dataset::write_dataset(&sub, &images).unwrap();
        let samples = dataset::load_samples(&manifest).unwrap();
        assert_eq!(samples.len(), images.len());
        for (s, img) in samples.iter().zip(&images) {
            assert_eq!(s.image, img.pixels);
            assert_eq!(s.annotation, img.annotation);
        }
    }
}

#[test]
fn weights_round_trip_in_both_precisions() {
    let dir = tempfile::tempdir().unwrap();
    let config = BackboneConfig {
        input_height: 32,
        input_width: 32,
        stages: vec![
            Stage {
                channels: 3,
                downsample: true,
            },
            Stage {
                channels: 5,
                downsample: false,
            },
        ],
        ..BackboneConfig::default()
    }
    .with_attention(AttentionKind::LogAttention, [1]);
    let det = Detector::<f64>::new(config.clone(), 4).unwrap();
    let path = weights::save(&det, dir.path(), "w64").unwrap();
    assert_eq!(weights::load::<f64>(&path).unwrap(), det);

    let narrow = Detector::<f32>::new(config, 4).unwrap();
    let path = weights::save(&narrow, dir.path(), "w32").unwrap();
    assert_eq!(weights::load::<f32>(&path).unwrap(), narrow);
    let widened = weights::load::<f64>(&path.with_extension("bin")).unwrap();
    assert_eq!(widened, narrow.cast::<f64>());
}
