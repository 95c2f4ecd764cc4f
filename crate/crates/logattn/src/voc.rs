//! Pascal VOC XML annotations.
//!
//! Only `filename`, `size/{width,height}` and `object/bndbox/*` are read;
//! every object is taken as the single `trash` class. An optional
//! `<subset>easy|hard</subset>` element under the root carries the subset tag.

use std::fmt::Write as _;

use logattn_core::annotations::{AnnotationError, CLASS_NAME};
use logattn_core::{Annotation, BoundingBox, Subset};
use roxmltree::{Document, Node};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum VocError {
    #[error("malformed XML: {0}")]
    Xml(#[from] roxmltree::Error),
    #[error("root element is <{0}>, expected <annotation>")]
    Root(String),
    #[error("missing required element {0}")]
    Missing(&'static str),
    #[error("{field} is not a non-negative integer: {value:?}")]
    BadNumber { field: &'static str, value: String },
    #[error("unknown subset {0:?}")]
    BadSubset(String),
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
}

fn child<'a, 'i>(node: Node<'a, 'i>, name: &str) -> Option<Node<'a, 'i>> {
    node.children().find(|c| c.has_tag_name(name))
}

fn number(node: Node, name: &'static str, path: &'static str) -> Result<u32, VocError> {
    let text = child(node, name)
        .ok_or(VocError::Missing(path))?
        .text()
        .unwrap_or("")
        .trim();
    text.parse().map_err(|_| VocError::BadNumber {
        field: path,
        value: text.to_string(),
    })
}

pub fn parse_voc(xml: &str) -> Result<Annotation, VocError> {
    let doc = Document::parse(xml)?;
    let root = doc.root_element();
    if !root.has_tag_name("annotation") {
        return Err(VocError::Root(root.tag_name().name().to_string()));
    }
    let image_id = child(root, "filename")
        .and_then(|n| n.text())
        .unwrap_or("")
        .trim()
        .to_string();
    let size = child(root, "size").ok_or(VocError::Missing("annotation/size"))?;
    let width = number(size, "width", "size/width")?;
    let height = number(size, "height", "size/height")?;

    let mut boxes = Vec::new();
    for obj in root.children().filter(|c| c.has_tag_name("object")) {
        let bb = child(obj, "bndbox").ok_or(VocError::Missing("object/bndbox"))?;
        boxes.push(BoundingBox::new(
            number(bb, "xmin", "bndbox/xmin")?,
            number(bb, "ymin", "bndbox/ymin")?,
            number(bb, "xmax", "bndbox/xmax")?,
            number(bb, "ymax", "bndbox/ymax")?,
        )?);
    }
    let mut ann = Annotation::new(image_id, width, height, boxes)?;
    if let Some(s) = child(root, "subset") {
        let text = s.text().unwrap_or("").trim();
        ann.subset = Subset::from_name(text).ok_or_else(|| VocError::BadSubset(text.to_string()))?;
    }
    Ok(ann)
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

pub fn write_voc(ann: &Annotation) -> String {
    let mut s = String::new();
    s.push_str("<annotation>\n");
    let _ = writeln!(s, "  <filename>{}</filename>", escape(&ann.image_id));
    let _ = writeln!(
        s,
        "  <size>\n    <width>{}</width>\n    <height>{}</height>\n    <depth>1</depth>\n  </size>",
        ann.width, ann.height
    );
    if ann.subset != Subset::None {
        let _ = writeln!(s, "  <subset>{}</subset>", ann.subset.name());
    }
    for b in &ann.boxes {
        let _ = writeln!(
            s,
            "  <object>\n    <name>{CLASS_NAME}</name>\n    <bndbox>\n      <xmin>{}</xmin>\n      <ymin>{}</ymin>\n      <xmax>{}</xmax>\n      <ymax>{}</ymax>\n    </bndbox>\n  </object>",
            b.xmin, b.ymin, b.xmax, b.ymax
        );
    }
    s.push_str("</annotation>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "<annotation><filename>a.png</filename><size><width>100</width><height>80</height></size>\
        <object><name>trash</name><pose>x</pose><bndbox><xmin>10</xmin><ymin>10</ymin><xmax>50</xmax><ymax>60</ymax></bndbox></object></annotation>";

    #[test]
    fn minimal_document() {
        let a = parse_voc(MINIMAL).unwrap();
        assert_eq!(a.image_id, "a.png");
        assert_eq!((a.width, a.height), (100, 80));
        assert_eq!(a.boxes.len(), 1);
        assert_eq!((a.boxes[0].width(), a.boxes[0].height()), (40, 50));
        assert_eq!(parse_voc(&write_voc(&a)).unwrap(), a);
    }

    #[test]
    fn no_objects() {
        let a = parse_voc("<annotation><size><width>5</width><height>5</height></size></annotation>").unwrap();
        assert!(a.boxes.is_empty());
        assert_eq!(parse_voc(&write_voc(&a)).unwrap(), a);
    }

    #[test]
    fn inverted_box() {
        let xml = MINIMAL.replace("<xmax>50</xmax>", "<xmax>5</xmax>");
        assert!(matches!(
            parse_voc(&xml),
            Err(VocError::Annotation(AnnotationError::InvertedBox { .. }))
        ));
    }

    #[test]
    fn errors() {
        assert!(matches!(parse_voc("<annotation>"), Err(VocError::Xml(_))));
        assert!(matches!(parse_voc("<foo/>"), Err(VocError::Root(_))));
        assert!(matches!(
            parse_voc("<annotation/>"),
            Err(VocError::Missing("annotation/size"))
        ));
        let xml = MINIMAL.replace("<ymin>10</ymin>", "");
        assert!(matches!(parse_voc(&xml), Err(VocError::Missing("bndbox/ymin"))));
        let xml = MINIMAL.replace("<ymin>10</ymin>", "<ymin>1.5</ymin>");
        assert!(matches!(parse_voc(&xml), Err(VocError::BadNumber { .. })));
        let xml = MINIMAL.replace("<xmax>50</xmax>", "<xmax>500</xmax>");
        assert!(matches!(
            parse_voc(&xml),
            Err(VocError::Annotation(AnnotationError::OutOfBounds { .. }))
        ));
    }

    #[test]
    fn subset_and_escaping() {
        let mut a = parse_voc(MINIMAL).unwrap();
        a.subset = Subset::Hard;
        a.image_id = "odd <&> \"name\"".into();
        assert_eq!(parse_voc(&write_voc(&a)).unwrap(), a);
    }
}
