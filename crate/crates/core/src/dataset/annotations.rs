//! JSON annotation readers.
//!
//! `simple_json`:
//! ```json
//! {"classes": [{"id": 0, "name": "dog", "words": ["dog", "puppy"]}],
//!  "images": [{"id": 1, "width": 640, "height": 480, "file_name": "a.jpg",
//!              "boxes": [{"id": 7, "class_id": 0, "bbox": [x, y, w, h]}]}]}
//! ```
//! `coco_json` reads `images`, `annotations` and `categories`; a category
//! may carry an extra `words` array.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{AnnotatedDataset, BBox, ClassInfo, ImageRecord};
use crate::error::{Error, Result};
use crate::{BBoxId, ClassId, ImageId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationFormat {
    CocoJson,
    SimpleJson,
}

impl FromStr for AnnotationFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "coco_json" | "coco" => Ok(Self::CocoJson),
            "simple_json" | "simple" => Ok(Self::SimpleJson),
            other => Err(Error::InvalidConfig(format!("unknown annotation format `{other}`"))),
        }
    }
}

#[derive(Deserialize)]
struct SimpleDoc {
    classes: Vec<SimpleClass>,
    images: Vec<SimpleImage>,
}

#[derive(Deserialize)]
struct SimpleClass {
    id: ClassId,
    name: String,
    #[serde(default)]
    words: Vec<String>,
}

#[derive(Deserialize)]
struct SimpleImage {
    id: ImageId,
    width: u32,
    height: u32,
    #[serde(default)]
    file_name: Option<String>,
    #[serde(default)]
    boxes: Vec<SimpleBox>,
}

#[derive(Deserialize)]
struct SimpleBox {
    id: BBoxId,
    class_id: ClassId,
    bbox: [f64; 4],
}

#[derive(Deserialize)]
struct CocoDoc {
    images: Vec<CocoImage>,
    annotations: Vec<CocoAnnotation>,
    categories: Vec<CocoCategory>,
}

#[derive(Deserialize)]
struct CocoImage {
    id: ImageId,
    width: u32,
    height: u32,
    #[serde(default)]
    file_name: Option<String>,
}

#[derive(Deserialize)]
struct CocoAnnotation {
    id: BBoxId,
    image_id: ImageId,
    category_id: ClassId,
    bbox: [f64; 4],
}

#[derive(Deserialize)]
struct CocoCategory {
    id: ClassId,
    name: String,
    #[serde(default)]
    words: Vec<String>,
}

pub fn load_annotations(path: impl AsRef<Path>, format: AnnotationFormat) -> Result<AnnotatedDataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(&text, format)
}

pub(crate) fn parse_annotations(text: &str, format: AnnotationFormat) -> Result<AnnotatedDataset> {
    let parse_err = |e: serde_json::Error| Error::Parse(format!("annotations: {e}"));
    match format {
        AnnotationFormat::SimpleJson => {
            let doc: SimpleDoc = serde_json::from_str(text).map_err(parse_err)?;
            let classes = doc
                .classes
                .into_iter()
                .map(|c| ClassInfo::new(c.id, c.name, c.words))
                .collect();
            let mut images = Vec::with_capacity(doc.images.len());
            let mut bboxes = Vec::new();
            for img in doc.images {
                bboxes.extend(img.boxes.iter().map(|b| bbox(b.id, img.id, b.class_id, b.bbox)));
                images.push(ImageRecord {
                    id: img.id,
                    width: img.width,
                    height: img.height,
                    file_name: img.file_name,
                });
            }
            AnnotatedDataset::new(images, bboxes, classes)
        }
        AnnotationFormat::CocoJson => {
            let doc: CocoDoc = serde_json::from_str(text).map_err(parse_err)?;
            let classes = doc
                .categories
                .into_iter()
                .map(|c| ClassInfo::new(c.id, c.name, c.words))
                .collect();
            let images = doc
                .images
                .into_iter()
                .map(|i| ImageRecord {
                    id: i.id,
                    width: i.width,
                    height: i.height,
                    file_name: i.file_name,
                })
                .collect();
            let bboxes = doc
                .annotations
                .iter()
                .map(|a| bbox(a.id, a.image_id, a.category_id, a.bbox))
                .collect();
            AnnotatedDataset::new(images, bboxes, classes)
        }
    }
}

fn bbox(id: BBoxId, image_id: ImageId, class_id: ClassId, [x, y, w, h]: [f64; 4]) -> BBox {
    BBox { id, image_id, class_id, x, y, w, h }
}

/// Serializes in the `simple_json` layout.
pub(crate) fn to_simple_json(ds: &AnnotatedDataset) -> serde_json::Value {
    let classes: Vec<_> = ds
        .classes()
        .iter()
        .map(|c| serde_json::json!({"id": c.id, "name": c.name, "words": c.words}))
        .collect();
    let images: Vec<_> = ds
        .images()
        .iter()
        .map(|img| {
            let boxes: Vec<_> = ds
                .bboxes_of(img.id)
                .map(|b| serde_json::json!({"id": b.id, "class_id": b.class_id, "bbox": b.xywh()}))
                .collect();
            let mut v = serde_json::json!({"id": img.id, "width": img.width, "height": img.height, "boxes": boxes});
            if let Some(f) = &img.file_name {
                v["file_name"] = f.clone().into();
            }
            v
        })
        .collect();
    serde_json::json!({"classes": classes, "images": images})
}

impl AnnotatedDataset {
    pub fn save_simple_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(&to_simple_json(self)).expect("json value serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"classes": [{"id": 3, "name": "dog"}],
        "images": [{"id": 1, "width": 10, "height": 10,
                    "boxes": [{"id": 5, "class_id": 3, "bbox": [1, 1, 4, 4]}]}]}"#;

    const COCO: &str = r#"{
        "images": [
            {"id": 1, "width": 100, "height": 80, "file_name": "1.jpg"},
            {"id": 2, "width": 100, "height": 80},
            {"id": 3, "width": 50, "height": 50}
        ],
        "annotations": [
            {"id": 10, "image_id": 1, "category_id": 1, "bbox": [0, 0, 20, 20], "area": 400, "iscrowd": 0},
            {"id": 11, "image_id": 1, "category_id": 2, "bbox": [30, 30, 10, 10]},
            {"id": 12, "image_id": 2, "category_id": 1, "bbox": [0, 0, 100, 80]},
            {"id": 13, "image_id": 3, "category_id": 2, "bbox": [5, 5, 5, 5]}
        ],
        "categories": [
            {"id": 1, "name": "car", "supercategory": "vehicle", "words": ["sedan", "car"]},
            {"id": 2, "name": "person"}
        ]
    }"#;

    #[test]
    fn minimal_simple_fixture() {
        let ds = parse_annotations(MINIMAL, AnnotationFormat::SimpleJson).unwrap();
        assert_eq!(ds.classes().len(), 1);
        assert_eq!(ds.classes()[0].words, vec!["dog"]);
        assert_eq!(ds.bboxes().len(), 1);
    }

    #[test]
    fn zero_width_box_is_rejected() {
        let bad = MINIMAL.replace("[1, 1, 4, 4]", "[1, 1, 0, 4]");
        assert!(matches!(
            parse_annotations(&bad, AnnotationFormat::SimpleJson),
            Err(Error::OutOfBoundsBBox { bbox_id: 5, image_id: 1 })
        ));
    }

    #[test]
    fn coco_fixture_counts() {
        let ds = parse_annotations(COCO, AnnotationFormat::CocoJson).unwrap();
        assert_eq!(ds.images().len(), 3);
        assert_eq!(ds.classes().len(), 2);
        assert_eq!(ds.bboxes().len(), 4);
        assert_eq!(ds.class(1).unwrap().words, vec!["car", "sedan"]);
        assert_eq!(ds.images_with_class(1).len(), 2);
        assert_eq!(ds.image(1).unwrap().file_name.as_deref(), Some("1.jpg"));
    }

    #[test]
    fn malformed_and_dangling() {
        assert!(matches!(parse_annotations("{", AnnotationFormat::CocoJson), Err(Error::Parse(_))));
        let dangling = COCO.replace("\"category_id\": 2, \"bbox\": [5", "\"category_id\": 9, \"bbox\": [5");
        assert!(matches!(
            parse_annotations(&dangling, AnnotationFormat::CocoJson),
            Err(Error::DanglingReference(_))
        ));
    }

    #[test]
    fn simple_json_round_trip() {
        let ds = parse_annotations(COCO, AnnotationFormat::CocoJson).unwrap();
        let text = to_simple_json(&ds).to_string();
        assert_eq!(parse_annotations(&text, AnnotationFormat::SimpleJson).unwrap(), ds);
    }

    #[test]
    fn format_names() {
        assert_eq!("coco-json".parse::<AnnotationFormat>().unwrap(), AnnotationFormat::CocoJson);
        assert_eq!("simple_json".parse::<AnnotationFormat>().unwrap(), AnnotationFormat::SimpleJson);
        assert!("yaml".parse::<AnnotationFormat>().is_err());
    }
}
