//! Annotated datasets, embedding bundles, fold splits and candidate pools.

mod annotations;
mod bundle;
mod folds;
mod pool;
pub mod synth;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{BBoxId, ClassId, ImageId};

pub use annotations::{load_annotations, AnnotationFormat};
pub use bundle::{load_embeddings, EmbeddingBundle, BUNDLE_MAGIC};
pub use folds::{split_folds, FoldAssignment};
pub use pool::{build_candidate_pool, CandidatePool, TextCandidate, VisualCandidate};

pub const DEFAULT_PROMPT_TEMPLATE: &str = "a photo of {label}";

/// Renders words into text prompts; `{label}` is replaced by the word.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PromptTemplate(String);

impl PromptTemplate {
    pub fn new(template: impl Into<String>) -> Result<Self> {
        let t = template.into();
        if !t.contains("{label}") {
            return Err(Error::InvalidConfig(format!(
                "prompt template `{t}` has no {{label}} placeholder"
            )));
        }
        Ok(Self(t))
    }

    pub fn render(&self, word: &str) -> String {
        self.0.replace("{label}", word)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self(DEFAULT_PROMPT_TEMPLATE.to_owned())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: ImageId,
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file_name: Option<String>,
}

/// Axis-aligned box in pixels, `(x, y)` the top-left corner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub id: BBoxId,
    pub image_id: ImageId,
    pub class_id: ClassId,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn xywh(&self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }

    fn fits(&self, image: &ImageRecord) -> bool {
        const SLACK: f64 = 1e-6;
        [self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite())
            && self.w > 0.0
            && self.h > 0.0
            && self.x >= -SLACK
            && self.y >= -SLACK
            && self.x + self.w <= f64::from(image.width) + SLACK
            && self.y + self.h <= f64::from(image.height) + SLACK
    }
}

/// A class with its word list (labels, subtypes, synonyms). The canonical
/// name is always the first word.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassInfo {
    pub id: ClassId,
    pub name: String,
    pub words: Vec<String>,
}

impl ClassInfo {
    pub fn new(id: ClassId, name: impl Into<String>, words: impl IntoIterator<Item = String>) -> Self {
        let name = name.into();
        let mut seen = BTreeSet::new();
        let words = std::iter::once(name.clone())
            .chain(words)
            .filter(|w| !w.is_empty() && seen.insert(w.clone()))
            .collect();
        Self { id, name, words }
    }
}

/// Validated images, boxes and classes, all sorted by id.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedDataset {
    images: Vec<ImageRecord>,
    bboxes: Vec<BBox>,
    classes: Vec<ClassInfo>,
    folds: Option<FoldAssignment>,
    image_pos: HashMap<ImageId, usize>,
    bbox_pos: HashMap<BBoxId, usize>,
    by_image: BTreeMap<ImageId, Vec<usize>>,
}

impl AnnotatedDataset {
    pub fn new(mut images: Vec<ImageRecord>, mut bboxes: Vec<BBox>, mut classes: Vec<ClassInfo>) -> Result<Self> {
        images.sort_by_key(|i| i.id);
        bboxes.sort_by_key(|b| b.id);
        classes.sort_by_key(|c| c.id);
        if let Some(w) = images.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::DuplicateId(format!("image {}", w[0].id)));
        }
        if let Some(w) = bboxes.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::DuplicateId(format!("bbox {}", w[0].id)));
        }
        if let Some(w) = classes.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::DuplicateId(format!("class {}", w[0].id)));
        }
        if let Some(c) = classes.iter().find(|c| c.words.is_empty() || c.words[0] != c.name) {
            return Err(Error::Parse(format!("class {} word list must start with its name", c.id)));
        }
        let image_pos: HashMap<_, _> = images.iter().enumerate().map(|(i, r)| (r.id, i)).collect();
        let class_ids: BTreeSet<_> = classes.iter().map(|c| c.id).collect();
        let mut by_image: BTreeMap<ImageId, Vec<usize>> = BTreeMap::new();
        for (pos, b) in bboxes.iter().enumerate() {
            let image = image_pos
                .get(&b.image_id)
                .map(|&i| &images[i])
                .ok_or_else(|| Error::DanglingReference(format!("bbox {} -> image {}", b.id, b.image_id)))?;
            if !class_ids.contains(&b.class_id) {
                return Err(Error::DanglingReference(format!("bbox {} -> class {}", b.id, b.class_id)));
            }
            if !b.fits(image) {
                return Err(Error::OutOfBoundsBBox {
                    bbox_id: b.id,
                    image_id: b.image_id,
                });
            }
            by_image.entry(b.image_id).or_default().push(pos);
        }
        let bbox_pos = bboxes.iter().enumerate().map(|(i, b)| (b.id, i)).collect();
        Ok(Self {
            images,
            bboxes,
            classes,
            folds: None,
            image_pos,
            bbox_pos,
            by_image,
        })
    }

    pub fn images(&self) -> &[ImageRecord] {
        &self.images
    }

    pub fn image_ids(&self) -> impl Iterator<Item = ImageId> + '_ {
        self.images.iter().map(|i| i.id)
    }

    pub fn bboxes(&self) -> &[BBox] {
        &self.bboxes
    }

    pub fn classes(&self) -> &[ClassInfo] {
        &self.classes
    }

    pub fn image(&self, id: ImageId) -> Option<&ImageRecord> {
        self.image_pos.get(&id).map(|&i| &self.images[i])
    }

    pub fn bbox(&self, id: BBoxId) -> Option<&BBox> {
        self.bbox_pos.get(&id).map(|&i| &self.bboxes[i])
    }

    pub fn class(&self, id: ClassId) -> Option<&ClassInfo> {
        self.classes.iter().find(|c| c.id == id)
    }

    pub fn class_by_name(&self, name: &str) -> Option<&ClassInfo> {
        self.classes.iter().find(|c| c.name == name)
    }

    pub fn bboxes_of(&self, image: ImageId) -> impl Iterator<Item = &BBox> + '_ {
        self.by_image
            .get(&image)
            .into_iter()
            .flatten()
            .map(|&i| &self.bboxes[i])
    }

    /// Images holding at least one box of `class`.
    pub fn images_with_class(&self, class: ClassId) -> BTreeSet<ImageId> {
        self.bboxes
            .iter()
            .filter(|b| b.class_id == class)
            .map(|b| b.image_id)
            .collect()
    }

    pub fn split_assignments(&self) -> Option<&FoldAssignment> {
        self.folds.as_ref()
    }

    pub fn with_folds(mut self, folds: FoldAssignment) -> Result<Self> {
        if folds.fold_of.len() != self.images.len()
            || self.images.iter().any(|i| !folds.fold_of.contains_key(&i.id))
        {
            return Err(Error::InvalidConfig("fold assignment does not cover the dataset".into()));
        }
        self.folds = Some(folds);
        Ok(self)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn tiny() -> AnnotatedDataset {
        AnnotatedDataset::new(
            vec![
                ImageRecord { id: 1, width: 100, height: 100, file_name: None },
                ImageRecord { id: 2, width: 100, height: 100, file_name: None },
            ],
            vec![
                BBox { id: 10, image_id: 1, class_id: 0, x: 0.0, y: 0.0, w: 10.0, h: 10.0 },
                BBox { id: 11, image_id: 1, class_id: 0, x: 10.0, y: 10.0, w: 20.0, h: 20.0 },
                BBox { id: 12, image_id: 2, class_id: 1, x: 0.0, y: 0.0, w: 100.0, h: 100.0 },
            ],
            vec![
                ClassInfo::new(0, "dog", vec!["puppy".to_owned(), "dog".to_owned()]),
                ClassInfo::new(1, "cat", Vec::new()),
            ],
        )
        .unwrap()
    }

    #[test]
    fn lookups() {
        let ds = tiny();
        assert_eq!(ds.class(0).unwrap().words, vec!["dog", "puppy"]);
        assert_eq!(ds.bboxes_of(1).count(), 2);
        assert_eq!(ds.images_with_class(1), BTreeSet::from([2]));
        assert_eq!(ds.bbox(12).unwrap().area(), 10_000.0);
        assert_eq!(ds.class_by_name("cat").unwrap().id, 1);
    }

    #[test]
    fn validation_errors() {
        let img = || vec![ImageRecord { id: 1, width: 50, height: 50, file_name: None }];
        let cls = || vec![ClassInfo::new(0, "a", Vec::new())];
        let bb = |x: f64, w: f64, class_id, image_id| BBox { id: 1, image_id, class_id, x, y: 0.0, w, h: 5.0 };
        assert!(matches!(
            AnnotatedDataset::new(img(), vec![bb(0.0, 0.0, 0, 1)], cls()),
            Err(Error::OutOfBoundsBBox { .. })
        ));
        assert!(matches!(
            AnnotatedDataset::new(img(), vec![bb(46.0, 5.0, 0, 1)], cls()),
            Err(Error::OutOfBoundsBBox { .. })
        ));
        assert!(matches!(
            AnnotatedDataset::new(img(), vec![bb(0.0, 5.0, 3, 1)], cls()),
            Err(Error::DanglingReference(_))
        ));
        assert!(matches!(
            AnnotatedDataset::new(img(), vec![bb(0.0, 5.0, 0, 9)], cls()),
            Err(Error::DanglingReference(_))
        ));
        let mut two = img();
        two.push(two[0].clone());
        assert!(matches!(AnnotatedDataset::new(two, vec![], cls()), Err(Error::DuplicateId(_))));
    }

    #[test]
    fn prompt_template() {
        assert_eq!(PromptTemplate::default().render("dog"), "a photo of dog");
        assert!(PromptTemplate::new("no placeholder").is_err());
        assert_eq!(PromptTemplate::new("{label}!").unwrap().render("x"), "x!");
    }
}
