use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::{AnnotatedDataset, BBox, EmbeddingBundle, PromptTemplate};
use crate::embedding::EmbeddingVector;
use crate::error::{Error, Result};
use crate::{ClassId, ImageId};

/// The largest box of the class in one training image.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VisualCandidate {
    pub image_id: ImageId,
    pub bbox: BBox,
    #[serde(skip)]
    pub embedding: EmbeddingVector,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TextCandidate {
    pub word: String,
    pub prompt: String,
    #[serde(skip)]
    pub embedding: EmbeddingVector,
}

/// Per-class candidates: visuals sorted by image id, words in class order.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePool {
    pub class_id: ClassId,
    pub visuals: Vec<VisualCandidate>,
    pub words: Vec<TextCandidate>,
}

impl CandidatePool {
    pub fn n_pairs(&self) -> usize {
        self.visuals.len() * self.words.len()
    }

    pub fn canonical(&self) -> &TextCandidate {
        &self.words[0]
    }
}

pub fn build_candidate_pool(
    ds: &AnnotatedDataset,
    bundle: &EmbeddingBundle,
    class_id: ClassId,
    train_images: &BTreeSet<ImageId>,
    template: &PromptTemplate,
) -> Result<CandidatePool> {
    let class = ds.class(class_id).ok_or_else(|| Error::UnknownClass(class_id.to_string()))?;
    if train_images.is_empty() {
        return Err(Error::InvalidConfig("training split is empty".into()));
    }
    let mut largest: BTreeMap<ImageId, &BBox> = BTreeMap::new();
    for b in ds.bboxes().iter().filter(|b| b.class_id == class_id) {
        if !train_images.contains(&b.image_id) {
            continue;
        }
        // Boxes arrive in ascending id order, so strict `>` keeps the lowest id on ties.
        largest
            .entry(b.image_id)
            .and_modify(|cur| {
                if b.area() > cur.area() {
                    *cur = b;
                }
            })
            .or_insert(b);
    }
    if largest.is_empty() {
        return Err(Error::ClassAbsentFromTrainSplit(class_id));
    }
    let visuals = largest
        .into_iter()
        .map(|(image_id, b)| {
            Ok(VisualCandidate {
                image_id,
                bbox: b.clone(),
                embedding: bundle.bbox(b.id)?.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let words = class
        .words
        .iter()
        .map(|w| {
            let prompt = template.render(w);
            Ok(TextCandidate {
                word: w.clone(),
                embedding: bundle.text(&prompt)?.clone(),
                prompt,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CandidatePool {
        class_id,
        visuals,
        words,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ClassInfo, ImageRecord};

    fn ev(x: f32) -> EmbeddingVector {
        EmbeddingVector::new(vec![x, 1.0]).unwrap()
    }

    fn world() -> (AnnotatedDataset, EmbeddingBundle) {
        let images = (1..=5)
            .map(|id| ImageRecord { id, width: 100, height: 100, file_name: None })
            .collect();
        let b = |id, image_id, class_id, w: f64, h: f64| BBox { id, image_id, class_id, x: 0.0, y: 0.0, w, h };
        let bboxes = vec![
            b(1, 1, 0, 10.0, 10.0),
            b(2, 1, 0, 20.0, 20.0),
            b(3, 1, 1, 50.0, 50.0),
            b(4, 2, 0, 5.0, 20.0),
            b(5, 2, 0, 10.0, 10.0),
            b(6, 3, 1, 10.0, 10.0),
            b(7, 4, 0, 30.0, 30.0),
            b(8, 5, 0, 30.0, 30.0),
        ];
        let classes = vec![
            ClassInfo::new(0, "dog", ["puppy", "hound"].map(String::from)),
            ClassInfo::new(1, "cat", Vec::new()),
        ];
        let ds = AnnotatedDataset::new(images, bboxes, classes).unwrap();
        let mut bundle = EmbeddingBundle::new(2).unwrap();
        for bb in ds.bboxes() {
            bundle.insert_bbox(bb.id, ev(bb.id as f32)).unwrap();
        }
        for w in ["dog", "puppy", "hound", "cat"] {
            bundle.insert_text(format!("a photo of {w}"), ev(0.5)).unwrap();
        }
        (ds, bundle)
    }

    #[test]
    fn largest_box_per_image_with_id_tiebreak() {
        let (ds, bundle) = world();
        let t = PromptTemplate::default();
        let train = BTreeSet::from([1, 2, 3, 4]);
        let pool = build_candidate_pool(&ds, &bundle, 0, &train, &t).unwrap();
        let picked: Vec<_> = pool.visuals.iter().map(|v| (v.image_id, v.bbox.id)).collect();
        // image 1: area 400 beats 100; image 2: both 100, lowest id wins; image 3 has no dog.
        assert_eq!(picked, vec![(1, 2), (2, 4), (4, 7)]);
        assert_eq!(pool.words.iter().map(|w| w.word.as_str()).collect::<Vec<_>>(), ["dog", "puppy", "hound"]);
        assert_eq!(pool.n_pairs(), 9);
        assert_eq!(pool.canonical().prompt, "a photo of dog");
    }

    #[test]
    fn cross_product_size() {
        let (ds, bundle) = world();
        let t = PromptTemplate::default();
        let pool = build_candidate_pool(&ds, &bundle, 0, &BTreeSet::from([1, 2, 3, 4, 5]), &t).unwrap();
        assert_eq!(pool.visuals.len(), 4);
        assert_eq!(pool.n_pairs(), 12);
    }

    #[test]
    fn absent_class_and_missing_embedding() {
        let (ds, mut bundle) = world();
        let t = PromptTemplate::default();
        assert!(matches!(
            build_candidate_pool(&ds, &bundle, 1, &BTreeSet::from([2, 4]), &t),
            Err(Error::ClassAbsentFromTrainSplit(1))
        ));
        assert!(matches!(
            build_candidate_pool(&ds, &bundle, 9, &BTreeSet::from([2]), &t),
            Err(Error::UnknownClass(_))
        ));
        bundle.bboxes.remove(&7);
        assert!(matches!(
            build_candidate_pool(&ds, &bundle, 0, &BTreeSet::from([4]), &t),
            Err(Error::MissingEmbedding(_))
        ));
    }
}
