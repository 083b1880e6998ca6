//! Instruction sets: the per-class (word, box) examples a method produces.
//!
//! ```json
//! {"class": "alpha", "class_id": 0, "method": "pdc", "fold": 0,
//!  "pairs": [{"word": "alpha", "prompt": "a photo of alpha", "image_id": 12,
//!             "bbox_id": 31, "bbox_xywh": [10, 20, 200, 150],
//!             "train_auc_after": 0.91}],
//!  "config": {...}}
//! ```
//! Text-only entries omit the box fields, box-only entries omit the word.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{AnnotatedDataset, EmbeddingBundle, PromptTemplate};
use crate::error::{Error, Result};
use crate::fusion::{FusionPolicy, MergeMode};
use crate::query::{Modality, Query};
use crate::{BBoxId, ClassId, ImageId};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct InstructionEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub word: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_id: Option<ImageId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox_id: Option<BBoxId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox_xywh: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_auc_after: Option<f64>,
}

/// Settings a method ran with, embedded in every output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodConfig {
    pub method: String,
    pub fusion_policy: FusionPolicy,
    pub merge_mode: MergeMode,
    pub k: usize,
    pub nprobe: usize,
    pub max_pairs: usize,
    pub seed: u64,
    pub prompt_template: PromptTemplate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionSet {
    pub class: String,
    pub class_id: ClassId,
    pub method: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fold: Option<usize>,
    pub pairs: Vec<InstructionEntry>,
    pub config: MethodConfig,
}

impl InstructionSet {
    /// Training AUC after each accepted pair, when recorded.
    pub fn auc_trace(&self) -> Vec<f64> {
        self.pairs.iter().filter_map(|p| p.train_auc_after).collect()
    }

    /// Turns entries into queries, looking embeddings up in `bundle`.
    /// A box is found by `bbox_id`, or else by image id and coordinates.
    pub fn queries(
        &self,
        ds: &AnnotatedDataset,
        bundle: &EmbeddingBundle,
        template: &PromptTemplate,
        modality: Modality,
    ) -> Result<Vec<Query>> {
        let mut out = Vec::with_capacity(self.pairs.len());
        for e in &self.pairs {
            let text = match (&e.prompt, &e.word) {
                (Some(p), _) => Some(bundle.text(p)?.clone()),
                (None, Some(w)) => Some(bundle.text(&template.render(w))?.clone()),
                (None, None) => None,
            };
            let visual = match resolve_bbox(e, ds)? {
                Some(id) => Some(bundle.bbox(id)?.clone()),
                None => None,
            };
            let q = match (text, visual) {
                (Some(text), Some(visual)) => Query::Pair { text, visual },
                (Some(t), None) => Query::Text(t),
                (None, Some(v)) => Query::Visual(v),
                (None, None) => return Err(Error::Parse("instruction entry has neither word nor box".into())),
            };
            out.extend(q.mask(modality));
        }
        Ok(out)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("instruction set serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }
}

fn resolve_bbox(e: &InstructionEntry, ds: &AnnotatedDataset) -> Result<Option<BBoxId>> {
    if let Some(id) = e.bbox_id {
        return Ok(Some(id));
    }
    let (Some(image), Some(xywh)) = (e.image_id, e.bbox_xywh) else {
        return Ok(None);
    };
    ds.bboxes_of(image)
        .find(|b| b.xywh().iter().zip(&xywh).all(|(a, b)| (a - b).abs() <= 1e-3))
        .map(|b| Some(b.id))
        .ok_or_else(|| Error::MissingEmbedding(format!("bbox {xywh:?} on image {image}")))
}
