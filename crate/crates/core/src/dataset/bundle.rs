//! Embedding bundle files.
//!
//! Same envelope as index files, magic `LIGEMBED`, three sections:
//!
//! * `PATCHES` (tag 1): `count` 20-byte patch keys, then `count * D` f32.
//! * `BBOXES` (tag 2): `count` u64 bbox ids, then `count * D` f32.
//! * `TEXTS` (tag 3): `count` prompts as u32 byte length plus UTF-8 bytes,
//!   then `count * D` f32.
//!
//! Entries are written in ascending key order, so equal bundles serialize to
//! equal bytes. Vectors are stored as given, unnormalized.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use super::{AnnotatedDataset, PromptTemplate};
use crate::codec::{self, Reader, Section, Writer};
use crate::embedding::{ensure_same_dim, EmbeddingVector};
use crate::error::{Error, Result};
use crate::index::persist::{decode_key, encode_key, KEY_LEN};
use crate::index::{PatchKey, Region, PATCHES_PER_IMAGE};
use crate::{BBoxId, ImageId};

pub const BUNDLE_MAGIC: &[u8; 8] = b"LIGEMBED";

const PATCHES: u32 = 1;
const BBOXES: u32 = 2;
const TEXTS: u32 = 3;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingBundle {
    dim: usize,
    pub patches: BTreeMap<PatchKey, EmbeddingVector>,
    pub bboxes: BTreeMap<BBoxId, EmbeddingVector>,
    pub texts: BTreeMap<String, EmbeddingVector>,
}

impl EmbeddingBundle {
    pub fn new(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::DimensionTooSmall(dim));
        }
        Ok(Self {
            dim,
            ..Default::default()
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn insert_patch(&mut self, key: PatchKey, v: EmbeddingVector) -> Result<()> {
        ensure_same_dim(self.dim, v.dim())?;
        if matches!(key.region, Region::BBox(_)) {
            return Err(Error::InvalidConfig(format!("{key} is not a grid patch")));
        }
        self.patches.insert(key, v);
        Ok(())
    }

    pub fn insert_bbox(&mut self, id: BBoxId, v: EmbeddingVector) -> Result<()> {
        ensure_same_dim(self.dim, v.dim())?;
        self.bboxes.insert(id, v);
        Ok(())
    }

    pub fn insert_text(&mut self, prompt: impl Into<String>, v: EmbeddingVector) -> Result<()> {
        ensure_same_dim(self.dim, v.dim())?;
        self.texts.insert(prompt.into(), v);
        Ok(())
    }

    pub fn bbox(&self, id: BBoxId) -> Result<&EmbeddingVector> {
        self.bboxes
            .get(&id)
            .ok_or_else(|| Error::MissingEmbedding(format!("bbox {id}")))
    }

    pub fn text(&self, prompt: &str) -> Result<&EmbeddingVector> {
        self.texts
            .get(prompt)
            .ok_or_else(|| Error::MissingEmbedding(format!("prompt `{prompt}`")))
    }

    /// Grid patches of the given images, in key order.
    pub fn patches_of<'a>(
        &'a self,
        images: &'a BTreeSet<ImageId>,
    ) -> impl Iterator<Item = (PatchKey, &'a EmbeddingVector)> + 'a {
        images.iter().flat_map(move |&img| {
            self.patches
                .range(PatchKey::grid(img, 1, 0, 0).expect("valid cell")..)
                .take_while(move |(k, _)| k.image_id == img)
                .map(|(k, v)| (*k, v))
        })
    }

    pub fn expect_dim(&self, dim: usize) -> Result<()> {
        ensure_same_dim(dim, self.dim)
    }

    /// Checks that every image has its 165 grid patches, every bbox its crop
    /// and every class word its rendered prompt. The error names the first
    /// missing entry.
    pub fn validate(&self, ds: &AnnotatedDataset, template: &PromptTemplate) -> Result<()> {
        for img in ds.images() {
            for key in PatchKey::grid_keys(img.id) {
                if !self.patches.contains_key(&key) {
                    return Err(Error::MissingEmbedding(key.to_string()));
                }
            }
        }
        let known: BTreeSet<ImageId> = ds.image_ids().collect();
        if let Some(k) = self.patches.keys().find(|k| !known.contains(&k.image_id)) {
            return Err(Error::DanglingReference(format!("bundle patch {k} has no image")));
        }
        debug_assert!(self.patches.len() >= ds.images().len() * PATCHES_PER_IMAGE);
        for b in ds.bboxes() {
            self.bbox(b.id)?;
        }
        for class in ds.classes() {
            for word in &class.words {
                self.text(&template.render(word))?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let d = self.dim;
        let mut patches = Writer::with_capacity(self.patches.len() * (KEY_LEN + 4 * d));
        for k in self.patches.keys() {
            encode_key(&mut patches, k);
        }
        for v in self.patches.values() {
            patches.f32s(v.as_slice());
        }
        let mut bboxes = Writer::default();
        for &id in self.bboxes.keys() {
            bboxes.u64(id);
        }
        for v in self.bboxes.values() {
            bboxes.f32s(v.as_slice());
        }
        let mut texts = Writer::default();
        for p in self.texts.keys() {
            texts.u32(p.len() as u32);
            texts.bytes(p.as_bytes());
        }
        for v in self.texts.values() {
            texts.f32s(v.as_slice());
        }
        codec::seal(
            BUNDLE_MAGIC,
            d as u32,
            &[
                Section { tag: PATCHES, count: self.patches.len() as u64, body: patches.finish() },
                Section { tag: BBOXES, count: self.bboxes.len() as u64, body: bboxes.finish() },
                Section { tag: TEXTS, count: self.texts.len() as u64, body: texts.finish() },
            ],
        )
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let file = codec::open(BUNDLE_MAGIC, bytes)?;
        let mut bundle = Self::new(file.dim as usize)?;
        let d = bundle.dim;

        let (n, body) = file.section(PATCHES)?;
        let mut r = Reader::new(body);
        let keys = (0..n).map(|_| decode_key(&mut r)).collect::<Result<Vec<_>>>()?;
        for key in keys {
            bundle.insert_patch(key, EmbeddingVector::new(r.f32s(d)?)?)?;
        }

        let (n, body) = file.section(BBOXES)?;
        let mut r = Reader::new(body);
        let ids = (0..n).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        for id in ids {
            bundle.insert_bbox(id, EmbeddingVector::new(r.f32s(d)?)?)?;
        }

        let (n, body) = file.section(TEXTS)?;
        let mut r = Reader::new(body);
        let prompts = (0..n)
            .map(|_| {
                let len = r.u32()? as usize;
                String::from_utf8(r.take(len)?.to_vec()).map_err(|e| Error::Parse(format!("prompt: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        for p in prompts {
            bundle.insert_text(p, EmbeddingVector::new(r.f32s(d)?)?)?;
        }
        Ok(bundle)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        codec::write_file(path.as_ref(), &self.to_bytes())
    }
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingBundle> {
    EmbeddingBundle::from_bytes(&codec::read_file(path.as_ref())?)
}
