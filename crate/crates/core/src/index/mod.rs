//! Clustered (IVF-style) cosine index over patch embeddings.
//!
//! Records are partitioned by k-means into inverted lists. A query visits the
//! `nprobe` lists whose centroids are closest to it, scores every record in
//! them, and reduces patch scores to one score per image by max. With
//! `nprobe` equal to the number of lists the search is exhaustive and
//! returns exactly what [`VectorIndex::search_exact`] returns.

mod kmeans;
pub(crate) mod persist;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::embedding::{dot, dot_mixed, ensure_same_dim, EmbeddingVector, ZERO_NORM_THRESHOLD};
use crate::error::{Error, Result};
use crate::ranked::{RankedList, ScoredItem};
use crate::{BBoxId, ImageId};

pub use kmeans::KMeansConfig;
pub use persist::INDEX_MAGIC;

/// Grid sizes used to cut every image into patches.
pub const GRID_SIZES: [u8; 5] = [1, 3, 5, 7, 9];

/// Sum of `g²` over [`GRID_SIZES`].
pub const PATCHES_PER_IMAGE: usize = 165;

/// Which part of an image an embedding describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    /// Cell `(row, col)` of a `size x size` grid; `size == 1` is the whole image.
    Grid { size: u8, row: u8, col: u8 },
    BBox(BBoxId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PatchKey {
    pub image_id: ImageId,
    pub region: Region,
}

impl PatchKey {
    pub fn grid(image_id: ImageId, size: u8, row: u8, col: u8) -> Result<Self> {
        if !GRID_SIZES.contains(&size) || row >= size || col >= size {
            return Err(Error::InvalidConfig(format!(
                "grid cell ({row}, {col}) of size {size} is not a valid patch"
            )));
        }
        Ok(Self {
            image_id,
            region: Region::Grid { size, row, col },
        })
    }

    pub fn bbox(image_id: ImageId, bbox_id: BBoxId) -> Self {
        Self {
            image_id,
            region: Region::BBox(bbox_id),
        }
    }

    /// The 165 grid keys of one image, coarse grids first, row-major.
    pub fn grid_keys(image_id: ImageId) -> impl Iterator<Item = PatchKey> {
        GRID_SIZES.into_iter().flat_map(move |size| {
            (0..size).flat_map(move |row| {
                (0..size).map(move |col| PatchKey {
                    image_id,
                    region: Region::Grid { size, row, col },
                })
            })
        })
    }
}

impl fmt::Display for PatchKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.region {
            Region::Grid { size, row, col } => {
                write!(f, "image {} grid {size} cell ({row}, {col})", self.image_id)
            }
            Region::BBox(b) => write!(f, "image {} bbox {b}", self.image_id),
        }
    }
}

/// Top images for a query plus the patch that produced each image's score.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub ranked: RankedList,
    pub best_patch: BTreeMap<ImageId, PatchKey>,
}

/// `⌈√n⌉` clamped to `[1, 4096]`.
pub fn default_num_clusters(n_records: usize) -> usize {
    ((n_records as f64).sqrt().ceil() as usize).clamp(1, 4096)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    dim: usize,
    /// Raw vectors, row-major.
    records: Vec<f32>,
    norms: Vec<f32>,
    keys: Vec<PatchKey>,
    /// Distinct image ids, ascending.
    images: Vec<ImageId>,
    record_image: Vec<u32>,
    centroids: Vec<f32>,
    centroid_sq_norms: Vec<f64>,
    assignment: Vec<u32>,
    lists: Vec<Vec<u32>>,
}

impl VectorIndex {
    /// Builds with `num_clusters` lists and otherwise default k-means settings.
    pub fn build<I>(embeddings: I, num_clusters: usize, seed: u64) -> Result<Self>
    where
        I: IntoIterator<Item = (PatchKey, EmbeddingVector)>,
    {
        Self::build_with(embeddings, Some(num_clusters), &KMeansConfig { seed, ..Default::default() })
    }

    /// `num_clusters = None` picks [`default_num_clusters`].
    pub fn build_with<I>(embeddings: I, num_clusters: Option<usize>, config: &KMeansConfig) -> Result<Self>
    where
        I: IntoIterator<Item = (PatchKey, EmbeddingVector)>,
    {
        let mut iter = embeddings.into_iter();
        let (first_key, first) = iter.next().ok_or(Error::EmptyInput)?;
        let dim = first.dim();
        let (lower, _) = iter.size_hint();
        let mut records = Vec::with_capacity((lower + 1) * dim);
        let mut keys = Vec::with_capacity(lower + 1);
        let mut norms = Vec::with_capacity(lower + 1);
        for (key, v) in std::iter::once((first_key, first)).chain(iter) {
            ensure_same_dim(dim, v.dim())?;
            let n = v.norm();
            if n < ZERO_NORM_THRESHOLD {
                return Err(Error::ZeroVector);
            }
            records.extend_from_slice(v.as_slice());
            norms.push(n as f32);
            keys.push(key);
        }
        let n = keys.len();
        let k = num_clusters.unwrap_or_else(|| default_num_clusters(n));
        if k == 0 || k > n {
            return Err(Error::InvalidClusterCount { got: k, max: n });
        }
        let centroids = kmeans::train(&records, &norms, dim, k, config);
        let centroid_sq_norms = sq_norms(&centroids, dim);
        let assignment = kmeans::assign(&records, &norms, dim, &centroids, &centroid_sq_norms);
        Ok(Self::assemble(dim, records, norms, keys, centroids, assignment))
    }

    fn assemble(
        dim: usize,
        records: Vec<f32>,
        norms: Vec<f32>,
        keys: Vec<PatchKey>,
        centroids: Vec<f32>,
        assignment: Vec<u32>,
    ) -> Self {
        let mut images: Vec<ImageId> = keys.iter().map(|k| k.image_id).collect();
        images.sort_unstable();
        images.dedup();
        let record_image = keys
            .iter()
            .map(|k| images.binary_search(&k.image_id).expect("image present") as u32)
            .collect();
        let n_lists = centroids.len() / dim;
        let mut lists = vec![Vec::new(); n_lists];
        for (rid, &c) in assignment.iter().enumerate() {
            lists[c as usize].push(rid as u32);
        }
        let centroid_sq_norms = sq_norms(&centroids, dim);
        Self {
            dim,
            records,
            norms,
            keys,
            images,
            record_image,
            centroids,
            centroid_sq_norms,
            assignment,
            lists,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn num_clusters(&self) -> usize {
        self.lists.len()
    }

    pub fn keys(&self) -> &[PatchKey] {
        &self.keys
    }

    pub fn image_ids(&self) -> &[ImageId] {
        &self.images
    }

    pub fn inverted_lists(&self) -> &[Vec<u32>] {
        &self.lists
    }

    pub fn record(&self, rid: usize) -> &[f32] {
        &self.records[rid * self.dim..(rid + 1) * self.dim]
    }

    pub fn centroid(&self, c: usize) -> &[f32] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }

    /// Approximate search over the `nprobe` nearest lists.
    pub fn search(&self, query: &EmbeddingVector, k: usize, nprobe: usize) -> Result<SearchResult> {
        let q = self.prepare(query)?;
        if nprobe == 0 || nprobe > self.lists.len() {
            return Err(Error::InvalidNprobe {
                got: nprobe,
                max: self.lists.len(),
            });
        }
        let probed = self.nearest_lists(&q, nprobe);
        let rids = probed.into_iter().flat_map(|c| self.lists[c].iter().copied());
        Ok(self.scan(&q, rids, k))
    }

    /// Exhaustive scan of every record.
    pub fn search_exact(&self, query: &EmbeddingVector, k: usize) -> Result<SearchResult> {
        let q = self.prepare(query)?;
        Ok(self.scan(&q, 0..self.len() as u32, k))
    }

    /// Cosine similarity of `query` against every record, in record order.
    pub fn patch_scores(&self, query: &EmbeddingVector) -> Result<Vec<f64>> {
        let q = self.prepare(query)?;
        Ok((0..self.len()).map(|rid| self.score(&q, rid)).collect())
    }

    fn prepare(&self, query: &EmbeddingVector) -> Result<Vec<f64>> {
        if self.is_empty() {
            return Err(Error::EmptyIndex);
        }
        ensure_same_dim(self.dim, query.dim())?;
        query.unit_f64()
    }

    #[inline]
    fn score(&self, q: &[f64], rid: usize) -> f64 {
        dot_mixed(q, self.record(rid)) / f64::from(self.norms[rid])
    }

    fn nearest_lists(&self, q: &[f64], nprobe: usize) -> Vec<usize> {
        if nprobe == self.lists.len() {
            return (0..nprobe).collect();
        }
        let mut dist: Vec<(f64, usize)> = (0..self.lists.len())
            .map(|c| (self.centroid_sq_norms[c] - 2.0 * dot_mixed(q, self.centroid(c)), c))
            .collect();
        dist.select_nth_unstable_by(nprobe - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        dist.truncate(nprobe);
        dist.into_iter().map(|(_, c)| c).collect()
    }

    /// Max-reduces record scores per image. Equal scores resolve to the
    /// lowest record id so the result does not depend on scan order.
    fn scan(&self, q: &[f64], rids: impl Iterator<Item = u32>, k: usize) -> SearchResult {
        let mut best: Vec<(f64, u32)> = vec![(f64::NEG_INFINITY, u32::MAX); self.images.len()];
        for rid in rids {
            let s = self.score(q, rid as usize);
            let slot = &mut best[self.record_image[rid as usize] as usize];
            if s > slot.0 || (s == slot.0 && rid < slot.1) {
                *slot = (s, rid);
            }
        }
        let items = best
            .iter()
            .enumerate()
            .filter(|(_, (_, rid))| *rid != u32::MAX)
            .map(|(slot, (s, _))| ScoredItem::new(self.images[slot], *s))
            .collect();
        let ranked = RankedList::top_k(items, k);
        let best_patch = ranked
            .ids()
            .map(|id| {
                let slot = self.images.binary_search(&id).expect("ranked image is indexed");
                (id, self.keys[best[slot].1 as usize])
            })
            .collect();
        SearchResult { ranked, best_patch }
    }
}

fn sq_norms(rows: &[f32], dim: usize) -> Vec<f64> {
    rows.chunks_exact(dim).map(|r| dot(r, r)).collect()
}
