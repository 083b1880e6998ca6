//! Executing text, visual and paired queries against an index.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingVector;
use crate::error::Result;
use crate::fusion::{
    merge_results, naive_interleave, rank_fusion, sum_fusion_query, weighted_fusion_query, FusionPolicy, MergeMode,
};
use crate::index::VectorIndex;
use crate::ranked::RankedList;

pub const DEFAULT_K: usize = 1000;
pub const DEFAULT_NPROBE: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchParams {
    pub k: usize,
    /// Clamped to the index's list count at search time.
    pub nprobe: usize,
}

impl Default for SearchParams {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            nprobe: DEFAULT_NPROBE,
        }
    }
}

impl SearchParams {
    pub fn nprobe_for(&self, index: &VectorIndex) -> usize {
        self.nprobe.clamp(1, index.num_clusters().max(1))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Query {
    Text(EmbeddingVector),
    Visual(EmbeddingVector),
    Pair { text: EmbeddingVector, visual: EmbeddingVector },
}

/// Which side of a paired query to keep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    #[default]
    Both,
    TextsOnly,
    BboxesOnly,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Both => "both",
            Modality::TextsOnly => "texts_only",
            Modality::BboxesOnly => "bboxes_only",
        }
    }
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Query {
    /// Drops the masked side; `None` when nothing is left.
    pub fn mask(self, modality: Modality) -> Option<Query> {
        match (modality, self) {
            (Modality::Both, q) => Some(q),
            (Modality::TextsOnly, Query::Text(t) | Query::Pair { text: t, .. }) => Some(Query::Text(t)),
            (Modality::BboxesOnly, Query::Visual(v) | Query::Pair { visual: v, .. }) => Some(Query::Visual(v)),
            _ => None,
        }
    }
}

fn search(index: &VectorIndex, q: &EmbeddingVector, params: &SearchParams) -> Result<RankedList> {
    Ok(index.search(q, params.k, params.nprobe_for(index))?.ranked)
}

/// Top-k images for one query. Single-modality queries ignore `policy`.
pub fn execute(query: &Query, policy: FusionPolicy, index: &VectorIndex, params: &SearchParams) -> Result<RankedList> {
    match query {
        Query::Text(t) => search(index, t, params),
        Query::Visual(v) => search(index, v, params),
        Query::Pair { text, visual } => match policy {
            FusionPolicy::SingleText => search(index, text, params),
            FusionPolicy::SingleVisual => search(index, visual, params),
            FusionPolicy::Sum => search(index, &sum_fusion_query(text, visual)?, params),
            FusionPolicy::Weighted => search(index, &weighted_fusion_query(text, visual)?, params),
            FusionPolicy::Rank => {
                let lt = search(index, text, params)?;
                let lv = search(index, visual, params)?;
                Ok(rank_fusion(&lt, &lv, params.k))
            }
            FusionPolicy::Naive => {
                let lt = search(index, text, params)?;
                let lv = search(index, visual, params)?;
                Ok(naive_interleave(&lt, &lv, params.k))
            }
        },
    }
}

/// One list per query, in input order.
pub fn execute_each(
    queries: &[Query],
    policy: FusionPolicy,
    index: &VectorIndex,
    params: &SearchParams,
) -> Result<Vec<RankedList>> {
    queries.par_iter().map(|q| execute(q, policy, index, params)).collect()
}

/// Runs every query and merges the lists with `merge`.
pub fn execute_all(
    queries: &[Query],
    policy: FusionPolicy,
    merge: MergeMode,
    index: &VectorIndex,
    params: &SearchParams,
) -> Result<RankedList> {
    let lists = execute_each(queries, policy, index, params)?;
    Ok(merge_results(&lists, merge, params.k))
}
