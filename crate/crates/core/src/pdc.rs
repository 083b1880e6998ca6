//! Greedy instruction-pair selection.
//!
//! Every (word, box) pair of a class's candidate pool is searched once on
//! the training index and scored by AP@k against the training positives.
//! The best pair seeds the set; after that, each step adds the pair whose
//! list, merged with the lists already chosen, gives the largest strict gain.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{BBox, CandidatePool, PromptTemplate};
use crate::embedding::EmbeddingVector;
use crate::error::{Error, Result};
use crate::fusion::{merge_results, sum_fusion_query, weighted_fusion_query, FusionPolicy, MergeMode};
use crate::index::VectorIndex;
use crate::instructions::{InstructionEntry, InstructionSet, MethodConfig};
use crate::metrics::average_precision;
use crate::query::{execute, Query, SearchParams};
use crate::ranked::RankedList;
use crate::{ImageId, ItemId};

pub const DEFAULT_MAX_PAIRS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalPair {
    pub word: String,
    pub prompt: String,
    pub text_embedding: EmbeddingVector,
    pub image_id: ImageId,
    pub bbox: BBox,
    pub visual_embedding: EmbeddingVector,
}

impl MultimodalPair {
    pub fn query(&self) -> Query {
        Query::Pair {
            text: self.text_embedding.clone(),
            visual: self.visual_embedding.clone(),
        }
    }

    /// The single search vector for early-fusion and single-modality
    /// policies; `None` for the late-fusion policies.
    pub fn fused_query(&self, policy: FusionPolicy) -> Result<Option<EmbeddingVector>> {
        Ok(match policy {
            FusionPolicy::SingleText => Some(self.text_embedding.clone()),
            FusionPolicy::SingleVisual => Some(self.visual_embedding.clone()),
            FusionPolicy::Sum => Some(sum_fusion_query(&self.text_embedding, &self.visual_embedding)?),
            FusionPolicy::Weighted => Some(weighted_fusion_query(&self.text_embedding, &self.visual_embedding)?),
            FusionPolicy::Rank | FusionPolicy::Naive => None,
        })
    }

    pub fn entry(&self, train_auc_after: Option<f64>) -> InstructionEntry {
        InstructionEntry {
            word: Some(self.word.clone()),
            prompt: Some(self.prompt.clone()),
            image_id: Some(self.image_id),
            bbox_id: Some(self.bbox.id),
            bbox_xywh: Some(self.bbox.xywh()),
            train_auc_after,
            ..Default::default()
        }
    }
}

/// The full cross product, ordered by `(word, bbox_id)`.
pub fn candidate_pairs(pool: &CandidatePool) -> Vec<MultimodalPair> {
    let mut pairs: Vec<MultimodalPair> = pool
        .words
        .iter()
        .flat_map(|w| {
            pool.visuals.iter().map(move |v| MultimodalPair {
                word: w.word.clone(),
                prompt: w.prompt.clone(),
                text_embedding: w.embedding.clone(),
                image_id: v.image_id,
                bbox: v.bbox.clone(),
                visual_embedding: v.embedding.clone(),
            })
        })
        .collect();
    pairs.sort_by(|a, b| a.word.cmp(&b.word).then(a.bbox.id.cmp(&b.bbox.id)));
    pairs
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdcConfig {
    pub search: SearchParams,
    pub max_pairs: usize,
    pub fusion_policy: FusionPolicy,
    pub merge_mode: MergeMode,
}

impl Default for PdcConfig {
    fn default() -> Self {
        Self {
            search: SearchParams::default(),
            max_pairs: DEFAULT_MAX_PAIRS,
            fusion_policy: FusionPolicy::Sum,
            merge_mode: MergeMode::Max,
        }
    }
}

pub fn score_pair(
    pair: &MultimodalPair,
    index: &VectorIndex,
    policy: FusionPolicy,
    params: &SearchParams,
) -> Result<RankedList> {
    execute(&pair.query(), policy, index, params)
}

/// The selection objective: AP@k of `ranked` against `positives`.
pub fn auc_of_results(ranked: &RankedList, positives: &BTreeSet<ItemId>, k: usize) -> Result<f64> {
    average_precision(ranked, positives, k)
}

/// Chosen candidate indices and the objective after each one.
#[derive(Debug, Clone, PartialEq)]
pub struct GreedyTrace {
    pub chosen: Vec<usize>,
    pub auc_trace: Vec<f64>,
}

/// Greedy growth over precomputed candidate lists. Candidates are assumed
/// to be in tie-break order; the earliest of equal scores wins.
pub fn greedy_over_lists(
    lists: &[RankedList],
    positives: &BTreeSet<ItemId>,
    k: usize,
    max_pairs: usize,
    merge: MergeMode,
) -> Result<GreedyTrace> {
    if positives.is_empty() {
        return Err(Error::NoPositives);
    }
    if lists.is_empty() {
        return Err(Error::EmptyPool);
    }
    if max_pairs == 0 {
        return Err(Error::InvalidConfig("max_pairs must be >= 1".into()));
    }
    let single: Vec<f64> = lists
        .par_iter()
        .map(|l| auc_of_results(l, positives, k))
        .collect::<Result<_>>()?;
    let first = argmax(single.iter().copied().enumerate()).expect("lists is nonempty");
    let mut chosen = vec![first.0];
    let mut auc_trace = vec![first.1];
    let mut merged = lists[first.0].clone();

    while chosen.len() < max_pairs {
        let taken: BTreeSet<usize> = chosen.iter().copied().collect();
        let trials: Vec<(usize, f64)> = (0..lists.len())
            .into_par_iter()
            .filter(|i| !taken.contains(i))
            .map(|i| {
                let combined = match merge {
                    MergeMode::Max => merge_results([&merged, &lists[i]], merge, k),
                    MergeMode::Avg => merge_results(chosen.iter().chain([&i]).map(|&c| &lists[c]), merge, k),
                };
                auc_of_results(&combined, positives, k).map(|s| (i, s))
            })
            .collect::<Result<_>>()?;
        let best = argmax(trials.into_iter());
        match best {
            Some((i, s)) if s > *auc_trace.last().unwrap() => {
                chosen.push(i);
                auc_trace.push(s);
                merged = merge_results(chosen.iter().map(|&c| &lists[c]), merge, k);
            }
            _ => break,
        }
    }
    Ok(GreedyTrace { chosen, auc_trace })
}

/// First maximum in iteration order.
fn argmax(it: impl Iterator<Item = (usize, f64)>) -> Option<(usize, f64)> {
    it.fold(None, |best, (i, s)| match best {
        Some((_, b)) if s <= b => best,
        _ => Some((i, s)),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub pairs: Vec<MultimodalPair>,
    pub auc_trace: Vec<f64>,
}

pub fn greedy_select(
    pool: &CandidatePool,
    index: &VectorIndex,
    positives: &BTreeSet<ImageId>,
    config: &PdcConfig,
) -> Result<Selection> {
    if positives.is_empty() {
        return Err(Error::NoPositives);
    }
    let candidates = candidate_pairs(pool);
    if candidates.is_empty() {
        return Err(Error::EmptyPool);
    }
    let lists: Vec<RankedList> = candidates
        .par_iter()
        .map(|p| score_pair(p, index, config.fusion_policy, &config.search))
        .collect::<Result<_>>()?;
    let trace = greedy_over_lists(&lists, positives, config.search.k, config.max_pairs, config.merge_mode)?;
    Ok(Selection {
        pairs: trace.chosen.iter().map(|&i| candidates[i].clone()).collect(),
        auc_trace: trace.auc_trace,
    })
}

impl Selection {
    pub fn into_instruction_set(
        self,
        class: &str,
        config: &PdcConfig,
        seed: u64,
        template: &PromptTemplate,
        fold: Option<usize>,
        class_id: crate::ClassId,
    ) -> InstructionSet {
        InstructionSet {
            class: class.to_owned(),
            class_id,
            method: "pdc".into(),
            fold,
            pairs: self
                .pairs
                .iter()
                .zip(&self.auc_trace)
                .map(|(p, &auc)| p.entry(Some(auc)))
                .collect(),
            config: MethodConfig {
                method: "pdc".into(),
                fusion_policy: config.fusion_policy,
                merge_mode: config.merge_mode,
                k: config.search.k,
                nprobe: config.search.nprobe,
                max_pairs: config.max_pairs,
                seed,
                prompt_template: template.clone(),
            },
        }
    }
}
