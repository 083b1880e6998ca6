//! Comparison methods. Each returns an [`InstructionSet`] so that every
//! method is evaluated through the same code path.

mod mean_shift;

use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{AnnotatedDataset, CandidatePool, VisualCandidate};
use crate::error::{Error, Result};
use crate::instructions::{InstructionEntry, InstructionSet, MethodConfig};

pub use mean_shift::{estimate_bandwidth, mean_shift, MeanShiftParams, MEAN_SHIFT_QUANTILE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    OriginalTexts,
    OriginalPairs,
    RandomBboxes,
    RandomPairs,
    MeanShift,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 5] = [
        BaselineKind::OriginalTexts,
        BaselineKind::OriginalPairs,
        BaselineKind::RandomBboxes,
        BaselineKind::RandomPairs,
        BaselineKind::MeanShift,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BaselineKind::OriginalTexts => "original_texts",
            BaselineKind::OriginalPairs => "original_pairs",
            BaselineKind::RandomBboxes => "random_bboxes",
            BaselineKind::RandomPairs => "random_pairs",
            BaselineKind::MeanShift => "mean_shift",
        }
    }

    /// Whether the method needs the per-class example count of a reference run.
    pub fn needs_count(self) -> bool {
        matches!(self, BaselineKind::RandomBboxes | BaselineKind::RandomPairs)
    }
}

impl std::fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s.replace('-', "_"))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown baseline `{s}`")))
    }
}

fn set(pool: &CandidatePool, ds: &AnnotatedDataset, config: &MethodConfig, pairs: Vec<InstructionEntry>) -> InstructionSet {
    let class = ds.class(pool.class_id).map_or_else(|| pool.class_id.to_string(), |c| c.name.clone());
    InstructionSet {
        class,
        class_id: pool.class_id,
        method: config.method.clone(),
        fold: None,
        pairs,
        config: config.clone(),
    }
}

fn visual_entry(v: &VisualCandidate) -> InstructionEntry {
    InstructionEntry {
        image_id: Some(v.image_id),
        bbox_id: Some(v.bbox.id),
        bbox_xywh: Some(v.bbox.xywh()),
        ..Default::default()
    }
}

/// One text query per word of the class.
pub fn original_texts(pool: &CandidatePool, ds: &AnnotatedDataset, config: &MethodConfig) -> InstructionSet {
    let pairs = pool
        .words
        .iter()
        .map(|w| InstructionEntry {
            word: Some(w.word.clone()),
            prompt: Some(w.prompt.clone()),
            ..Default::default()
        })
        .collect();
    set(pool, ds, config, pairs)
}

/// The first `n` positions of a seeded Fisher-Yates shuffle of `0..len`.
pub fn sample_indices(rng: &mut ChaCha8Rng, len: usize, n: usize) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::InvalidConfig("sample size must be >= 1".into()));
    }
    if n > len {
        return Err(Error::PoolTooSmall { requested: n, available: len });
    }
    let mut idx: Vec<usize> = (0..len).collect();
    for i in 0..n {
        let j = rng.random_range(i..len);
        idx.swap(i, j);
    }
    idx.truncate(n);
    Ok(idx)
}

/// `n` boxes drawn uniformly from the pool, used as visual-only queries.
pub fn random_bboxes(
    pool: &CandidatePool,
    ds: &AnnotatedDataset,
    n: usize,
    seed: u64,
    config: &MethodConfig,
) -> Result<InstructionSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = sample_indices(&mut rng, pool.visuals.len(), n)?;
    let pairs = picked.iter().map(|&i| visual_entry(&pool.visuals[i])).collect();
    Ok(set(pool, ds, config, pairs))
}

/// The [`random_bboxes`] sample, each box paired with a uniformly drawn word.
pub fn random_pairs(
    pool: &CandidatePool,
    ds: &AnnotatedDataset,
    n: usize,
    seed: u64,
    config: &MethodConfig,
) -> Result<InstructionSet> {
    if pool.words.is_empty() {
        return Err(Error::EmptyPool);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = sample_indices(&mut rng, pool.visuals.len(), n)?;
    let pairs = picked
        .iter()
        .map(|&i| {
            let w = &pool.words[rng.random_range(0..pool.words.len())];
            InstructionEntry {
                word: Some(w.word.clone()),
                prompt: Some(w.prompt.clone()),
                ..visual_entry(&pool.visuals[i])
            }
        })
        .collect();
    Ok(set(pool, ds, config, pairs))
}

/// Mean-shift modes of the pool's box embeddings, each represented by its
/// nearest box and paired with the canonical word.
pub fn mean_shift_examples(
    pool: &CandidatePool,
    ds: &AnnotatedDataset,
    bandwidth: Option<f64>,
    config: &MethodConfig,
) -> Result<InstructionSet> {
    if pool.visuals.is_empty() || pool.words.is_empty() {
        return Err(Error::EmptyPool);
    }
    let points = pool
        .visuals
        .iter()
        .map(|v| v.embedding.unit_f64())
        .collect::<Result<Vec<_>>>()?;
    let params = MeanShiftParams {
        bandwidth,
        ..Default::default()
    };
    let reps = mean_shift(&points, &params).representatives;
    let canonical = pool.canonical();
    let pairs = reps
        .into_iter()
        .map(|i| InstructionEntry {
            word: Some(canonical.word.clone()),
            prompt: Some(canonical.prompt.clone()),
            ..visual_entry(&pool.visuals[i])
        })
        .collect();
    Ok(set(pool, ds, config, pairs))
}

/// Reads an original-instruction file: either an array of entries
/// (`class`, `word`, `image_id`, `bbox_xywh` and optional `bbox_id`), an
/// instruction-set document, or an array of instruction-set documents.
/// Returns the entries belonging to `class`.
pub fn load_original_entries(path: impl AsRef<Path>, class: &str) -> Result<Vec<InstructionEntry>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_original_entries(&text, class)
}

pub(crate) fn parse_original_entries(text: &str, class: &str) -> Result<Vec<InstructionEntry>> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Doc {
        Sets(Vec<InstructionSet>),
        Set(Box<InstructionSet>),
        Entries(Vec<InstructionEntry>),
    }
    let doc: Doc = serde_json::from_str(text).map_err(|e| Error::Parse(format!("original instructions: {e}")))?;
    Ok(match doc {
        Doc::Set(s) => {
            if s.class == class {
                s.pairs
            } else {
                Vec::new()
            }
        }
        Doc::Sets(sets) => sets.into_iter().filter(|s| s.class == class).flat_map(|s| s.pairs).collect(),
        Doc::Entries(es) => es
            .into_iter()
            .filter(|e| e.class.as_deref().is_none_or(|c| c == class))
            .map(|e| InstructionEntry { class: None, ..e })
            .collect(),
    })
}

/// Pairs taken verbatim from an original-instruction file. Unknown boxes or
/// words surface as `MissingEmbedding` when the set is turned into queries.
pub fn original_pairs(
    entries: Vec<InstructionEntry>,
    pool: &CandidatePool,
    ds: &AnnotatedDataset,
    config: &MethodConfig,
) -> Result<InstructionSet> {
    if entries.is_empty() {
        return Err(Error::EmptyPool);
    }
    let pairs = entries
        .into_iter()
        .map(|e| InstructionEntry {
            train_auc_after: None,
            ..e
        })
        .collect();
    Ok(set(pool, ds, config, pairs))
}
