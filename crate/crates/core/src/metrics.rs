//! Precision, recall and average precision over a ranked image list.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ranked::RankedList;
use crate::ItemId;

/// AP@k: the sum of precision@r over every positive hit at rank `r <= k`,
/// divided by `min(|positives|, k)`.
pub fn average_precision(ranked: &RankedList, positives: &BTreeSet<ItemId>, k: usize) -> Result<f64> {
    if positives.is_empty() {
        return Err(Error::NoPositives);
    }
    if k == 0 {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (r, id) in ranked.ids().take(k).enumerate() {
        if positives.contains(&id) {
            hits += 1;
            sum += hits as f64 / (r + 1) as f64;
        }
    }
    Ok(sum / positives.len().min(k) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub k: usize,
    pub precision: f64,
    pub recall: f64,
}

/// Precision and recall at every cutoff `1..=k`. Past the end of the list
/// the hit count stays where it was.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PrCurve(pub Vec<PrPoint>);

impl PrCurve {
    pub fn compute(ranked: &RankedList, positives: &BTreeSet<ItemId>, k: usize) -> Result<Self> {
        if positives.is_empty() {
            return Err(Error::NoPositives);
        }
        let p = positives.len() as f64;
        let mut ids = ranked.ids();
        let mut hits = 0usize;
        let points = (1..=k)
            .map(|cut| {
                if ids.next().is_some_and(|id| positives.contains(&id)) {
                    hits += 1;
                }
                PrPoint {
                    k: cut,
                    precision: hits as f64 / cut as f64,
                    recall: hits as f64 / p,
                }
            })
            .collect();
        Ok(Self(points))
    }

    pub fn points(&self) -> &[PrPoint] {
        &self.0
    }

    /// Pointwise mean of aligned curves; `None` when `curves` is empty or
    /// the grids differ.
    pub fn mean<'a>(curves: impl IntoIterator<Item = &'a PrCurve>) -> Option<Self> {
        let curves: Vec<_> = curves.into_iter().collect();
        let first = curves.first()?;
        if curves.iter().any(|c| c.0.len() != first.0.len()) {
            return None;
        }
        let n = curves.len() as f64;
        let points = (0..first.0.len())
            .map(|i| PrPoint {
                k: first.0[i].k,
                precision: curves.iter().map(|c| c.0[i].precision).sum::<f64>() / n,
                recall: curves.iter().map(|c| c.0[i].recall).sum::<f64>() / n,
            })
            .collect();
        Some(Self(points))
    }

    /// Every `step`-th point plus the last one.
    pub fn downsample(&self, step: usize) -> Vec<PrPoint> {
        let step = step.max(1);
        let last = self.0.len().saturating_sub(1);
        self.0
            .iter()
            .enumerate()
            .filter(|(i, _)| (i + 1) % step == 0 || *i == last || *i == 0)
            .map(|(_, p)| *p)
            .collect()
    }
}
