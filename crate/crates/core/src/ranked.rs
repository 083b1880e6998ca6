//! Ranked result lists.

use std::cmp::Ordering;
use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::ItemId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredItem {
    pub item_id: ItemId,
    pub score: f64,
}

impl ScoredItem {
    pub fn new(item_id: ItemId, score: f64) -> Self {
        Self { item_id, score }
    }
}

/// Descending score, then ascending id.
pub fn rank_order(a: &ScoredItem, b: &ScoredItem) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.item_id.cmp(&b.item_id))
}

/// Items ordered by descending score with ties broken by ascending id.
/// Ids are unique and every score is finite.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RankedList {
    items: Vec<ScoredItem>,
}

impl RankedList {
    /// Sorts `items` into rank order. When an id occurs more than once only
    /// its highest-scoring occurrence is kept.
    pub fn from_unsorted(mut items: Vec<ScoredItem>) -> Self {
        debug_assert!(items.iter().all(|i| i.score.is_finite()));
        items.sort_by(rank_order);
        let mut seen = HashSet::with_capacity(items.len());
        items.retain(|i| seen.insert(i.item_id));
        Self { items }
    }

    /// Like [`from_unsorted`](Self::from_unsorted) but keeps only the first `k`.
    pub fn top_k(items: Vec<ScoredItem>, k: usize) -> Self {
        let mut list = Self::from_unsorted(items);
        list.truncate(k);
        list
    }

    /// Accepts items already in rank order; returns `None` if they are not.
    pub fn from_sorted(items: Vec<ScoredItem>) -> Option<Self> {
        let list = Self { items };
        list.is_valid().then_some(list)
    }

    pub fn is_valid(&self) -> bool {
        let ordered = self
            .items
            .windows(2)
            .all(|w| rank_order(&w[0], &w[1]) == Ordering::Less);
        let mut seen = HashSet::with_capacity(self.items.len());
        ordered
            && self
                .items
                .iter()
                .all(|i| i.score.is_finite() && seen.insert(i.item_id))
    }

    pub fn truncate(&mut self, k: usize) {
        self.items.truncate(k);
    }

    pub fn items(&self) -> &[ScoredItem] {
        &self.items
    }

    pub fn ids(&self) -> impl Iterator<Item = ItemId> + '_ {
        self.items.iter().map(|i| i.item_id)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// 1-based position of `id`, if present.
    pub fn rank_of(&self, id: ItemId) -> Option<usize> {
        self.items.iter().position(|i| i.item_id == id).map(|p| p + 1)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, ScoredItem> {
        self.items.iter()
    }
}

impl<'a> IntoIterator for &'a RankedList {
    type Item = &'a ScoredItem;
    type IntoIter = std::slice::Iter<'a, ScoredItem>;

    fn into_iter(self) -> Self::IntoIter {
        self.items.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sorts_and_breaks_ties_by_id() {
        let list = RankedList::from_unsorted(vec![
            ScoredItem::new(5, 0.5),
            ScoredItem::new(2, 0.9),
            ScoredItem::new(1, 0.5),
        ]);
        assert_eq!(list.ids().collect::<Vec<_>>(), vec![2, 1, 5]);
        assert!(list.is_valid());
        assert_eq!(list.rank_of(5), Some(3));
    }

    #[test]
    fn duplicate_keeps_best() {
        let list = RankedList::from_unsorted(vec![ScoredItem::new(1, 0.1), ScoredItem::new(1, 0.7)]);
        assert_eq!(list.items(), &[ScoredItem::new(1, 0.7)]);
    }

    #[test]
    fn from_sorted_rejects_bad_order() {
        assert!(RankedList::from_sorted(vec![ScoredItem::new(1, 0.1), ScoredItem::new(2, 0.7)]).is_none());
        assert!(RankedList::from_sorted(vec![ScoredItem::new(1, 0.7), ScoredItem::new(1, 0.1)]).is_none());
    }
}
