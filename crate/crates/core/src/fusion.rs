//! Similarity scoring and fusion of queries and result lists.
//!
//! Early fusion combines a text and a visual embedding into one query
//! vector; late fusion combines the ranked lists of two separate searches.
//! Lists retrieved by several queries of the same kind are merged by max or
//! mean score, and per-patch scores reduce to one score per image by max.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embedding::{dot, ensure_same_dim, EmbeddingVector, ZERO_NORM_THRESHOLD};
use crate::error::{Error, Result};
use crate::ranked::{RankedList, ScoredItem};
use crate::ItemId;

/// How a (text, visual) instruction pair becomes a ranked list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionPolicy {
    /// Text embedding only.
    SingleText,
    /// Visual embedding only.
    SingleVisual,
    /// Early fusion: sum of unit vectors.
    Sum,
    /// Early fusion weighted by the text/visual agreement.
    Weighted,
    /// Late fusion by reciprocal ranks.
    Rank,
    /// Late fusion by alternating the two lists.
    Naive,
}

impl FusionPolicy {
    pub const ALL: [FusionPolicy; 6] = [
        FusionPolicy::SingleText,
        FusionPolicy::SingleVisual,
        FusionPolicy::Sum,
        FusionPolicy::Weighted,
        FusionPolicy::Rank,
        FusionPolicy::Naive,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FusionPolicy::SingleText => "single_text",
            FusionPolicy::SingleVisual => "single_visual",
            FusionPolicy::Sum => "sum",
            FusionPolicy::Weighted => "weighted",
            FusionPolicy::Rank => "rank",
            FusionPolicy::Naive => "naive",
        }
    }
}

impl fmt::Display for FusionPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.as_str() == s.replace('-', "_"))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown fusion policy `{s}`")))
    }
}

/// Combination rule for an item retrieved by several lists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeMode {
    Max,
    Avg,
}

impl MergeMode {
    pub fn as_str(self) -> &'static str {
        match self {
            MergeMode::Max => "max",
            MergeMode::Avg => "avg",
        }
    }
}

impl fmt::Display for MergeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MergeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(MergeMode::Max),
            "avg" | "mean" => Ok(MergeMode::Avg),
            _ => Err(Error::InvalidConfig(format!("unknown merge mode `{s}`"))),
        }
    }
}

pub fn normalize(v: &EmbeddingVector) -> Result<EmbeddingVector> {
    EmbeddingVector::from_f64(&v.unit_f64()?)
}

/// Cosine similarity of `q` and `x`.
pub fn single_score(q: &EmbeddingVector, x: &EmbeddingVector) -> Result<f64> {
    ensure_same_dim(q.dim(), x.dim())?;
    let (nq, nx) = (q.norm(), x.norm());
    if nq < ZERO_NORM_THRESHOLD || nx < ZERO_NORM_THRESHOLD {
        return Err(Error::ZeroVector);
    }
    let c = dot(q.as_slice(), x.as_slice()) / (nq * nx);
    Ok(c.clamp(-1.0, 1.0))
}

/// `q = q̂_v + q̂_t`, left unnormalized so that `q·x̂` equals the sum of the
/// two cosines.
pub fn sum_fusion_query(q_t: &EmbeddingVector, q_v: &EmbeddingVector) -> Result<EmbeddingVector> {
    ensure_same_dim(q_t.dim(), q_v.dim())?;
    let t = q_t.unit_f64()?;
    let v = q_v.unit_f64()?;
    let q: Vec<f64> = v.iter().zip(&t).map(|(v, t)| v + t).collect();
    EmbeddingVector::from_f64(&q)
}

/// `q = (1 - w) q̂_v + (1 + w) q̂_t` with `w = cos(q_t, q_v)`.
pub fn weighted_fusion_query(q_t: &EmbeddingVector, q_v: &EmbeddingVector) -> Result<EmbeddingVector> {
    ensure_same_dim(q_t.dim(), q_v.dim())?;
    let t = q_t.unit_f64()?;
    let v = q_v.unit_f64()?;
    let w: f64 = t.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>().clamp(-1.0, 1.0);
    let q: Vec<f64> = v
        .iter()
        .zip(&t)
        .map(|(v, t)| (1.0 - w) * v + (1.0 + w) * t)
        .collect();
    // |q|^2 = 2 + 2w + 2w^2 - 2w^3 >= 1.6 on [-1, 1], so this only trips on
    // corrupted input.
    let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n < ZERO_NORM_THRESHOLD {
        return Err(Error::DegenerateQuery);
    }
    EmbeddingVector::from_f64(&q)
}

/// `1/rank_v + 1/rank_t` for 1-based ranks.
pub fn rank_fusion_score(rank_v: u64, rank_t: u64) -> Result<f64> {
    for r in [rank_v, rank_t] {
        if r < 1 {
            return Err(Error::InvalidRank(r));
        }
    }
    Ok(1.0 / rank_v as f64 + 1.0 / rank_t as f64)
}

/// Reciprocal-rank late fusion of a text and a visual list. An item missing
/// from one list contributes nothing for that list.
pub fn rank_fusion(list_t: &RankedList, list_v: &RankedList, k: usize) -> RankedList {
    let mut scores: BTreeMap<ItemId, f64> = BTreeMap::new();
    for list in [list_t, list_v] {
        for (pos, item) in list.iter().enumerate() {
            *scores.entry(item.item_id).or_default() += 1.0 / (pos + 1) as f64;
        }
    }
    RankedList::top_k(
        scores.into_iter().map(|(id, s)| ScoredItem::new(id, s)).collect(),
        k,
    )
}

/// Alternates text and visual heads, text first, skipping ids already taken.
/// Scores are synthetic (`k, k-1, ...`) because the two sources are not
/// comparable.
pub fn naive_interleave(list_t: &RankedList, list_v: &RankedList, k: usize) -> RankedList {
    let mut taken = HashSet::new();
    let mut out = Vec::with_capacity(k.min(list_t.len() + list_v.len()));
    let mut heads = [list_t.iter().peekable(), list_v.iter().peekable()];
    let mut turn = 0;
    while out.len() < k && (heads[0].peek().is_some() || heads[1].peek().is_some()) {
        let head = &mut heads[turn];
        for item in head.by_ref() {
            if taken.insert(item.item_id) {
                out.push(item.item_id);
                break;
            }
        }
        turn = 1 - turn;
    }
    let items = out
        .into_iter()
        .enumerate()
        .map(|(pos, id)| ScoredItem::new(id, (k - pos) as f64))
        .collect();
    RankedList::from_sorted(items).expect("synthetic scores strictly decrease")
}

/// Union of `lists`; repeated ids combine by `mode` over the lists that hold
/// them. Re-ranked and cut to `k`.
pub fn merge_results<'a, I>(lists: I, mode: MergeMode, k: usize) -> RankedList
where
    I: IntoIterator<Item = &'a RankedList>,
{
    let mut acc: BTreeMap<ItemId, (f64, usize)> = BTreeMap::new();
    for list in lists {
        for item in list {
            acc.entry(item.item_id)
                .and_modify(|(s, n)| {
                    *s = match mode {
                        MergeMode::Max => s.max(item.score),
                        MergeMode::Avg => *s + item.score,
                    };
                    *n += 1;
                })
                .or_insert((item.score, 1));
        }
    }
    let items = acc
        .into_iter()
        .map(|(id, (s, n))| {
            let score = match mode {
                MergeMode::Max => s,
                MergeMode::Avg => s / n as f64,
            };
            ScoredItem::new(id, score)
        })
        .collect();
    RankedList::top_k(items, k)
}

/// Per-image maximum over patch scores.
pub fn patch_fusion<'a, I>(groups: I) -> Result<Vec<ScoredItem>>
where
    I: IntoIterator<Item = (ItemId, &'a [f64])>,
{
    groups
        .into_iter()
        .map(|(id, scores)| {
            scores
                .iter()
                .copied()
                .reduce(f64::max)
                .map(|s| ScoredItem::new(id, s))
                .ok_or(Error::EmptyGroup(id))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ev(v: &[f32]) -> EmbeddingVector {
        EmbeddingVector::new(v.to_vec()).unwrap()
    }

    fn list(items: &[(ItemId, f64)]) -> RankedList {
        RankedList::from_unsorted(items.iter().map(|&(i, s)| ScoredItem::new(i, s)).collect())
    }

    #[test]
    fn normalize_examples() {
        let n = normalize(&ev(&[3.0, 4.0])).unwrap();
        assert!((n.as_slice()[0] - 0.6).abs() < 1e-7 && (n.as_slice()[1] - 0.8).abs() < 1e-7);
        assert_eq!(normalize(&ev(&[1.0, 0.0])).unwrap(), ev(&[1.0, 0.0]));
        assert!(matches!(normalize(&ev(&[0.0, 0.0])), Err(Error::ZeroVector)));
        let again = normalize(&n).unwrap();
        assert!((again.norm() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn single_score_examples() {
        assert_eq!(single_score(&ev(&[1.0, 0.0]), &ev(&[1.0, 0.0])).unwrap(), 1.0);
        assert_eq!(single_score(&ev(&[1.0, 0.0]), &ev(&[0.0, 1.0])).unwrap(), 0.0);
        let c = single_score(&ev(&[1.0, 0.0]), &ev(&[1.0, 1.0])).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9);
        assert!(matches!(
            single_score(&ev(&[1.0, 0.0]), &ev(&[1.0, 0.0, 0.0])),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            single_score(&ev(&[0.0, 0.0]), &ev(&[1.0, 0.0])),
            Err(Error::ZeroVector)
        ));
    }

    #[test]
    fn sum_fusion_examples() {
        assert_eq!(sum_fusion_query(&ev(&[1.0, 0.0]), &ev(&[1.0, 0.0])).unwrap(), ev(&[2.0, 0.0]));
        assert_eq!(sum_fusion_query(&ev(&[1.0, 0.0]), &ev(&[0.0, 1.0])).unwrap(), ev(&[1.0, 1.0]));
        assert!(matches!(
            sum_fusion_query(&ev(&[0.0, 0.0]), &ev(&[0.0, 1.0])),
            Err(Error::ZeroVector)
        ));
    }

    fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> EmbeddingVector {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        normalize(&EmbeddingVector::from_f64(&v).unwrap()).unwrap()
    }

    #[test]
    fn sum_fusion_equals_late_sum_of_cosines() {
        // Both sides evaluated directly.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let (a, b, x) = (random_unit(&mut rng, 16), random_unit(&mut rng, 16), random_unit(&mut rng, 16));
            let q = sum_fusion_query(&a, &b).unwrap();
            let early = single_score(&q, &x).unwrap() * q.norm();
            let late = single_score(&a, &x).unwrap() + single_score(&b, &x).unwrap();
            assert!((early - late).abs() < 1e-6, "{early} vs {late}");
        }
    }

    #[test]
    fn weighted_fusion_examples() {
        let same = weighted_fusion_query(&ev(&[1.0, 0.0]), &ev(&[1.0, 0.0])).unwrap();
        assert_eq!(same, ev(&[2.0, 0.0]));
        let orth = weighted_fusion_query(&ev(&[1.0, 0.0]), &ev(&[0.0, 1.0])).unwrap();
        assert_eq!(orth, sum_fusion_query(&ev(&[1.0, 0.0]), &ev(&[0.0, 1.0])).unwrap());
        // Antipodal inputs give w = -1 and collapse onto the visual query.
        let anti = weighted_fusion_query(&ev(&[1.0, 0.0]), &ev(&[-1.0, 0.0])).unwrap();
        assert_eq!(anti, ev(&[-2.0, 0.0]));
        assert!(matches!(
            weighted_fusion_query(&ev(&[0.0, 0.0]), &ev(&[-1.0, 0.0])),
            Err(Error::ZeroVector)
        ));
    }

    #[test]
    fn rank_fusion_score_examples() {
        assert_eq!(rank_fusion_score(1, 1).unwrap(), 2.0);
        assert_eq!(rank_fusion_score(1, 2).unwrap(), 1.5);
        assert_eq!(rank_fusion_score(4, 4).unwrap(), 0.5);
        assert!(matches!(rank_fusion_score(0, 1), Err(Error::InvalidRank(0))));
    }

    #[test]
    fn rank_fusion_absent_items_contribute_nothing() {
        let t = list(&[(1, 0.9), (2, 0.8)]);
        let v = list(&[(2, 0.7), (3, 0.1)]);
        let fused = rank_fusion(&t, &v, 10);
        let scores: Vec<_> = fused.iter().map(|i| (i.item_id, i.score)).collect();
        // 2: 1/2 + 1/1, 1: 1/1, 3: 1/2
        assert_eq!(scores, vec![(2, 1.5), (1, 1.0), (3, 0.5)]);
    }

    /// Straight simulation of the alternation with explicit cursors.
    fn interleave_reference(t: &[ItemId], v: &[ItemId], k: usize) -> Vec<ItemId> {
        let (mut i, mut j, mut out) = (0, 0, Vec::<ItemId>::new());
        let mut text_turn = true;
        while out.len() < k && (i < t.len() || j < v.len()) {
            let (src, cur) = if text_turn { (t, &mut i) } else { (v, &mut j) };
            while *cur < src.len() {
                let id = src[*cur];
                *cur += 1;
                if !out.contains(&id) {
                    out.push(id);
                    break;
                }
            }
            text_turn = !text_turn;
        }
        out
    }

    #[test]
    fn naive_interleave_examples() {
        let (a, b, c, d) = (1, 2, 3, 4);
        let out = naive_interleave(&list(&[(a, 0.9), (b, 0.8)]), &list(&[(c, 0.9), (d, 0.1)]), 3);
        assert_eq!(out.ids().collect::<Vec<_>>(), vec![a, c, b]);
        let out = naive_interleave(&list(&[(a, 0.9), (b, 0.8)]), &list(&[(a, 0.9), (c, 0.1)]), 3);
        assert_eq!(out.ids().collect::<Vec<_>>(), vec![a, c, b]);
        assert_eq!(interleave_reference(&[a, b], &[a, c], 3), vec![a, c, b]);
        let out = naive_interleave(&RankedList::default(), &list(&[(c, 0.3)]), 2);
        assert_eq!(out.ids().collect::<Vec<_>>(), vec![c]);
        assert_eq!(out.items()[0].score, 2.0);
    }

    #[test]
    fn merge_examples() {
        let m = merge_results([&list(&[(1, 0.9)]), &list(&[(1, 0.5), (2, 0.7)])], MergeMode::Max, 10);
        assert_eq!(m, list(&[(1, 0.9), (2, 0.7)]));
        let m = merge_results([&list(&[(1, 0.9)]), &list(&[(1, 0.5)])], MergeMode::Avg, 10);
        assert!((m.items()[0].score - 0.7).abs() < 1e-12);
        let single = list(&[(3, 0.2), (4, 0.1)]);
        assert_eq!(merge_results([&single], MergeMode::Max, 10), single);
        assert_eq!(merge_results([&single], MergeMode::Avg, 10), single);
        assert_eq!(merge_results([&single], MergeMode::Max, 1).len(), 1);
    }

    #[test]
    fn patch_fusion_examples() {
        let g1 = [0.2, 0.9, 0.5];
        let g2 = [0.4];
        let out = patch_fusion([(1, &g1[..]), (2, &g2[..])]).unwrap();
        assert_eq!(out, vec![ScoredItem::new(1, 0.9), ScoredItem::new(2, 0.4)]);
        assert!(matches!(patch_fusion([(7, &[][..])]), Err(Error::EmptyGroup(7))));

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let scores: Vec<f64> = (0..165).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut best = f64::NEG_INFINITY;
        for &s in &scores {
            if s > best {
                best = s;
            }
        }
        assert_eq!(patch_fusion([(0, &scores[..])]).unwrap()[0].score, best);
    }

    fn arb_vec(d: usize) -> impl Strategy<Value = Vec<f32>> {
        proptest::collection::vec(-1.0f32..1.0, d).prop_filter("nonzero", |v| {
            v.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>() > 1e-6
        })
    }

    fn arb_list() -> impl Strategy<Value = RankedList> {
        proptest::collection::vec((0u64..30, -1.0f64..1.0), 0..20)
            .prop_map(|v| RankedList::from_unsorted(v.into_iter().map(|(i, s)| ScoredItem::new(i, s)).collect()))
    }

    proptest! {
        #[test]
        fn single_score_symmetric(a in arb_vec(8), b in arb_vec(8)) {
            let (a, b) = (ev(&a), ev(&b));
            let ab = single_score(&a, &b).unwrap();
            prop_assert!((ab - single_score(&b, &a).unwrap()).abs() < 1e-9);
            prop_assert!((-1.0..=1.0).contains(&ab));
        }

        #[test]
        fn single_score_scale_invariant(a in arb_vec(8), b in arb_vec(8), lambda in 0.01f32..100.0) {
            let scaled: Vec<f32> = a.iter().map(|x| x * lambda).collect();
            let s1 = single_score(&ev(&scaled), &ev(&b)).unwrap();
            let s0 = single_score(&ev(&a), &ev(&b)).unwrap();
            prop_assert!((s1 - s0).abs() < 1e-6);
        }

        #[test]
        fn rank_fusion_strictly_decreasing(a in 1u64..1000, b in 1u64..1000) {
            prop_assert!(rank_fusion_score(a + 1, b).unwrap() < rank_fusion_score(a, b).unwrap());
            prop_assert!(rank_fusion_score(a, b + 1).unwrap() < rank_fusion_score(a, b).unwrap());
        }

        #[test]
        fn max_merge_algebra(a in arb_list(), b in arb_list(), c in arb_list()) {
            let k = 100;
            let m = |xs: &[&RankedList]| merge_results(xs.iter().copied(), MergeMode::Max, k);
            prop_assert_eq!(m(&[&a, &a]), m(&[&a]));
            prop_assert_eq!(m(&[&a, &b]), m(&[&b, &a]));
            let left = m(&[&m(&[&a, &b]), &c]);
            let right = m(&[&a, &m(&[&b, &c])]);
            prop_assert_eq!(left, right);
            prop_assert!(m(&[&a, &b, &c]).is_valid());
        }

        #[test]
        fn naive_matches_reference(a in arb_list(), b in arb_list(), k in 1usize..40) {
            let got: Vec<_> = naive_interleave(&a, &b, k).ids().collect();
            let want = interleave_reference(&a.ids().collect::<Vec<_>>(), &b.ids().collect::<Vec<_>>(), k);
            prop_assert_eq!(got, want);
        }
    }
}
