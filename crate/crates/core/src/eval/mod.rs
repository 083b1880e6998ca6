//! Held-out evaluation across folds.
//!
//! For every fold a training index and a test index are built from the
//! fold's images. Methods choose their instructions on the training side;
//! the resulting instruction sets are then run against the test index and
//! scored by AP@k. PDC and every baseline share [`evaluate_method`].

mod report;

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{self, BaselineKind};
use crate::dataset::{build_candidate_pool, split_folds, AnnotatedDataset, EmbeddingBundle, PromptTemplate};
use crate::error::{Error, Result};
use crate::fusion::{FusionPolicy, MergeMode};
use crate::index::{KMeansConfig, VectorIndex};
use crate::instructions::{InstructionEntry, InstructionSet, MethodConfig};
use crate::metrics::{average_precision, PrCurve};
use crate::pdc::{greedy_select, PdcConfig, DEFAULT_MAX_PAIRS};
use crate::query::{execute_all, Modality, SearchParams};
use crate::ranked::RankedList;
use crate::{ClassId, ImageId};

pub use report::{emit_report, ClassReport, ComparisonReport, EvalConfig, EvalReport, FoldResult, ReportFormat};

pub const DEFAULT_FOLDS: usize = 5;

/// A method under comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Pdc,
    #[serde(untagged)]
    Baseline(BaselineKind),
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Pdc => "pdc",
            Method::Baseline(b) => b.as_str(),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "pdc" {
            return Ok(Method::Pdc);
        }
        s.parse().map(Method::Baseline)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub n_folds: usize,
    pub seed: u64,
    pub search: SearchParams,
    pub max_pairs: usize,
    pub fusion_policy: FusionPolicy,
    pub merge_mode: MergeMode,
    pub prompt_template: PromptTemplate,
    /// `None` picks the default list count for each index.
    pub num_clusters: Option<usize>,
    pub mean_shift_bandwidth: Option<f64>,
    /// Fixed example count for the random baselines; `None` matches PDC.
    pub n_examples: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n_folds: DEFAULT_FOLDS,
            seed: 0,
            search: SearchParams::default(),
            max_pairs: DEFAULT_MAX_PAIRS,
            fusion_policy: FusionPolicy::Sum,
            merge_mode: MergeMode::Max,
            prompt_template: PromptTemplate::default(),
            num_clusters: None,
            mean_shift_bandwidth: None,
            n_examples: None,
        }
    }
}

impl ExperimentConfig {
    pub fn pdc(&self) -> PdcConfig {
        PdcConfig {
            search: self.search,
            max_pairs: self.max_pairs,
            fusion_policy: self.fusion_policy,
            merge_mode: self.merge_mode,
        }
    }

    pub fn method_config(&self, method: Method) -> MethodConfig {
        MethodConfig {
            method: method.name().to_owned(),
            fusion_policy: self.fusion_policy,
            merge_mode: self.merge_mode,
            k: self.search.k,
            nprobe: self.search.nprobe,
            max_pairs: self.max_pairs,
            seed: self.seed,
            prompt_template: self.prompt_template.clone(),
        }
    }

    pub fn eval_params(&self, modality: Modality) -> EvalParams {
        EvalParams {
            search: self.search,
            fusion_policy: self.fusion_policy,
            merge_mode: self.merge_mode,
            modality,
        }
    }
}

/// Deterministic per-(fold, class) seed.
pub fn derive_seed(base: u64, fold: usize, class: ClassId) -> u64 {
    let mut z = base
        .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(fold as u64 + 1))
        .wrapping_add(0xD1B5_4A32_D192_ED03u64.wrapping_mul(u64::from(class) + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn build_index_for(
    bundle: &EmbeddingBundle,
    images: &BTreeSet<ImageId>,
    num_clusters: Option<usize>,
    seed: u64,
) -> Result<VectorIndex> {
    let records = bundle.patches_of(images).map(|(k, v)| (k, v.clone()));
    VectorIndex::build_with(records, num_clusters, &KMeansConfig { seed, ..Default::default() })
}

/// Everything one fold needs: its split and the two indexes.
#[derive(Debug)]
pub struct FoldContext {
    pub fold: usize,
    pub train: BTreeSet<ImageId>,
    pub test: BTreeSet<ImageId>,
    pub train_index: VectorIndex,
    pub test_index: VectorIndex,
}

impl FoldContext {
    /// Fails if any test image is searchable in the training index.
    pub fn check_hygiene(&self) -> Result<()> {
        if let Some(leak) = self.train_index.image_ids().iter().find(|i| self.test.contains(i)) {
            return Err(Error::InvalidConfig(format!(
                "fold {}: test image {leak} is in the training index",
                self.fold
            )));
        }
        if let Some(leak) = self.test_index.image_ids().iter().find(|i| !self.test.contains(i)) {
            return Err(Error::InvalidConfig(format!(
                "fold {}: image {leak} in the test index is not a test image",
                self.fold
            )));
        }
        Ok(())
    }

    pub fn train_positives(&self, ds: &AnnotatedDataset, class: ClassId) -> BTreeSet<ImageId> {
        ds.images_with_class(class).intersection(&self.train).copied().collect()
    }

    pub fn test_positives(&self, ds: &AnnotatedDataset, class: ClassId) -> BTreeSet<ImageId> {
        ds.images_with_class(class).intersection(&self.test).copied().collect()
    }
}

/// Assigns folds (if the dataset carries none) and builds both indexes per fold.
pub fn prepare_folds(
    ds: AnnotatedDataset,
    bundle: &EmbeddingBundle,
    config: &ExperimentConfig,
) -> Result<(AnnotatedDataset, Vec<FoldContext>)> {
    let ds = match ds.split_assignments() {
        Some(a) if a.n_folds == config.n_folds => ds,
        _ => split_folds(ds, config.n_folds, config.seed)?,
    };
    let folds = ds.split_assignments().expect("folds assigned").clone();
    let contexts = (0..config.n_folds)
        .map(|fold| {
            let wrap = |e: Error| Error::Fold { fold, source: Box::new(e) };
            let train = folds.train_images(fold);
            let test = folds.test_images(fold);
            let train_index = build_index_for(bundle, &train, config.num_clusters, config.seed).map_err(wrap)?;
            let test_index = build_index_for(bundle, &test, config.num_clusters, config.seed).map_err(wrap)?;
            let ctx = FoldContext { fold, train, test, train_index, test_index };
            ctx.check_hygiene()?;
            Ok(ctx)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((ds, contexts))
}

/// Per-(fold, class) example counts, used to size the random baselines.
pub type ExampleCounts = BTreeMap<(usize, ClassId), usize>;

pub fn counts_of(sets: &[InstructionSet]) -> ExampleCounts {
    sets.iter()
        .filter_map(|s| s.fold.map(|f| ((f, s.class_id), s.pairs.len())))
        .collect()
}

/// Outcome of running one method on one fold.
#[derive(Debug, Default)]
pub struct FoldRun {
    pub sets: Vec<InstructionSet>,
    /// Classes with nothing to learn from in this fold's training split.
    pub skipped: Vec<(ClassId, String)>,
    pub failed: Vec<(ClassId, Error)>,
}

impl FoldRun {
    /// The first failure, tagged with the fold.
    pub fn into_result(self, fold: usize) -> Result<Self> {
        match self.failed.into_iter().next() {
            Some((_, e)) => Err(Error::Fold { fold, source: Box::new(e) }),
            None => Ok(Self { failed: Vec::new(), ..self }),
        }
    }
}

/// Runs `method` for every class on the training side of `ctx`. Per-class
/// errors are collected rather than returned.
pub fn run_method_on_fold(
    method: Method,
    ds: &AnnotatedDataset,
    bundle: &EmbeddingBundle,
    ctx: &FoldContext,
    config: &ExperimentConfig,
    counts: Option<&ExampleCounts>,
    originals: Option<&BTreeMap<String, Vec<InstructionEntry>>>,
) -> FoldRun {
    let mconfig = config.method_config(method);
    let outcomes: Vec<(ClassId, Result<InstructionSet>)> = ds
        .classes()
        .par_iter()
        .map(|class| {
            let run = || -> Result<InstructionSet> {
                let pool = build_candidate_pool(ds, bundle, class.id, &ctx.train, &config.prompt_template)?;
                let seed = derive_seed(config.seed, ctx.fold, class.id);
                let count = || -> Result<usize> {
                    let n = config
                        .n_examples
                        .or_else(|| counts.and_then(|c| c.get(&(ctx.fold, class.id)).copied()))
                        .ok_or_else(|| {
                            Error::InvalidConfig(format!(
                                "no example count for class {} in fold {}",
                                class.name, ctx.fold
                            ))
                        })?;
                    Ok(n.min(pool.visuals.len()))
                };
                let mut set = match method {
                    Method::Pdc => {
                        let positives = ctx.train_positives(ds, class.id);
                        greedy_select(&pool, &ctx.train_index, &positives, &config.pdc())?.into_instruction_set(
                            &class.name,
                            &config.pdc(),
                            config.seed,
                            &config.prompt_template,
                            None,
                            class.id,
                        )
                    }
                    Method::Baseline(BaselineKind::OriginalTexts) => baselines::original_texts(&pool, ds, &mconfig),
                    Method::Baseline(BaselineKind::RandomBboxes) => {
                        baselines::random_bboxes(&pool, ds, count()?, seed, &mconfig)?
                    }
                    Method::Baseline(BaselineKind::RandomPairs) => {
                        baselines::random_pairs(&pool, ds, count()?, seed, &mconfig)?
                    }
                    Method::Baseline(BaselineKind::MeanShift) => {
                        baselines::mean_shift_examples(&pool, ds, config.mean_shift_bandwidth, &mconfig)?
                    }
                    Method::Baseline(BaselineKind::OriginalPairs) => {
                        let entries = originals
                            .and_then(|o| o.get(&class.name))
                            .cloned()
                            .unwrap_or_default();
                        baselines::original_pairs(entries, &pool, ds, &mconfig)?
                    }
                };
                set.fold = Some(ctx.fold);
                Ok(set)
            };
            (class.id, run())
        })
        .collect();
    let mut out = FoldRun::default();
    for (class, r) in outcomes {
        match r {
            Ok(s) => out.sets.push(s),
            Err(e @ (Error::ClassAbsentFromTrainSplit(_) | Error::EmptyPool | Error::NoPositives)) => {
                out.skipped.push((class, e.to_string()))
            }
            Err(e) => out.failed.push((class, e)),
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalParams {
    pub search: SearchParams,
    pub fusion_policy: FusionPolicy,
    pub merge_mode: MergeMode,
    pub modality: Modality,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassOutcome {
    pub class_id: ClassId,
    pub n_queries: usize,
    pub n_positives: usize,
    pub ranked: RankedList,
    pub curve: PrCurve,
    pub ap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClassEval {
    Scored(ClassOutcome),
    /// No test positives; the class is left out of this fold's averages.
    Skipped { class_id: ClassId, reason: String },
}

impl ClassEval {
    pub fn class_id(&self) -> ClassId {
        match self {
            ClassEval::Scored(o) => o.class_id,
            ClassEval::Skipped { class_id, .. } => *class_id,
        }
    }
}

/// Runs each set's queries on the test index, merges them, and scores the
/// top `k` unique images against the test images holding the class.
pub fn evaluate_method(
    sets: &[InstructionSet],
    test_index: &VectorIndex,
    test_images: &BTreeSet<ImageId>,
    ds: &AnnotatedDataset,
    bundle: &EmbeddingBundle,
    template: &PromptTemplate,
    params: &EvalParams,
) -> Result<Vec<ClassEval>> {
    sets.par_iter()
        .map(|set| {
            let positives: BTreeSet<ImageId> =
                ds.images_with_class(set.class_id).intersection(test_images).copied().collect();
            if positives.is_empty() {
                return Ok(ClassEval::Skipped {
                    class_id: set.class_id,
                    reason: Error::ClassAbsentFromTestSplit(set.class_id).to_string(),
                });
            }
            let queries = set.queries(ds, bundle, template, params.modality)?;
            let ranked = evaluate_queries(&queries, test_index, params)?;
            let k = params.search.k;
            Ok(ClassEval::Scored(ClassOutcome {
                class_id: set.class_id,
                n_queries: queries.len(),
                n_positives: positives.len(),
                curve: PrCurve::compute(&ranked, &positives, k)?,
                ap: average_precision(&ranked, &positives, k)?,
                ranked,
            }))
        })
        .collect()
}

fn evaluate_queries(
    queries: &[crate::query::Query],
    index: &VectorIndex,
    params: &EvalParams,
) -> Result<RankedList> {
    if queries.is_empty() {
        return Ok(RankedList::default());
    }
    execute_all(queries, params.fusion_policy, params.merge_mode, index, &params.search)
}

/// Evaluates already produced instruction sets on the fold named by their
/// `fold`; sets without one are evaluated on every fold.
pub fn evaluate_sets(
    method_name: &str,
    sets: &[InstructionSet],
    ds: &AnnotatedDataset,
    bundle: &EmbeddingBundle,
    folds: &[FoldContext],
    config: &ExperimentConfig,
    modality: Modality,
) -> Result<EvalReport> {
    let params = config.eval_params(modality);
    let mut per_fold = Vec::with_capacity(folds.len());
    for ctx in folds {
        let fold_sets: Vec<InstructionSet> =
            sets.iter().filter(|s| s.fold.is_none_or(|f| f == ctx.fold)).cloned().collect();
        let evals = evaluate_method(
            &fold_sets,
            &ctx.test_index,
            &ctx.test,
            ds,
            bundle,
            &config.prompt_template,
            &params,
        )
        .map_err(|e| Error::Fold { fold: ctx.fold, source: Box::new(e) })?;
        per_fold.push((ctx.fold, evals));
    }
    Ok(EvalReport::assemble(
        EvalConfig::new(method_name, config, modality),
        ds,
        &per_fold,
        sets,
    ))
}

/// Output of a full cross-fold run of one method.
#[derive(Debug)]
pub struct CrossFoldRun {
    pub sets: Vec<InstructionSet>,
    pub skipped: Vec<(usize, ClassId, String)>,
    pub report: EvalReport,
}

/// Runs `method` on every fold and evaluates it.
#[allow(clippy::too_many_arguments)]
pub fn cross_fold(
    method: Method,
    ds: &AnnotatedDataset,
    bundle: &EmbeddingBundle,
    folds: &[FoldContext],
    config: &ExperimentConfig,
    counts: Option<&ExampleCounts>,
    originals: Option<&BTreeMap<String, Vec<InstructionEntry>>>,
    modality: Modality,
) -> Result<CrossFoldRun> {
    let mut sets = Vec::new();
    let mut skipped = Vec::new();
    for ctx in folds {
        let run = run_method_on_fold(method, ds, bundle, ctx, config, counts, originals).into_result(ctx.fold)?;
        sets.extend(run.sets);
        skipped.extend(run.skipped.into_iter().map(|(c, r)| (ctx.fold, c, r)));
    }
    let report = evaluate_sets(method.name(), &sets, ds, bundle, folds, config, modality)?;
    Ok(CrossFoldRun { sets, skipped, report })
}

/// Runs several methods on the same folds. Random baselines take their
/// example counts from the PDC run, which is added first when missing.
pub fn compare(
    methods: &[Method],
    ds: &AnnotatedDataset,
    bundle: &EmbeddingBundle,
    folds: &[FoldContext],
    config: &ExperimentConfig,
    originals: Option<&BTreeMap<String, Vec<InstructionEntry>>>,
) -> Result<(ComparisonReport, BTreeMap<Method, CrossFoldRun>)> {
    let mut runs = BTreeMap::new();
    let needs_pdc = methods.contains(&Method::Pdc)
        || (config.n_examples.is_none()
            && methods.iter().any(|m| matches!(m, Method::Baseline(b) if b.needs_count())));
    let counts = if needs_pdc {
        let pdc = cross_fold(Method::Pdc, ds, bundle, folds, config, None, None, Modality::Both)?;
        let counts = counts_of(&pdc.sets);
        if methods.contains(&Method::Pdc) {
            runs.insert(Method::Pdc, pdc);
        }
        Some(counts)
    } else {
        None
    };
    for &m in methods.iter().filter(|m| **m != Method::Pdc) {
        let run = cross_fold(m, ds, bundle, folds, config, counts.as_ref(), originals, Modality::Both)?;
        runs.insert(m, run);
    }
    let reports = methods.iter().map(|m| runs[m].report.clone()).collect();
    Ok((ComparisonReport { reports }, runs))
}

#[cfg(test)]
mod tests;
