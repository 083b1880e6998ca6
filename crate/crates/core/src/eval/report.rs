use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{ClassEval, ExperimentConfig};
use crate::dataset::AnnotatedDataset;
use crate::error::{Error, Result};
use crate::fusion::{FusionPolicy, MergeMode};
use crate::instructions::InstructionSet;
use crate::metrics::PrCurve;
use crate::query::Modality;
use crate::ClassId;

/// Step between PR points listed in markdown output.
const MARKDOWN_PR_STEP: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub method: String,
    pub fusion_policy: FusionPolicy,
    pub merge_mode: MergeMode,
    pub modality: Modality,
    pub k: usize,
    pub nprobe: usize,
    pub n_folds: usize,
    pub seed: u64,
}

impl EvalConfig {
    pub fn new(method: &str, config: &ExperimentConfig, modality: Modality) -> Self {
        Self {
            method: method.to_owned(),
            fusion_policy: config.fusion_policy,
            merge_mode: config.merge_mode,
            modality,
            k: config.search.k,
            nprobe: config.search.nprobe,
            n_folds: config.n_folds,
            seed: config.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    /// `None` when the class was skipped in this fold.
    pub ap: Option<f64>,
    pub n_positives: usize,
    pub n_queries: usize,
    pub n_examples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class_id: ClassId,
    /// Mean AP over scored folds; `None` if no fold was scored.
    pub ap_mean: Option<f64>,
    /// Population standard deviation over scored folds.
    pub ap_std: Option<f64>,
    pub folds: Vec<FoldResult>,
    /// Pointwise mean of the scored folds' curves.
    pub mean_pr: PrCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub per_class: BTreeMap<String, ClassReport>,
    /// Mean of the defined per-class means.
    pub map: Option<f64>,
}

pub(crate) fn mean_std(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

impl EvalReport {
    pub(crate) fn assemble(
        config: EvalConfig,
        ds: &AnnotatedDataset,
        per_fold: &[(usize, Vec<ClassEval>)],
        sets: &[InstructionSet],
    ) -> Self {
        let mut per_class = BTreeMap::new();
        for class in ds.classes() {
            let mut folds = Vec::new();
            let mut curves = Vec::new();
            let mut aps = Vec::new();
            for (fold, evals) in per_fold {
                let n_examples = sets
                    .iter()
                    .find(|s| s.fold.is_none_or(|f| f == *fold) && s.class_id == class.id)
                    .map_or(0, |s| s.pairs.len());
                let result = match evals.iter().find(|e| e.class_id() == class.id) {
                    Some(ClassEval::Scored(o)) => {
                        aps.push(o.ap);
                        curves.push(&o.curve);
                        FoldResult {
                            fold: *fold,
                            ap: Some(o.ap),
                            n_positives: o.n_positives,
                            n_queries: o.n_queries,
                            n_examples,
                            skipped: None,
                        }
                    }
                    Some(ClassEval::Skipped { reason, .. }) => FoldResult {
                        fold: *fold,
                        ap: None,
                        n_positives: 0,
                        n_queries: 0,
                        n_examples,
                        skipped: Some(reason.clone()),
                    },
                    None => FoldResult {
                        fold: *fold,
                        ap: None,
                        n_positives: 0,
                        n_queries: 0,
                        n_examples: 0,
                        skipped: Some("no instruction set".into()),
                    },
                };
                folds.push(result);
            }
            let stats = mean_std(&aps);
            per_class.insert(
                class.name.clone(),
                ClassReport {
                    class_id: class.id,
                    ap_mean: stats.map(|s| s.0),
                    ap_std: stats.map(|s| s.1),
                    folds,
                    mean_pr: PrCurve::mean(curves.iter().copied()).unwrap_or(PrCurve(Vec::new())),
                },
            );
        }
        let means: Vec<f64> = per_class.values().filter_map(|c| c.ap_mean).collect();
        let map = mean_std(&means).map(|s| s.0);
        Self { config, per_class, map }
    }

    pub fn fold_ap(&self, class: &str, fold: usize) -> Option<f64> {
        self.per_class.get(class)?.folds.iter().find(|f| f.fold == fold)?.ap
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    /// One row per (class, fold).
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["method", "class", "class_id", "fold", "ap", "n_positives", "n_queries", "n_examples", "skipped"])
            .expect("in-memory write");
        for (name, c) in &self.per_class {
            for f in &c.folds {
                w.write_record([
                    self.config.method.clone(),
                    name.clone(),
                    c.class_id.to_string(),
                    f.fold.to_string(),
                    f.ap.map(|a| a.to_string()).unwrap_or_default(),
                    f.n_positives.to_string(),
                    f.n_queries.to_string(),
                    f.n_examples.to_string(),
                    f.skipped.clone().unwrap_or_default(),
                ])
                .expect("in-memory write");
            }
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }

    pub fn to_markdown(&self) -> String {
        let c = &self.config;
        let mut s = format!(
            "# {} ({}, {} merge, {}, k={}, nprobe={})\n\n",
            c.method, c.fusion_policy, c.merge_mode, c.modality, c.k, c.nprobe
        );
        s.push_str("| class | AP mean | AP std | scored folds |\n|---|---|---|---|\n");
        for (name, r) in &self.per_class {
            let scored = r.folds.iter().filter(|f| f.ap.is_some()).count();
            let _ = writeln!(
                s,
                "| {name} | {} | {} | {scored}/{} |",
                fmt_opt(r.ap_mean),
                fmt_opt(r.ap_std),
                r.folds.len()
            );
        }
        let _ = writeln!(s, "| **mAP** | {} | | |", fmt_opt(self.map));
        s.push_str("\n## Precision/recall\n");
        for (name, r) in &self.per_class {
            let _ = writeln!(s, "\n### {name}\n\n| k | precision | recall |\n|---|---|---|");
            for p in r.mean_pr.downsample(MARKDOWN_PR_STEP) {
                let _ = writeln!(s, "| {} | {:.4} | {:.4} |", p.k, p.precision, p.recall);
            }
        }
        s
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".to_owned(), |v| format!("{v:.4}"))
}

/// Several methods evaluated on the same folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub reports: Vec<EvalReport>,
}

impl ComparisonReport {
    pub fn get(&self, method: &str) -> Option<&EvalReport> {
        self.reports.iter().find(|r| r.config.method == method)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (i, r) in self.reports.iter().enumerate() {
            let csv = r.to_csv();
            // keep a single header row
            out.push_str(if i == 0 { &csv } else { csv.split_once('\n').map_or("", |x| x.1) });
        }
        out
    }

    /// Class-by-method grid of `mean ± std`, with an mAP row.
    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| class |");
        for r in &self.reports {
            let _ = write!(s, " {} |", r.config.method);
        }
        s.push_str("\n|---|");
        s.push_str(&"---|".repeat(self.reports.len()));
        s.push('\n');
        let classes: Vec<&String> = self.reports.first().map(|r| r.per_class.keys().collect()).unwrap_or_default();
        for class in classes {
            let _ = write!(s, "| {class} |");
            for r in &self.reports {
                match r.per_class.get(class).and_then(|c| c.ap_mean.zip(c.ap_std)) {
                    Some((m, sd)) => {
                        let _ = write!(s, " {m:.4} ± {sd:.4} |");
                    }
                    None => s.push_str(" n/a |"),
                }
            }
            s.push('\n');
        }
        s.push_str("| **mAP** |");
        for r in &self.reports {
            let _ = write!(s, " {} |", fmt_opt(r.map));
        }
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
    #[serde(alias = "md")]
    Markdown,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 3] = [ReportFormat::Json, ReportFormat::Csv, ReportFormat::Markdown];

    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
            ReportFormat::Markdown => "md",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(Error::InvalidConfig(format!("unknown report format `{other}`"))),
        }
    }
}

pub fn emit_report(report: &EvalReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => report.to_json(),
        ReportFormat::Csv => report.to_csv(),
        ReportFormat::Markdown => report.to_markdown(),
    }
}
