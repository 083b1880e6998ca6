//! Option groups shared by subcommands, and the config file.
//!
//! Every option is optional at this level. A value given on the command
//! line wins over the config file, which wins over the built-in default.
//! The config file is TOML with the same keys as the long flags, with
//! dashes written as underscores:
//!
//! ```toml
//! annotations = "data/annotations.json"
//! embeddings = "data/embeddings.bin"
//! fusion_policy = "sum"
//! k = 1000
//! n_folds = 5
//! ```

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use labelinst_core::baselines::BaselineKind;
use labelinst_core::dataset::synth::{SynthConfig, SynthMode};
use labelinst_core::dataset::{AnnotationFormat, PromptTemplate};
use labelinst_core::eval::{ExperimentConfig, Method, ReportFormat, DEFAULT_FOLDS};
use labelinst_core::fusion::{FusionPolicy, MergeMode};
use labelinst_core::pdc::DEFAULT_MAX_PAIRS;
use labelinst_core::query::{SearchParams, DEFAULT_K, DEFAULT_NPROBE};

macro_rules! merge_fields {
    ($a:expr, $b:expr; $($f:ident),* $(,)?) => {
        Self { $($f: $a.$f.or($b.$f)),* }
    };
}

#[derive(Args, Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CommonArgs {
    /// TOML file with option defaults.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Directory receiving every output file and the manifest.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    /// Worker threads; defaults to the available cores.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl CommonArgs {
    fn merge(self, file: Self) -> Self {
        merge_fields!(self, file; config, out_dir, jobs, seed)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}

#[derive(Args, Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DataArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub annotations: Option<PathBuf>,
    /// `coco_json` or `simple_json`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub annotation_format: Option<AnnotationFormat>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
}

impl DataArgs {
    fn merge(self, file: Self) -> Self {
        merge_fields!(self, file; annotations, annotation_format, embeddings)
    }

    pub fn annotations(&self) -> Result<&Path> {
        self.annotations.as_deref().context("--annotations is required")
    }

    pub fn embeddings(&self) -> Result<&Path> {
        self.embeddings.as_deref().context("--embeddings is required")
    }

    pub fn annotation_format(&self) -> AnnotationFormat {
        self.annotation_format.unwrap_or(AnnotationFormat::SimpleJson)
    }
}

#[derive(Args, Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TemplateArgs {
    /// Prompt rendered for every word; must contain `{label}`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompt_template: Option<String>,
}

impl TemplateArgs {
    fn merge(self, file: Self) -> Self {
        merge_fields!(self, file; prompt_template)
    }

    pub fn template(&self) -> Result<PromptTemplate> {
        match &self.prompt_template {
            Some(t) => Ok(PromptTemplate::new(t.clone())?),
            None => Ok(PromptTemplate::default()),
        }
    }
}

#[derive(Args, Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExpArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fusion_policy: Option<FusionPolicy>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub merge_mode: Option<MergeMode>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nprobe: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_pairs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_folds: Option<usize>,
    /// Inverted lists per index; defaults to the square root of the record count.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub num_clusters: Option<usize>,
    /// Load per-fold indexes written by `build-index --per-fold` instead of building them.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub index_dir: Option<PathBuf>,
}

impl ExpArgs {
    fn merge(self, file: Self) -> Self {
        merge_fields!(self, file; fusion_policy, merge_mode, k, nprobe, max_pairs, n_folds, num_clusters, index_dir)
    }

    pub fn n_folds(&self) -> usize {
        self.n_folds.unwrap_or(DEFAULT_FOLDS)
    }
}

#[derive(Args, Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BaselineArgs {
    /// Examples per (fold, class) for the random baselines.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_examples: Option<usize>,
    /// Directory of PDC instruction sets whose sizes the random baselines copy.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub match_dir: Option<PathBuf>,
    /// Original-instruction file for `original_pairs`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub original_instructions: Option<PathBuf>,
    /// Mean-shift bandwidth; estimated from the pool when absent.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
}

impl BaselineArgs {
    fn merge(self, file: Self) -> Self {
        merge_fields!(self, file; n_examples, match_dir, original_instructions, bandwidth)
    }
}

#[derive(Args, Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SynthArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_classes: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub images_per_class: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_sigma: Option<f64>,
    /// `standard` or `text_ambiguous`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth_mode: Option<SynthMode>,
}

impl SynthArgs {
    fn merge(self, file: Self) -> Self {
        merge_fields!(self, file; n_classes, images_per_class, dim, noise_sigma, synth_mode)
    }

    pub fn to_config(&self, seed: u64, template: PromptTemplate) -> SynthConfig {
        let d = SynthConfig::default();
        SynthConfig {
            n_classes: self.n_classes.unwrap_or(d.n_classes),
            images_per_class: self.images_per_class.unwrap_or(d.images_per_class),
            dim: self.dim.unwrap_or(d.dim),
            noise_sigma: self.noise_sigma.unwrap_or(d.noise_sigma),
            seed,
            mode: self.synth_mode.unwrap_or_default(),
            knobs: None,
            prompt_template: template,
        }
    }
}

#[derive(Args, Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OutputArgs {
    /// Report formats to write, comma separated.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub formats: Option<Vec<ReportFormat>>,
    /// Methods for `compare`, comma separated.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub methods: Option<Vec<Method>>,
}

impl OutputArgs {
    fn merge(self, file: Self) -> Self {
        merge_fields!(self, file; formats, methods)
    }

    pub fn formats(&self) -> Vec<ReportFormat> {
        self.formats.clone().unwrap_or_else(|| ReportFormat::ALL.to_vec())
    }

    pub fn methods(&self) -> Vec<Method> {
        self.methods.clone().unwrap_or_else(|| {
            vec![
                Method::Pdc,
                Method::Baseline(BaselineKind::OriginalTexts),
                Method::Baseline(BaselineKind::RandomPairs),
                Method::Baseline(BaselineKind::RandomBboxes),
                Method::Baseline(BaselineKind::MeanShift),
            ]
        })
    }
}

/// Every option group at once: what a config file may set and what the
/// resolved snapshot records.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    #[serde(flatten)]
    pub common: CommonArgs,
    #[serde(flatten)]
    pub data: DataArgs,
    #[serde(flatten)]
    pub template: TemplateArgs,
    #[serde(flatten)]
    pub exp: ExpArgs,
    #[serde(flatten)]
    pub baseline: BaselineArgs,
    #[serde(flatten)]
    pub synth: SynthArgs,
    #[serde(flatten)]
    pub output: OutputArgs,
}

const KNOWN_KEYS: &[&str] = &[
    "out_dir", "jobs", "seed", "annotations", "annotation_format", "embeddings", "prompt_template",
    "fusion_policy", "merge_mode", "k", "nprobe", "max_pairs", "n_folds", "num_clusters", "index_dir",
    "n_examples", "match_dir", "original_instructions", "bandwidth", "n_classes", "images_per_class", "dim",
    "noise_sigma", "synth_mode", "formats", "methods",
];

impl Settings {
    pub fn from_toml(text: &str) -> Result<Self> {
        let table: toml::Table = toml::from_str(text).context("config file is not valid TOML")?;
        let unknown: BTreeSet<&str> = table.keys().map(String::as_str).filter(|k| !KNOWN_KEYS.contains(k)).collect();
        if !unknown.is_empty() {
            bail!("unknown config keys: {}", unknown.into_iter().collect::<Vec<_>>().join(", "));
        }
        toml::from_str(text).context("invalid value in config file")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in config {}", path.display()))
    }

    /// Command-line values over file values.
    pub fn merge(self, file: Self) -> Self {
        Self {
            common: self.common.merge(file.common),
            data: self.data.merge(file.data),
            template: self.template.merge(file.template),
            exp: self.exp.merge(file.exp),
            baseline: self.baseline.merge(file.baseline),
            synth: self.synth.merge(file.synth),
            output: self.output.merge(file.output),
        }
    }

    /// Reads `--config` if given and merges it under the flags.
    pub fn resolve(self) -> Result<Self> {
        match self.common.config.clone() {
            Some(path) => Ok(self.merge(Self::load(&path)?)),
            None => Ok(self),
        }
    }

    pub fn experiment(&self) -> Result<ExperimentConfig> {
        let e = &self.exp;
        let config = ExperimentConfig {
            n_folds: e.n_folds(),
            seed: self.common.seed(),
            search: SearchParams {
                k: e.k.unwrap_or(DEFAULT_K),
                nprobe: e.nprobe.unwrap_or(DEFAULT_NPROBE),
            },
            max_pairs: e.max_pairs.unwrap_or(DEFAULT_MAX_PAIRS),
            fusion_policy: e.fusion_policy.unwrap_or(FusionPolicy::Sum),
            merge_mode: e.merge_mode.unwrap_or(MergeMode::Max),
            prompt_template: self.template.template()?,
            num_clusters: e.num_clusters,
            mean_shift_bandwidth: self.baseline.bandwidth,
            n_examples: self.baseline.n_examples,
        };
        if config.search.k == 0 {
            bail!("--k must be at least 1");
        }
        if config.search.nprobe == 0 {
            bail!("--nprobe must be at least 1");
        }
        if config.max_pairs == 0 {
            bail!("--max-pairs must be at least 1");
        }
        if config.n_examples == Some(0) {
            bail!("--n-examples must be at least 1");
        }
        Ok(config)
    }

    /// The resolved configuration as TOML, loadable with `--config`.
    pub fn snapshot(&self) -> String {
        toml::to_string(self).expect("settings serialize")
    }
}
