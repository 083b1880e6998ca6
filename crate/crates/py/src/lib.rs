//! Python bindings. Instruction sets and reports cross the boundary as
//! JSON strings.

use std::collections::BTreeSet;
use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

use labelinst_core::dataset::synth::{synth_generate, SynthConfig, SynthMode};
use labelinst_core::dataset::{self as ds, AnnotationFormat};
use labelinst_core::eval::{self, ExperimentConfig, Method};
use labelinst_core::fusion::{self, FusionPolicy, MergeMode};
use labelinst_core::index::{self as idx, KMeansConfig};
use labelinst_core::metrics;
use labelinst_core::query::{Modality, SearchParams, DEFAULT_K, DEFAULT_NPROBE};
use labelinst_core::ranked::{RankedList, ScoredItem};
use labelinst_core::EmbeddingVector;

create_exception!(labelinst, LabelinstError, PyException);

fn err(e: impl std::fmt::Display) -> PyErr {
    LabelinstError::new_err(e.to_string())
}

fn vector(values: Vec<f64>) -> PyResult<EmbeddingVector> {
    EmbeddingVector::from_f64(&values).map_err(err)
}

fn parse<T: std::str::FromStr>(s: &str) -> PyResult<T>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(err)
}

#[pyclass(module = "labelinst", frozen)]
pub struct Dataset(ds::AnnotatedDataset);

#[pymethods]
impl Dataset {
    /// `format` is `simple_json` or `coco_json`.
    #[staticmethod]
    #[pyo3(signature = (path, format = "simple_json"))]
    fn load(path: PathBuf, format: &str) -> PyResult<Self> {
        let format: AnnotationFormat = parse(format)?;
        ds::load_annotations(path, format).map(Self).map_err(err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save_simple_json(path).map_err(err)
    }

    fn class_names(&self) -> Vec<String> {
        self.0.classes().iter().map(|c| c.name.clone()).collect()
    }

    fn class_words(&self, name: &str) -> PyResult<Vec<String>> {
        let c = self.0.class_by_name(name).ok_or_else(|| err(format!("unknown class {name}")))?;
        Ok(c.words.clone())
    }

    fn image_ids(&self) -> Vec<u64> {
        self.0.image_ids().collect()
    }

    fn images_with_class(&self, name: &str) -> PyResult<Vec<u64>> {
        let c = self.0.class_by_name(name).ok_or_else(|| err(format!("unknown class {name}")))?;
        Ok(self.0.images_with_class(c.id).into_iter().collect())
    }

    fn num_bboxes(&self) -> usize {
        self.0.bboxes().len()
    }

    /// Test images of each fold under a seeded split.
    fn split_folds(&self, n_folds: usize, seed: u64) -> PyResult<Vec<Vec<u64>>> {
        let split = ds::split_folds(self.0.clone(), n_folds, seed).map_err(err)?;
        let a = split.split_assignments().expect("folds assigned");
        Ok((0..n_folds).map(|f| a.test_images(f).into_iter().collect()).collect())
    }

    fn __len__(&self) -> usize {
        self.0.images().len()
    }

    fn __repr__(&self) -> String {
        format!("Dataset({} images, {} classes)", self.0.images().len(), self.0.classes().len())
    }
}

#[pyclass(module = "labelinst", frozen)]
pub struct EmbeddingBundle(ds::EmbeddingBundle);

#[pymethods]
impl EmbeddingBundle {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        ds::load_embeddings(path).map(Self).map_err(err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(path).map_err(err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn text(&self, prompt: &str) -> PyResult<Vec<f32>> {
        Ok(self.0.text(prompt).map_err(err)?.as_slice().to_vec())
    }

    fn bbox(&self, bbox_id: u64) -> PyResult<Vec<f32>> {
        Ok(self.0.bbox(bbox_id).map_err(err)?.as_slice().to_vec())
    }

    /// Raises if any box, image patch or rendered word is missing.
    #[pyo3(signature = (dataset, prompt_template = None))]
    fn validate(&self, dataset: &Dataset, prompt_template: Option<String>) -> PyResult<()> {
        self.0.validate(&dataset.0, &template(prompt_template)?).map_err(err)
    }

    fn to_bytes(&self) -> Vec<u8> {
        self.0.to_bytes()
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        ds::EmbeddingBundle::from_bytes(data).map(Self).map_err(err)
    }
}

fn template(t: Option<String>) -> PyResult<ds::PromptTemplate> {
    t.map_or_else(|| Ok(ds::PromptTemplate::default()), |t| ds::PromptTemplate::new(t).map_err(err))
}

fn hits(r: &RankedList) -> Vec<(u64, f64)> {
    r.iter().map(|s| (s.item_id, s.score)).collect()
}

#[pyclass(module = "labelinst", frozen)]
pub struct VectorIndex(idx::VectorIndex);

#[pymethods]
impl VectorIndex {
    /// Indexes the patches of `image_ids` (all images when omitted).
    #[staticmethod]
    #[pyo3(signature = (bundle, dataset, image_ids = None, num_clusters = None, seed = 0))]
    fn build(
        py: Python<'_>,
        bundle: &EmbeddingBundle,
        dataset: &Dataset,
        image_ids: Option<Vec<u64>>,
        num_clusters: Option<usize>,
        seed: u64,
    ) -> PyResult<Self> {
        let images: BTreeSet<u64> = image_ids.map_or_else(|| dataset.0.image_ids().collect(), |v| v.into_iter().collect());
        py.detach(|| eval::build_index_for(&bundle.0, &images, num_clusters, seed)).map(Self).map_err(err)
    }

    /// Indexes explicit `(image_id, vector)` records as whole-image patches.
    #[staticmethod]
    #[pyo3(signature = (records, num_clusters = None, seed = 0))]
    fn from_vectors(records: Vec<(u64, Vec<f64>)>, num_clusters: Option<usize>, seed: u64) -> PyResult<Self> {
        let records = records
            .into_iter()
            .map(|(id, v)| Ok((idx::PatchKey::grid(id, 1, 0, 0).map_err(err)?, vector(v)?)))
            .collect::<PyResult<Vec<_>>>()?;
        idx::VectorIndex::build_with(records, num_clusters, &KMeansConfig { seed, ..Default::default() })
            .map(Self)
            .map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        idx::VectorIndex::load(path).map(Self).map_err(err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(path).map_err(err)
    }

    /// Top `k` images as `(image_id, score)`; `nprobe` is clamped to the list count.
    #[pyo3(signature = (query, k = DEFAULT_K, nprobe = DEFAULT_NPROBE))]
    fn search(&self, query: Vec<f64>, k: usize, nprobe: usize) -> PyResult<Vec<(u64, f64)>> {
        let nprobe = SearchParams { k, nprobe }.nprobe_for(&self.0);
        Ok(hits(&self.0.search(&vector(query)?, k, nprobe).map_err(err)?.ranked))
    }

    #[pyo3(signature = (query, k = DEFAULT_K))]
    fn search_exact(&self, query: Vec<f64>, k: usize) -> PyResult<Vec<(u64, f64)>> {
        Ok(hits(&self.0.search_exact(&vector(query)?, k).map_err(err)?.ranked))
    }

    #[getter]
    fn num_clusters(&self) -> usize {
        self.0.num_clusters()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

#[pyfunction]
fn sum_fusion_query(text: Vec<f64>, visual: Vec<f64>) -> PyResult<Vec<f32>> {
    Ok(fusion::sum_fusion_query(&vector(text)?, &vector(visual)?).map_err(err)?.into_inner())
}

#[pyfunction]
fn weighted_fusion_query(text: Vec<f64>, visual: Vec<f64>) -> PyResult<Vec<f32>> {
    Ok(fusion::weighted_fusion_query(&vector(text)?, &vector(visual)?).map_err(err)?.into_inner())
}

#[pyfunction]
fn cosine(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    fusion::single_score(&vector(a)?, &vector(b)?).map_err(err)
}

/// AP@k of a ranking given best first.
#[pyfunction]
fn average_precision(ranking: Vec<u64>, positives: Vec<u64>, k: usize) -> PyResult<f64> {
    let n = ranking.len() as f64;
    let items = ranking.into_iter().enumerate().map(|(r, id)| ScoredItem::new(id, n - r as f64)).collect();
    let ranked = RankedList::from_sorted(items).ok_or_else(|| err("ranking repeats an id"))?;
    metrics::average_precision(&ranked, &positives.into_iter().collect(), k).map_err(err)
}

/// Generates a synthetic world; `mode` is `standard` or `text_ambiguous`.
#[pyfunction]
#[pyo3(signature = (n_classes = 4, images_per_class = 50, dim = 64, noise_sigma = 0.1, seed = 0, mode = "standard"))]
fn synth(
    n_classes: usize,
    images_per_class: usize,
    dim: usize,
    noise_sigma: f64,
    seed: u64,
    mode: &str,
) -> PyResult<(Dataset, EmbeddingBundle)> {
    let mode: SynthMode = parse(mode)?;
    let config = SynthConfig { n_classes, images_per_class, dim, noise_sigma, seed, mode, ..Default::default() };
    let w = synth_generate(&config).map_err(err)?;
    Ok((Dataset(w.dataset), EmbeddingBundle(w.bundle)))
}

#[allow(clippy::too_many_arguments)]
fn experiment(
    n_folds: usize,
    seed: u64,
    k: usize,
    nprobe: usize,
    max_pairs: usize,
    fusion_policy: &str,
    merge_mode: &str,
    n_examples: Option<usize>,
) -> PyResult<ExperimentConfig> {
    Ok(ExperimentConfig {
        n_folds,
        seed,
        search: SearchParams { k, nprobe },
        max_pairs,
        fusion_policy: parse::<FusionPolicy>(fusion_policy)?,
        merge_mode: parse::<MergeMode>(merge_mode)?,
        n_examples,
        ..Default::default()
    })
}

/// Runs `methods` over cross-validation folds. Returns the comparison
/// report and every produced instruction set, both as JSON.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (
    dataset, bundle, methods = vec!["pdc".to_owned()], n_folds = 5, seed = 0, k = DEFAULT_K,
    nprobe = DEFAULT_NPROBE, max_pairs = 4, fusion_policy = "sum", merge_mode = "max", n_examples = None
))]
fn compare(
    py: Python<'_>,
    dataset: &Dataset,
    bundle: &EmbeddingBundle,
    methods: Vec<String>,
    n_folds: usize,
    seed: u64,
    k: usize,
    nprobe: usize,
    max_pairs: usize,
    fusion_policy: &str,
    merge_mode: &str,
    n_examples: Option<usize>,
) -> PyResult<(String, Vec<String>)> {
    let config = experiment(n_folds, seed, k, nprobe, max_pairs, fusion_policy, merge_mode, n_examples)?;
    let methods = methods.iter().map(|m| parse::<Method>(m)).collect::<PyResult<Vec<_>>>()?;
    py.detach(|| {
        let (ds, folds) = eval::prepare_folds(dataset.0.clone(), &bundle.0, &config)?;
        let (report, runs) = eval::compare(&methods, &ds, &bundle.0, &folds, &config, None)?;
        let sets = runs.values().flat_map(|r| r.sets.iter().map(|s| s.to_json())).collect();
        Ok::<_, labelinst_core::Error>((report.to_json(), sets))
    })
    .map_err(err)
}

/// Scores instruction sets (JSON) on each fold's test images.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (
    dataset, bundle, sets, n_folds = 5, seed = 0, k = DEFAULT_K, nprobe = DEFAULT_NPROBE,
    fusion_policy = "sum", merge_mode = "max", modality = "both"
))]
fn evaluate(
    py: Python<'_>,
    dataset: &Dataset,
    bundle: &EmbeddingBundle,
    sets: Vec<String>,
    n_folds: usize,
    seed: u64,
    k: usize,
    nprobe: usize,
    fusion_policy: &str,
    merge_mode: &str,
    modality: &str,
) -> PyResult<String> {
    let config = experiment(n_folds, seed, k, nprobe, 4, fusion_policy, merge_mode, None)?;
    let modality = match modality {
        "both" => Modality::Both,
        "texts_only" => Modality::TextsOnly,
        "bboxes_only" => Modality::BboxesOnly,
        other => return Err(err(format!("unknown modality `{other}`"))),
    };
    let sets = sets
        .iter()
        .map(|s| labelinst_core::instructions::InstructionSet::from_json(s).map_err(err))
        .collect::<PyResult<Vec<_>>>()?;
    let names: BTreeSet<&str> = sets.iter().map(|s| s.method.as_str()).collect();
    let name = names.into_iter().collect::<Vec<_>>().join("+");
    py.detach(|| {
        let (ds, folds) = eval::prepare_folds(dataset.0.clone(), &bundle.0, &config)?;
        eval::evaluate_sets(&name, &sets, &ds, &bundle.0, &folds, &config, modality).map(|r| r.to_json())
    })
    .map_err(err)
}

#[pymodule]
fn labelinst(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("LabelinstError", m.py().get_type::<LabelinstError>())?;
    m.add_class::<Dataset>()?;
    m.add_class::<EmbeddingBundle>()?;
    m.add_class::<VectorIndex>()?;
    m.add_function(wrap_pyfunction!(sum_fusion_query, m)?)?;
    m.add_function(wrap_pyfunction!(weighted_fusion_query, m)?)?;
    m.add_function(wrap_pyfunction!(cosine, m)?)?;
    m.add_function(wrap_pyfunction!(average_precision, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
