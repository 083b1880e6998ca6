use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};

use labelinst_core::baselines::{load_original_entries, BaselineKind};
use labelinst_core::dataset::synth::synth_generate;
use labelinst_core::dataset::{load_annotations, load_embeddings, AnnotatedDataset, EmbeddingBundle, FoldAssignment};
use labelinst_core::eval::{
    self, build_index_for, compare, counts_of, emit_report, prepare_folds, run_method_on_fold, EvalReport,
    ExampleCounts, ExperimentConfig, FoldContext, Method, ReportFormat,
};
use labelinst_core::index::VectorIndex;
use labelinst_core::instructions::{InstructionEntry, InstructionSet};
use labelinst_core::query::Modality;
use labelinst_core::ClassId;

use crate::config::Settings;
use crate::manifest::{write_file, Manifest, MANIFEST_NAME};
use crate::{Command, EXIT_OK, EXIT_PARTIAL};

pub const FOLDS_FILE: &str = "folds.json";
pub const SUMMARY_FILE: &str = "summary.json";

pub fn dispatch(command: &Command, settings: &Settings) -> Result<u8> {
    eprintln!("# resolved configuration\n{}", settings.snapshot());
    let out_dir = settings.common.out_dir();
    let mut outputs = Vec::new();
    let code = match command {
        Command::SynthGen(_) => synth_gen(settings, &out_dir, &mut outputs)?,
        Command::BuildIndex(a) => build_index(settings, a.per_fold, &out_dir, &mut outputs)?,
        Command::RunPdc(_) => run_method(settings, Method::Pdc, &out_dir, &mut outputs)?,
        Command::RunBaseline(a) => run_method(settings, Method::Baseline(a.kind), &out_dir, &mut outputs)?,
        Command::Evaluate(a) => {
            let modality = match (a.texts_only, a.bboxes_only) {
                (true, _) => Modality::TextsOnly,
                (_, true) => Modality::BboxesOnly,
                _ => Modality::Both,
            };
            evaluate(settings, &a.inputs, modality, &out_dir, &mut outputs)?
        }
        Command::Compare(_) => compare_methods(settings, &out_dir, &mut outputs)?,
    };
    let manifest = Manifest::new(command.name(), settings.snapshot()).write(&out_dir, &outputs)?;
    eprintln!("wrote {}", manifest.display());
    Ok(code)
}

fn synth_gen(settings: &Settings, out: &Path, outputs: &mut Vec<PathBuf>) -> Result<u8> {
    let config = settings.synth.to_config(settings.common.seed(), settings.template.template()?);
    let world = synth_generate(&config)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let annotations = out.join("annotations.json");
    world.dataset.save_simple_json(&annotations)?;
    let embeddings = out.join("embeddings.bin");
    world.bundle.save(&embeddings)?;
    let truth = out.join("synth.json");
    write_file(&truth, serde_json::to_string(&world.truth)?.as_bytes())?;
    println!(
        "{} classes, {} images, {} boxes, dim {}",
        world.dataset.classes().len(),
        world.dataset.images().len(),
        world.dataset.bboxes().len(),
        world.bundle.dim()
    );
    outputs.extend([annotations, embeddings, truth]);
    Ok(EXIT_OK)
}

/// Loads annotations and embeddings and checks they fit together.
pub fn load_inputs(settings: &Settings) -> Result<(AnnotatedDataset, EmbeddingBundle)> {
    let data = &settings.data;
    let ds = load_annotations(data.annotations()?, data.annotation_format())
        .with_context(|| format!("loading {}", data.annotations().unwrap().display()))?;
    let bundle = load_embeddings(data.embeddings()?)
        .with_context(|| format!("loading {}", data.embeddings().unwrap().display()))?;
    bundle
        .validate(&ds, &settings.template.template()?)
        .context("embeddings do not cover the annotations")?;
    Ok((ds, bundle))
}

fn index_paths(dir: &Path, fold: usize) -> (PathBuf, PathBuf) {
    (dir.join(format!("fold{fold}_train.idx")), dir.join(format!("fold{fold}_test.idx")))
}

fn build_index(settings: &Settings, per_fold: bool, out: &Path, outputs: &mut Vec<PathBuf>) -> Result<u8> {
    let config = settings.experiment()?;
    let (ds, bundle) = load_inputs(settings)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let describe = |name: &str, index: &VectorIndex| {
        println!("{name}: {} records, {} clusters", index.len(), index.num_clusters());
    };
    if !per_fold {
        let all: BTreeSet<_> = ds.image_ids().collect();
        let index = build_index_for(&bundle, &all, config.num_clusters, config.seed)?;
        let path = out.join("index.idx");
        index.save(&path)?;
        describe("index.idx", &index);
        outputs.push(path);
        return Ok(EXIT_OK);
    }
    let (ds, folds) = prepare_folds(ds, &bundle, &config)?;
    let folds_path = out.join(FOLDS_FILE);
    let assignment = ds.split_assignments().expect("folds assigned");
    write_file(&folds_path, serde_json::to_string_pretty(assignment)?.as_bytes())?;
    outputs.push(folds_path);
    for ctx in &folds {
        let (train, test) = index_paths(out, ctx.fold);
        ctx.train_index.save(&train)?;
        ctx.test_index.save(&test)?;
        describe(&format!("fold {} train", ctx.fold), &ctx.train_index);
        describe(&format!("fold {} test", ctx.fold), &ctx.test_index);
        outputs.extend([train, test]);
    }
    Ok(EXIT_OK)
}

/// Fold contexts, either built here or loaded from `--index-dir`.
pub fn load_folds(
    settings: &Settings,
    ds: AnnotatedDataset,
    bundle: &EmbeddingBundle,
    config: &ExperimentConfig,
) -> Result<(AnnotatedDataset, Vec<FoldContext>)> {
    let Some(dir) = &settings.exp.index_dir else {
        return Ok(prepare_folds(ds, bundle, config)?);
    };
    let text = std::fs::read_to_string(dir.join(FOLDS_FILE))
        .with_context(|| format!("reading {}", dir.join(FOLDS_FILE).display()))?;
    let assignment: FoldAssignment = serde_json::from_str(&text).context("parsing folds.json")?;
    ensure!(
        assignment.n_folds == config.n_folds,
        "{} holds {} folds but {} were requested",
        dir.display(),
        assignment.n_folds,
        config.n_folds
    );
    let ds = ds.with_folds(assignment.clone())?;
    let folds = (0..config.n_folds)
        .map(|fold| {
            let (train_path, test_path) = index_paths(dir, fold);
            let ctx = FoldContext {
                fold,
                train: assignment.train_images(fold),
                test: assignment.test_images(fold),
                train_index: VectorIndex::load(&train_path)
                    .with_context(|| format!("loading {}", train_path.display()))?,
                test_index: VectorIndex::load(&test_path)
                    .with_context(|| format!("loading {}", test_path.display()))?,
            };
            ctx.check_hygiene()?;
            for (index, expected, side) in [(&ctx.train_index, &ctx.train, "train"), (&ctx.test_index, &ctx.test, "test")] {
                let held: BTreeSet<_> = index.image_ids().iter().copied().collect();
                ensure!(&held == expected, "fold {fold} {side} index does not match the fold split");
                ensure!(index.dim() == bundle.dim(), "fold {fold} {side} index dimension differs from the embeddings");
            }
            Ok(ctx)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((ds, folds))
}

fn sanitize(name: &str) -> String {
    let s: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    if s.is_empty() { "_".into() } else { s }
}

/// `out/fold{f}/{class}.json`, disambiguated by class id if names collide.
fn set_path(out: &Path, set: &InstructionSet, taken: &mut BTreeSet<PathBuf>) -> PathBuf {
    let dir = match set.fold {
        Some(f) => out.join(format!("fold{f}")),
        None => out.to_path_buf(),
    };
    let mut path = dir.join(format!("{}.json", sanitize(&set.class)));
    if !taken.insert(path.clone()) {
        path = dir.join(format!("{}_{}.json", sanitize(&set.class), set.class_id));
        taken.insert(path.clone());
    }
    path
}

pub fn write_sets(out: &Path, sets: &[InstructionSet], outputs: &mut Vec<PathBuf>) -> Result<()> {
    let mut taken = BTreeSet::new();
    for set in sets {
        let path = set_path(out, set, &mut taken);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        set.save(&path).with_context(|| format!("writing {}", path.display()))?;
        outputs.push(path);
    }
    Ok(())
}

#[derive(serde::Serialize)]
struct ClassStatus {
    fold: usize,
    class: String,
    class_id: ClassId,
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_pairs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reason: Option<String>,
}

#[derive(serde::Serialize)]
struct RunSummary {
    method: String,
    n_folds: usize,
    classes: Vec<ClassStatus>,
}

fn class_name(ds: &AnnotatedDataset, id: ClassId) -> String {
    ds.class(id).map_or_else(|| id.to_string(), |c| c.name.clone())
}

/// Example counts from `--match-dir`: every instruction set found there.
fn counts_from_dir(dir: &Path) -> Result<ExampleCounts> {
    let sets = load_sets(&[dir.to_path_buf()])?;
    ensure!(!sets.is_empty(), "no instruction sets under {}", dir.display());
    Ok(counts_of(&sets))
}

fn load_originals(path: &Path, ds: &AnnotatedDataset) -> Result<BTreeMap<String, Vec<InstructionEntry>>> {
    ds.classes()
        .iter()
        .map(|c| Ok((c.name.clone(), load_original_entries(path, &c.name)?)))
        .collect()
}

fn originals_for(settings: &Settings, ds: &AnnotatedDataset, methods: &[Method]) -> Result<Option<BTreeMap<String, Vec<InstructionEntry>>>> {
    let wanted = methods.contains(&Method::Baseline(BaselineKind::OriginalPairs));
    match (&settings.baseline.original_instructions, wanted) {
        (Some(p), true) => Ok(Some(load_originals(p, ds)?)),
        (None, true) => bail!("original_pairs needs --original-instructions"),
        _ => Ok(None),
    }
}

fn run_method(settings: &Settings, method: Method, out: &Path, outputs: &mut Vec<PathBuf>) -> Result<u8> {
    let config = settings.experiment()?;
    let (ds, bundle) = load_inputs(settings)?;
    let originals = originals_for(settings, &ds, &[method])?;
    let (ds, folds) = load_folds(settings, ds, &bundle, &config)?;

    let needs_count = matches!(method, Method::Baseline(b) if b.needs_count()) && config.n_examples.is_none();
    let counts = match (&settings.baseline.match_dir, needs_count) {
        (_, false) => None,
        (Some(dir), true) => Some(counts_from_dir(dir)?),
        (None, true) => {
            eprintln!("no --n-examples or --match-dir; running PDC for example counts");
            let mut sets = Vec::new();
            for ctx in &folds {
                sets.extend(run_method_on_fold(Method::Pdc, &ds, &bundle, ctx, &config, None, None).into_result(ctx.fold)?.sets);
            }
            Some(counts_of(&sets))
        }
    };

    let mut statuses = Vec::new();
    let mut sets = Vec::new();
    let mut n_failed = 0;
    for ctx in &folds {
        let run = run_method_on_fold(method, &ds, &bundle, ctx, &config, counts.as_ref(), originals.as_ref());
        for s in &run.sets {
            statuses.push(ClassStatus {
                fold: ctx.fold,
                class: s.class.clone(),
                class_id: s.class_id,
                status: "ok",
                n_pairs: Some(s.pairs.len()),
                reason: None,
            });
        }
        for (c, reason) in run.skipped {
            statuses.push(ClassStatus {
                fold: ctx.fold,
                class: class_name(&ds, c),
                class_id: c,
                status: "skipped",
                n_pairs: None,
                reason: Some(reason),
            });
        }
        for (c, e) in run.failed {
            eprintln!("fold {} class {}: {e}", ctx.fold, class_name(&ds, c));
            n_failed += 1;
            statuses.push(ClassStatus {
                fold: ctx.fold,
                class: class_name(&ds, c),
                class_id: c,
                status: "failed",
                n_pairs: None,
                reason: Some(e.to_string()),
            });
        }
        sets.extend(run.sets);
    }
    statuses.sort_by_key(|s| (s.fold, s.class_id));
    sets.sort_by_key(|s| (s.fold, s.class_id));
    write_sets(out, &sets, outputs)?;
    let summary = RunSummary { method: method.name().into(), n_folds: config.n_folds, classes: statuses };
    let path = out.join(SUMMARY_FILE);
    write_file(&path, serde_json::to_string_pretty(&summary)?.as_bytes())?;
    outputs.push(path);
    println!("{}: {} instruction sets, {} failed", method, sets.len(), n_failed);
    Ok(if n_failed > 0 { EXIT_PARTIAL } else { EXIT_OK })
}

fn is_set_file(path: &Path) -> bool {
    let Some(name) = path.file_name().and_then(|n| n.to_str()) else { return false };
    name.ends_with(".json") && name != MANIFEST_NAME && !name.ends_with(SUMMARY_FILE) && name != FOLDS_FILE
        && !name.starts_with("report") && !name.starts_with("comparison")
}

fn collect_files(path: &Path, found: &mut Vec<PathBuf>) -> Result<()> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(path)
            .with_context(|| format!("listing {}", path.display()))?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        entries.sort();
        for e in entries {
            if e.is_dir() {
                collect_files(&e, found)?;
            } else if is_set_file(&e) {
                found.push(e);
            }
        }
    } else {
        found.push(path.to_path_buf());
    }
    Ok(())
}

/// Instruction sets from files and directories, in a stable order.
pub fn load_sets(inputs: &[PathBuf]) -> Result<Vec<InstructionSet>> {
    let mut files = Vec::new();
    for p in inputs {
        ensure!(p.exists(), "{} does not exist", p.display());
        collect_files(p, &mut files)?;
    }
    let mut sets = files
        .iter()
        .map(|f| InstructionSet::load(f).with_context(|| format!("loading {}", f.display())))
        .collect::<Result<Vec<_>>>()?;
    sets.sort_by(|a, b| (a.fold, a.class_id, &a.method).cmp(&(b.fold, b.class_id, &b.method)));
    Ok(sets)
}

fn report_stem(modality: Modality) -> &'static str {
    match modality {
        Modality::Both => "report",
        Modality::TextsOnly => "report_texts_only",
        Modality::BboxesOnly => "report_bboxes_only",
    }
}

fn write_formats<T>(
    out: &Path,
    stem: &str,
    formats: &[ReportFormat],
    value: &T,
    render: impl Fn(&T, ReportFormat) -> String,
    outputs: &mut Vec<PathBuf>,
) -> Result<()> {
    for &f in formats {
        let path = out.join(format!("{stem}.{}", f.extension()));
        write_file(&path, render(value, f).as_bytes())?;
        outputs.push(path);
    }
    Ok(())
}

fn print_map(report: &EvalReport) {
    match report.map {
        Some(m) => println!("{}: mAP {m:.4}", report.config.method),
        None => println!("{}: mAP undefined (no scored class)", report.config.method),
    }
}

fn evaluate(settings: &Settings, inputs: &[PathBuf], modality: Modality, out: &Path, outputs: &mut Vec<PathBuf>) -> Result<u8> {
    let config = settings.experiment()?;
    let sets = load_sets(inputs)?;
    ensure!(!sets.is_empty(), "no instruction sets found");
    let (ds, bundle) = load_inputs(settings)?;
    for s in &sets {
        ensure!(ds.class(s.class_id).is_some_and(|c| c.name == s.class), "class {} ({}) is not in the annotations", s.class, s.class_id);
        if let Some(f) = s.fold {
            ensure!(f < config.n_folds, "{} refers to fold {f} of {}", s.class, config.n_folds);
        }
    }
    let methods: BTreeSet<&str> = sets.iter().map(|s| s.method.as_str()).collect();
    let method = methods.into_iter().collect::<Vec<_>>().join("+");
    let (ds, folds) = load_folds(settings, ds, &bundle, &config)?;
    let report = eval::evaluate_sets(&method, &sets, &ds, &bundle, &folds, &config, modality)?;
    write_formats(out, report_stem(modality), &settings.output.formats(), &report, emit_report, outputs)?;
    print_map(&report);
    Ok(EXIT_OK)
}

fn compare_methods(settings: &Settings, out: &Path, outputs: &mut Vec<PathBuf>) -> Result<u8> {
    let config = settings.experiment()?;
    let methods = settings.output.methods();
    ensure!(!methods.is_empty(), "--methods is empty");
    let (ds, bundle) = load_inputs(settings)?;
    let originals = originals_for(settings, &ds, &methods)?;
    let (ds, folds) = load_folds(settings, ds, &bundle, &config)?;
    let (comparison, runs) = compare(&methods, &ds, &bundle, &folds, &config, originals.as_ref())?;
    for (m, run) in &runs {
        write_sets(&out.join("sets").join(m.name()), &run.sets, outputs)?;
    }
    write_formats(
        out,
        "comparison",
        &settings.output.formats(),
        &comparison,
        |c, f| match f {
            ReportFormat::Json => c.to_json(),
            ReportFormat::Csv => c.to_csv(),
            ReportFormat::Markdown => c.to_markdown(),
        },
        outputs,
    )?;
    for r in &comparison.reports {
        print_map(r);
    }
    Ok(EXIT_OK)
}
