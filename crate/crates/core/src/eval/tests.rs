use super::*;
use crate::dataset::synth::{synth_generate, SynthConfig};
use crate::dataset::tests::tiny;
use crate::embedding::EmbeddingVector;
use crate::index::PatchKey;

fn small_world() -> (AnnotatedDataset, EmbeddingBundle) {
    let w = synth_generate(&SynthConfig {
        n_classes: 3,
        images_per_class: 12,
        dim: 16,
        seed: 3,
        ..Default::default()
    })
    .unwrap();
    (w.dataset, w.bundle)
}

fn small_config() -> ExperimentConfig {
    ExperimentConfig {
        n_folds: 3,
        search: SearchParams { k: 50, nprobe: 300 },
        ..Default::default()
    }
}

#[test]
fn method_names_round_trip() {
    for m in [Method::Pdc, Method::Baseline(BaselineKind::RandomPairs), Method::Baseline(BaselineKind::MeanShift)] {
        assert_eq!(m.name().parse::<Method>().unwrap(), m);
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(json, format!("\"{}\"", m.name()));
        assert_eq!(serde_json::from_str::<Method>(&json).unwrap(), m);
    }
    assert!("nope".parse::<Method>().is_err());
}

#[test]
fn derived_seeds_differ_per_fold_and_class() {
    let seeds: BTreeSet<u64> = (0..5).flat_map(|f| (0..4).map(move |c| derive_seed(7, f, c))).collect();
    assert_eq!(seeds.len(), 20);
    assert_eq!(derive_seed(7, 1, 2), derive_seed(7, 1, 2));
}

#[test]
fn folds_are_hygienic() {
    let (ds, bundle) = small_world();
    let (ds, folds) = prepare_folds(ds, &bundle, &small_config()).unwrap();
    assert_eq!(folds.len(), 3);
    let mut all_test = BTreeSet::new();
    for ctx in &folds {
        ctx.check_hygiene().unwrap();
        assert!(ctx.train.is_disjoint(&ctx.test));
        assert_eq!(ctx.test_index.len(), ctx.test.len() * 165);
        all_test.extend(ctx.test.iter().copied());
    }
    assert_eq!(all_test.len(), ds.images().len());
}

#[test]
fn leaked_index_is_rejected() {
    let (ds, bundle) = small_world();
    let (_, mut folds) = prepare_folds(ds, &bundle, &small_config()).unwrap();
    let ctx = &mut folds[0];
    let everything: BTreeSet<ImageId> = ctx.train.union(&ctx.test).copied().collect();
    ctx.train_index = build_index_for(&bundle, &everything, None, 0).unwrap();
    assert!(matches!(ctx.check_hygiene(), Err(Error::InvalidConfig(_))));
}

#[test]
fn compare_report_is_consistent_and_deterministic() {
    let (ds, bundle) = small_world();
    let config = small_config();
    let (ds, folds) = prepare_folds(ds, &bundle, &config).unwrap();
    let methods = [
        Method::Pdc,
        Method::Baseline(BaselineKind::OriginalTexts),
        Method::Baseline(BaselineKind::RandomPairs),
        Method::Baseline(BaselineKind::RandomBboxes),
    ];
    let (cmp, runs) = compare(&methods, &ds, &bundle, &folds, &config, None).unwrap();
    assert_eq!(cmp.reports.len(), 4);
    let pdc_counts = counts_of(&runs[&Method::Pdc].sets);
    for m in &methods[2..] {
        for s in &runs[m].sets {
            let pool_size = ds.images_with_class(s.class_id).intersection(&folds[s.fold.unwrap()].train).count();
            assert_eq!(s.pairs.len(), pdc_counts[&(s.fold.unwrap(), s.class_id)].min(pool_size));
        }
    }
    for r in &cmp.reports {
        let means: Vec<f64> = r.per_class.values().filter_map(|c| c.ap_mean).collect();
        let expect = means.iter().sum::<f64>() / means.len() as f64;
        assert!((r.map.unwrap() - expect).abs() < 1e-12);
        for c in r.per_class.values() {
            let aps: Vec<f64> = c.folds.iter().filter_map(|f| f.ap).collect();
            let m = aps.iter().sum::<f64>() / aps.len() as f64;
            let sd = (aps.iter().map(|a| (a - m).powi(2)).sum::<f64>() / aps.len() as f64).sqrt();
            assert!((c.ap_mean.unwrap() - m).abs() < 1e-12);
            assert!((c.ap_std.unwrap() - sd).abs() < 1e-12);
            assert!(aps.iter().all(|a| (0.0..=1.0).contains(a)));
            assert_eq!(c.mean_pr.points().len(), config.search.k);
        }
    }
    let (again, _) = compare(&methods, &ds, &bundle, &folds, &config, None).unwrap();
    assert_eq!(cmp.to_json(), again.to_json());
    let csv = cmp.to_csv();
    assert_eq!(csv.lines().count(), 1 + 4 * 3 * 3);
    let md = cmp.to_markdown();
    assert!(md.contains("| **mAP** |"));
    assert!(md.contains("random_pairs"));
}

#[test]
fn report_json_round_trips_exactly() {
    let (ds, bundle) = small_world();
    let config = small_config();
    let (ds, folds) = prepare_folds(ds, &bundle, &config).unwrap();
    let run = cross_fold(Method::Pdc, &ds, &bundle, &folds, &config, None, None, Modality::Both).unwrap();
    let back = EvalReport::from_json(&run.report.to_json()).unwrap();
    assert_eq!(back, run.report);
    let md = emit_report(&run.report, ReportFormat::Markdown);
    assert!(md.starts_with("# pdc"));
    assert_eq!(emit_report(&run.report, ReportFormat::Csv).lines().count(), 1 + 3 * 3);
}

#[test]
fn pdc_sets_carry_train_auc_traces() {
    let (ds, bundle) = small_world();
    let config = small_config();
    let (ds, folds) = prepare_folds(ds, &bundle, &config).unwrap();
    let run = run_method_on_fold(Method::Pdc, &ds, &bundle, &folds[0], &config, None, None);
    assert!(run.failed.is_empty());
    assert_eq!(run.sets.len(), 3);
    for s in &run.sets {
        assert_eq!(s.fold, Some(0));
        let trace = s.auc_trace();
        assert!(!trace.is_empty() && trace.len() <= config.max_pairs);
        assert!(trace.windows(2).all(|w| w[1] > w[0]));
    }
}

#[test]
fn random_baseline_without_count_is_an_error() {
    let (ds, bundle) = small_world();
    let config = small_config();
    let (ds, folds) = prepare_folds(ds, &bundle, &config).unwrap();
    let r = run_method_on_fold(Method::Baseline(BaselineKind::RandomBboxes), &ds, &bundle, &folds[0], &config, None, None);
    assert_eq!(r.failed.len(), 3);
    assert!(matches!(r.into_result(0), Err(Error::Fold { fold: 0, .. })));
}

fn tiny_bundle() -> EmbeddingBundle {
    let ev = |v: [f32; 2]| EmbeddingVector::new(v.to_vec()).unwrap();
    let mut b = EmbeddingBundle::new(2).unwrap();
    for img in [1u64, 2] {
        let v = if img == 1 { ev([1.0, 0.1]) } else { ev([0.1, 1.0]) };
        for key in PatchKey::grid_keys(img) {
            b.insert_patch(key, v.clone()).unwrap();
        }
    }
    b.insert_bbox(10, ev([1.0, 0.0])).unwrap();
    b.insert_bbox(11, ev([1.0, 0.0])).unwrap();
    b.insert_bbox(12, ev([0.0, 1.0])).unwrap();
    b.insert_text("a photo of dog", ev([1.0, 0.0])).unwrap();
    b.insert_text("a photo of puppy", ev([1.0, 0.2])).unwrap();
    b.insert_text("a photo of cat", ev([0.0, 1.0])).unwrap();
    b
}

fn text_set(class: &str, class_id: ClassId) -> InstructionSet {
    InstructionSet {
        class: class.into(),
        class_id,
        method: "original_texts".into(),
        fold: Some(0),
        pairs: vec![InstructionEntry { word: Some(class.into()), ..Default::default() }],
        config: ExperimentConfig::default().method_config(Method::Baseline(BaselineKind::OriginalTexts)),
    }
}

#[test]
fn evaluate_method_scores_and_skips() {
    let ds = tiny();
    let bundle = tiny_bundle();
    let test: BTreeSet<ImageId> = [1].into();
    let index = build_index_for(&bundle, &test, Some(1), 0).unwrap();
    let params = ExperimentConfig::default().eval_params(Modality::Both);
    let evals = evaluate_method(
        &[text_set("dog", 0), text_set("cat", 1)],
        &index,
        &test,
        &ds,
        &bundle,
        &PromptTemplate::default(),
        &params,
    )
    .unwrap();
    match &evals[0] {
        ClassEval::Scored(o) => {
            assert_eq!(o.ap, 1.0);
            assert_eq!(o.n_positives, 1);
            assert_eq!(o.ranked.ids().collect::<Vec<_>>(), vec![1]);
        }
        other => panic!("{other:?}"),
    }
    assert!(matches!(&evals[1], ClassEval::Skipped { class_id: 1, .. }));
}

#[test]
fn texts_only_mask_on_a_visual_set_scores_zero() {
    let ds = tiny();
    let bundle = tiny_bundle();
    let test: BTreeSet<ImageId> = [1, 2].into();
    let index = build_index_for(&bundle, &test, Some(1), 0).unwrap();
    let mut s = text_set("dog", 0);
    s.pairs = vec![InstructionEntry { image_id: Some(1), bbox_id: Some(10), ..Default::default() }];
    let cfg = ExperimentConfig::default();
    let only_text =
        evaluate_method(&[s.clone()], &index, &test, &ds, &bundle, &cfg.prompt_template, &cfg.eval_params(Modality::TextsOnly))
            .unwrap();
    let ClassEval::Scored(o) = &only_text[0] else { panic!() };
    assert_eq!((o.n_queries, o.ap), (0, 0.0));
    let both = evaluate_method(&[s], &index, &test, &ds, &bundle, &cfg.prompt_template, &cfg.eval_params(Modality::Both))
        .unwrap();
    let ClassEval::Scored(o) = &both[0] else { panic!() };
    assert_eq!(o.ap, 1.0);
}

#[test]
fn population_std() {
    assert_eq!(report::mean_std(&[1.0, 3.0]), Some((2.0, 1.0)));
    assert_eq!(report::mean_std(&[]), None);
}
