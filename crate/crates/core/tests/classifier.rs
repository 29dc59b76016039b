use proptest::prelude::*;
use swallow_core::classifier::{
    auc_trapezoid, build_2d_network, build_network, compare_models, evaluate, health_index, roc_curve, train,
    Checkpoint, Confusion, Metrics, Model2dConfig, ModelConfig, TrainConfig,
};
use swallow_core::dsp::{PreprocessConfig, Preprocessor};
use swallow_core::signal::{make_corpus, Label, LabeledDataset};
use swallow_core::Error;

fn pre() -> Preprocessor {
    Preprocessor::new(&PreprocessConfig::default()).unwrap()
}

fn small_corpus() -> LabeledDataset {
    make_corpus(3, 3, 4, 21).unwrap()
}

fn short_run(iterations: usize) -> TrainConfig {
    TrainConfig { iterations, batch_size: 4, val_fraction: 0.34, seed: 5, ..Default::default() }
}

/// Pairwise-comparison AUC: concordant pairs count 1, ties 1/2.
fn mann_whitney(scores: &[f64], pos: &[bool]) -> f64 {
    let (mut num, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if pos[i] && !pos[j] {
                pairs += 1.0;
                num += if si > sj { 1.0 } else if si == sj { 0.5 } else { 0.0 };
            }
        }
    }
    num / pairs
}

#[test]
fn zero_learning_rate_is_a_null_update() {
    let net = build_network(&ModelConfig { seed: 2, ..Default::default() }).unwrap();
    let tc = TrainConfig { learning_rate: 0.0, ..short_run(3) };
    let out = train(&net, &pre(), &small_corpus(), &tc).unwrap();
    assert_eq!(out.network, net);
    let first = out.log.epochs[0];
    for e in &out.log.epochs {
        assert_eq!((e.train_loss, e.val_loss), (first.train_loss, first.val_loss));
    }
}

#[test]
fn training_is_deterministic_and_lowers_loss() {
    let net = build_network(&ModelConfig { seed: 2, ..Default::default() }).unwrap();
    let corpus = small_corpus();
    let a = train(&net, &pre(), &corpus, &short_run(8)).unwrap();
    let b = train(&net, &pre(), &corpus, &short_run(8)).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.network, b.network);
    assert!(a.log.last().train_loss < a.log.initial().train_loss);
    assert_eq!(a.log.epochs.len(), 9);
    let best = a.log.epochs[a.log.best_epoch].val_loss;
    assert!(a.log.epochs.iter().all(|e| e.val_loss >= best));
}

#[test]
fn training_split_is_subject_disjoint() {
    let net = build_network(&ModelConfig::default()).unwrap();
    let out = train(&net, &pre(), &small_corpus(), &short_run(1)).unwrap();
    assert!(!out.log.val_subjects.is_empty());
    for s in &out.log.val_subjects {
        assert!(!out.log.train_subjects.contains(s));
    }
}

#[test]
fn single_class_training_is_rejected() {
    let corpus = small_corpus();
    let healthy: Vec<usize> = (0..corpus.len()).filter(|&i| corpus.items[i].label == Label::Healthy).collect();
    let net = build_network(&ModelConfig::default()).unwrap();
    let r = train(&net, &pre(), &corpus.subset(&healthy), &short_run(1));
    assert!(matches!(r, Err(Error::InvalidArgument(_))));
}

#[test]
fn evaluate_rejects_empty_dataset() {
    let net = build_network(&ModelConfig::default()).unwrap();
    assert!(evaluate(&net, &pre(), &LabeledDataset::default(), 0.5).is_err());
}

#[test]
fn evaluate_matches_checkpoint_scoring() {
    let corpus = small_corpus();
    let net = build_network(&ModelConfig { seed: 9, ..Default::default() }).unwrap();
    let ev = evaluate(&net, &pre(), &corpus, 0.5).unwrap();
    let ck = Checkpoint::new(net, PreprocessConfig::default(), None);
    for (item, s) in corpus.items.iter().zip(&ev.scores) {
        assert_eq!(ck.score(&item.segment).unwrap(), *s);
        assert_eq!(ck.health_index(&item.segment).unwrap().value, 1.0 - s);
    }
}

#[test]
fn checkpoint_round_trip_and_tamper_detection() {
    let net = build_2d_network(&Model2dConfig { seed: 4, ..Default::default() }).unwrap();
    let ck = Checkpoint::new(net, PreprocessConfig::default(), Some(5));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, ck);
    let seg = &small_corpus().items[0].segment;
    assert_eq!(back.score(seg).unwrap(), ck.score(seg).unwrap());

    let mut tampered = ck.clone();
    tampered.network.layers[0].params_mut()[0][0] += 1e-9;
    let json = tampered.to_json().unwrap();
    assert!(matches!(Checkpoint::from_json(&json), Err(Error::IncompatibleModel(_))));
    let json = ck.to_json().unwrap().replacen("\"format\":1", "\"format\":2", 1);
    assert!(matches!(Checkpoint::from_json(&json), Err(Error::IncompatibleModel(_))));
}

#[test]
fn comparison_report_shape_and_consistency() {
    let corpus = small_corpus();
    let tc = short_run(2);
    let a = compare_models(&corpus, &pre(), &ModelConfig::default(), &Model2dConfig::default(), &tc, 0.5).unwrap();
    assert_eq!(a.rows.len(), 2);
    assert_eq!(a.rows[0].values().len(), 5);
    let pos: Vec<bool> = a.val_labels.iter().map(|&l| l == 1).collect();
    for r in &a.rows {
        let m = Metrics::from_scores(&r.scores, &pos, a.threshold).unwrap();
        let again = [m.accuracy, m.auc, m.precision, m.recall, m.f1];
        for (x, y) in again.iter().zip(r.values()) {
            assert!((x - y).abs() <= 1e-12);
        }
    }
    let b = compare_models(&corpus, &pre(), &ModelConfig::default(), &Model2dConfig::default(), &tc, 0.5).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

fn scored_items() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(prop_oneof![(0u8..6).prop_map(|k| k as f64 / 5.0), 0.0f64..1.0], n),
            prop::collection::vec(any::<bool>(), n),
        )
    })
    .prop_filter("both classes", |(_, l)| l.iter().any(|&b| b) && l.iter().any(|&b| !b))
}

proptest! {
    #[test]
    fn auc_equals_pairwise_statistic((s, l) in scored_items()) {
        let roc = roc_curve(&s, &l).unwrap();
        prop_assert!((auc_trapezoid(&roc) - mann_whitney(&s, &l)).abs() < 1e-12);
    }

    #[test]
    fn roc_is_monotone((s, l) in scored_items()) {
        let roc = roc_curve(&s, &l).unwrap();
        prop_assert_eq!((roc[0].fpr, roc[0].tpr), (0.0, 0.0));
        prop_assert_eq!((roc.last().unwrap().fpr, roc.last().unwrap().tpr), (1.0, 1.0));
        for w in roc.windows(2) {
            prop_assert!(w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr);
        }
    }

    #[test]
    fn auc_invariant_under_increasing_maps((s, l) in scored_items(), a in 0.1f64..5.0, b in -3.0f64..3.0) {
        let base = Metrics::from_scores(&s, &l, 0.5).unwrap().auc;
        for f in [
            Box::new(|x: f64| a * x + b) as Box<dyn Fn(f64) -> f64>,
            Box::new(|x: f64| (4.0 * x - 2.0).exp()),
            Box::new(|x: f64| x.powi(3) - 7.0),
        ] {
            let t: Vec<f64> = s.iter().map(|&x| f(x)).collect();
            prop_assert_eq!(Metrics::from_scores(&t, &l, 0.5).unwrap().auc, base);
        }
    }

    #[test]
    fn raising_threshold_never_raises_recall((s, l) in scored_items(), t1 in 0.0f64..1.0, t2 in 0.0f64..1.0) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let r_lo = Confusion::at_threshold(&s, &l, lo).recall();
        let r_hi = Confusion::at_threshold(&s, &l, hi).recall();
        prop_assert!(r_hi <= r_lo);
    }

    #[test]
    fn health_index_agrees_with_probability(p in 0.0f64..=1.0) {
        let hi = health_index(p).unwrap().value;
        prop_assert_eq!(p > 0.5, 1.0 - hi > 0.5);
        prop_assert!((0.0..=1.0).contains(&hi));
    }

    #[test]
    fn confusion_metrics_stay_in_range((s, l) in scored_items(), t in 0.0f64..1.0) {
        let m = Metrics::from_scores(&s, &l, t).unwrap();
        let c = m.confusion;
        prop_assert_eq!(c.total(), s.len());
        prop_assert_eq!(m.accuracy, (c.tp + c.tn) as f64 / s.len() as f64);
        for v in [m.accuracy, m.precision, m.recall, m.f1, m.auc] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}
