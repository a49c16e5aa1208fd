mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{gaussian, small_dataset, Mixture};
use sparlow::graphs::{build_pair, evaluate_pair, GraphSpec};
use sparlow::objective::{Objective, SparLowParams};
use sparlow::optimizer::{optimize, CGConfig};
use sparlow::pipeline::data::Dataset;
use sparlow::pipeline::init::init_projection;
use sparlow::pipeline::train::{initialize, train, TrainConfig, TrainMode};
use sparlow::sparse::batch_encode;
use sparlow::{Dictionary, ElasticNetPrior, LabelSet, ProductPoint, Projector, SparlowError, Variant};

fn unlabeled(ds: Dataset) -> Dataset {
    Dataset::new(ds.x, None).unwrap()
}

#[test]
fn pca_training_does_not_decrease_objective() {
    let ds = unlabeled(Mixture::new(10, 3, 1.0, 2, 0.2, 1).sample(50, 2));
    let mut cfg = TrainConfig::new(Variant::Pca, 20, 2);
    cfg.cg.max_iters = 30;
    let out = train(&ds, &cfg).unwrap();
    assert!(out.trace.final_j() >= out.trace.initial_j);
    assert!(out.trace.is_monotone(1e-12));
    assert_eq!(out.model.rank(), 2);
}

#[test]
fn strong_anchor_keeps_dictionary() {
    let ds = small_dataset(15, 3);
    let mut cfg = TrainConfig::new(Variant::Lda, 12, 2);
    cfg.mu2 = 1e6;
    cfg.cg.max_iters = 30;
    let out = train(&ds, &cfg).unwrap();
    let drift = (out.model.dict.matrix() - out.model.params.anchor.matrix()).norm();
    assert!(drift <= 1e-2, "‖D − D*‖ = {drift:e}");
}

#[test]
fn mismatched_labels_are_tagged_with_stage() {
    let ds = small_dataset(10, 4);
    let bad = Dataset {
        x: ds.x.clone(),
        labels: Some(LabelSet::new(vec![0, 1, 2]).unwrap()),
    };
    let err = train(&bad, &TrainConfig::new(Variant::Lda, 12, 2)).unwrap_err();
    match &err {
        SparlowError::Stage { stage, .. } => assert_eq!(*stage, "validate"),
        other => panic!("unexpected error {other}"),
    }
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn rank_must_be_below_atom_count() {
    let ds = small_dataset(10, 4);
    assert!(train(&ds, &TrainConfig::new(Variant::Lda, 4, 4)).is_err());
}

#[test]
fn training_is_deterministic() {
    let ds = small_dataset(12, 5);
    let mut cfg = TrainConfig::new(Variant::Laplacian, 12, 2);
    cfg.cg.max_iters = 10;
    let a = train(&ds, &cfg).unwrap();
    let b = train(&ds, &cfg).unwrap();
    assert_eq!(a.model.dict.matrix(), b.model.dict.matrix());
    assert_eq!(a.model.proj.matrix(), b.model.proj.matrix());
    assert_eq!(a.trace, b.trace);
}

#[test]
fn every_variant_trains_monotonically() {
    for variant in Variant::ALL {
        let ds = small_dataset(12, 6);
        let ds = if variant.is_semi_supervised() {
            let raw: Vec<i64> = ds
                .labels
                .as_ref()
                .unwrap()
                .raw()
                .iter()
                .enumerate()
                .map(|(i, &l)| if i % 4 == 3 { -1 } else { l })
                .collect();
            Dataset::new(ds.x, Some(LabelSet::new(raw).unwrap())).unwrap()
        } else if variant.uses_labels() {
            ds
        } else {
            unlabeled(ds)
        };
        for steepest in [false, true] {
            let mut cfg = TrainConfig::new(variant, 12, 2);
            cfg.graph.k1 = 3;
            cfg.graph.k2 = 5;
            cfg.cg.max_iters = 8;
            cfg.cg.steepest = steepest;
            let out = train(&ds, &cfg).unwrap_or_else(|e| panic!("{variant}: {e}"));
            assert!(out.trace.is_monotone(1e-12), "{variant} steepest={steepest}");
            if steepest {
                assert!(out.trace.records.iter().all(|r| r.beta == 0.0));
            }
        }
    }
}

#[test]
fn frozen_dictionary_reaches_trace_ratio_optimum() {
    let prior = ElasticNetPrior::new(0.2, 1e-3).unwrap();
    for seed in 0..3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ds = small_dataset(10, 20 + seed);
        let d = Dictionary::normalized(gaussian(&mut rng, 10, 6)).unwrap();
        let codes = batch_encode(&ds.x, d.matrix(), &prior).unwrap();
        let pair = build_pair(&GraphSpec::new(Variant::Lda), &ds.x, &codes, ds.labels.as_ref()).unwrap();
        let (a, b) = evaluate_pair(&pair, &codes.codes).unwrap();
        let fit = init_projection(&a, &b, 2, 1e-3).unwrap();
        assert!(fit.is_monotone(0.0));

        let params = SparLowParams::with_defaults(d.clone());
        let obj = Objective::new(&ds.x, &pair, prior, &params)
            .unwrap()
            .with_frozen_codes(&codes);
        let basis = gaussian(&mut rng, 6, 2).qr().q();
        let start = ProductPoint::new(d.clone(), Projector::from_basis(&basis).unwrap()).unwrap();
        let cfg = CGConfig {
            max_iters: 2000,
            grad_tol: 1e-10,
            step_tol: 1e-14,
            ..CGConfig::default()
        };
        let out = optimize(&obj, start, &cfg).unwrap();
        assert!((out.evaluation.report.f_value - fit.value()).abs() <= 1e-6);
        assert!((out.point.dict.matrix() - d.matrix()).abs().max() <= 1e-12);
    }
}

#[test]
fn frozen_mode_keeps_initial_dictionary() {
    let ds = small_dataset(10, 7);
    let mut cfg = TrainConfig::new(Variant::Lda, 12, 2);
    cfg.mode = TrainMode::FrozenDictionary;
    cfg.cg.max_iters = 10;
    let init = initialize(&ds, &cfg).unwrap();
    let out = train(&ds, &cfg).unwrap();
    assert_eq!(out.model.dict.matrix(), init.dictionary_fit.dict.matrix());
    assert!(out.trace.final_j() >= out.trace.initial_j);
}

#[test]
fn degenerate_semi_supervised_pairs_reduce_to_supervised_ones() {
    let prior = ElasticNetPrior::new(0.2, 1e-3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let ds = small_dataset(8, 9);
    let d = Dictionary::normalized(gaussian(&mut rng, 10, 14)).unwrap();
    let codes = batch_encode(&ds.x, d.matrix(), &prior).unwrap();
    let n = ds.len();
    let pair = |spec: GraphSpec| build_pair(&spec, &ds.x, &codes, ds.labels.as_ref()).unwrap();

    let lda = pair(GraphSpec::new(Variant::Lda));
    let mut spec = GraphSpec::new(Variant::Sda);
    spec.alpha = 0.0;
    let sda = pair(spec);
    assert!(
        (sda.numerator.quadratic_part(n) - lda.numerator.quadratic_part(n))
            .abs()
            .max()
            <= 1e-12
    );
    let total = lda.numerator.quadratic_part(n) + lda.denominator.quadratic_part(n);
    assert!((sda.denominator.quadratic_part(n) - total).abs().max() <= 1e-12);

    let mut spec = GraphSpec::new(Variant::Mfa);
    spec.k1 = 2;
    spec.k2 = 4;
    let mfa = pair(spec.clone());
    spec.variant = Variant::Slap;
    spec.alpha1 = 0.0;
    spec.alpha2 = 0.0;
    assert_eq!(pair(spec), mfa);

    let mut spec = GraphSpec::new(Variant::Mvr);
    spec.mu_mvr = 0.25;
    let mvr = pair(spec);
    let mut spec = GraphSpec::new(Variant::Smvr);
    spec.rho1 = 0.25;
    spec.rho2 = 0.0;
    let smvr = pair(spec);
    let phi = gaussian(&mut rng, 14, n);
    let (a1, b1) = evaluate_pair(&mvr, &phi).unwrap();
    let (a2, b2) = evaluate_pair(&smvr, &phi).unwrap();
    assert!((a1 - a2).abs().max() <= 1e-12);
    assert!((b1 - b2).abs().max() <= 1e-12);
}
