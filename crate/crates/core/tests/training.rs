mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use structret::corpus::{build_training_set, make_synthetic_corpus, Corpus, TrainingExample};
use structret::encoder::{embed, EncoderConfig, EncoderModel, MAX_DOC_TOKENS, MAX_QUERY_TOKENS};
use structret::objectives::{batch_loss, info_nce, objective_loss, sal_loss, train, Objective, Strategy, TrainConfig};
use structret::{Encoder, Error, Variant};

fn small_model(seed: u64) -> EncoderModel {
    EncoderModel::random(
        &EncoderConfig {
            dim: 16,
            vocab_size: 4096,
            ..EncoderConfig::default()
        },
        seed,
    )
    .unwrap()
}

fn tiny_dataset() -> (Corpus, Vec<TrainingExample>) {
    let s = make_synthetic_corpus(2, 4, 1).unwrap();
    let corpus = s.corpus().unwrap();
    let data = build_training_set(&corpus, &s.queries, &s.qrels, 4, 1).unwrap();
    (corpus, data)
}

#[test]
fn loss_descends_on_a_tiny_dataset() {
    let (corpus, data) = tiny_dataset();
    assert_eq!(data.len(), 2);
    let config = TrainConfig {
        strategy: Strategy::Joint,
        epochs_per_stage: 5,
        learning_rate: 0.1,
        seed: 3,
        ..TrainConfig::default()
    };
    let out = train(&data, &corpus, small_model(3), &config).unwrap();
    assert_eq!(out.curve.len(), 10);
    let first = out.curve[0].mean_loss;
    let last = out.curve[9].mean_loss;
    assert!(last < first, "{first} -> {last}");
}

#[test]
fn training_is_reproducible() {
    let (corpus, data) = tiny_dataset();
    let config = TrainConfig {
        shared_negatives: true,
        batch_size: 2,
        ..TrainConfig::default()
    };
    let a = train(&data, &corpus, small_model(1), &config).unwrap();
    let b = train(&data, &corpus, small_model(1), &config).unwrap();
    assert_eq!(a.curve, b.curve);
    assert_eq!(a.model.fingerprint(), b.model.fingerprint());

    let other = TrainConfig { seed: 43, ..config };
    let c = train(&data, &corpus, small_model(1), &other).unwrap();
    assert_ne!(a.model.fingerprint(), c.model.fingerprint());
}

#[test]
fn every_strategy_trains() {
    let (corpus, data) = tiny_dataset();
    for strategy in [Strategy::Joint, Strategy::SalThenEal, Strategy::EalThenSal, Strategy::Plain] {
        let config = TrainConfig {
            strategy,
            epochs_per_stage: 1,
            ..TrainConfig::default()
        };
        let out = train(&data, &corpus, small_model(2), &config).unwrap();
        assert_eq!(out.curve.len(), 2, "{strategy}");
        assert!(out.curve.iter().all(|e| e.mean_loss.is_finite() && e.mean_loss >= 0.0));
    }
}

#[test]
fn untagged_positive_contributes_to_sal() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (corpus, example) = common::random_example(&mut rng, 9, 8);
    let mut model = small_model(5);
    model.tag_logits_mut()[2 * 3] = 0.8;
    let full = sal_loss(&example, &corpus, &model, None).unwrap().report.loss_value;

    let vec_of = |text: String| embed(&model.tokenize(&text, MAX_DOC_TOKENS), &model);
    let doc = |id: &str| corpus.require(id).unwrap();
    let q = embed(&model.tokenize(&example.query_text, MAX_QUERY_TOKENS), &model);
    let tagged_pos = vec_of(Variant::Tagged.render(doc(&example.pos_doc_id)));
    let negs: Vec<Vec<f64>> = example
        .neg_doc_ids
        .iter()
        .flat_map(|id| [vec_of(Variant::Tagged.render(doc(id))), vec_of(Variant::Untagged.render(doc(id)))])
        .collect();
    let neg_refs: Vec<&[f64]> = negs.iter().map(Vec::as_slice).collect();
    let tagged_only = info_nce(&q, &[&tagged_pos], &neg_refs, 1.0).unwrap().report.loss_value;
    assert!((full - tagged_only).abs() > 1e-9, "{full} vs {tagged_only}");
}

#[test]
fn shared_negatives_skip_the_own_positive() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (corpus, mut a) = common::random_example(&mut rng, 6, 2);
    let mut b = a.clone();
    a.neg_doc_ids = vec!["d1".into(), "d2".into()];
    b.query_id = "q2".into();
    b.neg_doc_ids = vec!["d3".into(), "d4".into()];
    let model = small_model(6);
    let objective = Objective::Contrastive(Variant::Tagged);
    let (losses, _) = batch_loss(&[&a, &b], &corpus, &model, &objective, 0, 8, true).unwrap();

    // b's positive is a's positive, so only b's negatives are shared with a
    let shared: Vec<Vec<f64>> = ["d3", "d4"]
        .iter()
        .map(|id| embed(&model.tokenize(&render(&corpus, id), MAX_DOC_TOKENS), &model))
        .collect();
    let direct = objective_loss(&a, &corpus, &model, &objective, 0, Some(&shared)).unwrap();
    assert_eq!(direct.report.n_candidates, 5);
    assert!((losses[0] - direct.report.loss_value).abs() < 1e-12);

    let (unshared, _) = batch_loss(&[&a, &b], &corpus, &model, &objective, 0, 8, false).unwrap();
    assert!(unshared[0] < losses[0]);
}

fn render(corpus: &Corpus, id: &str) -> String {
    Variant::Tagged.render(corpus.require(id).unwrap())
}

#[test]
fn exploding_updates_abort_with_the_query_id() {
    let (corpus, data) = tiny_dataset();
    let config = TrainConfig {
        learning_rate: 1e300,
        batch_size: 1,
        ..TrainConfig::default()
    };
    match train(&data, &corpus, small_model(1), &config) {
        Err(Error::NonFiniteLoss(id)) => assert!(data.iter().any(|e| e.query_id == id)),
        other => panic!("expected NonFiniteLoss, got {:?}", other.map(|o| o.curve)),
    }
}

#[test]
fn bad_configs_are_rejected() {
    let (corpus, data) = tiny_dataset();
    let model = small_model(1);
    for config in [
        TrainConfig { batch_size: 0, ..TrainConfig::default() },
        TrainConfig { mask_ratio: 1.5, ..TrainConfig::default() },
        TrainConfig { epochs_per_stage: 0, ..TrainConfig::default() },
        TrainConfig { temperature: 0.0, ..TrainConfig::default() },
    ] {
        assert!(matches!(train(&data, &corpus, model.clone(), &config), Err(Error::InvalidConfig(_))));
    }
    assert!(train(&[], &corpus, model, &TrainConfig::default()).is_err());
}
