//! Compare the orderings of the two objectives on the synthetic corpus.

use structret::corpus::{build_training_set, make_synthetic_corpus};
use structret::encoder::{EncoderConfig, EncoderModel};
use structret::metrics::Metric;
use structret::objectives::{train, Strategy, TrainConfig};
use structret::pipeline::evaluate_model;
use structret::Variant;

fn main() -> structret::Result<()> {
    let synthetic = make_synthetic_corpus(50, 9, 42)?;
    let corpus = synthetic.corpus()?;
    let dataset = build_training_set(&corpus, &synthetic.queries, &synthetic.qrels, 8, 42)?;

    println!("strategy  shared  ndcg@10  mrr@10");
    for strategy in [Strategy::Joint, Strategy::SalThenEal, Strategy::EalThenSal] {
        for shared in [false, true] {
            let config = TrainConfig {
                strategy,
                shared_negatives: shared,
                ..TrainConfig::default()
            };
            let init = EncoderModel::random(&EncoderConfig::default(), config.seed)?;
            let model = train(&dataset, &corpus, init, &config)?.model;
            let r = evaluate_model(&model, &corpus, &synthetic.queries, &synthetic.qrels, Variant::Tagged, 10, &[10])?;
            println!(
                "{:<9} {:<7} {:.4}   {:.4}",
                strategy.name(),
                shared,
                r.get(Metric::Ndcg, 10).unwrap(),
                r.get(Metric::Mrr, 10).unwrap()
            );
        }
    }
    Ok(())
}
