//! Train the structure-aware encoder and a structure-blind baseline from the
//! same initial weights, then index, search and score both.

use structret::corpus::{build_training_set, make_synthetic_corpus};
use structret::encoder::{EncoderConfig, EncoderModel};
use structret::metrics::evaluate_run;
use structret::objectives::{train, Strategy, TrainConfig};
use structret::retrieval::{build_index, search, search_all};
use structret::Variant;

fn main() -> structret::Result<()> {
    let synthetic = make_synthetic_corpus(50, 9, 42)?;
    let corpus = synthetic.corpus()?;
    let dataset = build_training_set(&corpus, &synthetic.queries, &synthetic.qrels, 8, 42)?;
    let init = EncoderModel::random(&EncoderConfig::default(), 1)?;

    for (strategy, variant) in [(Strategy::EalThenSal, Variant::Tagged), (Strategy::Plain, Variant::Untagged)] {
        let config = TrainConfig {
            strategy,
            seed: 1,
            ..TrainConfig::default()
        };
        let outcome = train(&dataset, &corpus, init.clone(), &config)?;
        let curve: Vec<String> = outcome.curve.iter().map(|e| format!("{}:{:.3}", e.stage, e.mean_loss)).collect();
        println!("{strategy}: {}", curve.join(" "));

        let index = build_index(&corpus, &outcome.model, variant)?;
        let run = search_all(&synthetic.queries, &index, &outcome.model, 10)?;
        print!("{}", evaluate_run(&run, &synthetic.qrels, &[1, 10], false)?.to_table());

        let q = &synthetic.queries[0];
        let top = search(&q.text, &index, &outcome.model, 3)?;
        println!("top 3 for `{}`: {top:?}\n", q.text);

        if strategy == Strategy::EalThenSal {
            let m = &outcome.model;
            for tag in ["title", "h1", "h2", "p", "li"] {
                print!("{tag}={:.2} ", m.tag_weight(tag).unwrap());
            }
            println!("(learned pooling weights)\n");
        }
    }
    Ok(())
}
