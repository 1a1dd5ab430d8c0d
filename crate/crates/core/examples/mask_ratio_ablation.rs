//! Sweep the element mask ratio and print one row per ratio.

use structret::corpus::{build_training_set, make_synthetic_corpus};
use structret::encoder::EncoderConfig;
use structret::objectives::TrainConfig;
use structret::pipeline::{ablate_mask_ratio, format_ablation_tsv};

fn main() -> structret::Result<()> {
    let synthetic = make_synthetic_corpus(50, 9, 42)?;
    let corpus = synthetic.corpus()?;
    let dataset = build_training_set(&corpus, &synthetic.queries, &synthetic.qrels, 8, 42)?;
    let results = ablate_mask_ratio(
        &dataset,
        &corpus,
        &synthetic.queries,
        &synthetic.qrels,
        &[0.01, 0.05, 0.1, 0.3, 0.5],
        &EncoderConfig::default(),
        &TrainConfig::default(),
    );
    let rows = results.into_iter().map(|(_, r)| r).collect::<structret::Result<Vec<_>>>()?;
    print!("{}", format_ablation_tsv(&rows));
    Ok(())
}
