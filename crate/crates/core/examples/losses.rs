//! The contrastive losses on a single example: InfoNCE, the dual-rendering
//! loss and the masked-element loss at a few ratios.

use structret::corpus::{build_training_set, make_synthetic_corpus, MaskPlan};
use structret::encoder::{EncoderConfig, EncoderModel};
use structret::objectives::{contrastive_loss, eal_loss, info_nce, sal_loss};
use structret::Variant;

fn main() -> structret::Result<()> {
    let q = [1.0, 0.0];
    let out = info_nce(&q, &[&[2.0, 0.0]], &[&[0.0, 1.0]], 1.0)?;
    println!("info_nce(s+ = 2, s- = 0) = {:.6}  (ln(1 + e^-2) = {:.6})", out.report.loss_value, (1.0 + (-2f64).exp()).ln());
    println!("  d/dq = {:?}", out.grad_query);

    let synthetic = make_synthetic_corpus(5, 9, 1)?;
    let corpus = synthetic.corpus()?;
    let example = &build_training_set(&corpus, &synthetic.queries, &synthetic.qrels, 8, 1)?[0];
    let model = EncoderModel::random(&EncoderConfig::default(), 7)?;

    let sal = sal_loss(example, &corpus, &model, None)?;
    println!(
        "\nsal: loss {:.4} over {} candidates, |grad| {:.4}",
        sal.report.loss_value, sal.report.n_candidates, sal.report.gradient_norm
    );
    for variant in [Variant::Tagged, Variant::Untagged] {
        let l = contrastive_loss(example, &corpus, &model, variant, None)?;
        println!("{variant} only: {:.4}", l.report.loss_value);
    }
    for ratio in [0.0, 0.1, 0.5, 1.0] {
        let l = eal_loss(example, &corpus, &model, &MaskPlan::new(42, ratio)?, 0, None)?;
        println!("eal at ratio {ratio}: {:.4}", l.report.loss_value);
    }
    Ok(())
}
