//! Train-then-evaluate flows shared by the command line and the examples.

use std::fmt::Write as _;

use crate::corpus::{Corpus, Query, TrainingExample};
use crate::encoder::{EncoderConfig, EncoderModel};
use crate::error::Result;
use crate::metrics::{evaluate_run, Metric, MetricReport, Qrels};
use crate::objectives::{train, TrainConfig};
use crate::retrieval::{build_index, search_all};
use crate::structml::Variant;

/// Indexes `corpus` with `variant`, runs every query and scores the run.
pub fn evaluate_model(
    model: &EncoderModel,
    corpus: &Corpus,
    queries: &[Query],
    qrels: &Qrels,
    variant: Variant,
    k: usize,
    cutoffs: &[usize],
) -> Result<MetricReport> {
    let index = build_index(corpus, model, variant)?;
    let run = search_all(queries, &index, model, k)?;
    evaluate_run(&run, qrels, cutoffs, false)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AblationRow {
    pub ratio: f64,
    pub hitrate_at_5: f64,
    pub mrr_at_10: f64,
    pub ndcg_at_10: f64,
}

/// Trains one model per mask ratio, every one from the same initial weights,
/// and scores each on a tagged index. A failing ratio does not stop the
/// others.
pub fn ablate_mask_ratio(
    dataset: &[TrainingExample],
    corpus: &Corpus,
    queries: &[Query],
    qrels: &Qrels,
    ratios: &[f64],
    encoder: &EncoderConfig,
    config: &TrainConfig,
) -> Vec<(f64, Result<AblationRow>)> {
    ratios
        .iter()
        .map(|&ratio| {
            let row = (|| {
                let config = TrainConfig {
                    mask_ratio: ratio,
                    ..config.clone()
                };
                let init = EncoderModel::random(encoder, config.seed)?;
                let trained = train(dataset, corpus, init, &config)?.model;
                let report = evaluate_model(&trained, corpus, queries, qrels, Variant::Tagged, 10, &[5, 10])?;
                let get = |m, k| report.get(m, k).unwrap_or(0.0);
                Ok(AblationRow {
                    ratio,
                    hitrate_at_5: get(Metric::HitRate, 5),
                    mrr_at_10: get(Metric::Mrr, 10),
                    ndcg_at_10: get(Metric::Ndcg, 10),
                })
            })();
            (ratio, row)
        })
        .collect()
}

pub const ABLATION_HEADER: &str = "ratio\thitrate@5\tmrr@10\tndcg@10";

pub fn format_ablation_tsv(rows: &[AblationRow]) -> String {
    let mut out = format!("{ABLATION_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{}\t{:.6}\t{:.6}\t{:.6}",
            r.ratio, r.hitrate_at_5, r.mrr_at_10, r.ndcg_at_10
        );
    }
    out
}
