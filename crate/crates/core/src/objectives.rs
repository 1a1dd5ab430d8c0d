//! Contrastive objectives and the training loop.
//!
//! All objectives reduce to InfoNCE over a candidate set built from
//! different renderings of the positive and negative documents:
//!
//! * structure-aware (SAL): the tagged and the untagged rendering of the
//!   positive are both positives; tagged and untagged renderings of every
//!   negative form one pooled negative set. The two positive terms are
//!   averaged.
//! * element-aware (EAL): every document is rendered with the tags of a
//!   random fraction of its elements removed, re-drawn each epoch.
//! * plain contrastive over a single rendering, used as the baseline.
//!
//! Gradients are exact and analytic. Per-example work may run in parallel,
//! but reductions always sum in example order, so a fixed seed reproduces a
//! run bit for bit.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{plan_mask, Corpus, MaskPlan, TrainingExample};
use crate::encoder::{dot, encode, Encoder, EncoderModel, Encoding, Gradients, MAX_DOC_TOKENS, MAX_QUERY_TOKENS};
use crate::error::{Error, Result};
use crate::rng::{keyed_rng, Domain};
use crate::structml::{render_masked, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub loss_value: f64,
    pub gradient_norm: f64,
    pub n_candidates: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfoNceOutput {
    pub report: LossReport,
    pub grad_query: Vec<f64>,
    pub grad_positives: Vec<Vec<f64>>,
    pub grad_negatives: Vec<Vec<f64>>,
}

/// Mean over positives of `-log(e^{s+} / (e^{s+} + sum e^{s-}))` with
/// `s = <q, d> / temperature`.
///
/// `report.gradient_norm` is the norm of the gradient with respect to all
/// input vectors.
pub fn info_nce(query: &[f64], positives: &[&[f64]], negatives: &[&[f64]], temperature: f64) -> Result<InfoNceOutput> {
    if positives.is_empty() {
        return Err(Error::EmptyPositives);
    }
    let dim = query.len();
    for v in positives.iter().chain(negatives) {
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: v.len(),
            });
        }
    }
    let pos_scores: Vec<f64> = positives.iter().map(|p| dot(query, p) / temperature).collect();
    let neg_scores: Vec<f64> = negatives.iter().map(|n| dot(query, n) / temperature).collect();
    let neg_max = neg_scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let n_pos = positives.len() as f64;
    let mut loss = 0.0;
    // d loss / d score
    let mut d_pos = vec![0.0; positives.len()];
    let mut d_neg = vec![0.0; negatives.len()];
    for (i, &sp) in pos_scores.iter().enumerate() {
        let m = sp.max(neg_max);
        let e_pos = (sp - m).exp();
        let e_negs: Vec<f64> = neg_scores.iter().map(|&s| (s - m).exp()).collect();
        let z = e_pos + e_negs.iter().sum::<f64>();
        // rounding can dip below zero; NaN must survive for the caller to see
        let term = m + z.ln() - sp;
        loss += if term < 0.0 { 0.0 } else { term };
        d_pos[i] += (e_pos / z - 1.0) / n_pos;
        for (d, e) in d_neg.iter_mut().zip(&e_negs) {
            *d += e / z / n_pos;
        }
    }
    loss /= n_pos;

    let mut grad_query = vec![0.0; dim];
    let scale = |d: f64, v: &[f64]| v.iter().map(|x| d * x / temperature).collect::<Vec<_>>();
    for (d, v) in d_pos.iter().zip(positives).chain(d_neg.iter().zip(negatives)) {
        for (g, x) in grad_query.iter_mut().zip(v.iter()) {
            *g += d * x / temperature;
        }
    }
    let grad_positives: Vec<Vec<f64>> = d_pos.iter().map(|&d| scale(d, query)).collect();
    let grad_negatives: Vec<Vec<f64>> = d_neg.iter().map(|&d| scale(d, query)).collect();
    let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
    let gradient_norm = (sq(&grad_query)
        + grad_positives.iter().map(|g| sq(g)).sum::<f64>()
        + grad_negatives.iter().map(|g| sq(g)).sum::<f64>())
    .sqrt();

    Ok(InfoNceOutput {
        report: LossReport {
            loss_value: loss,
            gradient_norm,
            n_candidates: positives.len() + negatives.len(),
        },
        grad_query,
        grad_positives,
        grad_negatives,
    })
}

/// Which loss a training step optimizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    Sal,
    Eal(MaskPlan),
    /// Plain InfoNCE over one rendering.
    Contrastive(Variant),
}

impl Objective {
    pub fn name(&self) -> &'static str {
        match self {
            Objective::Sal => "sal",
            Objective::Eal(_) => "eal",
            Objective::Contrastive(Variant::Tagged) => "contrastive-tagged",
            Objective::Contrastive(Variant::Untagged) => "contrastive-untagged",
        }
    }
}

struct Candidate {
    doc_id: String,
    encoding: Encoding,
}

/// Encoded query plus the positive and negative candidates of one example.
struct ExampleView {
    query: Encoding,
    positives: Vec<Candidate>,
    negatives: Vec<Candidate>,
}

fn encode_doc<E: Encoder + ?Sized>(model: &E, doc_id: &str, text: &str) -> Candidate {
    Candidate {
        doc_id: doc_id.to_string(),
        encoding: encode(model, &model.tokenize(text, MAX_DOC_TOKENS)),
    }
}

fn renderings(corpus: &Corpus, doc_id: &str, objective: &Objective, epoch: u64) -> Result<Vec<String>> {
    let doc = corpus.require(doc_id)?;
    Ok(match objective {
        Objective::Sal => vec![Variant::Tagged.render(doc), Variant::Untagged.render(doc)],
        Objective::Eal(plan) => vec![render_masked(doc, &plan_mask(doc, plan, epoch))?],
        Objective::Contrastive(v) => vec![v.render(doc)],
    })
}

fn build_view<E: Encoder + ?Sized>(
    example: &TrainingExample,
    negatives: usize,
    corpus: &Corpus,
    model: &E,
    objective: &Objective,
    epoch: u64,
) -> Result<ExampleView> {
    let query = encode(model, &model.tokenize(&example.query_text, MAX_QUERY_TOKENS));
    let positives = renderings(corpus, &example.pos_doc_id, objective, epoch)?
        .iter()
        .map(|t| encode_doc(model, &example.pos_doc_id, t))
        .collect();
    let mut negs = Vec::new();
    for id in example.neg_doc_ids.iter().take(negatives) {
        for t in renderings(corpus, id, objective, epoch)? {
            negs.push(encode_doc(model, id, &t));
        }
    }
    Ok(ExampleView {
        query,
        positives,
        negatives: negs,
    })
}

/// Loss of one example plus its parameter gradient.
#[derive(Debug, Clone)]
pub struct ObjectiveOutput {
    /// `gradient_norm` is the norm of the parameter gradient.
    pub report: LossReport,
    pub gradients: Gradients,
    /// Gradient with respect to each supplied shared negative vector.
    pub shared_grads: Vec<Vec<f64>>,
}

/// Evaluates `objective` on one example. `shared_negs` are extra negative
/// vectors (e.g. from other examples of a batch) treated as constants.
pub fn objective_loss<E: Encoder + ?Sized>(
    example: &TrainingExample,
    corpus: &Corpus,
    model: &E,
    objective: &Objective,
    epoch: u64,
    shared_negs: Option<&[Vec<f64>]>,
) -> Result<ObjectiveOutput> {
    let view = build_view(example, usize::MAX, corpus, model, objective, epoch)?;
    let pos: Vec<&[f64]> = view.positives.iter().map(|c| c.encoding.vector.as_slice()).collect();
    let mut negs: Vec<&[f64]> = view.negatives.iter().map(|c| c.encoding.vector.as_slice()).collect();
    let n_own = negs.len();
    if let Some(shared) = shared_negs {
        negs.extend(shared.iter().map(Vec::as_slice));
    }
    let out = info_nce(&view.query.vector, &pos, &negs, model.temperature())?;
    let mut gradients = Gradients::new();
    view.query.backward(model, &out.grad_query, &mut gradients);
    for (c, g) in view.positives.iter().zip(&out.grad_positives) {
        c.encoding.backward(model, g, &mut gradients);
    }
    for (c, g) in view.negatives.iter().zip(&out.grad_negatives) {
        c.encoding.backward(model, g, &mut gradients);
    }
    Ok(ObjectiveOutput {
        report: LossReport {
            gradient_norm: gradients.norm(),
            ..out.report
        },
        gradients,
        shared_grads: out.grad_negatives[n_own..].to_vec(),
    })
}

/// Structure-aware loss: tagged and untagged positive against the pooled
/// tagged and untagged negatives.
pub fn sal_loss<E: Encoder + ?Sized>(
    example: &TrainingExample,
    corpus: &Corpus,
    model: &E,
    shared_negs: Option<&[Vec<f64>]>,
) -> Result<ObjectiveOutput> {
    objective_loss(example, corpus, model, &Objective::Sal, 0, shared_negs)
}

/// Element-aware loss over masked renderings drawn for `epoch`.
pub fn eal_loss<E: Encoder + ?Sized>(
    example: &TrainingExample,
    corpus: &Corpus,
    model: &E,
    plan: &MaskPlan,
    epoch: u64,
    shared_negs: Option<&[Vec<f64>]>,
) -> Result<ObjectiveOutput> {
    objective_loss(example, corpus, model, &Objective::Eal(*plan), epoch, shared_negs)
}

/// Plain InfoNCE over a single rendering of every document.
pub fn contrastive_loss<E: Encoder + ?Sized>(
    example: &TrainingExample,
    corpus: &Corpus,
    model: &E,
    variant: Variant,
    shared_negs: Option<&[Vec<f64>]>,
) -> Result<ObjectiveOutput> {
    objective_loss(example, corpus, model, &Objective::Contrastive(variant), 0, shared_negs)
}

/// Mean loss over a batch and the gradient of that mean.
///
/// With `shared_negatives`, each example additionally contrasts against the
/// positive and negative candidates of every other example in the batch,
/// except renderings of its own positive document.
pub fn batch_loss<E: Encoder + ?Sized>(
    batch: &[&TrainingExample],
    corpus: &Corpus,
    model: &E,
    objective: &Objective,
    epoch: u64,
    negatives: usize,
    shared_negatives: bool,
) -> Result<(Vec<f64>, Gradients)> {
    let views = batch
        .par_iter()
        .map(|ex| build_view(ex, negatives, corpus, model, objective, epoch))
        .collect::<Result<Vec<_>>>()?;
    let scale = 1.0 / batch.len() as f64;
    let dim = model.dim();

    // d (mean loss) / d vector, per view: query, positives, negatives
    let mut vgrads: Vec<(Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>)> = views
        .iter()
        .map(|v| {
            (
                vec![0.0; dim],
                vec![vec![0.0; dim]; v.positives.len()],
                vec![vec![0.0; dim]; v.negatives.len()],
            )
        })
        .collect();
    let mut losses = Vec::with_capacity(batch.len());

    for (i, (example, view)) in batch.iter().zip(&views).enumerate() {
        let pos: Vec<&[f64]> = view.positives.iter().map(|c| c.encoding.vector.as_slice()).collect();
        let mut negs: Vec<&[f64]> = view.negatives.iter().map(|c| c.encoding.vector.as_slice()).collect();
        // (view, is_positive, candidate) of each shared negative
        let mut shared_slots = Vec::new();
        if shared_negatives {
            for (j, other) in views.iter().enumerate() {
                if j == i {
                    continue;
                }
                let cands = other.positives.iter().map(|c| (true, c)).chain(other.negatives.iter().map(|c| (false, c)));
                let mut counters = (0usize, 0usize);
                for (is_pos, c) in cands {
                    let slot = if is_pos { &mut counters.0 } else { &mut counters.1 };
                    let idx = *slot;
                    *slot += 1;
                    if c.doc_id == example.pos_doc_id {
                        continue;
                    }
                    negs.push(c.encoding.vector.as_slice());
                    shared_slots.push((j, is_pos, idx));
                }
            }
        }
        let out = info_nce(&view.query.vector, &pos, &negs, model.temperature())?;
        if !out.report.loss_value.is_finite() {
            return Err(Error::NonFiniteLoss(example.query_id.clone()));
        }
        losses.push(out.report.loss_value);

        let n_own = view.negatives.len();
        add_scaled(&mut vgrads[i].0, &out.grad_query, scale);
        for (k, g) in out.grad_positives.iter().enumerate() {
            add_scaled(&mut vgrads[i].1[k], g, scale);
        }
        for (k, g) in out.grad_negatives[..n_own].iter().enumerate() {
            add_scaled(&mut vgrads[i].2[k], g, scale);
        }
        for (&(j, is_pos, idx), g) in shared_slots.iter().zip(&out.grad_negatives[n_own..]) {
            let target = if is_pos { &mut vgrads[j].1[idx] } else { &mut vgrads[j].2[idx] };
            add_scaled(target, g, scale);
        }
    }

    let per_view: Vec<Gradients> = views
        .par_iter()
        .zip(&vgrads)
        .map(|(view, (gq, gp, gn))| {
            let mut g = Gradients::new();
            view.query.backward(model, gq, &mut g);
            for (c, grad) in view.positives.iter().zip(gp) {
                c.encoding.backward(model, grad, &mut g);
            }
            for (c, grad) in view.negatives.iter().zip(gn) {
                c.encoding.backward(model, grad, &mut g);
            }
            g
        })
        .collect();
    let mut total = Gradients::new();
    for g in &per_view {
        total.merge_scaled(g, 1.0);
    }
    Ok((losses, total))
}

fn add_scaled(target: &mut [f64], g: &[f64], scale: f64) {
    for (t, x) in target.iter_mut().zip(g) {
        *t += scale * x;
    }
}

/// Adam over the embedding table and the tag pooling logits.
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: i32,
    m: Vec<f32>,
    v: Vec<f32>,
    m_tags: Vec<f64>,
    v_tags: Vec<f64>,
    dense: Vec<f64>,
}

impl Adam {
    pub fn new(model: &EncoderModel, learning_rate: f64) -> Self {
        let n = model.table().len();
        let t = model.tag_logits().len();
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
            m_tags: vec![0.0; t],
            v_tags: vec![0.0; t],
            dense: vec![0.0; n],
        }
    }

    /// Clears moments and the step counter.
    pub fn reset(&mut self) {
        self.step = 0;
        self.m.iter_mut().for_each(|x| *x = 0.0);
        self.v.iter_mut().for_each(|x| *x = 0.0);
        self.m_tags.iter_mut().for_each(|x| *x = 0.0);
        self.v_tags.iter_mut().for_each(|x| *x = 0.0);
    }

    pub fn step(&mut self, model: &mut EncoderModel, grads: &Gradients) {
        self.step += 1;
        let dim = model.dim();
        let (b1, b2) = (self.beta1, self.beta2);
        let bc1 = 1.0 - b1.powi(self.step);
        let bc2 = 1.0 - b2.powi(self.step);
        let lr = self.learning_rate;
        let eps = self.epsilon;

        for (&id, g) in &grads.rows {
            let start = id as usize * dim;
            self.dense[start..start + dim].copy_from_slice(g);
        }
        let update = |p: &mut f32, m: &mut f32, v: &mut f32, g: f64| {
            if g == 0.0 && *m == 0.0 && *v == 0.0 {
                return;
            }
            let mm = b1 * f64::from(*m) + (1.0 - b1) * g;
            let vv = b2 * f64::from(*v) + (1.0 - b2) * g * g;
            *m = mm as f32;
            *v = vv as f32;
            let step = lr * (mm / bc1) / ((vv / bc2).sqrt() + eps);
            *p = (f64::from(*p) - step) as f32;
        };
        self.m
            .par_iter_mut()
            .zip(self.v.par_iter_mut())
            .zip(model.table_mut().par_iter_mut())
            .zip(self.dense.par_iter())
            .for_each(|(((m, v), p), &g)| update(p, m, v, g));
        for &id in grads.rows.keys() {
            let start = id as usize * dim;
            self.dense[start..start + dim].iter_mut().for_each(|x| *x = 0.0);
        }

        let tags = model.tag_logits_mut();
        for (slot, p) in tags.iter_mut().enumerate() {
            let g = grads.tag_logits.get(&(slot as u32)).copied().unwrap_or(0.0);
            let (m, v) = (&mut self.m_tags[slot], &mut self.v_tags[slot]);
            if g == 0.0 && *m == 0.0 && *v == 0.0 {
                continue;
            }
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let step = lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
            *p = (f64::from(*p) - step) as f32;
        }
    }
}

/// Order in which the objectives are optimized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    /// SAL + EAL summed at every step.
    #[serde(rename = "joint")]
    Joint,
    #[serde(rename = "sal-eal")]
    SalThenEal,
    #[serde(rename = "eal-sal")]
    EalThenSal,
    /// Structure-blind baseline: plain InfoNCE on untagged renderings.
    #[serde(rename = "plain")]
    Plain,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Joint => "joint",
            Strategy::SalThenEal => "sal-eal",
            Strategy::EalThenSal => "eal-sal",
            Strategy::Plain => "plain",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "joint" => Ok(Strategy::Joint),
            "sal-eal" | "sal-then-eal" => Ok(Strategy::SalThenEal),
            "eal-sal" | "eal-then-sal" => Ok(Strategy::EalThenSal),
            "plain" => Ok(Strategy::Plain),
            other => Err(format!(
                "unknown strategy `{other}` (expected joint|sal-eal|eal-sal|plain)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub strategy: Strategy,
    pub epochs_per_stage: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub mask_ratio: f64,
    pub negatives: usize,
    pub shared_negatives: bool,
    pub seed: u64,
    pub temperature: f32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::EalThenSal,
            epochs_per_stage: 2,
            learning_rate: 1e-2,
            batch_size: 8,
            mask_ratio: 0.10,
            negatives: 8,
            shared_negatives: false,
            seed: 42,
            temperature: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.epochs_per_stage == 0 {
            return bad("epochs_per_stage must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.mask_ratio) {
            return bad(format!("mask ratio {} outside [0, 1]", self.mask_ratio));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad(format!("learning rate {} must be non-negative", self.learning_rate));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return bad(format!("temperature {} must be positive", self.temperature));
        }
        Ok(())
    }

    /// Stages as `(label, objectives summed per step, epochs)`. Every
    /// strategy runs `2 * epochs_per_stage` epochs in total.
    pub fn stages(&self) -> Vec<(&'static str, Vec<Objective>, usize)> {
        let plan = MaskPlan {
            seed: self.seed,
            ratio: self.mask_ratio,
        };
        let e = self.epochs_per_stage;
        match self.strategy {
            Strategy::Joint => vec![("joint", vec![Objective::Sal, Objective::Eal(plan)], 2 * e)],
            Strategy::SalThenEal => vec![
                ("sal", vec![Objective::Sal], e),
                ("eal", vec![Objective::Eal(plan)], e),
            ],
            Strategy::EalThenSal => vec![
                ("eal", vec![Objective::Eal(plan)], e),
                ("sal", vec![Objective::Sal], e),
            ],
            Strategy::Plain => vec![(
                "plain",
                vec![Objective::Contrastive(Variant::Untagged)],
                2 * e,
            )],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    /// 1-based across all stages.
    pub epoch: usize,
    pub stage: String,
    pub mean_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: EncoderModel,
    pub curve: Vec<EpochLoss>,
}

/// One line per epoch: `epoch<TAB>stage<TAB>mean_loss`.
pub fn format_loss_curve(curve: &[EpochLoss]) -> String {
    curve
        .iter()
        .map(|e| format!("{}\t{}\t{:.9}\n", e.epoch, e.stage, e.mean_loss))
        .collect()
}

/// Trains `model` on `dataset`. The optimizer state is reset between stages
/// while the weights carry over.
pub fn train(dataset: &[TrainingExample], corpus: &Corpus, mut model: EncoderModel, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidConfig("training set is empty".into()));
    }
    model.set_temperature(config.temperature)?;
    let mut adam = Adam::new(&model, config.learning_rate);
    let mut curve = Vec::new();
    let mut epoch = 0u64;

    for (stage, objectives, epochs) in config.stages() {
        adam.reset();
        for _ in 0..epochs {
            let mut order: Vec<usize> = (0..dataset.len()).collect();
            order.shuffle(&mut keyed_rng(Domain::Shuffle, config.seed, 0, epoch));
            // summed in dataset order so the value does not depend on the shuffle
            let mut per_example = vec![0.0; dataset.len()];
            for chunk in order.chunks(config.batch_size) {
                let batch: Vec<&TrainingExample> = chunk.iter().map(|&i| &dataset[i]).collect();
                let mut grads = Gradients::new();
                for objective in &objectives {
                    let (losses, g) = batch_loss(
                        &batch,
                        corpus,
                        &model,
                        objective,
                        epoch,
                        config.negatives,
                        config.shared_negatives,
                    )?;
                    for (&i, l) in chunk.iter().zip(&losses) {
                        per_example[i] += l;
                    }
                    grads.merge_scaled(&g, 1.0);
                }
                adam.step(&mut model, &grads);
            }
            epoch += 1;
            curve.push(EpochLoss {
                epoch: epoch as usize,
                stage: stage.to_string(),
                mean_loss: per_example.iter().sum::<f64>() / dataset.len() as f64,
            });
        }
    }
    Ok(TrainOutcome { model, curve })
}
