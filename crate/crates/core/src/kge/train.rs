//! Mini-batch SGD training for the complex embedding model.
//!
//! Binary logistic loss over observed triples plus uniformly sampled
//! corruptions (head or tail replaced with probability 0.5 each), with L2
//! regularization on the embedding rows touched by each sample. Training is
//! single-threaded and fully determined by the seed.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, Triple};
use crate::kge::ComplExModel;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub dim: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub negatives_per_positive: usize,
    pub l2_weight: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 100,
            learning_rate: 0.05,
            epochs: 200,
            negatives_per_positive: 5,
            l2_weight: 1e-3,
            batch_size: 128,
            seed: 42,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.dim == 0
            || self.epochs == 0
            || self.negatives_per_positive == 0
            || self.batch_size == 0
            || self.learning_rate <= 0.0
            || self.l2_weight < 0.0
        {
            return Err(Error::InvalidInput(
                "train config values must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ComplExModel,
    /// Mean per-sample loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

/// One labeled training sample: the triple and +1.0 (observed) or -1.0
/// (corrupted).
pub type TrainSample = (Triple, f64);

/// Dense gradient accumulator with the same layout as the model tables.
#[derive(Debug, Clone)]
pub struct GradientBuffer {
    pub ent_re: Vec<f64>,
    pub ent_im: Vec<f64>,
    pub rel_re: Vec<f64>,
    pub rel_im: Vec<f64>,
}

impl GradientBuffer {
    fn zeroed_like(model: &ComplExModel) -> Self {
        GradientBuffer {
            ent_re: vec![0.0; model.ent_re.len()],
            ent_im: vec![0.0; model.ent_im.len()],
            rel_re: vec![0.0; model.rel_re.len()],
            rel_im: vec![0.0; model.rel_im.len()],
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(
            self.ent_re.len() + self.ent_im.len() + self.rel_re.len() + self.rel_im.len(),
        );
        out.extend_from_slice(&self.ent_re);
        out.extend_from_slice(&self.ent_im);
        out.extend_from_slice(&self.rel_re);
        out.extend_from_slice(&self.rel_im);
        out
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Total loss and gradient, summed over a fixed list of labeled samples.
///
/// Per sample: `softplus(-y * score)` plus `l2 * (|e_h|^2 + |w_r|^2 + |e_t|^2)`
/// on the rows the sample touches.
pub fn loss_and_grad(
    model: &ComplExModel,
    samples: &[TrainSample],
    l2: f64,
) -> Result<(f64, GradientBuffer)> {
    let mut grad = GradientBuffer::zeroed_like(model);
    if samples.is_empty() {
        return Ok((0.0, grad));
    }
    let d = model.dim;
    let mut loss = 0.0;

    for &(tri, label) in samples {
        let phi = model.score(tri.head, tri.relation, tri.tail)?;
        loss += softplus(-label * phi);
        // d/dphi softplus(-y*phi) = -y * sigmoid(-y*phi)
        let dphi = -label * sigmoid(-label * phi);

        let h = tri.head.0 as usize * d;
        let r = tri.relation.0 as usize * d;
        let t = tri.tail.0 as usize * d;
        for k in 0..d {
            let (h_re, h_im) = (model.ent_re[h + k], model.ent_im[h + k]);
            let (r_re, r_im) = (model.rel_re[r + k], model.rel_im[r + k]);
            let (t_re, t_im) = (model.ent_re[t + k], model.ent_im[t + k]);

            grad.ent_re[h + k] += dphi * (r_re * t_re + r_im * t_im);
            grad.ent_im[h + k] += dphi * (r_re * t_im - r_im * t_re);
            grad.rel_re[r + k] += dphi * (h_re * t_re + h_im * t_im);
            grad.rel_im[r + k] += dphi * (h_re * t_im - h_im * t_re);
            grad.ent_re[t + k] += dphi * (h_re * r_re - h_im * r_im);
            grad.ent_im[t + k] += dphi * (h_re * r_im + h_im * r_re);

            loss += l2 * (h_re * h_re + h_im * h_im + r_re * r_re + r_im * r_im + t_re * t_re + t_im * t_im);
            grad.ent_re[h + k] += 2.0 * l2 * h_re;
            grad.ent_im[h + k] += 2.0 * l2 * h_im;
            grad.rel_re[r + k] += 2.0 * l2 * r_re;
            grad.rel_im[r + k] += 2.0 * l2 * r_im;
            grad.ent_re[t + k] += 2.0 * l2 * t_re;
            grad.ent_im[t + k] += 2.0 * l2 * t_im;
        }
    }

    Ok((loss, grad))
}

/// Train embeddings on the graph's triples. Deterministic for a fixed
/// (seed, data, config).
pub fn train(kg: &KnowledgeGraph, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_on_triples(kg.triples(), kg.entity_count(), kg.relation_count(), cfg)
}

/// Train on an explicit triple list (used for held-out splits).
pub fn train_on_triples(
    triples: &[Triple],
    n_entities: usize,
    n_relations: usize,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if triples.is_empty() || n_entities == 0 || n_relations == 0 {
        return Err(Error::InvalidInput("cannot train on an empty graph".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = cfg.dim;
    let bound = 0.5 / (d as f64).sqrt();
    let mut init = |n: usize| -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
    };
    let mut model = ComplExModel {
        dim: d,
        n_entities,
        n_relations,
        seed: cfg.seed,
        ent_re: init(n_entities * d),
        ent_im: init(n_entities * d),
        rel_re: init(n_relations * d),
        rel_im: init(n_relations * d),
    };

    let mut order: Vec<usize> = (0..triples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss_sum = 0.0;
        let mut epoch_samples = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let mut samples: Vec<TrainSample> =
                Vec::with_capacity(batch.len() * (1 + cfg.negatives_per_positive));
            for &idx in batch {
                let pos = triples[idx];
                samples.push((pos, 1.0));
                for _ in 0..cfg.negatives_per_positive {
                    let mut neg = pos;
                    let corrupt_head = rng.gen_bool(0.5);
                    let replacement = EntityId(rng.gen_range(0..n_entities as u32));
                    if corrupt_head {
                        neg.head = replacement;
                    } else {
                        neg.tail = replacement;
                    }
                    samples.push((neg, -1.0));
                }
            }
            let (loss, grad) = loss_and_grad(&model, &samples, cfg.l2_weight)?;
            epoch_loss_sum += loss;
            epoch_samples += samples.len();
            let lr = cfg.learning_rate;
            for (p, g) in model.ent_re.iter_mut().zip(&grad.ent_re) {
                *p -= lr * g;
            }
            for (p, g) in model.ent_im.iter_mut().zip(&grad.ent_im) {
                *p -= lr * g;
            }
            for (p, g) in model.rel_re.iter_mut().zip(&grad.rel_re) {
                *p -= lr * g;
            }
            for (p, g) in model.rel_im.iter_mut().zip(&grad.rel_im) {
                *p -= lr * g;
            }
        }
        let epoch_loss = epoch_loss_sum / epoch_samples as f64;
        if !epoch_loss.is_finite() {
            return Err(Error::InvalidInput(
                "training diverged (non-finite loss); lower the learning rate or batch size".into(),
            ));
        }
        epoch_losses.push(epoch_loss);
    }

    Ok(TrainOutcome {
        model,
        epoch_losses,
    })
}

/// Mean reciprocal rank of true tails over `eval`, ranking each against the
/// full entity vocabulary minus candidates that form other known triples.
/// Rank counts candidates with strictly greater score.
pub fn filtered_mrr(
    model: &ComplExModel,
    known: &HashSet<Triple>,
    eval: &[Triple],
) -> Result<f64> {
    if eval.is_empty() {
        return Err(Error::InvalidInput("empty evaluation set".into()));
    }
    let mut total = 0.0;
    for tri in eval {
        let true_score = model.score(tri.head, tri.relation, tri.tail)?;
        let mut rank = 1usize;
        for c in 0..model.n_entities as u32 {
            let cand = EntityId(c);
            if cand == tri.tail {
                continue;
            }
            let as_triple = Triple {
                head: tri.head,
                relation: tri.relation,
                tail: cand,
            };
            if known.contains(&as_triple) {
                continue;
            }
            if model.score(tri.head, tri.relation, cand)? > true_score {
                rank += 1;
            }
        }
        total += 1.0 / rank as f64;
    }
    Ok(total / eval.len() as f64)
}
