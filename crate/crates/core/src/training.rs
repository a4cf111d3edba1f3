//! Loss and minibatch Adam training of base learners.

use std::collections::HashMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{bvn_nll, Graph, Var};
use crate::data::{BootstrapSet, Point, TrajectorySample};
use crate::derive_seed;
use crate::model::{BaseLearner, BaseLearnerPrediction, GaussianStep, ModelConfig, ModelError, Variant};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::tensor::{Tensor, TensorError};

/// Floor applied to the true-maneuver probability before taking its log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("learner {index}: non-finite value in epoch {epoch}, batch {batch}; gradient norms {grad_norms:?}")]
    NonFinite {
        index: usize,
        epoch: usize,
        batch: usize,
        grad_norms: Vec<(String, f64)>,
    },
    #[error("{} learner(s) failed: {}", failed.len(), failed.iter().map(|(i, e)| format!("#{i}: {e}")).collect::<Vec<_>>().join("; "))]
    Partial {
        completed: Vec<usize>,
        failed: Vec<(usize, String)>,
    },
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Model(ModelError::Tensor(e))
    }
}

/// Negative log-likelihood of `truth` under one bivariate Gaussian.
pub fn bivariate_nll(step: &GaussianStep, truth: Point) -> Result<f64, TrainError> {
    if !(step.s_x > 0.0 && step.s_y > 0.0 && step.r.abs() < 1.0) {
        return Err(TrainError::Domain(format!(
            "s_x = {}, s_y = {}, r = {} outside s > 0, |r| < 1",
            step.s_x, step.s_y, step.r
        )));
    }
    Ok(bvn_nll(
        step.m_x, step.m_y, step.s_x, step.s_y, step.r, truth.x, truth.y,
    ))
}

/// Training objective of one sample: trajectory NLL summed over the horizon under
/// the true maneuver, minus the log-probability of that maneuver (with maneuvers).
pub fn sample_loss(pred: &BaseLearnerPrediction, sample: &TrajectorySample) -> Result<f64, TrainError> {
    let seq = pred.sequence(sample.true_maneuver);
    if seq.len() != sample.future_truth.len() {
        return Err(TrainError::Precondition(format!(
            "{} predicted steps vs {} truth points",
            seq.len(),
            sample.future_truth.len()
        )));
    }
    let mut loss = 0.0;
    for (step, &truth) in seq.iter().zip(&sample.future_truth) {
        loss += bivariate_nll(step, truth)?;
    }
    if pred.variant == Variant::WithManeuvers {
        loss -= pred.maneuver_probs.prob(sample.true_maneuver).max(PROB_FLOOR).ln();
    }
    Ok(loss)
}

/// Mean [`sample_loss`] of a batch as a graph scalar. Only the true maneuver is decoded.
pub(crate) fn batch_loss<'a>(
    learner: &'a BaseLearner,
    g: &mut Graph<'a>,
    bound: &crate::model::Bound,
    samples: &[&TrajectorySample],
) -> Result<Var, TrainError> {
    let t_f = learner.config.t_f;
    if let Some(s) = samples.iter().find(|s| s.future_truth.len() != t_f) {
        return Err(TrainError::Precondition(format!(
            "sample {} has {} future points, expected {t_f}",
            s.sample_id,
            s.future_truth.len()
        )));
    }
    let enc = learner.encode_batch(g, bound, samples)?;
    let maneuvers: Vec<_> = samples.iter().map(|s| s.true_maneuver).collect();
    let (steps, prob_term) = match learner.variant {
        Variant::WithManeuvers => {
            let probs = learner.maneuver_graph(g, bound, enc.context)?;
            let slots: Vec<usize> = maneuvers.iter().map(|m| m.slot()).collect();
            let p_true = g.pick_cols(probs, &slots)?;
            let p_true = g.clamp_min(p_true, PROB_FLOOR)?;
            let logp = g.log(p_true)?;
            let steps = learner.decode_graph(g, bound, enc.context, Some(&maneuvers))?;
            (steps, Some(g.sum(logp)?))
        }
        Variant::WithoutManeuvers => (learner.decode_graph(g, bound, enc.context, None)?, None),
    };
    let mut total: Option<Var> = None;
    for (t, &step) in steps.iter().enumerate() {
        let truth: Vec<f64> = samples
            .iter()
            .flat_map(|s| [s.future_truth[t].x, s.future_truth[t].y])
            .collect();
        let truth = g.constant(Tensor::matrix(samples.len(), 2, truth)?);
        let nll = g.bivariate_nll(step, truth)?;
        let nll = g.sum(nll)?;
        total = Some(match total {
            Some(acc) => g.add(acc, nll)?,
            None => nll,
        });
    }
    let mut total = total.expect("t_f > 0");
    if let Some(lp) = prob_term {
        total = g.sub(total, lp)?;
    }
    Ok(g.scale(total, 1.0 / samples.len() as f64)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            epochs: 8,
            batch_size: 128,
            grad_clip: Some(10.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub index: usize,
    /// Mean training loss of each epoch.
    pub epoch_losses: Vec<f64>,
    pub wall_clock_s: f64,
    pub checksum: String,
    pub samples: usize,
    pub optimizer_steps: u64,
}

/// Mean loss and gradient of one batch.
pub fn loss_and_gradients(
    learner: &BaseLearner,
    samples: &[&TrajectorySample],
) -> Result<(f64, Vec<Vec<f64>>), TrainError> {
    let mut g = Graph::new();
    let bound = learner.bind(&mut g)?;
    let loss = batch_loss(learner, &mut g, &bound, samples)?;
    let value = g.value(loss).data()[0];
    let mut grads = g.backward(loss)?;
    let out = bound
        .params
        .iter()
        .zip(learner.weights.tensors())
        .map(|(&p, t)| grads.take(p).unwrap_or_else(|| vec![0.0; t.len()]))
        .collect();
    Ok((value, out))
}

/// Mean loss of `samples` without building gradients (batched by 256).
pub fn mean_loss(learner: &BaseLearner, samples: &[&TrajectorySample]) -> Result<f64, TrainError> {
    let mut total = 0.0;
    for chunk in samples.chunks(256) {
        let mut g = Graph::new();
        let bound = learner.bind(&mut g)?;
        let loss = batch_loss(learner, &mut g, &bound, chunk)?;
        total += g.value(loss).data()[0] * chunk.len() as f64;
    }
    Ok(total / samples.len().max(1) as f64)
}

/// Trains one learner from seeded initialization on `samples` (a bootstrap multiset).
pub fn train_base_learner(
    index: usize,
    variant: Variant,
    model: &ModelConfig,
    cfg: &TrainConfig,
    samples: &[&TrajectorySample],
    seed: u64,
) -> Result<(BaseLearner, TrainReport), TrainError> {
    if samples.is_empty() {
        return Err(TrainError::Precondition("empty training set".into()));
    }
    if cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) {
        return Err(TrainError::Precondition(
            "batch size and learning rate must be positive".into(),
        ));
    }
    let start = Instant::now();
    let mut learner = BaseLearner::init(index, variant, model.clone(), derive_seed(seed, 0))?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
    let adam = AdamConfig {
        lr: cfg.learning_rate,
        ..AdamConfig::default()
    };
    let mut state = AdamState::new(&learner.weights.tensors());
    let names: Vec<String> = learner.weights.iter().map(|(n, _)| n.to_string()).collect();
    let mut order: Vec<&TrajectorySample> = samples.to_vec();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut sum = 0.0;
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let non_finite = |grad_norms| TrainError::NonFinite {
                index,
                epoch,
                batch,
                grad_norms,
            };
            let (loss, mut grads) = match loss_and_gradients(&learner, chunk) {
                Ok(v) => v,
                Err(TrainError::Model(ModelError::Tensor(TensorError::NonFinite { .. }))) => {
                    return Err(non_finite(Vec::new()))
                }
                Err(e) => return Err(e),
            };
            let norms: Vec<f64> = grads
                .iter()
                .map(|g| g.iter().map(|v| v * v).sum::<f64>().sqrt())
                .collect();
            if !loss.is_finite() || norms.iter().any(|n| !n.is_finite()) {
                return Err(non_finite(names.iter().cloned().zip(norms).collect()));
            }
            if let Some(clip) = cfg.grad_clip {
                let global = norms.iter().map(|n| n * n).sum::<f64>().sqrt();
                if global > clip {
                    let k = clip / global;
                    grads.iter_mut().flatten().for_each(|v| *v *= k);
                }
            }
            let grad_refs: Vec<&[f64]> = grads.iter().map(|g| g.as_slice()).collect();
            adam_step(&mut learner.weights.tensors_mut(), &grad_refs, &mut state, &adam)?;
            sum += loss * chunk.len() as f64;
        }
        epoch_losses.push(sum / order.len() as f64);
    }
    let report = TrainReport {
        index,
        epoch_losses,
        wall_clock_s: start.elapsed().as_secs_f64(),
        checksum: learner.checksum(),
        samples: samples.len(),
        optimizer_steps: state.step_count(),
    };
    Ok((learner, report))
}

/// Trains one learner per bootstrap set on a pool of `workers` threads. Learner
/// `k` uses `derive_seed(seed, k)`. `on_done` runs as each learner finishes.
/// If any learner fails, the others still complete and the error lists both.
#[allow(clippy::too_many_arguments)]
pub fn train_fleet(
    sets: &[BootstrapSet],
    samples: &[TrajectorySample],
    variant: Variant,
    model: &ModelConfig,
    cfg: &TrainConfig,
    seed: u64,
    workers: usize,
    on_done: &(dyn Fn(&BaseLearner, &TrainReport) + Sync),
) -> Result<Vec<(BaseLearner, TrainReport)>, TrainError> {
    let by_id: HashMap<usize, &TrajectorySample> = samples.iter().map(|s| (s.sample_id, s)).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| TrainError::Precondition(e.to_string()))?;
    type Outcome = (usize, Result<(BaseLearner, TrainReport), TrainError>);
    let results: Vec<Outcome> = pool.install(|| {
        sets.par_iter()
            .map(|set| {
                let run = || {
                    let members = set
                        .sample_ids
                        .iter()
                        .map(|id| {
                            by_id
                                .get(id)
                                .copied()
                                .ok_or_else(|| TrainError::Precondition(format!("unknown sample id {id}")))
                        })
                        .collect::<Result<Vec<_>, _>>()?;
                    let out = train_base_learner(
                        set.index,
                        variant,
                        model,
                        cfg,
                        &members,
                        derive_seed(seed, set.index as u64),
                    )?;
                    on_done(&out.0, &out.1);
                    Ok(out)
                };
                (set.index, run())
            })
            .collect()
    });
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for (index, r) in results {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => failed.push((index, e.to_string())),
        }
    }
    if failed.is_empty() {
        Ok(ok)
    } else {
        Err(TrainError::Partial {
            completed: ok.iter().map(|(l, _)| l.index).collect(),
            failed,
        })
    }
}

#[cfg(test)]
mod tests;
