use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{DropoutMasks, Network, NetworkSpec};
use super::objective::{evaluate, Batch, ObjectiveParts, ObjectiveSpec};
use super::optim::{hutchinson_diag, AdaHessianState};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimiserConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub hessian_power: f64,
    pub probes: usize,
    /// Mini-batch size; `None` trains on the full split every step.
    pub batch_size: Option<usize>,
    pub max_epochs: usize,
    /// Rows per chunk when evaluating the validation objective.
    pub eval_chunk: usize,
}

impl Default for OptimiserConfig {
    fn default() -> Self {
        Self {
            lr: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            hessian_power: 1.0,
            probes: 1,
            batch_size: Some(256),
            max_epochs: 100,
            eval_chunk: 2048,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EarlyStopping {
    pub patience: usize,
    pub min_delta: f64,
}

impl Default for EarlyStopping {
    fn default() -> Self {
        Self {
            patience: 10,
            min_delta: 0.0,
        }
    }
}

/// Network parameters plus what is needed to reuse them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub network: Network,
    pub objective: ObjectiveSpec,
    /// Identifier of the frozen preprocessing the inputs went through.
    pub preprocessing_ref: Option<String>,
    pub seed: u64,
}

impl TrainedModel {
    pub fn spec(&self) -> &NetworkSpec {
        &self.network.spec
    }

    pub fn forward(&self, x: &Array2<f64>, exposure: Option<&[f64]>) -> Result<Vec<f64>> {
        self.network.forward(x, exposure)
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    model: TrainedModel,
}

impl TrainedModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&Checkpoint {
            version: CHECKPOINT_VERSION,
            model: self.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(text)?;
        if c.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                c.version
            )));
        }
        Network::from_parts(c.model.network.spec.clone(), c.model.network.theta.clone())?;
        Ok(c.model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean mini-batch objective over the epoch, taken before each step.
    pub train_objective: f64,
    pub val_objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Validation objective of the initial weights.
    pub initial_val_objective: f64,
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights were restored; 0 means the initial weights.
    pub best_epoch: usize,
    pub best_val_objective: f64,
    pub stopped_early: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: TrainedModel,
    pub history: TrainHistory,
}

/// Objective over `batch` evaluated in consecutive chunks of at most
/// `chunk` rows (no dropout). Task losses are row-weighted; the penalty is
/// the row-weighted mean of per-chunk values. With `chunk >= n` this is the
/// plain objective.
pub fn chunked_objective(
    net: &Network,
    batch: &Batch,
    spec: &ObjectiveSpec,
    chunk: usize,
) -> Result<f64> {
    Ok(chunked_parts(net, batch, spec, chunk)?.total)
}

/// Row-weighted mean of the objective parts over chunks of at most
/// `chunk` rows (a trailing chunk under 4 rows joins its predecessor).
pub fn chunked_parts(
    net: &Network,
    batch: &Batch,
    spec: &ObjectiveSpec,
    chunk: usize,
) -> Result<ObjectiveParts> {
    let n = batch.n();
    let chunk = chunk.max(4);
    if n <= chunk {
        return Ok(evaluate(net, batch, spec, None, false)?.0);
    }
    let mut acc = [0.0; 3];
    for idx in chunk_indices(&(0..n).collect::<Vec<_>>(), chunk, 4) {
        let p = evaluate(net, &batch.select(&idx), spec, None, false)?.0;
        let w = idx.len() as f64;
        acc[0] += p.task_loss * w;
        acc[1] += p.psi * w;
        acc[2] += p.total * w;
    }
    let n = n as f64;
    Ok(ObjectiveParts {
        task_loss: acc[0] / n,
        psi: acc[1] / n,
        total: acc[2] / n,
    })
}

/// Splits `order` into chunks of `size`; a trailing chunk shorter than
/// `min_len` is merged into its predecessor.
fn chunk_indices(order: &[usize], size: usize, min_len: usize) -> Vec<Vec<usize>> {
    let mut chunks: Vec<Vec<usize>> = order.chunks(size.max(1)).map(<[usize]>::to_vec).collect();
    if chunks.len() > 1 && chunks.last().is_some_and(|c| c.len() < min_len) {
        let tail = chunks.pop().expect("non-empty");
        chunks.last_mut().expect("non-empty").extend(tail);
    }
    chunks
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn diverged(reason: String, last_good: &TrainedModel) -> Error {
    Error::DivergenceDetected {
        reason,
        last_good: Some(Box::new(last_good.clone())),
    }
}

/// Trains with seeded mini-batches and AdaHessian, stopping early on the
/// validation objective and restoring the best weights seen (the initial
/// weights included). Single-threaded and deterministic for a fixed seed.
pub fn train(
    subtrain: &Batch,
    validation: &Batch,
    net_spec: &NetworkSpec,
    objective: &ObjectiveSpec,
    opt: &OptimiserConfig,
    stopping: &EarlyStopping,
    seed: u64,
) -> Result<TrainOutcome> {
    objective.validate()?;
    if subtrain.n() == 0 || validation.n() == 0 {
        return Err(Error::EmptyInput(
            "training and validation splits must be non-empty".into(),
        ));
    }
    let mut net = Network::init(net_spec.clone(), &mut stream(seed, 0))?;
    let mut shuffle_rng = stream(seed, 1);
    let mut dropout_rng = stream(seed, 2);
    let mut state = AdaHessianState::new(
        net.theta.len(),
        opt.lr,
        opt.beta1,
        opt.beta2,
        opt.hessian_power,
        opt.probes,
    )?;
    let wrap = |net: &Network| TrainedModel {
        network: net.clone(),
        objective: objective.clone(),
        preprocessing_ref: None,
        seed,
    };

    let initial_val = chunked_objective(&net, validation, objective, opt.eval_chunk)?;
    if !initial_val.is_finite() {
        return Err(Error::DivergenceDetected {
            reason: "initial validation objective is not finite".into(),
            last_good: None,
        });
    }
    let mut best = (initial_val, net.theta.clone(), 0usize);
    let mut last_good = wrap(&net);
    let mut wait = 0;
    let mut epochs = Vec::new();
    let mut stopped_early = false;
    let batch_size = opt.batch_size.unwrap_or(subtrain.n()).max(1);
    let mut order: Vec<usize> = (0..subtrain.n()).collect();
    let mut step: u64 = 0;

    for epoch in 1..=opt.max_epochs {
        if opt.batch_size.is_some() {
            order.shuffle(&mut shuffle_rng);
        }
        let mut loss_sum = 0.0;
        for idx in chunk_indices(&order, batch_size, 4) {
            let batch = subtrain.select(&idx);
            let masks = DropoutMasks::sample(&net.spec, batch.n(), &mut dropout_rng);
            let (parts, grad) = match evaluate(&net, &batch, objective, masks.as_ref(), true) {
                Ok(r) => r,
                Err(Error::DivergenceDetected { reason, .. }) => {
                    return Err(diverged(reason, &last_good))
                }
                Err(e) => return Err(e),
            };
            if !parts.total.is_finite() {
                return Err(diverged(
                    format!("non-finite loss in epoch {epoch}"),
                    &last_good,
                ));
            }
            let grad = grad.expect("gradient requested");
            let h_seed = seed ^ step.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            let diag = hutchinson_diag(&net, &batch, objective, masks.as_ref(), opt.probes, h_seed)
                .map_err(|e| match e {
                    Error::DivergenceDetected { reason, .. } => diverged(reason, &last_good),
                    other => other,
                })?;
            state
                .step(&mut net.theta, &grad, &diag)
                .map_err(|e| match e {
                    Error::DivergenceDetected { reason, .. } => diverged(reason, &last_good),
                    other => other,
                })?;
            loss_sum += parts.total * batch.n() as f64;
            step += 1;
        }
        let val = match chunked_objective(&net, validation, objective, opt.eval_chunk) {
            Ok(v) if v.is_finite() => v,
            Ok(_) => {
                return Err(diverged(
                    format!("non-finite validation objective in epoch {epoch}"),
                    &last_good,
                ))
            }
            Err(Error::DivergenceDetected { reason, .. }) => {
                return Err(diverged(reason, &last_good))
            }
            Err(e) => return Err(e),
        };
        last_good = wrap(&net);
        epochs.push(EpochRecord {
            epoch,
            train_objective: loss_sum / subtrain.n() as f64,
            val_objective: val,
        });
        if val < best.0 - stopping.min_delta {
            best = (val, net.theta.clone(), epoch);
            wait = 0;
        } else {
            wait += 1;
            if wait >= stopping.patience {
                stopped_early = true;
                break;
            }
        }
    }

    net.theta = best.1;
    Ok(TrainOutcome {
        model: wrap(&net),
        history: TrainHistory {
            initial_val_objective: initial_val,
            epochs,
            best_epoch: best.2,
            best_val_objective: best.0,
            stopped_early,
        },
    })
}
