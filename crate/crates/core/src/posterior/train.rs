use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::par::{map_indexed, stream_rng, Execution, SimRng};
use crate::paths::{noise_layout, NoiseSchedule};
use crate::posterior::{dim_weights, AtomDataset, ParamSet, PosteriorModel, TrainExample, Trainable};

// examples per gradient shard; fixed so the reduction order never changes
const GRAD_SHARD: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Momentum { beta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Node / edge weighting of the loss.
    pub gamma: f64,
    pub lr: f64,
    pub optimizer: Optimizer,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            lr: 1e-3,
            optimizer: Optimizer::Momentum { beta: 0.9 },
            steps: 1000,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(invalid(format!("gamma must lie in [0, 1], got {}", self.gamma)));
        }
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return Err(invalid(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if let Optimizer::Momentum { beta } = self.optimizer {
            if !(0.0..1.0).contains(&beta) {
                return Err(invalid(format!("momentum must lie in [0, 1), got {beta}")));
            }
        }
        if self.batch_size == 0 {
            return Err(invalid("batch size must be >= 1"));
        }
        Ok(())
    }
}

/// Draws `size` training pairs: `t ~ U(0, t_max)`, clean state from the
/// dataset, noisy state from the Dirichlet path.
pub fn make_batch<R: Rng + ?Sized>(
    dataset: &AtomDataset,
    schedule: &NoiseSchedule,
    size: usize,
    rng: &mut R,
) -> Result<Vec<TrainExample>> {
    (0..size)
        .map(|_| {
            let t = rng.random::<f64>() * schedule.t_max();
            let clean = dataset.sample(rng).to_vec();
            let state = noise_layout(schedule, dataset.layout(), &clean, t, rng)?;
            Ok(TrainExample { clean, state })
        })
        .collect()
}

/// Fixed evaluation batch, seeded independently of training.
pub fn held_out_batch(
    dataset: &AtomDataset,
    schedule: &NoiseSchedule,
    size: usize,
    seed: u64,
) -> Result<Vec<TrainExample>> {
    let mut rng = stream_rng(seed, u64::MAX);
    make_batch(dataset, schedule, size, &mut rng)
}

/// Batch-mean weighted NLL and its gradient.
pub fn loss_weighted_nll<M: Trainable>(
    model: &M,
    batch: &[TrainExample],
    gamma: f64,
) -> Result<(f64, ParamSet)> {
    loss_weighted_nll_with(model, batch, gamma, Execution::default())
}

pub(crate) fn loss_weighted_nll_with<M: Trainable>(
    model: &M,
    batch: &[TrainExample],
    gamma: f64,
    exec: Execution,
) -> Result<(f64, ParamSet)> {
    if batch.is_empty() {
        return Err(invalid("empty batch"));
    }
    let shards = batch.len().div_ceil(GRAD_SHARD);
    let parts = map_indexed(exec, shards, |s| -> Result<(f64, ParamSet)> {
        let mut grad = model.params().zeros_like();
        let mut loss = 0.0;
        for ex in &batch[s * GRAD_SHARD..((s + 1) * GRAD_SHARD).min(batch.len())] {
            loss += model.example_loss_grad(ex, gamma, &mut grad)?;
        }
        Ok((loss, grad))
    });
    let mut total = 0.0;
    let mut grad = model.params().zeros_like();
    for part in parts {
        let (l, g) = part?;
        total += l;
        grad.add_scaled(&g, 1.0);
    }
    let n = batch.len() as f64;
    grad.scale(1.0 / n);
    Ok((total / n, grad))
}

/// Weighted NLL of every example under any posterior model.
pub fn nll_per_example<M: PosteriorModel + ?Sized>(
    model: &M,
    batch: &[TrainExample],
    gamma: f64,
) -> Result<Vec<f64>> {
    let weights = dim_weights(model.layout(), gamma);
    map_indexed(Execution::default(), batch.len(), |i| -> Result<f64> {
        let ex = &batch[i];
        let pis = model.evaluate(&ex.state)?;
        Ok(pis
            .iter()
            .zip(&ex.clean)
            .zip(&weights)
            .map(|((pi, c), w)| if *w == 0.0 { 0.0 } else { -w * pi.log_probs()[*c] })
            .sum())
    })
    .into_iter()
    .collect()
}

/// Batch-mean weighted NLL of any posterior model.
pub fn mean_nll<M: PosteriorModel + ?Sized>(model: &M, batch: &[TrainExample], gamma: f64) -> Result<f64> {
    if batch.is_empty() {
        return Err(invalid("empty batch"));
    }
    let per = nll_per_example(model, batch, gamma)?;
    Ok(per.iter().sum::<f64>() / batch.len() as f64)
}

/// Runs `config.steps` optimisation steps and returns the per-step loss.
pub fn train<M: Trainable>(
    model: &mut M,
    dataset: &AtomDataset,
    schedule: &NoiseSchedule,
    config: &TrainConfig,
) -> Result<Vec<f64>> {
    config.validate()?;
    if dataset.layout() != model.layout() {
        return Err(invalid("dataset layout does not match the model"));
    }
    let mut rng: SimRng = stream_rng(config.seed, 0);
    let mut velocity = model.params().zeros_like();
    let mut trace = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let batch = make_batch(dataset, schedule, config.batch_size, &mut rng)?;
        let (loss, grad) = loss_weighted_nll(model, &batch, config.gamma)?;
        if !loss.is_finite() || !grad.is_finite() {
            return Err(Error::TrainingFailure { step, loss });
        }
        match config.optimizer {
            Optimizer::Sgd => model.params_mut().add_scaled(&grad, -config.lr),
            Optimizer::Momentum { beta } => {
                velocity.scale(beta);
                velocity.add_scaled(&grad, 1.0);
                model.params_mut().add_scaled(&velocity, -config.lr);
            }
        }
        trace.push(loss);
    }
    Ok(trace)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// `(flat index, analytic, finite difference)` per probe.
    pub probes: Vec<(usize, f64, f64)>,
}

/// Denominator floor of the relative error, so parameters with a vanishing
/// gradient are compared on an absolute scale.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR)
}

/// Central finite-difference check of the loss gradient at `probes`
/// randomly chosen parameters.
pub fn gradient_check<M: Trainable + Clone, R: Rng + ?Sized>(
    model: &M,
    batch: &[TrainExample],
    gamma: f64,
    probes: usize,
    h: f64,
    rng: &mut R,
) -> Result<GradCheck> {
    let (_, grad) = loss_weighted_nll_with(model, batch, gamma, Execution::Sequential)?;
    let n = model.params().num_scalars();
    let mut probe = model.clone();
    let mut out = Vec::with_capacity(probes);
    let mut worst: f64 = 0.0;
    for _ in 0..probes {
        let idx = rng.random_range(0..n);
        let orig = model.params().flat_get(idx);
        probe.params_mut().flat_set(idx, orig + h);
        let (up, _) = loss_weighted_nll_with(&probe, batch, gamma, Execution::Sequential)?;
        probe.params_mut().flat_set(idx, orig - h);
        let (down, _) = loss_weighted_nll_with(&probe, batch, gamma, Execution::Sequential)?;
        probe.params_mut().flat_set(idx, orig);
        let numeric = (up - down) / (2.0 * h);
        let analytic = grad.flat_get(idx);
        worst = worst.max(relative_error(analytic, numeric));
        out.push((idx, analytic, numeric));
    }
    Ok(GradCheck {
        max_rel_error: worst,
        probes: out,
    })
}
