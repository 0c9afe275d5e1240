use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::par::{stream_rng, SimRng};
use crate::paths::{noise_layout, NoiseSchedule};
use crate::posterior::{relative_error, AtomDataset, GradCheck, ParamSet, Tensor};
use crate::simplex::{Layout, MultiSimplexState};

/// A model of `log p(y | x_t, t)` that can be differentiated in `x_t`.
pub trait PropertyModel: Sync {
    fn layout(&self) -> &Layout;

    fn log_prob(&self, state: &MultiSimplexState, target: usize) -> Result<f64>;

    /// Gradient of [`PropertyModel::log_prob`] with respect to the simplex
    /// coordinates, one vector per dimension.
    fn input_gradient(&self, state: &MultiSimplexState, target: usize) -> Result<Vec<Vec<f64>>>;
}

pub fn classifier_input_gradient(
    model: &dyn PropertyModel,
    state: &MultiSimplexState,
    target: usize,
) -> Result<Vec<Vec<f64>>> {
    model.input_gradient(state, target)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PropertyHead {
    /// Multinomial logistic regression; `log p` is the log-softmax.
    Softmax,
    /// Log-linear score `log p(y | x) = z_y + C`, fit by least squares to
    /// one-hot labels. Its input gradient does not depend on `x`.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropertyTrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for PropertyTrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.05,
            momentum: 0.9,
            steps: 2000,
            batch_size: 64,
            seed: 0,
        }
    }
}

/// Linear property model over `(flatten(x_t), sin pi t, cos pi t)`.
#[derive(Debug, Clone)]
pub struct PropertyRegressor {
    layout: Layout,
    head: PropertyHead,
    classes: usize,
    params: ParamSet,
}

const W: usize = 0;
const B: usize = 1;

impl PropertyRegressor {
    pub fn zeros(layout: Layout, head: PropertyHead, classes: usize) -> Result<Self> {
        if classes < 2 {
            return Err(invalid("a property model needs at least two classes"));
        }
        let f = layout.num_coords() + 2;
        let mut params = ParamSet::default();
        params.push(Tensor::zeros("weight", &[classes, f]));
        params.push(Tensor::zeros("bias", &[classes]));
        Ok(Self {
            layout,
            head,
            classes,
            params,
        })
    }

    pub fn from_params(layout: Layout, head: PropertyHead, classes: usize, params: &ParamSet) -> Result<Self> {
        let mut m = Self::zeros(layout, head, classes)?;
        m.params.load_from(params)?;
        Ok(m)
    }

    pub fn head(&self) -> PropertyHead {
        self.head
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn features(&self, state: &MultiSimplexState) -> Result<Vec<f64>> {
        self.layout.check_state(state)?;
        let mut f = state.flatten();
        f.extend_from_slice(&crate::posterior::time_features(state.t));
        Ok(f)
    }

    fn scores(&self, phi: &[f64]) -> Vec<f64> {
        let mut z = self.params.get(B).to_vec();
        crate::posterior::params::matvec_add(self.params.get(W), phi, &mut z);
        z
    }

    fn check_target(&self, target: usize) -> Result<()> {
        if target >= self.classes {
            return Err(invalid(format!("target {target} out of range for {} classes", self.classes)));
        }
        Ok(())
    }

    /// Class probabilities (softmax of the scores for either head).
    pub fn predict(&self, state: &MultiSimplexState) -> Result<Vec<f64>> {
        Ok(crate::posterior::softmax(&self.scores(&self.features(state)?)))
    }

    /// Training loss of one labelled state; accumulates the parameter
    /// gradient into `grad`.
    pub fn loss_grad(&self, state: &MultiSimplexState, label: usize, grad: &mut ParamSet) -> Result<f64> {
        self.check_target(label)?;
        let phi = self.features(state)?;
        let z = self.scores(&phi);
        let (loss, dz) = match self.head {
            PropertyHead::Softmax => {
                let mut d = crate::posterior::softmax(&z);
                d[label] -= 1.0;
                (-crate::posterior::log_softmax_at(&z, label), d)
            }
            PropertyHead::Linear => {
                let d: Vec<f64> = z
                    .iter()
                    .enumerate()
                    .map(|(c, v)| v - if c == label { 1.0 } else { 0.0 })
                    .collect();
                (0.5 * d.iter().map(|x| x * x).sum::<f64>(), d)
            }
        };
        crate::posterior::params::outer_add(grad.get_mut(W), &dz, &phi);
        for (g, d) in grad.get_mut(B).iter_mut().zip(&dz) {
            *g += d;
        }
        Ok(loss)
    }

    pub fn batch_loss_grad(&self, batch: &[(MultiSimplexState, usize)]) -> Result<(f64, ParamSet)> {
        if batch.is_empty() {
            return Err(invalid("empty batch"));
        }
        let mut grad = self.params.zeros_like();
        let mut loss = 0.0;
        for (s, y) in batch {
            loss += self.loss_grad(s, *y, &mut grad)?;
        }
        let n = batch.len() as f64;
        grad.scale(1.0 / n);
        Ok((loss / n, grad))
    }

    /// Fits the model on noisy copies of labelled atoms drawn across all
    /// noise levels. Returns the loss trace.
    pub fn train(
        &mut self,
        dataset: &AtomDataset,
        labels: &[usize],
        schedule: &NoiseSchedule,
        config: &PropertyTrainConfig,
    ) -> Result<Vec<f64>> {
        if labels.len() != dataset.len() {
            return Err(invalid("one label per dataset atom required"));
        }
        if dataset.layout() != &self.layout {
            return Err(invalid("dataset layout does not match the property model"));
        }
        if config.batch_size == 0 || !(config.lr > 0.0) || !(0.0..1.0).contains(&config.momentum) {
            return Err(invalid("invalid property training configuration"));
        }
        let mut rng: SimRng = stream_rng(config.seed, 1);
        let mut velocity = self.params.zeros_like();
        let mut trace = Vec::with_capacity(config.steps);
        for step in 0..config.steps {
            let batch = labelled_batch(dataset, labels, schedule, config.batch_size, &mut rng)?;
            let (loss, grad) = self.batch_loss_grad(&batch)?;
            if !loss.is_finite() || !grad.is_finite() {
                return Err(Error::TrainingFailure { step, loss });
            }
            velocity.scale(config.momentum);
            velocity.add_scaled(&grad, 1.0);
            self.params.add_scaled(&velocity, -config.lr);
            trace.push(loss);
        }
        Ok(trace)
    }

    /// Central finite-difference check of the parameter gradient.
    pub fn gradient_check<R: Rng + ?Sized>(
        &self,
        batch: &[(MultiSimplexState, usize)],
        probes: usize,
        h: f64,
        rng: &mut R,
    ) -> Result<GradCheck> {
        let (_, grad) = self.batch_loss_grad(batch)?;
        let mut probe = self.clone();
        let n = self.params.num_scalars();
        let mut out = Vec::with_capacity(probes);
        let mut worst: f64 = 0.0;
        for _ in 0..probes {
            let idx = rng.random_range(0..n);
            let orig = self.params.flat_get(idx);
            probe.params.flat_set(idx, orig + h);
            let up = probe.batch_loss_grad(batch)?.0;
            probe.params.flat_set(idx, orig - h);
            let down = probe.batch_loss_grad(batch)?.0;
            probe.params.flat_set(idx, orig);
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

    /// Central finite-difference check of the input gradient at `probes`
    /// random coordinates. Coordinates are perturbed individually, off the
    /// simplex, since the model is defined on all of `R^F`.
    pub fn input_gradient_check<R: Rng + ?Sized>(
        &self,
        state: &MultiSimplexState,
        target: usize,
        probes: usize,
        h: f64,
        rng: &mut R,
    ) -> Result<GradCheck> {
        let grad: Vec<f64> = self.input_gradient(state, target)?.concat();
        let phi = self.features(state)?;
        let eval = |phi: &[f64]| self.log_prob_features(phi, target);
        let mut out = Vec::with_capacity(probes);
        let mut worst: f64 = 0.0;
        for _ in 0..probes {
            let idx = rng.random_range(0..grad.len());
            let mut p = phi.clone();
            p[idx] += h;
            let up = eval(&p);
            p[idx] -= 2.0 * h;
            let down = eval(&p);
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max(relative_error(grad[idx], numeric));
            out.push((idx, grad[idx], numeric));
        }
        Ok(GradCheck {
            max_rel_error: worst,
            probes: out,
        })
    }

    fn log_prob_features(&self, phi: &[f64], target: usize) -> f64 {
        let z = self.scores(phi);
        match self.head {
            PropertyHead::Softmax => crate::posterior::log_softmax_at(&z, target),
            PropertyHead::Linear => z[target],
        }
    }
}

impl PropertyModel for PropertyRegressor {
    fn layout(&self) -> &Layout {
        &self.layout
    }

    fn log_prob(&self, state: &MultiSimplexState, target: usize) -> Result<f64> {
        self.check_target(target)?;
        Ok(self.log_prob_features(&self.features(state)?, target))
    }

    fn input_gradient(&self, state: &MultiSimplexState, target: usize) -> Result<Vec<Vec<f64>>> {
        self.check_target(target)?;
        let phi = self.features(state)?;
        let f = phi.len();
        let w = self.params.get(W);
        // d log p / d phi = sum_c coef_c W_c
        let coef: Vec<f64> = match self.head {
            PropertyHead::Softmax => {
                let mut p = crate::posterior::softmax(&self.scores(&phi));
                p.iter_mut().for_each(|x| *x = -*x);
                p[target] += 1.0;
                p
            }
            PropertyHead::Linear => (0..self.classes).map(|c| if c == target { 1.0 } else { 0.0 }).collect(),
        };
        let mut flat = vec![0.0; f];
        crate::posterior::params::matvec_t_add(w, &coef, &mut flat);
        let mut out = Vec::with_capacity(state.dims.len());
        let mut off = 0;
        for d in &state.dims {
            out.push(flat[off..off + d.dim()].to_vec());
            off += d.dim();
        }
        Ok(out)
    }
}

/// Noisy labelled examples at `t ~ U(0, t_max)`.
pub(crate) fn labelled_batch<R: Rng + ?Sized>(
    dataset: &AtomDataset,
    labels: &[usize],
    schedule: &NoiseSchedule,
    size: usize,
    rng: &mut R,
) -> Result<Vec<(MultiSimplexState, usize)>> {
    (0..size)
        .map(|_| {
            let t = rng.random::<f64>() * schedule.t_max();
            let m = dataset.weights().sample(rng);
            let state = noise_layout(schedule, dataset.layout(), &dataset.atoms()[m], t, rng)?;
            Ok((state, labels[m]))
        })
        .collect()
}
