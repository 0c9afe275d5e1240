//! Denoisers: maps from a noisy multi-simplex state to per-dimension
//! categorical posteriors over clean categories.

mod checkpoint;
mod dense;
mod exact;
mod mpnn;
pub(crate) mod params;
mod train;

use rand::Rng;

use crate::error::{invalid, Result};
use crate::simplex::{CategoricalDist, ChannelKind, Layout, MultiSimplexState};

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_FORMAT};
pub use dense::DenseDenoiser;
pub use exact::ExactPosterior;
pub use mpnn::{MiniMpnn, MpnnConfig};
pub use params::{ParamSet, Tensor};
pub use train::{
    gradient_check, held_out_batch, loss_weighted_nll, make_batch, mean_nll, nll_per_example,
    relative_error, train, GradCheck, GRAD_CHECK_FLOOR,
    Optimizer, TrainConfig,
};

/// A denoiser `x_t -> (pi^(1), ..., pi^(L))`.
pub trait PosteriorModel: Sync {
    fn layout(&self) -> &Layout;

    /// Per-dimension posteriors. Deterministic given `state`.
    fn evaluate(&self, state: &MultiSimplexState) -> Result<Vec<CategoricalDist>>;
}

impl<M: PosteriorModel + ?Sized> PosteriorModel for &M {
    fn layout(&self) -> &Layout {
        (**self).layout()
    }

    fn evaluate(&self, state: &MultiSimplexState) -> Result<Vec<CategoricalDist>> {
        (**self).evaluate(state)
    }
}

/// One training pair: a clean category vector and a noisy state drawn from
/// `q_t(. | clean)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub clean: Vec<usize>,
    pub state: MultiSimplexState,
}

/// A denoiser with a flat parameter vector and hand-written gradients.
pub trait Trainable: PosteriorModel {
    fn params(&self) -> &ParamSet;

    fn params_mut(&mut self) -> &mut ParamSet;

    /// Weighted NLL of one example; accumulates its gradient into `grad`.
    fn example_loss_grad(&self, example: &TrainExample, gamma: f64, grad: &mut ParamSet) -> Result<f64>;
}

/// Per-example loss weights: `gamma / n_node` on node dimensions and
/// `(1 - gamma) / n_edge` on edge dimensions.
pub(crate) fn dim_weights(layout: &Layout, gamma: f64) -> Vec<f64> {
    let nodes = layout.count(ChannelKind::Node);
    let edges = layout.count(ChannelKind::Edge);
    layout
        .dims()
        .map(|(kind, _)| match kind {
            ChannelKind::Node => gamma / nodes as f64,
            ChannelKind::Edge => (1.0 - gamma) / edges as f64,
        })
        .collect()
}

/// Finite distribution over a set of distinct clean states.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomDataset {
    layout: Layout,
    atoms: Vec<Vec<usize>>,
    weights: CategoricalDist,
}

impl AtomDataset {
    pub fn new(layout: Layout, atoms: Vec<Vec<usize>>, weights: CategoricalDist) -> Result<Self> {
        if atoms.is_empty() {
            return Err(invalid("dataset needs at least one atom"));
        }
        if weights.len() != atoms.len() {
            return Err(invalid("one weight per atom required"));
        }
        for a in &atoms {
            layout.check_clean(a)?;
        }
        let mut sorted: Vec<&Vec<usize>> = atoms.iter().collect();
        sorted.sort();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid("dataset atoms must be pairwise distinct"));
        }
        Ok(Self {
            layout,
            atoms,
            weights,
        })
    }

    pub fn uniform(layout: Layout, atoms: Vec<Vec<usize>>) -> Result<Self> {
        let m = atoms.len().max(1);
        Self::new(layout, atoms, CategoricalDist::uniform(m))
    }

    /// Empirical distribution of `samples`; repeated samples are merged.
    pub fn from_samples(layout: Layout, samples: &[Vec<usize>]) -> Result<Self> {
        let mut counts: std::collections::BTreeMap<&Vec<usize>, usize> = Default::default();
        for s in samples {
            *counts.entry(s).or_default() += 1;
        }
        let atoms: Vec<Vec<usize>> = counts.keys().map(|a| (*a).clone()).collect();
        let weights: Vec<f64> = counts.values().map(|c| *c as f64).collect();
        if atoms.is_empty() {
            return Err(invalid("dataset needs at least one sample"));
        }
        Self::new(layout, atoms, CategoricalDist::from_weights(&weights)?)
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn atoms(&self) -> &[Vec<usize>] {
        &self.atoms
    }

    pub fn weights(&self) -> &CategoricalDist {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> &[usize] {
        &self.atoms[self.weights.sample(rng)]
    }

    /// Probability of a clean state (zero off the support).
    pub fn prob(&self, clean: &[usize]) -> f64 {
        self.atoms
            .iter()
            .position(|a| a == clean)
            .map(|i| self.weights.probs()[i])
            .unwrap_or(0.0)
    }

    /// Per-dimension marginal distributions of the clean categories.
    pub fn marginals(&self) -> Vec<CategoricalDist> {
        self.layout
            .dims()
            .enumerate()
            .map(|(d, (_, k))| {
                let mut m = vec![0.0; k];
                for (a, w) in self.atoms.iter().zip(self.weights.probs()) {
                    m[a[d]] += w;
                }
                CategoricalDist::from_weights(&m).expect("weights sum to one")
            })
            .collect()
    }

    /// Marginal over categories pooled across every dimension of channel
    /// `channel`.
    pub fn channel_marginal(&self, channel: usize) -> CategoricalDist {
        let ch = self.layout.channels()[channel];
        let start: usize = self.layout.channels()[..channel].iter().map(|c| c.len).sum();
        let mut m = vec![0.0; ch.k];
        for (a, w) in self.atoms.iter().zip(self.weights.probs()) {
            for c in &a[start..start + ch.len] {
                m[*c] += w;
            }
        }
        CategoricalDist::from_weights(&m).expect("weights sum to one")
    }
}

// Half a period over [0, 1], so t near 1 is not confused with t near 0.
pub(crate) fn time_features(t: f64) -> [f64; 2] {
    let phase = std::f64::consts::PI * t;
    [phase.sin(), phase.cos()]
}

/// Softmax in place over `logits`; returns probabilities.
pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / s).collect()
}

pub(crate) fn log_softmax_at(logits: &[f64], target: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits[target] - lse
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_validation() {
        let layout = Layout::flat(2, 3).unwrap();
        assert!(AtomDataset::uniform(layout.clone(), vec![vec![0, 1], vec![0, 1]]).is_err());
        assert!(AtomDataset::uniform(layout.clone(), vec![vec![0, 3]]).is_err());
        assert!(AtomDataset::uniform(layout.clone(), vec![]).is_err());
        let d = AtomDataset::from_samples(layout, &[vec![0, 1], vec![2, 2], vec![0, 1], vec![0, 1]]).unwrap();
        assert_eq!(d.len(), 2);
        assert!((d.prob(&[0, 1]) - 0.75).abs() < 1e-12);
        assert_eq!(d.prob(&[1, 1]), 0.0);
        let m = d.marginals();
        assert!((m[0].probs()[0] - 0.75).abs() < 1e-12);
        assert!((m[1].probs()[2] - 0.25).abs() < 1e-12);
        let pooled = d.channel_marginal(0);
        assert!((pooled.probs()[1] - 0.375).abs() < 1e-12);
    }

    #[test]
    fn dim_weights_split_gamma() {
        let layout = Layout::new(vec![
            crate::simplex::Channel { kind: ChannelKind::Node, k: 2, len: 2 },
            crate::simplex::Channel { kind: ChannelKind::Edge, k: 2, len: 4 },
        ])
        .unwrap();
        let w = dim_weights(&layout, 0.5);
        assert_eq!(w, vec![0.25, 0.25, 0.125, 0.125, 0.125, 0.125]);
    }
}
