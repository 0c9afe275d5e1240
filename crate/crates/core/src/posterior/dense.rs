use rand::Rng;

use crate::error::{invalid, Result};
use crate::posterior::params::{he_init, matvec_add, matvec_t_add, outer_add};
use crate::posterior::{
    dim_weights, log_softmax_at, softmax, time_features, ParamSet, PosteriorModel, Tensor,
    TrainExample, Trainable,
};
use crate::simplex::{CategoricalDist, Layout, MultiSimplexState};

/// Flat MLP denoiser: the concatenated simplex coordinates plus
/// `(sin pi t, cos pi t)` go through ReLU hidden layers into one softmax
/// head per dimension.
#[derive(Debug, Clone)]
pub struct DenseDenoiser {
    layout: Layout,
    hidden: Vec<usize>,
    params: ParamSet,
}

struct Activations {
    // layer inputs: acts[0] is the feature vector, acts[l] the output of
    // hidden layer l - 1 (post-ReLU)
    acts: Vec<Vec<f64>>,
    logits: Vec<f64>,
}

impl DenseDenoiser {
    /// All-zero parameters; every head outputs the uniform distribution.
    pub fn zeros(layout: Layout, hidden: &[usize]) -> Result<Self> {
        if hidden.contains(&0) {
            return Err(invalid("hidden layer widths must be positive"));
        }
        let mut sizes = vec![layout.num_coords() + 2];
        sizes.extend_from_slice(hidden);
        sizes.push(layout.num_coords());
        let mut params = ParamSet::default();
        for (l, w) in sizes.windows(2).enumerate() {
            params.push(Tensor::zeros(format!("layer{l}.weight"), &[w[1], w[0]]));
            params.push(Tensor::zeros(format!("layer{l}.bias"), &[w[1]]));
        }
        Ok(Self {
            layout,
            hidden: hidden.to_vec(),
            params,
        })
    }

    /// He-initialised weights, zero biases.
    pub fn new<R: Rng + ?Sized>(layout: Layout, hidden: &[usize], rng: &mut R) -> Result<Self> {
        let mut model = Self::zeros(layout, hidden)?;
        for l in 0..model.num_layers() {
            let cols = model.params.tensors()[2 * l].shape[1];
            he_init(model.params.get_mut(2 * l), cols, rng);
        }
        Ok(model)
    }

    pub fn from_params(layout: Layout, hidden: &[usize], params: &ParamSet) -> Result<Self> {
        let mut model = Self::zeros(layout, hidden)?;
        model.params.load_from(params)?;
        Ok(model)
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    fn num_layers(&self) -> usize {
        self.hidden.len() + 1
    }

    fn features(&self, state: &MultiSimplexState) -> Result<Vec<f64>> {
        self.layout.check_state(state)?;
        let mut f = state.flatten();
        f.extend_from_slice(&time_features(state.t));
        Ok(f)
    }

    fn forward(&self, state: &MultiSimplexState) -> Result<Activations> {
        let mut acts = vec![self.features(state)?];
        let layers = self.num_layers();
        for l in 0..layers {
            let b = self.params.get(2 * l + 1);
            let mut out = b.to_vec();
            matvec_add(self.params.get(2 * l), &acts[l], &mut out);
            if l + 1 < layers {
                out.iter_mut().for_each(|x| *x = x.max(0.0));
                acts.push(out);
            } else {
                return Ok(Activations { acts, logits: out });
            }
        }
        unreachable!("at least one layer")
    }

    /// Raw logits, concatenated over dimensions.
    pub fn logits(&self, state: &MultiSimplexState) -> Result<Vec<f64>> {
        Ok(self.forward(state)?.logits)
    }

    /// Upper bound on the Lipschitz constant of the logits w.r.t. the input
    /// features: the product of per-layer Frobenius norms.
    pub fn lipschitz_bound(&self) -> f64 {
        (0..self.num_layers()).map(|l| self.params.frobenius(2 * l)).product()
    }
}

impl PosteriorModel for DenseDenoiser {
    fn layout(&self) -> &Layout {
        &self.layout
    }

    fn evaluate(&self, state: &MultiSimplexState) -> Result<Vec<CategoricalDist>> {
        let logits = self.logits(state)?;
        let mut offset = 0;
        self.layout
            .dim_sizes()
            .into_iter()
            .map(|k| {
                let d = CategoricalDist::from_logits(&logits[offset..offset + k]);
                offset += k;
                d
            })
            .collect()
    }
}

impl Trainable for DenseDenoiser {
    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn example_loss_grad(&self, example: &TrainExample, gamma: f64, grad: &mut ParamSet) -> Result<f64> {
        self.layout.check_clean(&example.clean)?;
        let fwd = self.forward(&example.state)?;
        let weights = dim_weights(&self.layout, gamma);

        let mut loss = 0.0;
        let mut delta = vec![0.0; fwd.logits.len()];
        let mut offset = 0;
        for ((k, target), w) in self.layout.dim_sizes().into_iter().zip(&example.clean).zip(&weights) {
            let z = &fwd.logits[offset..offset + k];
            loss -= w * log_softmax_at(z, *target);
            let p = softmax(z);
            for (j, pj) in p.iter().enumerate() {
                delta[offset + j] = w * (pj - if j == *target { 1.0 } else { 0.0 });
            }
            offset += k;
        }

        for l in (0..self.num_layers()).rev() {
            let input = &fwd.acts[l];
            outer_add(grad.get_mut(2 * l), &delta, input);
            for (gb, d) in grad.get_mut(2 * l + 1).iter_mut().zip(&delta) {
                *gb += d;
            }
            if l == 0 {
                break;
            }
            let mut prev = vec![0.0; input.len()];
            matvec_t_add(self.params.get(2 * l), &delta, &mut prev);
            // ReLU mask from the stored post-activation
            for (g, a) in prev.iter_mut().zip(input) {
                if *a <= 0.0 {
                    *g = 0.0;
                }
            }
            delta = prev;
        }
        Ok(loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::par::stream_rng;
    use crate::paths::DirichletPath;
    use crate::paths::NoiseSchedule;
    use crate::posterior::{gradient_check, loss_weighted_nll};
    use approx::assert_relative_eq;

    fn layout() -> Layout {
        Layout::flat(3, 3).unwrap()
    }

    fn example(seed: u64) -> TrainExample {
        let path = DirichletPath::new(NoiseSchedule::default(), 3).unwrap();
        let mut rng = stream_rng(seed, 0);
        let clean = vec![0, 2, 1];
        let state = path.noise_forward_multi(&clean, 0.4, &mut rng).unwrap();
        TrainExample { clean, state }
    }

    #[test]
    fn zero_weights_give_uniform() {
        let m = DenseDenoiser::zeros(layout(), &[8]).unwrap();
        for pi in m.evaluate(&example(1).state).unwrap() {
            for p in pi.probs() {
                assert_relative_eq!(*p, 1.0 / 3.0, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn heads_are_normalised() {
        let mut rng = stream_rng(2, 0);
        let m = DenseDenoiser::new(layout(), &[16, 16], &mut rng).unwrap();
        for pi in m.evaluate(&example(3).state).unwrap() {
            assert!((pi.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn logits_are_lipschitz() {
        let mut rng = stream_rng(4, 0);
        let m = DenseDenoiser::new(layout(), &[16], &mut rng).unwrap();
        let bound = m.lipschitz_bound();
        let base = example(5).state;
        let z0 = m.logits(&base).unwrap();
        for i in 0..9 {
            let delta = 1e-3;
            let mut pert = base.clone();
            let dim = i / 3;
            let mut coords = pert.dims[dim].coords().to_vec();
            coords[i % 3] += delta;
            // bypass normalisation: features are raw coordinates
            pert.dims[dim] = crate::simplex::SimplexPoint::from_unnormalized(coords.clone()).unwrap();
            let shift: f64 = pert.dims[dim]
                .coords()
                .iter()
                .zip(base.dims[dim].coords())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            let z1 = m.logits(&pert).unwrap();
            let change = z0.iter().zip(&z1).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!(change <= bound * shift + 1e-12, "{change} > {bound} * {shift}");
        }
    }

    #[test]
    fn uniform_model_loss_is_log_k() {
        let m = DenseDenoiser::zeros(layout(), &[4]).unwrap();
        let batch = vec![example(6), example(7)];
        let (loss, _) = loss_weighted_nll(&m, &batch, 1.0).unwrap();
        assert_relative_eq!(loss, 3f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn saturated_model_has_tiny_loss() {
        // single linear layer whose bias puts logit 20 on the target category
        let mut m = DenseDenoiser::zeros(layout(), &[]).unwrap();
        let clean = [0usize, 2, 1];
        let bias = m.params_mut().get_mut(1);
        for (d, c) in clean.iter().enumerate() {
            for j in 0..3 {
                bias[d * 3 + j] = if j == *c { 10.0 } else { -10.0 };
            }
        }
        let (loss, _) = loss_weighted_nll(&m, &[example(8)], 1.0).unwrap();
        assert!(loss <= 1e-6, "{loss}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = stream_rng(9, 0);
        let m = DenseDenoiser::new(layout(), &[6, 5], &mut rng).unwrap();
        let batch = vec![example(10), example(11), example(12)];
        let report = gradient_check(&m, &batch, 1.0, 20, 1e-5, &mut rng).unwrap();
        assert!(report.max_rel_error <= 1e-4, "{report:?}");
    }

    #[test]
    fn rejects_mismatched_state() {
        let m = DenseDenoiser::zeros(layout(), &[4]).unwrap();
        let bad = MultiSimplexState::new(vec![crate::simplex::SimplexPoint::uniform(2)], 0.1).unwrap();
        assert!(m.evaluate(&bad).is_err());
    }
}
