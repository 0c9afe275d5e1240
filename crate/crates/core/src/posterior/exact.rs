use crate::error::{invalid, Result};
use crate::paths::{DirichletPath, NoiseSchedule};
use crate::posterior::{AtomDataset, PosteriorModel};
use crate::simplex::{CategoricalDist, Layout, MultiSimplexState, EPS_X};

/// Bayes posterior of a finite dataset under the Dirichlet path, computed by
/// enumerating atoms.
///
/// For atom `m`, `w_m = ln p(m) + sum_l ln Dir(x_l; 1 + alpha_t e_{m_l})`.
/// Within one dimension the normalising constant `Gamma(K + alpha) /
/// Gamma(1 + alpha)` is the same for every category, so only
/// `alpha_t ln x_l[m_l]` varies across atoms and the constants cancel in the
/// softmax.
#[derive(Debug, Clone)]
pub struct ExactPosterior {
    dataset: AtomDataset,
    schedule: NoiseSchedule,
    log_weights: Vec<f64>,
}

impl ExactPosterior {
    pub fn new(dataset: AtomDataset, schedule: NoiseSchedule) -> Self {
        let log_weights = dataset.weights().log_probs().to_vec();
        Self {
            dataset,
            schedule,
            log_weights,
        }
    }

    /// Single-`K` construction from a path; the dataset layout must use the
    /// path's `K` everywhere.
    pub fn from_path(dataset: AtomDataset, path: &DirichletPath) -> Result<Self> {
        if dataset.layout().dims().any(|(_, k)| k != path.k) {
            return Err(invalid("dataset categories do not match the path's K"));
        }
        Ok(Self::new(dataset, path.schedule))
    }

    pub fn dataset(&self) -> &AtomDataset {
        &self.dataset
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    /// Normalised posterior over atoms.
    pub fn atom_posterior(&self, state: &MultiSimplexState) -> Result<Vec<f64>> {
        self.dataset.layout().check_state(state)?;
        let alpha = self.schedule.alpha(state.t)?;
        let log_x: Vec<Vec<f64>> = state
            .dims
            .iter()
            .map(|d| d.coords().iter().map(|c| c.max(EPS_X).ln()).collect())
            .collect();
        let scores: Vec<f64> = self
            .dataset
            .atoms()
            .iter()
            .zip(&self.log_weights)
            .map(|(atom, lw)| {
                if *lw == f64::NEG_INFINITY {
                    return f64::NEG_INFINITY;
                }
                let ll: f64 = atom.iter().zip(&log_x).map(|(c, lx)| lx[*c]).sum();
                lw + alpha * ll
            })
            .collect();
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut w: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= total);
        Ok(w)
    }
}

impl PosteriorModel for ExactPosterior {
    fn layout(&self) -> &Layout {
        self.dataset.layout()
    }

    fn evaluate(&self, state: &MultiSimplexState) -> Result<Vec<CategoricalDist>> {
        let w = self.atom_posterior(state)?;
        let mut out: Vec<Vec<f64>> = self.dataset.layout().dims().map(|(_, k)| vec![0.0; k]).collect();
        for (atom, wm) in self.dataset.atoms().iter().zip(&w) {
            for (dim, c) in out.iter_mut().zip(atom) {
                dim[*c] += wm;
            }
        }
        out.into_iter()
            .map(|p| {
                let s: f64 = p.iter().sum();
                CategoricalDist::from_probs(p.into_iter().map(|x| x / s).collect())
            })
            .collect()
    }
}
