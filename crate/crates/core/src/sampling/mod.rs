//! Non-Markovian reverse process: posterior resampling followed by
//! re-noising, optional corrector sweeps, and guidance.

mod guidance;
mod property;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::par::{map_indexed, stream_rng, Execution};
use crate::paths::NoiseSchedule;
use crate::posterior::PosteriorModel;
use crate::simplex::{
    nearest_vertex, sample_dirichlet, sample_marginal_prior, CategoricalDist, DirichletParams, Layout,
    MarginalMixturePrior, MultiSimplexState,
};

pub use guidance::{guided_posterior_cf, guided_posterior_classifier, guided_posteriors, snis_guided_step, Guidance};
pub use property::{
    classifier_input_gradient, PropertyHead, PropertyModel, PropertyRegressor, PropertyTrainConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecodeMode {
    /// Draw `x_1` from the final posterior.
    #[default]
    SamplePosterior,
    /// Per-dimension argmax of the final posterior.
    ArgmaxPosterior,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRunConfig {
    /// Number of function evaluations `T`.
    pub nfe: usize,
    pub correctors_per_step: usize,
    /// One prior per layout channel.
    pub priors: Vec<MarginalMixturePrior>,
    pub decode: DecodeMode,
    pub seed: u64,
}

impl SampleRunConfig {
    /// Uniform `Dir(1)` priors on every channel, no correctors.
    pub fn uniform(layout: &Layout, nfe: usize, seed: u64) -> Self {
        Self {
            nfe,
            correctors_per_step: 0,
            priors: layout.channels().iter().map(|c| MarginalMixturePrior::uniform(c.k)).collect(),
            decode: DecodeMode::SamplePosterior,
            seed,
        }
    }

    pub fn validate(&self, layout: &Layout, schedule: &NoiseSchedule) -> Result<()> {
        if self.nfe == 0 {
            return Err(invalid("need at least one function evaluation"));
        }
        if self.priors.len() != layout.channels().len() {
            return Err(invalid(format!(
                "expected {} priors (one per channel), got {}",
                layout.channels().len(),
                self.priors.len()
            )));
        }
        for (p, c) in self.priors.iter().zip(layout.channels()) {
            if p.dim() != c.k {
                return Err(invalid("prior dimension does not match its channel"));
            }
            if (p.kappa() - schedule.kappa()).abs() > 1e-12 {
                return Err(invalid(format!(
                    "prior concentration {} must equal the schedule offset {}",
                    p.kappa(),
                    schedule.kappa()
                )));
            }
        }
        Ok(())
    }

    /// Time grid `t_k = k * t_max / T` for `k = 0..T`.
    pub fn times(&self, schedule: &NoiseSchedule) -> Vec<f64> {
        let dt = schedule.t_max() / self.nfe as f64;
        (0..self.nfe).map(|k| k as f64 * dt).collect()
    }
}

/// Draw `x_0` from the per-channel priors.
pub fn sample_prior<R: Rng + ?Sized>(
    layout: &Layout,
    priors: &[MarginalMixturePrior],
    rng: &mut R,
) -> Result<MultiSimplexState> {
    if priors.len() != layout.channels().len() {
        return Err(invalid("one prior per channel required"));
    }
    let mut dims = Vec::with_capacity(layout.num_dims());
    for (c, p) in layout.channels().iter().zip(priors) {
        for _ in 0..c.len {
            dims.push(sample_marginal_prior(p, rng));
        }
    }
    MultiSimplexState::new(dims, 0.0)
}

/// The kernel given posteriors: per dimension draw `x_1 ~ pi`, then
/// `x ~ Dir(1 + alpha(t_next) e_{x_1})`. Each dimension uses its own
/// sub-stream keyed by a seed drawn from `rng`.
pub fn kernel_step<R: Rng + ?Sized>(
    posteriors: &[CategoricalDist],
    t_next: f64,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<MultiSimplexState> {
    let alpha = schedule.alpha(t_next)?;
    let step_seed: u64 = rng.random();
    let mut dims = Vec::with_capacity(posteriors.len());
    for (d, pi) in posteriors.iter().enumerate() {
        let mut sub = stream_rng(step_seed, d as u64);
        let x1 = pi.sample(&mut sub);
        let params = DirichletParams::vertex_concentrated(x1, pi.len(), alpha)?;
        dims.push(sample_dirichlet(&params, &mut sub));
    }
    MultiSimplexState::new(dims, t_next)
}

/// One denoising transition from `state.t` to `t_next > state.t`.
pub fn denoise_step<M: PosteriorModel + ?Sized, R: Rng + ?Sized>(
    model: &M,
    state: &MultiSimplexState,
    t_next: f64,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<MultiSimplexState> {
    denoise_step_guided(model, &Guidance::None, state, t_next, schedule, rng)
}

pub fn denoise_step_guided<M: PosteriorModel + ?Sized, R: Rng + ?Sized>(
    model: &M,
    guidance: &Guidance<'_>,
    state: &MultiSimplexState,
    t_next: f64,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<MultiSimplexState> {
    if t_next <= state.t {
        return Err(invalid(format!(
            "t_next = {t_next} must exceed the current time {}; use corrector_step to stay at t",
            state.t
        )));
    }
    if t_next > schedule.t_max() + 1e-15 {
        return Err(invalid(format!("t_next = {t_next} exceeds t_max = {}", schedule.t_max())));
    }
    let pis = guided_posteriors(model, guidance, state)?;
    kernel_step(&pis, t_next, schedule, rng)
}

/// Denoising transition with the time index held fixed.
pub fn corrector_step<M: PosteriorModel + ?Sized, R: Rng + ?Sized>(
    model: &M,
    state: &MultiSimplexState,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<MultiSimplexState> {
    corrector_step_guided(model, &Guidance::None, state, schedule, rng)
}

pub fn corrector_step_guided<M: PosteriorModel + ?Sized, R: Rng + ?Sized>(
    model: &M,
    guidance: &Guidance<'_>,
    state: &MultiSimplexState,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<MultiSimplexState> {
    let pis = guided_posteriors(model, guidance, state)?;
    kernel_step(&pis, state.t, schedule, rng)
}

/// Per-step diagnostics: time and nearest-vertex decoding of the state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub t: f64,
    pub nearest: Vec<usize>,
}

/// Runs one chain and returns the decoded clean sample.
pub fn sample<M: PosteriorModel + ?Sized, R: Rng + ?Sized>(
    model: &M,
    config: &SampleRunConfig,
    guidance: &Guidance<'_>,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<Vec<usize>> {
    Ok(run_chain(model, config, guidance, schedule, rng, false)?.0)
}

/// Like [`sample`], also returning the state after every step.
pub fn sample_traced<M: PosteriorModel + ?Sized, R: Rng + ?Sized>(
    model: &M,
    config: &SampleRunConfig,
    guidance: &Guidance<'_>,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<(Vec<usize>, Vec<StepTrace>)> {
    run_chain(model, config, guidance, schedule, rng, true)
}

fn run_chain<M: PosteriorModel + ?Sized, R: Rng + ?Sized>(
    model: &M,
    config: &SampleRunConfig,
    guidance: &Guidance<'_>,
    schedule: &NoiseSchedule,
    rng: &mut R,
    traced: bool,
) -> Result<(Vec<usize>, Vec<StepTrace>)> {
    let layout = model.layout();
    config.validate(layout, schedule)?;
    let mut trace = Vec::new();
    let record = |s: &MultiSimplexState, trace: &mut Vec<StepTrace>| {
        if traced {
            trace.push(StepTrace {
                t: s.t,
                nearest: s.dims.iter().map(nearest_vertex).collect(),
            });
        }
    };
    let mut state = sample_prior(layout, &config.priors, rng)?;
    record(&state, &mut trace);
    for t_next in config.times(schedule).into_iter().skip(1) {
        state = denoise_step_guided(model, guidance, &state, t_next, schedule, rng)?;
        for _ in 0..config.correctors_per_step {
            state = corrector_step_guided(model, guidance, &state, schedule, rng)?;
        }
        record(&state, &mut trace);
    }
    let pis = guided_posteriors(model, guidance, &state)?;
    let out = match config.decode {
        DecodeMode::SamplePosterior => {
            let seed: u64 = rng.random();
            pis.iter()
                .enumerate()
                .map(|(d, pi)| pi.sample(&mut stream_rng(seed, d as u64)))
                .collect()
        }
        DecodeMode::ArgmaxPosterior => pis.iter().map(CategoricalDist::argmax).collect(),
    };
    Ok((out, trace))
}

/// `count` independent chains; chain `c` uses stream `c` of `config.seed`,
/// so results do not depend on the execution mode.
pub fn sample_batch<M: PosteriorModel + ?Sized>(
    model: &M,
    config: &SampleRunConfig,
    guidance: &Guidance<'_>,
    schedule: &NoiseSchedule,
    count: usize,
    exec: Execution,
) -> Result<Vec<Vec<usize>>> {
    config.validate(model.layout(), schedule)?;
    map_indexed(exec, count, |c| {
        let mut rng = stream_rng(config.seed, c as u64);
        sample(model, config, guidance, schedule, &mut rng)
    })
    .into_iter()
    .collect()
}

/// Total variation between the empirical distribution of `samples` and a
/// finite target given as (atom, probability) pairs.
pub fn tv_to_target(samples: &[Vec<usize>], atoms: &[Vec<usize>], probs: &[f64]) -> f64 {
    let mut counts: std::collections::HashMap<&[usize], f64> = Default::default();
    for s in samples {
        *counts.entry(s.as_slice()).or_default() += 1.0;
    }
    let n = samples.len().max(1) as f64;
    let mut l1 = 0.0;
    for (a, p) in atoms.iter().zip(probs) {
        l1 += (counts.remove(a.as_slice()).unwrap_or(0.0) / n - p).abs();
    }
    // mass on states outside the target support
    l1 += counts.values().map(|c| c / n).sum::<f64>();
    0.5 * l1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::posterior::{AtomDataset, ExactPosterior};
    use crate::simplex::SimplexPoint;
    use crate::voronoi::{voronoi_prob_closed_form, VoronoiQuery};
    use approx::assert_relative_eq;

    fn one_dim(atoms: Vec<Vec<usize>>, k: usize) -> ExactPosterior {
        let ds = AtomDataset::uniform(Layout::flat(1, k).unwrap(), atoms).unwrap();
        ExactPosterior::new(ds, NoiseSchedule::default())
    }

    #[test]
    fn step_requires_forward_time() {
        let m = one_dim(vec![vec![0], vec![1]], 2);
        let s = MultiSimplexState::new(vec![SimplexPoint::uniform(2)], 0.3).unwrap();
        let mut rng = stream_rng(1, 0);
        let sched = NoiseSchedule::default();
        assert!(denoise_step(&m, &s, 0.3, &sched, &mut rng).is_err());
        assert!(denoise_step(&m, &s, 0.2, &sched, &mut rng).is_err());
        assert!(denoise_step(&m, &s, 0.9995, &sched, &mut rng).is_err());
        assert!(denoise_step(&m, &s, 0.999, &sched, &mut rng).is_ok());
    }

    #[test]
    fn delta_posterior_concentrates_at_t_max() {
        let m = one_dim(vec![vec![2]], 3);
        let sched = NoiseSchedule::default();
        let s = MultiSimplexState::new(vec![SimplexPoint::uniform(3)], 0.5).unwrap();
        let mut rng = stream_rng(2, 0);
        let n = 10_000;
        let hits = (0..n)
            .filter(|_| nearest_vertex(&denoise_step(&m, &s, sched.t_max(), &sched, &mut rng).unwrap().dims[0]) == 2)
            .count();
        let pv = voronoi_prob_closed_form(&VoronoiQuery::new(3, sched.alpha(sched.t_max()).unwrap()).unwrap()).unwrap();
        assert!(pv >= 0.99);
        assert!(hits as f64 / n as f64 >= 0.99);
    }

    #[test]
    fn kernel_output_matches_mixture_mean() {
        let m = one_dim(vec![vec![0], vec![1]], 2);
        let sched = NoiseSchedule::default();
        let s = MultiSimplexState::new(vec![SimplexPoint::new(vec![0.7, 0.3]).unwrap()], 0.2).unwrap();
        let pi0 = m.evaluate(&s).unwrap()[0].probs()[0];
        let t_next = 0.4;
        let alpha = sched.alpha(t_next).unwrap();
        let expected = pi0 * (1.0 + alpha) / (2.0 + alpha) + (1.0 - pi0) / (2.0 + alpha);
        let mut rng = stream_rng(3, 0);
        let n = 100_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| denoise_step(&m, &s, t_next, &sched, &mut rng).unwrap().dims[0].coords()[0])
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!((mean - expected).abs() <= 4.0 * se, "{mean} vs {expected}");
    }

    #[test]
    fn single_atom_corrector_matches_path_mean() {
        let m = one_dim(vec![vec![1]], 3);
        let sched = NoiseSchedule::default();
        let t = 0.5;
        let alpha = sched.alpha(t).unwrap();
        let mut rng = stream_rng(4, 0);
        let s = MultiSimplexState::new(vec![SimplexPoint::uniform(3)], t).unwrap();
        let n = 20_000;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for _ in 0..n {
            let x = corrector_step(&m, &s, &sched, &mut rng).unwrap().dims[0].coords()[1];
            sum += x;
            sq += x * x;
        }
        let mean = sum / n as f64;
        let se = ((sq / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - (1.0 + alpha) / (3.0 + alpha)).abs() <= 3.0 * se);
    }

    #[test]
    fn config_validation() {
        let layout = Layout::flat(2, 3).unwrap();
        let sched = NoiseSchedule::default();
        let mut c = SampleRunConfig::uniform(&layout, 4, 0);
        assert!(c.validate(&layout, &sched).is_ok());
        c.nfe = 0;
        assert!(c.validate(&layout, &sched).is_err());
        let mut c = SampleRunConfig::uniform(&layout, 4, 0);
        c.priors = vec![MarginalMixturePrior::new(CategoricalDist::uniform(3), 2.0).unwrap()];
        assert!(c.validate(&layout, &sched).is_err());
        assert_eq!(SampleRunConfig::uniform(&layout, 4, 0).times(&sched), vec![0.0, 0.24975, 0.4995, 0.74925]);
    }

    #[test]
    fn one_step_run_decodes_prior_posterior() {
        // T = 1: the only evaluation is the posterior at t_0 = 0, i.e. the
        // data marginal
        let m = one_dim(vec![vec![0], vec![2]], 3);
        let sched = NoiseSchedule::default();
        let cfg = SampleRunConfig::uniform(m.layout(), 1, 5);
        let out = sample_batch(&m, &cfg, &Guidance::None, &sched, 20_000, Execution::default()).unwrap();
        let zeros = out.iter().filter(|s| s[0] == 0).count() as f64 / out.len() as f64;
        assert!(out.iter().all(|s| s[0] != 1));
        assert!((zeros - 0.5).abs() < 4.0 * (0.25f64 / 20_000.0).sqrt());
    }

    #[test]
    fn batch_is_independent_of_execution_mode() {
        let m = one_dim(vec![vec![0], vec![1], vec![2]], 3);
        let sched = NoiseSchedule::default();
        let cfg = SampleRunConfig::uniform(m.layout(), 6, 9);
        let a = sample_batch(&m, &cfg, &Guidance::None, &sched, 64, Execution::Sequential).unwrap();
        let b = sample_batch(&m, &cfg, &Guidance::None, &sched, 64, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn trace_has_one_entry_per_state() {
        let m = one_dim(vec![vec![0]], 2);
        let sched = NoiseSchedule::default();
        let cfg = SampleRunConfig::uniform(m.layout(), 5, 1);
        let (out, trace) = sample_traced(&m, &cfg, &Guidance::None, &sched, &mut stream_rng(1, 0)).unwrap();
        assert_eq!(out, vec![0]);
        assert_eq!(trace.len(), 5);
        assert_relative_eq!(trace[4].t, 0.7992, epsilon = 1e-12);
    }

    #[test]
    fn tv_counts_off_support_mass() {
        let atoms = vec![vec![0], vec![1]];
        let tv = tv_to_target(&[vec![0], vec![2]], &atoms, &[0.5, 0.5]);
        assert_relative_eq!(tv, 0.5, epsilon = 1e-15);
    }
}
