//! The small categorical dataset used throughout the tests, benches and
//! acceptance runs.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::graph::{generate_dataset, Generator, GraphDatasetSpec, GraphEncoding};
use crate::par::Execution;
use crate::paths::NoiseSchedule;
use crate::posterior::{AtomDataset, ExactPosterior};
use crate::sampling::{
    sample_batch, Guidance, PropertyHead, PropertyRegressor, PropertyTrainConfig, SampleRunConfig,
};
use crate::simplex::{CategoricalDist, Layout};

/// `L = 3`, `K = 3`, four equiprobable atoms.
pub fn toy_dataset() -> AtomDataset {
    let atoms = vec![vec![0, 0, 0], vec![1, 1, 1], vec![2, 2, 2], vec![0, 1, 2]];
    AtomDataset::uniform(Layout::flat(3, 3).expect("valid layout"), atoms).expect("distinct atoms")
}

/// Exact posterior of [`toy_dataset`] under the default schedule.
pub fn toy_exact() -> ExactPosterior {
    ExactPosterior::new(toy_dataset(), NoiseSchedule::default())
}

/// Settings for the edge-count guidance experiment on Erdős–Rényi graphs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceDemoConfig {
    pub n: usize,
    pub graphs: usize,
    pub p: f64,
    pub data_seed: u64,
    pub omega: f64,
    /// Target edge count; defaults to the dataset mean plus 1.5 standard
    /// deviations, rounded.
    pub target: Option<usize>,
    pub samples: usize,
    pub nfe: usize,
    pub seeds: Vec<u64>,
    pub property: PropertyTrainConfig,
}

impl Default for GuidanceDemoConfig {
    fn default() -> Self {
        Self {
            n: 5,
            graphs: 300,
            p: 0.3,
            data_seed: 0,
            omega: 2.0,
            target: None,
            samples: 400,
            nfe: 32,
            seeds: vec![0, 1, 2],
            property: PropertyTrainConfig {
                steps: 3000,
                ..Default::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceRun {
    pub seed: u64,
    pub mae_unguided: f64,
    pub mae_guided: f64,
    pub mean_edges_unguided: f64,
    pub mean_edges_guided: f64,
    /// Classifier-free guidance at `omega = 1` reproduced the conditional
    /// sampler's output stream exactly.
    pub cf_matches_conditional: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceDemoReport {
    pub target: usize,
    pub omega: f64,
    pub data_mean_edges: f64,
    pub property_final_loss: f64,
    pub runs: Vec<GuidanceRun>,
}

/// Unguided vs classifier-guided sampling from the exact posterior of a
/// small ER dataset, with property = edge count and a softmax regressor
/// trained across noise levels. Per seed, reports the mean absolute error
/// between the target and realised edge counts.
pub fn guidance_demo(config: &GuidanceDemoConfig, exec: Execution) -> Result<GuidanceDemoReport> {
    let graphs = generate_dataset(&GraphDatasetSpec {
        generator: Generator::ErdosRenyi { p: config.p },
        n: config.n,
        count: config.graphs,
        seed: config.data_seed,
    })?;
    let enc = GraphEncoding::unattributed(config.n);
    let layout = enc.layout()?;
    let clean: Vec<Vec<usize>> = graphs.iter().map(|g| enc.encode(g)).collect::<Result<_>>()?;
    let dataset = AtomDataset::from_samples(layout.clone(), &clean)?;
    let schedule = NoiseSchedule::default();
    let edges_of = |x: &[usize]| x.iter().filter(|c| **c != 0).count();

    let counts: Vec<f64> = clean.iter().map(|x| edges_of(x) as f64).collect();
    let mean = counts.iter().sum::<f64>() / counts.len() as f64;
    let sd = (counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / counts.len() as f64).sqrt();
    let max_edges = layout.num_dims();
    let target = config
        .target
        .unwrap_or_else(|| ((mean + 1.5 * sd).round() as usize).min(max_edges));
    if target > max_edges {
        return Err(invalid(format!("target {target} exceeds the {max_edges} possible edges")));
    }

    let labels: Vec<usize> = dataset.atoms().iter().map(|a| edges_of(a)).collect();
    let mut property = PropertyRegressor::zeros(layout.clone(), PropertyHead::Softmax, max_edges + 1)?;
    let trace = property.train(&dataset, &labels, &schedule, &config.property)?;
    let tail = trace.len().min(100).max(1);
    let property_final_loss = trace.iter().rev().take(tail).sum::<f64>() / tail as f64;

    let unconditional = ExactPosterior::new(dataset.clone(), schedule);
    // conditional model: the data restricted to graphs at the target
    let cond_atoms: Vec<(Vec<usize>, f64)> = dataset
        .atoms()
        .iter()
        .zip(dataset.weights().probs())
        .filter(|(a, _)| edges_of(a) == target)
        .map(|(a, w)| (a.clone(), *w))
        .collect();
    let conditional = if cond_atoms.is_empty() {
        None
    } else {
        let (atoms, w): (Vec<_>, Vec<_>) = cond_atoms.into_iter().unzip();
        Some(ExactPosterior::new(
            AtomDataset::new(layout.clone(), atoms, CategoricalDist::from_weights(&w)?)?,
            schedule,
        ))
    };

    let mae = |samples: &[Vec<usize>]| -> (f64, f64) {
        let n = samples.len() as f64;
        let e: Vec<f64> = samples.iter().map(|s| edges_of(s) as f64).collect();
        (
            e.iter().map(|c| (c - target as f64).abs()).sum::<f64>() / n,
            e.iter().sum::<f64>() / n,
        )
    };
    let mut runs = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let run_cfg = SampleRunConfig::uniform(&layout, config.nfe, seed);
        let plain = sample_batch(&unconditional, &run_cfg, &Guidance::None, &schedule, config.samples, exec)?;
        let guidance = Guidance::Classifier {
            property: &property,
            target,
            omega: config.omega,
        };
        let guided = sample_batch(&unconditional, &run_cfg, &guidance, &schedule, config.samples, exec)?;
        let cf_matches_conditional = match &conditional {
            Some(cond) => {
                let n = config.samples.min(50);
                let direct = sample_batch(cond, &run_cfg, &Guidance::None, &schedule, n, exec)?;
                let cf = Guidance::ClassifierFree {
                    conditional: cond,
                    omega: 1.0,
                };
                let via_cf = sample_batch(&unconditional, &run_cfg, &cf, &schedule, n, exec)?;
                direct == via_cf
            }
            None => false,
        };
        let (mae_unguided, mean_edges_unguided) = mae(&plain);
        let (mae_guided, mean_edges_guided) = mae(&guided);
        runs.push(GuidanceRun {
            seed,
            mae_unguided,
            mae_guided,
            mean_edges_unguided,
            mean_edges_guided,
            cf_matches_conditional,
        });
    }
    Ok(GuidanceDemoReport {
        target,
        omega: config.omega,
        data_mean_edges: mean,
        property_final_loss,
        runs,
    })
}
