//! Voronoi probabilities of the Dirichlet path.
//!
//! For `x ~ Dir(1 + alpha e_i)` on `S_K`, the probability that `x` stays in
//! the Voronoi region of its origin vertex is
//!
//! ```text
//! P_v = sum_{k=0}^{K-1} (-1)^k C(K-1, k) / (k+1)^(alpha + 1)
//! ```
//!
//! obtained by writing the Dirichlet draw as normalised Gamma variates, with
//! `g_i ~ Gamma(1 + alpha)` and `g_j ~ Exp(1)`, and integrating the CDF of
//! the maximum of the exponentials. [`voronoi_prob_printed_exponent`] keeps
//! the variant with exponent `alpha - 1`, which does not pass the `K = 2`
//! Beta-CDF check, so it can be discriminated by the Monte-Carlo oracle.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::par::{map_shards, stream_rng, Execution};
use crate::paths::NoiseSchedule;
use crate::simplex::{nearest_vertex, sample_dirichlet, DirichletParams};

/// Largest `K` accepted by the closed form.
pub const MAX_CLOSED_FORM_K: usize = 64;

const MC_SHARD: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoronoiQuery {
    pub k: usize,
    pub alpha: f64,
}

impl VoronoiQuery {
    pub fn new(k: usize, alpha: f64) -> Result<Self> {
        if k < 2 {
            return Err(invalid("Voronoi query needs K >= 2"));
        }
        if !alpha.is_finite() || alpha < 0.0 {
            return Err(invalid(format!("alpha must be finite and >= 0, got {alpha}")));
        }
        Ok(Self { k, alpha })
    }
}

// Neumaier-compensated alternating binomial sum with exponent `exponent`.
fn alternating_sum(k: usize, exponent: f64) -> Result<f64> {
    if k > MAX_CLOSED_FORM_K {
        return Err(Error::Unsupported(format!(
            "closed-form Voronoi probability is limited to K <= {MAX_CLOSED_FORM_K} (got {k})"
        )));
    }
    let n = (k - 1) as f64;
    let mut binom = 1.0;
    let mut sum = 0.0;
    let mut comp = 0.0;
    for j in 0..k {
        let jf = j as f64;
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        let term = sign * binom * (-exponent * (jf + 1.0).ln()).exp();
        let s = sum + term;
        if sum.abs() >= term.abs() {
            comp += (sum - s) + term;
        } else {
            comp += (term - s) + sum;
        }
        sum = s;
        binom = binom * (n - jf) / (jf + 1.0);
    }
    Ok(sum + comp)
}

pub fn voronoi_prob_closed_form(q: &VoronoiQuery) -> Result<f64> {
    Ok(alternating_sum(q.k, q.alpha + 1.0)?.clamp(0.0, 1.0))
}

/// Same sum with exponent `alpha - 1`. Not a probability in general; kept
/// for comparison against the oracle.
pub fn voronoi_prob_printed_exponent(q: &VoronoiQuery) -> Result<f64> {
    alternating_sum(q.k, q.alpha - 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
}

/// Fraction of `x ~ Dir(1 + alpha e_0)` draws whose nearest vertex is 0.
pub fn voronoi_prob_mc<R: Rng + ?Sized>(
    q: &VoronoiQuery,
    n_samples: usize,
    rng: &mut R,
    exec: Execution,
) -> Result<McEstimate> {
    if n_samples < 1000 {
        return Err(invalid(format!("need at least 1000 samples, got {n_samples}")));
    }
    let params = DirichletParams::vertex_concentrated(0, q.k, q.alpha)?;
    let base: u64 = rng.random();
    let hits: usize = map_shards(exec, n_samples, MC_SHARD, |s, len| {
        let mut r = stream_rng(base, s as u64);
        (0..len)
            .filter(|_| nearest_vertex(&sample_dirichlet(&params, &mut r)) == 0)
            .count()
    })
    .into_iter()
    .sum();
    let p = hits as f64 / n_samples as f64;
    Ok(McEstimate {
        estimate: p,
        std_error: (p * (1.0 - p) / n_samples as f64).sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub t: f64,
    pub alpha: f64,
    pub voronoi_prob: f64,
}

/// Closed-form Voronoi probability on a uniform grid of `n_points` times in
/// `[0, t_max]`.
pub fn calibration_curve(
    schedule: &NoiseSchedule,
    k: usize,
    n_points: usize,
) -> Result<Vec<CalibrationPoint>> {
    if n_points < 2 {
        return Err(invalid("calibration curve needs at least 2 points"));
    }
    let step = schedule.t_max() / (n_points - 1) as f64;
    (0..n_points)
        .map(|i| {
            let t = (i as f64 * step).min(schedule.t_max());
            let alpha = schedule.alpha(t)?;
            let voronoi_prob = voronoi_prob_closed_form(&VoronoiQuery::new(k, alpha)?)?;
            Ok(CalibrationPoint {
                t,
                alpha,
                voronoi_prob,
            })
        })
        .collect()
}
