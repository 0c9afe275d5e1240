//! Simplex geometry, Gamma / Dirichlet sampling and densities, categorical
//! distributions and the marginal mixture prior.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Interior floor applied to every simplex coordinate.
pub const EPS_X: f64 = 1e-10;

/// Tolerance on `sum(coords) == 1`.
pub const SUM_TOL: f64 = 1e-9;

// Lanczos approximation, g = 7, n = 9.
const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the Gamma function for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection: Γ(x)Γ(1-x) = π / sin(πx)
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS_COEF[0];
    for (i, c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// A point on the probability simplex `S_K`, kept strictly inside it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplexPoint {
    coords: Vec<f64>,
}

impl SimplexPoint {
    /// Validates `coords` (non-negative, summing to one) and clamps them to
    /// the interior.
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.len() < 2 {
            return Err(invalid(format!(
                "simplex point needs K >= 2 coordinates, got {}",
                coords.len()
            )));
        }
        if coords.iter().any(|c| !c.is_finite() || *c < -SUM_TOL) {
            return Err(invalid("simplex coordinates must be finite and non-negative"));
        }
        let s: f64 = coords.iter().sum();
        if (s - 1.0).abs() > SUM_TOL {
            return Err(invalid(format!("simplex coordinates sum to {s}, expected 1")));
        }
        Ok(Self::clamped(coords))
    }

    /// Normalises an arbitrary non-negative vector and clamps it.
    pub fn from_unnormalized(weights: Vec<f64>) -> Result<Self> {
        if weights.len() < 2 {
            return Err(invalid("simplex point needs K >= 2 coordinates"));
        }
        if weights.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(invalid("weights must be finite and non-negative"));
        }
        let s: f64 = weights.iter().sum();
        if s <= 0.0 {
            return Err(invalid("weights sum to zero"));
        }
        Ok(Self::clamped(weights.into_iter().map(|w| w / s).collect()))
    }

    /// The (clamped) vertex `e_k` of `S_K`.
    pub fn vertex(k: usize, dim: usize) -> Self {
        assert!(dim >= 2 && k < dim, "vertex {k} out of range for K = {dim}");
        let mut coords = vec![EPS_X; dim];
        coords[k] = 1.0 - (dim as f64 - 1.0) * EPS_X;
        Self { coords }
    }

    /// Barycentre `(1/K, ..., 1/K)`.
    pub fn uniform(dim: usize) -> Self {
        assert!(dim >= 2);
        Self {
            coords: vec![1.0 / dim as f64; dim],
        }
    }

    // Raises small coordinates to EPS_X and takes the added mass from the
    // largest coordinate, so the sum is preserved.
    fn clamped(mut coords: Vec<f64>) -> Self {
        let mut added = 0.0;
        for c in coords.iter_mut() {
            if *c < EPS_X {
                added += EPS_X - *c;
                *c = EPS_X;
            }
        }
        if added > 0.0 {
            let top = argmax(&coords);
            coords[top] -= added;
        }
        Self { coords }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Index of the Voronoi region containing `x`, i.e. its nearest vertex.
pub fn nearest_vertex(x: &SimplexPoint) -> usize {
    argmax(x.coords())
}

/// A categorical distribution over `K` outcomes, kept together with its
/// log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalDist {
    probs: Vec<f64>,
    log_probs: Vec<f64>,
}

impl CategoricalDist {
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(invalid("categorical distribution needs at least one outcome"));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(invalid("probabilities must be finite and non-negative"));
        }
        let s: f64 = probs.iter().sum();
        if (s - 1.0).abs() > SUM_TOL {
            return Err(invalid(format!("probabilities sum to {s}, expected 1")));
        }
        let log_probs = probs.iter().map(|p| p.ln()).collect();
        Ok(Self { probs, log_probs })
    }

    /// Normalises non-negative weights.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(invalid("weights must be finite and non-negative"));
        }
        let s: f64 = weights.iter().sum();
        if weights.is_empty() || s <= 0.0 {
            return Err(invalid("weights must have positive sum"));
        }
        Self::from_probs(weights.iter().map(|w| w / s).collect())
    }

    /// Softmax of `logits`. Entries equal to `-inf` get probability zero.
    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        if logits.is_empty() {
            return Err(invalid("empty logits"));
        }
        if logits.iter().any(|l| l.is_nan() || *l == f64::INFINITY) {
            return Err(invalid("logits must not be NaN or +inf"));
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(invalid("all logits are -inf"));
        }
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        let log_probs: Vec<f64> = logits.iter().map(|l| l - lse).collect();
        let probs = log_probs.iter().map(|l| l.exp()).collect();
        Ok(Self { probs, log_probs })
    }

    pub fn uniform(k: usize) -> Self {
        assert!(k >= 1);
        let p = 1.0 / k as f64;
        Self {
            probs: vec![p; k],
            log_probs: vec![p.ln(); k],
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }

    /// Inverse-CDF draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (i, p) in self.probs.iter().enumerate() {
            if *p > 0.0 {
                last_positive = i;
            }
            acc += p;
            if u < acc {
                return i;
            }
        }
        last_positive
    }
}

/// Concentration parameters of a Dirichlet distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletParams {
    alpha: Vec<f64>,
}

impl DirichletParams {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.len() < 2 {
            return Err(invalid("Dirichlet needs K >= 2 concentrations"));
        }
        if alpha.iter().any(|a| !a.is_finite() || *a <= 0.0) {
            return Err(invalid("Dirichlet concentrations must be finite and > 0"));
        }
        Ok(Self { alpha })
    }

    /// `Dir(1 + strength * e_k)` on `S_K`.
    pub fn vertex_concentrated(k: usize, dim: usize, strength: f64) -> Result<Self> {
        if k >= dim {
            return Err(invalid(format!("category {k} out of range for K = {dim}")));
        }
        if !strength.is_finite() || strength < 0.0 {
            return Err(invalid("concentration offset must be finite and >= 0"));
        }
        let mut alpha = vec![1.0; dim];
        alpha[k] += strength;
        Self::new(alpha)
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn dim(&self) -> usize {
        self.alpha.len()
    }

    /// `ln B(alpha)`, the log multivariate Beta function.
    pub fn ln_beta(&self) -> f64 {
        let total: f64 = self.alpha.iter().sum();
        self.alpha.iter().map(|a| ln_gamma(*a)).sum::<f64>() - ln_gamma(total)
    }

    pub fn mean(&self) -> Vec<f64> {
        let total: f64 = self.alpha.iter().sum();
        self.alpha.iter().map(|a| a / total).collect()
    }
}

/// Draw from `Gamma(shape, 1)`.
///
/// Marsaglia-Tsang squeeze/rejection for `shape >= 1`; smaller shapes are
/// boosted by one and corrected with `U^(1/shape)`.
pub fn sample_gamma<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> Result<f64> {
    if !shape.is_finite() || shape <= 0.0 {
        return Err(invalid(format!("Gamma shape must be finite and > 0, got {shape}")));
    }
    if shape < 1.0 {
        let g = sample_gamma(shape + 1.0, rng)?;
        let u: f64 = rng.random();
        return Ok(g * u.powf(1.0 / shape));
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x: f64 = rng.sample(StandardNormal);
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u: f64 = rng.random();
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 {
            return Ok(d * v);
        }
        if u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return Ok(d * v);
        }
    }
}

/// Draw from `Dir(alpha)` by normalising independent Gamma variates.
pub fn sample_dirichlet<R: Rng + ?Sized>(params: &DirichletParams, rng: &mut R) -> SimplexPoint {
    let g: Vec<f64> = params
        .alpha
        .iter()
        .map(|a| sample_gamma(*a, rng).expect("validated concentration"))
        .collect();
    let s: f64 = g.iter().sum();
    if s > 0.0 && s.is_finite() {
        SimplexPoint::clamped(g.into_iter().map(|v| v / s).collect())
    } else {
        // every variate underflowed; fall back to the vertex of the largest
        SimplexPoint::vertex(argmax(&g), params.dim())
    }
}

/// `ln Dir(x; alpha)`.
pub fn dirichlet_log_density(params: &DirichletParams, x: &SimplexPoint) -> Result<f64> {
    if params.dim() != x.dim() {
        return Err(invalid(format!(
            "dimension mismatch: Dirichlet K = {}, point K = {}",
            params.dim(),
            x.dim()
        )));
    }
    let body: f64 = params
        .alpha
        .iter()
        .zip(x.coords())
        .map(|(a, xi)| (a - 1.0) * xi.max(EPS_X).ln())
        .sum();
    Ok(body - params.ln_beta())
}

/// `sum_k m_k Dir(1 + kappa e_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalMixturePrior {
    marginals: CategoricalDist,
    kappa: f64,
}

impl MarginalMixturePrior {
    pub fn new(marginals: CategoricalDist, kappa: f64) -> Result<Self> {
        if marginals.len() < 2 {
            return Err(invalid("prior needs K >= 2 categories"));
        }
        if !kappa.is_finite() || kappa < 0.0 {
            return Err(invalid(format!("prior concentration must be >= 0, got {kappa}")));
        }
        Ok(Self { marginals, kappa })
    }

    /// `Dir(1)` on `S_K`.
    pub fn uniform(dim: usize) -> Self {
        Self {
            marginals: CategoricalDist::uniform(dim),
            kappa: 0.0,
        }
    }

    pub fn marginals(&self) -> &CategoricalDist {
        &self.marginals
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn dim(&self) -> usize {
        self.marginals.len()
    }
}

pub fn sample_marginal_prior<R: Rng + ?Sized>(
    prior: &MarginalMixturePrior,
    rng: &mut R,
) -> SimplexPoint {
    let k = prior.marginals.sample(rng);
    let params = DirichletParams::vertex_concentrated(k, prior.dim(), prior.kappa)
        .expect("validated prior");
    sample_dirichlet(&params, rng)
}

/// Role of a group of dimensions in a multi-simplex state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelKind {
    Node,
    Edge,
}

/// A run of `len` dimensions that all live on `S_k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Channel {
    pub kind: ChannelKind,
    pub k: usize,
    pub len: usize,
}

/// Shape of a multi-simplex state: channels laid out one after another.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    channels: Vec<Channel>,
}

impl Layout {
    pub fn new(channels: Vec<Channel>) -> Result<Self> {
        if channels.iter().any(|c| c.k < 2) {
            return Err(invalid("every channel needs K >= 2"));
        }
        let channels: Vec<Channel> = channels.into_iter().filter(|c| c.len > 0).collect();
        if channels.is_empty() {
            return Err(invalid("layout has no dimensions"));
        }
        Ok(Self { channels })
    }

    /// `L` node dimensions over `K` categories.
    pub fn flat(len: usize, k: usize) -> Result<Self> {
        Self::new(vec![Channel {
            kind: ChannelKind::Node,
            k,
            len,
        }])
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn num_dims(&self) -> usize {
        self.channels.iter().map(|c| c.len).sum()
    }

    /// Total number of simplex coordinates.
    pub fn num_coords(&self) -> usize {
        self.channels.iter().map(|c| c.len * c.k).sum()
    }

    /// `(kind, K)` of every dimension in order.
    pub fn dims(&self) -> impl Iterator<Item = (ChannelKind, usize)> + '_ {
        self.channels
            .iter()
            .flat_map(|c| std::iter::repeat_n((c.kind, c.k), c.len))
    }

    pub fn dim_sizes(&self) -> Vec<usize> {
        self.dims().map(|(_, k)| k).collect()
    }

    pub fn count(&self, kind: ChannelKind) -> usize {
        self.channels
            .iter()
            .filter(|c| c.kind == kind)
            .map(|c| c.len)
            .sum()
    }

    /// Checks that `clean` is a valid category vector for this layout.
    pub fn check_clean(&self, clean: &[usize]) -> Result<()> {
        if clean.len() != self.num_dims() {
            return Err(invalid(format!(
                "expected {} categories, got {}",
                self.num_dims(),
                clean.len()
            )));
        }
        for (i, ((_, k), c)) in self.dims().zip(clean).enumerate() {
            if *c >= k {
                return Err(invalid(format!("category {c} at dimension {i} exceeds K = {k}")));
            }
        }
        Ok(())
    }

    pub fn check_state(&self, state: &MultiSimplexState) -> Result<()> {
        if state.dims.len() != self.num_dims() {
            return Err(invalid(format!(
                "state has {} dimensions, layout expects {}",
                state.dims.len(),
                self.num_dims()
            )));
        }
        for (i, ((_, k), x)) in self.dims().zip(&state.dims).enumerate() {
            if x.dim() != k {
                return Err(invalid(format!(
                    "dimension {i} has K = {}, layout expects {k}",
                    x.dim()
                )));
            }
        }
        Ok(())
    }
}

/// A noisy instance `x_t` on the product simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiSimplexState {
    pub dims: Vec<SimplexPoint>,
    pub t: f64,
}

impl MultiSimplexState {
    pub fn new(dims: Vec<SimplexPoint>, t: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&t) {
            return Err(invalid(format!("time must lie in [0, 1), got {t}")));
        }
        if dims.is_empty() {
            return Err(invalid("state has no dimensions"));
        }
        Ok(Self { dims, t })
    }

    /// Clean categories placed on (clamped) vertices.
    pub fn from_clean(layout: &Layout, clean: &[usize], t: f64) -> Result<Self> {
        layout.check_clean(clean)?;
        let dims = layout
            .dims()
            .zip(clean)
            .map(|((_, k), c)| SimplexPoint::vertex(*c, k))
            .collect();
        Self::new(dims, t)
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    /// Per-dimension nearest vertex.
    pub fn decode(&self) -> Vec<usize> {
        self.dims.iter().map(nearest_vertex).collect()
    }

    /// Coordinates of all dimensions concatenated.
    pub fn flatten(&self) -> Vec<f64> {
        self.dims.iter().flat_map(|d| d.coords().iter().copied()).collect()
    }
}
