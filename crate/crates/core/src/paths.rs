//! Noise schedules, the Dirichlet probability path and the linear interpolant.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::simplex::{
    dirichlet_log_density, sample_dirichlet, DirichletParams, Layout, MultiSimplexState,
    SimplexPoint,
};

/// Default time clamp `eps_t`; `t_max = 1 - eps_t`.
pub const DEFAULT_EPS_T: f64 = 1e-3;

/// Default schedule strength.
pub const DEFAULT_A: f64 = 3.0;

/// `alpha(t) = kappa - a * ln(1 - min(t, t_max))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    a: f64,
    kappa: f64,
    t_max: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self {
            a: DEFAULT_A,
            kappa: 0.0,
            t_max: 1.0 - DEFAULT_EPS_T,
        }
    }
}

impl NoiseSchedule {
    pub fn new(a: f64, kappa: f64, eps_t: f64) -> Result<Self> {
        if !a.is_finite() || a <= 0.0 {
            return Err(invalid(format!("schedule strength a must be > 0, got {a}")));
        }
        if !kappa.is_finite() || kappa < 0.0 {
            return Err(invalid(format!("kappa must be >= 0, got {kappa}")));
        }
        if !(eps_t > 0.0 && eps_t < 1.0) {
            return Err(invalid(format!("eps_t must lie in (0, 1), got {eps_t}")));
        }
        Ok(Self {
            a,
            kappa,
            t_max: 1.0 - eps_t,
        })
    }

    pub fn with_a(a: f64) -> Result<Self> {
        Self::new(a, 0.0, DEFAULT_EPS_T)
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn eps_t(&self) -> f64 {
        1.0 - self.t_max
    }

    pub fn alpha(&self, t: f64) -> Result<f64> {
        if !(0.0..1.0).contains(&t) {
            return Err(invalid(format!("time must lie in [0, 1), got {t}")));
        }
        Ok(self.alpha_unchecked(t))
    }

    pub(crate) fn alpha_unchecked(&self, t: f64) -> f64 {
        self.kappa - self.a * (-t.min(self.t_max)).ln_1p()
    }

    /// Time at which the schedule (without offset) reaches `alpha`.
    pub fn time_for_alpha(&self, alpha: f64) -> Result<f64> {
        if alpha < self.kappa {
            return Err(invalid(format!("alpha {alpha} is below the offset {}", self.kappa)));
        }
        let t = -(-(alpha - self.kappa) / self.a).exp_m1();
        if t > self.t_max {
            return Err(invalid(format!("alpha {alpha} exceeds the clamped maximum")));
        }
        Ok(t)
    }
}

/// `q_t(x | x_1) = Dir(1 + alpha_t e_{x_1})` on `S_K`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirichletPath {
    pub schedule: NoiseSchedule,
    pub k: usize,
}

impl DirichletPath {
    pub fn new(schedule: NoiseSchedule, k: usize) -> Result<Self> {
        if k < 2 {
            return Err(invalid("path needs K >= 2"));
        }
        Ok(Self { schedule, k })
    }

    pub fn params(&self, x1: usize, t: f64) -> Result<DirichletParams> {
        DirichletParams::vertex_concentrated(x1, self.k, self.schedule.alpha(t)?)
    }

    pub fn noise_forward<R: Rng + ?Sized>(&self, x1: usize, t: f64, rng: &mut R) -> Result<SimplexPoint> {
        Ok(sample_dirichlet(&self.params(x1, t)?, rng))
    }

    pub fn noise_forward_multi<R: Rng + ?Sized>(
        &self,
        x1: &[usize],
        t: f64,
        rng: &mut R,
    ) -> Result<MultiSimplexState> {
        let layout = Layout::flat(x1.len(), self.k)?;
        noise_layout(&self.schedule, &layout, x1, t, rng)
    }

    pub fn log_density(&self, x: &SimplexPoint, x1: usize, t: f64) -> Result<f64> {
        dirichlet_log_density(&self.params(x1, t)?, x)
    }
}

/// Forward noising of a clean vector whose dimensions may have different `K`.
pub fn noise_layout<R: Rng + ?Sized>(
    schedule: &NoiseSchedule,
    layout: &Layout,
    clean: &[usize],
    t: f64,
    rng: &mut R,
) -> Result<MultiSimplexState> {
    layout.check_clean(clean)?;
    let alpha = schedule.alpha(t)?;
    let dims = layout
        .dims()
        .zip(clean)
        .map(|((_, k), c)| {
            let params = DirichletParams::vertex_concentrated(*c, k, alpha)?;
            Ok(sample_dirichlet(&params, rng))
        })
        .collect::<Result<Vec<_>>>()?;
    MultiSimplexState::new(dims, t)
}

/// `x_t = alpha_bar x_1 + (1 - alpha_bar) x_0`. Support-collapsing; used
/// only for comparison with the Dirichlet path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterpolantPath {
    pub alpha_bar: f64,
    pub k: usize,
}

impl InterpolantPath {
    pub fn new(alpha_bar: f64, k: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha_bar) {
            return Err(invalid(format!("interpolation weight must lie in [0, 1], got {alpha_bar}")));
        }
        if k < 2 {
            return Err(invalid("interpolant needs K >= 2"));
        }
        Ok(Self { alpha_bar, k })
    }

    pub fn forward(&self, x1: usize, x0: &SimplexPoint) -> Result<SimplexPoint> {
        if x1 >= self.k || x0.dim() != self.k {
            return Err(invalid("interpolant endpoint dimensions do not match K"));
        }
        let coords = x0
            .coords()
            .iter()
            .enumerate()
            .map(|(j, c)| {
                let vertex = if j == x1 { 1.0 } else { 0.0 };
                self.alpha_bar * vertex + (1.0 - self.alpha_bar) * c
            })
            .collect();
        SimplexPoint::from_unnormalized(coords)
    }
}

/// Vertices that could have produced `x_t` under the interpolant: since
/// `x_0 >= 0`, the origin coordinate satisfies `x_t[x_1] >= alpha_bar`.
pub fn interpolant_feasible_vertices(x_t: &SimplexPoint, alpha_bar: f64) -> Vec<usize> {
    x_t.coords()
        .iter()
        .enumerate()
        .filter(|(_, c)| **c >= alpha_bar - 1e-12)
        .map(|(j, _)| j)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::par::stream_rng;
    use crate::simplex::nearest_vertex;
    use approx::assert_relative_eq;

    #[test]
    fn alpha_examples() {
        let s = NoiseSchedule::default();
        assert_eq!(s.alpha(0.0).unwrap(), 0.0);
        assert_relative_eq!(s.alpha(0.5).unwrap(), 3.0 * 2f64.ln(), epsilon = 1e-12);
        assert_relative_eq!(s.alpha(0.5).unwrap(), 2.07944, epsilon = 1e-5);
        let s = NoiseSchedule::new(3.0, 2.0, DEFAULT_EPS_T).unwrap();
        assert_eq!(s.alpha(0.0).unwrap(), 2.0);
    }

    #[test]
    fn alpha_rejects_out_of_range() {
        let s = NoiseSchedule::default();
        assert!(s.alpha(1.0).is_err());
        assert!(s.alpha(-0.1).is_err());
        assert!(s.alpha(f64::NAN).is_err());
    }

    #[test]
    fn alpha_is_clamped_and_monotone() {
        let s = NoiseSchedule::default();
        let cap = s.alpha(s.t_max()).unwrap();
        assert_relative_eq!(cap, 3.0 * 1000f64.ln(), max_relative = 1e-9);
        assert_eq!(s.alpha(0.99999).unwrap(), cap);
        let mut prev = -1.0;
        for i in 0..1000 {
            let a = s.alpha(i as f64 / 1000.0).unwrap();
            assert!(a >= prev);
            prev = a;
        }
    }

    #[test]
    fn time_for_alpha_inverts() {
        let s = NoiseSchedule::new(3.0, 0.5, DEFAULT_EPS_T).unwrap();
        let t = s.time_for_alpha(3.5).unwrap();
        assert_relative_eq!(s.alpha(t).unwrap(), 3.5, epsilon = 1e-12);
    }

    fn mean_se(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, (v / n).sqrt())
    }

    #[test]
    fn noise_at_zero_is_uniform() {
        let path = DirichletPath::new(NoiseSchedule::default(), 3).unwrap();
        let mut rng = stream_rng(40, 0);
        let xs: Vec<SimplexPoint> =
            (0..100_000).map(|_| path.noise_forward(1, 0.0, &mut rng).unwrap()).collect();
        for i in 0..3 {
            let c: Vec<f64> = xs.iter().map(|x| x.coords()[i]).collect();
            let (m, se) = mean_se(&c);
            assert!((m - 1.0 / 3.0).abs() < 3.0 * se);
        }
    }

    #[test]
    fn noise_mean_matches_dirichlet_mean() {
        let path = DirichletPath::new(NoiseSchedule::default(), 3).unwrap();
        let alpha = 3.0 * 4f64.ln();
        let mut rng = stream_rng(41, 0);
        let c: Vec<f64> = (0..100_000)
            .map(|_| path.noise_forward(2, 0.75, &mut rng).unwrap().coords()[2])
            .collect();
        let (m, se) = mean_se(&c);
        let expected = (1.0 + alpha) / (3.0 + alpha);
        assert!((m - expected).abs() < 3.0 * se, "{m} vs {expected}");
    }

    #[test]
    fn noise_near_t_max_stays_in_voronoi_region() {
        let path = DirichletPath::new(NoiseSchedule::default(), 3).unwrap();
        let mut rng = stream_rng(42, 0);
        let n = 10_000;
        let hits = (0..n)
            .filter(|_| nearest_vertex(&path.noise_forward(1, 0.999, &mut rng).unwrap()) == 1)
            .count();
        assert!(hits as f64 / n as f64 >= 0.99);
    }

    #[test]
    fn noise_rejects_bad_category() {
        let path = DirichletPath::new(NoiseSchedule::default(), 3).unwrap();
        let mut rng = stream_rng(0, 0);
        assert!(path.noise_forward(3, 0.5, &mut rng).is_err());
    }

    #[test]
    fn multi_with_one_dim_matches_single() {
        let path = DirichletPath::new(NoiseSchedule::default(), 4).unwrap();
        let mut r1 = stream_rng(43, 0);
        let mut r2 = stream_rng(43, 0);
        let multi = path.noise_forward_multi(&[2], 0.3, &mut r1).unwrap();
        let single = path.noise_forward(2, 0.3, &mut r2).unwrap();
        assert_eq!(multi.dims[0], single);
        assert_eq!(multi.t, 0.3);
    }

    #[test]
    fn multi_dims_are_independent() {
        let path = DirichletPath::new(NoiseSchedule::default(), 3).unwrap();
        let mut rng = stream_rng(44, 0);
        let n = 100_000;
        let pairs: Vec<(f64, f64)> = (0..n)
            .map(|_| {
                let s = path.noise_forward_multi(&[0, 0], 0.0, &mut rng).unwrap();
                (s.dims[0].coords()[0], s.dims[1].coords()[0])
            })
            .collect();
        let ma = pairs.iter().map(|p| p.0).sum::<f64>() / n as f64;
        let mb = pairs.iter().map(|p| p.1).sum::<f64>() / n as f64;
        let cov = pairs.iter().map(|p| (p.0 - ma) * (p.1 - mb)).sum::<f64>() / n as f64;
        let va = pairs.iter().map(|p| (p.0 - ma).powi(2)).sum::<f64>() / n as f64;
        let vb = pairs.iter().map(|p| (p.1 - mb).powi(2)).sum::<f64>() / n as f64;
        let corr = cov / (va * vb).sqrt();
        // sample correlation of independent variables has sd ~ 1/sqrt(n)
        assert!(corr.abs() < 3.0 / (n as f64).sqrt(), "corr {corr}");
        // per-dimension means match the single-dimension mean (1/3 at t=0)
        let se = (va / n as f64).sqrt();
        assert!((ma - 1.0 / 3.0).abs() < 3.0 * se);
        assert!((mb - 1.0 / 3.0).abs() < 3.0 * se);
    }

    #[test]
    fn interpolant_examples() {
        let x0 = SimplexPoint::uniform(3);
        let p = InterpolantPath::new(1.0, 3).unwrap();
        assert_eq!(nearest_vertex(&p.forward(1, &x0).unwrap()), 1);
        assert_relative_eq!(p.forward(1, &x0).unwrap().coords()[1], 1.0, epsilon = 1e-9);
        let p = InterpolantPath::new(0.0, 3).unwrap();
        let y = p.forward(1, &x0).unwrap();
        for c in y.coords() {
            assert_relative_eq!(*c, 1.0 / 3.0, epsilon = 1e-12);
        }
        let p = InterpolantPath::new(0.6, 3).unwrap();
        let y = p.forward(0, &x0).unwrap();
        assert_relative_eq!(y.coords()[0], 0.7 + 1.0 / 30.0, epsilon = 1e-12);
        assert_relative_eq!(y.coords()[1], 0.4 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(y.coords()[2], 0.4 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn feasible_vertex_examples() {
        let x = SimplexPoint::new(vec![0.7, 0.2, 0.1]).unwrap();
        assert_eq!(interpolant_feasible_vertices(&x, 0.6), vec![0]);
        let x = SimplexPoint::new(vec![0.4, 0.35, 0.25]).unwrap();
        assert_eq!(interpolant_feasible_vertices(&x, 0.34), vec![0, 1]);
        assert_eq!(interpolant_feasible_vertices(&x, 1e-9), vec![0, 1, 2]);
    }
}
