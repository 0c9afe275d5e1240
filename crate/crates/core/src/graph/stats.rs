use serde::{Deserialize, Serialize};

use crate::graph::GraphInstance;

pub const HIST_BINS: usize = 20;

const JACOBI_TOL: f64 = 1e-8;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Per-graph summary statistics; histograms are normalised to sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    /// Fraction of nodes with degree `0..n`.
    pub degree_hist: Vec<f64>,
    /// Clustering coefficients in 20 bins on `[0, 1]`.
    pub clustering_hist: Vec<f64>,
    /// Laplacian eigenvalues in 20 bins on `[0, 2 (n - 1)]`.
    pub spectrum_hist: Vec<f64>,
    pub triangles: usize,
}

pub fn degrees(g: &GraphInstance) -> Vec<usize> {
    let n = g.n();
    (0..n).map(|i| (0..n).filter(|&j| g.has_edge(i, j)).count()).collect()
}

fn triangles_at(g: &GraphInstance, i: usize) -> usize {
    let nbrs: Vec<usize> = (0..g.n()).filter(|&j| g.has_edge(i, j)).collect();
    let mut t = 0;
    for (a, &u) in nbrs.iter().enumerate() {
        for &v in &nbrs[a + 1..] {
            t += g.has_edge(u, v) as usize;
        }
    }
    t
}

/// Local clustering: triangles through the node over `C(deg, 2)`; zero when
/// the degree is below two.
pub fn clustering_coefficients(g: &GraphInstance) -> Vec<f64> {
    let deg = degrees(g);
    (0..g.n())
        .map(|i| {
            let d = deg[i];
            if d < 2 {
                0.0
            } else {
                triangles_at(g, i) as f64 / (d * (d - 1) / 2) as f64
            }
        })
        .collect()
}

pub fn triangle_count(g: &GraphInstance) -> usize {
    (0..g.n()).map(|i| triangles_at(g, i)).sum::<usize>() / 3
}

/// Eigenvalues of a symmetric row-major `n x n` matrix by cyclic Jacobi
/// rotations, sorted ascending.
pub fn symmetric_eigenvalues(matrix: &[f64], n: usize) -> Vec<f64> {
    assert_eq!(matrix.len(), n * n, "matrix must be n x n");
    let mut a = matrix.to_vec();
    let off = |a: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[i * n + j] * a[i * n + j];
                }
            }
        }
        s.sqrt()
    };
    for _ in 0..JACOBI_MAX_SWEEPS {
        if off(&a) < JACOBI_TOL {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Combinatorial Laplacian `D - A` spectrum, ascending.
pub fn laplacian_spectrum(g: &GraphInstance) -> Vec<f64> {
    let n = g.n();
    let deg = degrees(g);
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        l[i * n + i] = deg[i] as f64;
        for j in 0..n {
            if g.has_edge(i, j) {
                l[i * n + j] = -1.0;
            }
        }
    }
    symmetric_eigenvalues(&l, n)
}

/// Number of connected components (union-find).
pub fn connected_components(g: &GraphInstance) -> usize {
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut parent: Vec<usize> = (0..g.n()).collect();
    let mut components = g.n();
    for (i, j) in g.edges() {
        let (a, b) = (find(&mut parent, i), find(&mut parent, j));
        if a != b {
            parent[a] = b;
            components -= 1;
        }
    }
    components
}

/// Normalised histogram of `values` in `bins` equal bins on `[lo, hi]`;
/// values at or beyond `hi` land in the last bin.
pub fn histogram(values: &[f64], bins: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mut h = vec![0.0; bins];
    if values.is_empty() {
        return h;
    }
    let width = (hi - lo) / bins as f64;
    for v in values {
        let b = if width > 0.0 { ((v - lo) / width).floor() } else { 0.0 };
        h[(b.max(0.0) as usize).min(bins - 1)] += 1.0;
    }
    let n = values.len() as f64;
    h.iter_mut().for_each(|x| *x /= n);
    h
}

pub fn compute_stats(g: &GraphInstance) -> GraphStats {
    let n = g.n();
    let mut degree_hist = vec![0.0; n];
    for d in degrees(g) {
        degree_hist[d] += 1.0 / n as f64;
    }
    let spectrum_hi = (2 * n.saturating_sub(1)).max(1) as f64;
    GraphStats {
        degree_hist,
        clustering_hist: histogram(&clustering_coefficients(g), HIST_BINS, 0.0, 1.0),
        spectrum_hist: histogram(&laplacian_spectrum(g), HIST_BINS, 0.0, spectrum_hi),
        triangles: triangle_count(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_dataset, GraphDatasetSpec, Generator};
    use crate::par::stream_rng;
    use approx::assert_relative_eq;
    use rand::seq::SliceRandom;

    #[test]
    fn triangle_graph() {
        let g = GraphInstance::complete(3).unwrap();
        assert_eq!(degrees(&g), vec![2, 2, 2]);
        assert_eq!(clustering_coefficients(&g), vec![1.0; 3]);
        let ev = laplacian_spectrum(&g);
        for (a, b) in ev.iter().zip([0.0, 3.0, 3.0]) {
            assert_relative_eq!(*a, b, epsilon = 1e-9);
        }
        assert_eq!(triangle_count(&g), 1);
        let s = compute_stats(&g);
        assert_eq!(s.clustering_hist[HIST_BINS - 1], 1.0);
    }

    #[test]
    fn path_and_empty_graphs() {
        let p = GraphInstance::path(3).unwrap();
        assert_eq!(degrees(&p), vec![1, 2, 1]);
        assert_eq!(clustering_coefficients(&p), vec![0.0; 3]);
        assert_eq!(triangle_count(&p), 0);
        let e = GraphInstance::empty(5).unwrap();
        assert!(laplacian_spectrum(&e).iter().all(|v| *v == 0.0));
        assert_eq!(compute_stats(&e).spectrum_hist[0], 1.0);
    }

    #[test]
    fn known_spectra() {
        // path on 4 nodes: 2 - 2 cos(k pi / 4)
        let ev = laplacian_spectrum(&GraphInstance::path(4).unwrap());
        for (k, v) in ev.iter().enumerate() {
            assert_relative_eq!(*v, 2.0 - 2.0 * (k as f64 * std::f64::consts::PI / 4.0).cos(), epsilon = 1e-8);
        }
        // complete graph on n nodes: 0 and n (n - 1 times)
        let ev = laplacian_spectrum(&GraphInstance::complete(6).unwrap());
        assert_relative_eq!(ev[0], 0.0, epsilon = 1e-9);
        assert!(ev[1..].iter().all(|v| (v - 6.0).abs() < 1e-8));
    }

    #[test]
    fn zero_multiplicity_counts_components() {
        let graphs = generate_dataset(&GraphDatasetSpec {
            generator: Generator::ErdosRenyi { p: 0.2 },
            n: 10,
            count: 50,
            seed: 3,
        })
        .unwrap();
        for g in &graphs {
            let ev = laplacian_spectrum(g);
            assert!(ev[0].abs() < 1e-7);
            assert!(ev.iter().all(|v| *v > -1e-7));
            let zeros = ev.iter().filter(|v| v.abs() < 1e-7).count();
            assert_eq!(zeros, connected_components(g));
        }
    }

    #[test]
    fn stats_are_permutation_invariant() {
        let graphs = generate_dataset(&GraphDatasetSpec {
            generator: Generator::ErdosRenyi { p: 0.4 },
            n: 8,
            count: 20,
            seed: 4,
        })
        .unwrap();
        let mut rng = stream_rng(5, 0);
        let mut perm: Vec<usize> = (0..8).collect();
        for g in &graphs {
            perm.shuffle(&mut rng);
            let a = compute_stats(g);
            let b = compute_stats(&g.permuted(&perm).unwrap());
            assert_eq!(a.degree_hist, b.degree_hist);
            assert_eq!(a.clustering_hist, b.clustering_hist);
            assert_eq!(a.triangles, b.triangles);
            // eigenvalues agree to the solver tolerance, so bins agree
            // unless a value sits on a bin edge
            let (ea, eb) = (laplacian_spectrum(g), laplacian_spectrum(&g.permuted(&perm).unwrap()));
            for (x, y) in ea.iter().zip(&eb) {
                assert!((x - y).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn histograms_are_normalised() {
        let h = histogram(&[0.0, 0.5, 1.0, 1.0], 4, 0.0, 1.0);
        assert_eq!(h, vec![0.25, 0.0, 0.25, 0.5]);
        let s = compute_stats(&GraphInstance::path(6).unwrap());
        for hist in [&s.degree_hist, &s.clustering_hist, &s.spectrum_hist] {
            assert_relative_eq!(hist.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
    }
}
