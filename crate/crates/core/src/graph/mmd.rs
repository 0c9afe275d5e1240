use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::par::{map_indexed, stream_rng, Execution};

pub fn gaussian_kernel(a: &[f64], b: &[f64], sigma: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-d2 / (2.0 * sigma * sigma)).exp()
}

fn check(a: &[Vec<f64>], b: &[Vec<f64>], sigma: f64, min_len: usize) -> Result<()> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(invalid(format!("bandwidth must be > 0, got {sigma}")));
    }
    if a.len() < min_len || b.len() < min_len {
        return Err(invalid(format!("each sample needs at least {min_len} histograms")));
    }
    let len = a[0].len();
    if a.iter().chain(b).any(|h| h.len() != len) {
        return Err(invalid("histograms must all have the same length"));
    }
    Ok(())
}

// Sorting before summing makes the total independent of argument order, so
// the estimators are exactly symmetric in (a, b).
fn ordered_sum(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v.iter().sum()
}

fn within(a: &[Vec<f64>], sigma: f64, diagonal: bool) -> f64 {
    let mut v = Vec::with_capacity(a.len() * a.len());
    for (i, x) in a.iter().enumerate() {
        for (j, y) in a.iter().enumerate() {
            if diagonal || i != j {
                v.push(gaussian_kernel(x, y, sigma));
            }
        }
    }
    ordered_sum(v)
}

fn cross(a: &[Vec<f64>], b: &[Vec<f64>], sigma: f64) -> f64 {
    let mut v = Vec::with_capacity(a.len() * b.len());
    for x in a {
        for y in b {
            v.push(gaussian_kernel(x, y, sigma));
        }
    }
    ordered_sum(v)
}

/// Unbiased MMD² estimate, not clamped; may be slightly negative.
pub fn mmd2_unbiased(a: &[Vec<f64>], b: &[Vec<f64>], sigma: f64) -> Result<f64> {
    check(a, b, sigma, 2)?;
    let (m, n) = (a.len() as f64, b.len() as f64);
    let kxx = within(a, sigma, false) / (m * (m - 1.0));
    let kyy = within(b, sigma, false) / (n * (n - 1.0));
    let kxy = cross(a, b, sigma) / (m * n);
    Ok(kxx + kyy - 2.0 * kxy)
}

/// Biased (V-statistic) MMD² estimate; zero for identical samples.
pub fn mmd2_biased(a: &[Vec<f64>], b: &[Vec<f64>], sigma: f64) -> Result<f64> {
    check(a, b, sigma, 1)?;
    let (m, n) = (a.len() as f64, b.len() as f64);
    let kxx = within(a, sigma, true) / (m * m);
    let kyy = within(b, sigma, true) / (n * n);
    let kxy = cross(a, b, sigma) / (m * n);
    Ok(kxx + kyy - 2.0 * kxy)
}

/// Unbiased MMD² clamped at zero.
pub fn mmd_gaussian(a: &[Vec<f64>], b: &[Vec<f64>], sigma: f64) -> Result<f64> {
    Ok(mmd2_unbiased(a, b, sigma)?.max(0.0))
}

/// Median of the nonzero pairwise distances in the pooled sample; 1.0 if
/// every histogram is identical.
pub fn median_bandwidth(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let pooled: Vec<&Vec<f64>> = a.iter().chain(b).collect();
    let mut d = Vec::new();
    for (i, x) in pooled.iter().enumerate() {
        for y in &pooled[i + 1..] {
            let dist = x.iter().zip(y.iter()).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
            if dist > 0.0 {
                d.push(dist);
            }
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let mid = d.len() / 2;
    if d.len() % 2 == 1 {
        d[mid]
    } else {
        0.5 * (d[mid - 1] + d[mid])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationTest {
    /// Unbiased MMD² of the observed split.
    pub statistic: f64,
    pub p_value: f64,
    pub q95: f64,
    pub q99: f64,
    pub permutations: usize,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Permutation null for the unbiased MMD²: the pooled sample is reshuffled
/// into groups of the original sizes. Permutation `p` uses stream `p` of
/// `seed`; the kernel matrix is computed once.
pub fn permutation_test(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    sigma: f64,
    permutations: usize,
    seed: u64,
    exec: Execution,
) -> Result<PermutationTest> {
    check(a, b, sigma, 2)?;
    if permutations == 0 {
        return Err(invalid("need at least one permutation"));
    }
    let pooled: Vec<&Vec<f64>> = a.iter().chain(b).collect();
    let total = pooled.len();
    let rows = map_indexed(exec, total, |i| {
        (0..total).map(|j| gaussian_kernel(pooled[i], pooled[j], sigma)).collect::<Vec<f64>>()
    });
    let m = a.len();
    let split_stat = |idx: &[usize]| -> f64 {
        let (x, y) = idx.split_at(m);
        let sum = |p: &[usize], q: &[usize], skip_diag: bool| -> f64 {
            let mut s = 0.0;
            for &i in p {
                for &j in q {
                    if !(skip_diag && i == j) {
                        s += rows[i][j];
                    }
                }
            }
            s
        };
        let (mf, nf) = (x.len() as f64, y.len() as f64);
        sum(x, x, true) / (mf * (mf - 1.0)) + sum(y, y, true) / (nf * (nf - 1.0)) - 2.0 * sum(x, y, false) / (mf * nf)
    };
    let statistic = mmd2_unbiased(a, b, sigma)?;
    let mut null = map_indexed(exec, permutations, |p| {
        let mut idx: Vec<usize> = (0..total).collect();
        idx.shuffle(&mut stream_rng(seed, p as u64));
        split_stat(&idx)
    });
    null.sort_by(f64::total_cmp);
    let exceed = null.iter().filter(|v| **v >= statistic).count();
    Ok(PermutationTest {
        statistic,
        p_value: (1 + exceed) as f64 / (1 + permutations) as f64,
        q95: quantile(&null, 0.95),
        q99: quantile(&null, 0.99),
        permutations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{compute_stats, generate_dataset, Generator, GraphDatasetSpec};
    use approx::assert_relative_eq;

    fn degree_hists(p: f64, seed: u64, count: usize) -> Vec<Vec<f64>> {
        generate_dataset(&GraphDatasetSpec {
            generator: Generator::ErdosRenyi { p },
            n: 8,
            count,
            seed,
        })
        .unwrap()
        .iter()
        .map(|g| compute_stats(g).degree_hist)
        .collect()
    }

    #[test]
    fn identical_samples() {
        let a = degree_hists(0.3, 1, 30);
        assert_relative_eq!(mmd2_biased(&a, &a, 0.5).unwrap(), 0.0, epsilon = 1e-12);
        assert!(mmd2_unbiased(&a, &a, 0.5).unwrap() <= 1e-12);
        assert_eq!(mmd_gaussian(&a, &a, 0.5).unwrap(), mmd_gaussian(&a, &a, 0.5).unwrap().max(0.0));
    }

    #[test]
    fn estimators_are_symmetric() {
        let a = degree_hists(0.3, 2, 25);
        let b = degree_hists(0.5, 3, 40);
        assert_eq!(mmd2_unbiased(&a, &b, 0.4).unwrap(), mmd2_unbiased(&b, &a, 0.4).unwrap());
        assert_eq!(mmd2_biased(&a, &b, 0.4).unwrap(), mmd2_biased(&b, &a, 0.4).unwrap());
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let a = degree_hists(0.3, 4, 5);
        assert!(mmd_gaussian(&a, &a, 0.0).is_err());
        assert!(mmd_gaussian(&a, &a, -1.0).is_err());
        assert!(mmd_gaussian(&a, &[vec![1.0]], 1.0).is_err());
        assert!(mmd_gaussian(&a, &[], 1.0).is_err());
    }

    #[test]
    fn permutation_test_separates_generators() {
        let a = degree_hists(0.3, 5, 200);
        let b = degree_hists(0.3, 6, 200);
        let c = degree_hists(0.1, 7, 200);
        let d = degree_hists(0.6, 8, 200);
        let s1 = median_bandwidth(&a, &b);
        let same = permutation_test(&a, &b, s1, 200, 9, Execution::default()).unwrap();
        assert!(same.statistic < same.q95, "{same:?}");
        let s2 = median_bandwidth(&c, &d);
        let diff = permutation_test(&c, &d, s2, 200, 10, Execution::default()).unwrap();
        assert!(diff.statistic > diff.q99, "{diff:?}");
        assert!(diff.p_value <= 1.0 / 201.0 + 1e-12);
    }

    #[test]
    fn permutation_test_is_mode_independent() {
        let a = degree_hists(0.3, 11, 30);
        let b = degree_hists(0.4, 12, 30);
        let x = permutation_test(&a, &b, 0.3, 50, 1, Execution::Sequential).unwrap();
        let y = permutation_test(&a, &b, 0.3, 50, 1, Execution::Parallel).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn median_bandwidth_examples() {
        let a = vec![vec![0.0], vec![1.0]];
        let b = vec![vec![3.0]];
        // distances 1, 3, 2
        assert_eq!(median_bandwidth(&a, &b), 2.0);
        assert_eq!(median_bandwidth(&[vec![1.0]], &[vec![1.0]]), 1.0);
    }
}
