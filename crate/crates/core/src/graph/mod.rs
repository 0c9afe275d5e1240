//! Toy undirected graphs: generators, simplex encoding, statistics and MMD.

mod mmd;
mod stats;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::par::stream_rng;
use crate::simplex::{nearest_vertex, Channel, ChannelKind, Layout, MultiSimplexState};

pub use mmd::{
    gaussian_kernel, median_bandwidth, mmd2_biased, mmd2_unbiased, mmd_gaussian, permutation_test, PermutationTest,
};
pub use stats::{
    clustering_coefficients, compute_stats, connected_components, degrees, histogram, laplacian_spectrum,
    symmetric_eigenvalues, triangle_count, GraphStats, HIST_BINS,
};

/// Position of the unordered pair `i < j` in row-major upper-triangle order.
pub fn edge_index(n: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i < j { (i, j) } else { (j, i) };
    debug_assert!(j < n && i != j);
    i * n - i * (i + 1) / 2 + (j - i - 1)
}

/// An undirected graph with categorical node and edge attributes. Edge
/// category 0 means "no edge".
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GraphInstance {
    n: usize,
    node_cats: Vec<usize>,
    edge_cats: Vec<usize>,
}

impl GraphInstance {
    pub fn new(n: usize, node_cats: Vec<usize>, edge_cats: Vec<usize>) -> Result<Self> {
        if n == 0 {
            return Err(invalid("a graph needs at least one node"));
        }
        if node_cats.len() != n || edge_cats.len() != n * (n - 1) / 2 {
            return Err(invalid(format!(
                "graph with n = {n} needs {n} node and {} edge entries",
                n * (n - 1) / 2
            )));
        }
        Ok(Self {
            n,
            node_cats,
            edge_cats,
        })
    }

    pub fn empty(n: usize) -> Result<Self> {
        Self::new(n, vec![0; n], vec![0; n * n.saturating_sub(1) / 2])
    }

    /// Unattributed graph from an edge list (edge category 1).
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut g = Self::empty(n)?;
        for &(i, j) in edges {
            if i >= n || j >= n || i == j {
                return Err(invalid(format!("invalid edge ({i}, {j}) for n = {n}")));
            }
            g.edge_cats[edge_index(n, i, j)] = 1;
        }
        Ok(g)
    }

    pub fn complete(n: usize) -> Result<Self> {
        Self::new(n, vec![0; n], vec![1; n * (n - 1) / 2])
    }

    pub fn path(n: usize) -> Result<Self> {
        let edges: Vec<(usize, usize)> = (1..n).map(|i| (i - 1, i)).collect();
        Self::from_edges(n, &edges)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn node_cats(&self) -> &[usize] {
        &self.node_cats
    }

    pub fn edge_cats(&self) -> &[usize] {
        &self.edge_cats
    }

    pub fn edge_cat(&self, i: usize, j: usize) -> usize {
        self.edge_cats[edge_index(self.n, i, j)]
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        i != j && self.edge_cat(i, j) != 0
    }

    /// Pairs `i < j` carrying a nonzero edge category.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in i + 1..self.n {
                if self.has_edge(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn num_edges(&self) -> usize {
        self.edge_cats.iter().filter(|c| **c != 0).count()
    }

    /// Relabels node `i` as `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n {
            return Err(invalid("permutation length must equal n"));
        }
        let mut seen = vec![false; self.n];
        for &p in perm {
            if p >= self.n || std::mem::replace(&mut seen[p], true) {
                return Err(invalid("not a permutation"));
            }
        }
        let mut node_cats = vec![0; self.n];
        let mut edge_cats = vec![0; self.edge_cats.len()];
        for i in 0..self.n {
            node_cats[perm[i]] = self.node_cats[i];
            for j in i + 1..self.n {
                edge_cats[edge_index(self.n, perm[i], perm[j])] = self.edge_cat(i, j);
            }
        }
        Self::new(self.n, node_cats, edge_cats)
    }
}

/// How graphs map onto the multi-simplex: a node channel over `K_v`
/// categories (dropped when `K_v = 1`) followed by an edge channel over the
/// upper triangle with `K_e` categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphEncoding {
    pub n: usize,
    pub k_v: usize,
    pub k_e: usize,
}

impl GraphEncoding {
    /// Unattributed graphs: `K_v = 1`, `K_e = 2`.
    pub fn unattributed(n: usize) -> Self {
        Self { n, k_v: 1, k_e: 2 }
    }

    pub fn has_nodes(&self) -> bool {
        self.k_v >= 2
    }

    pub fn layout(&self) -> Result<Layout> {
        if self.n < 2 {
            return Err(invalid("graph encoding needs n >= 2"));
        }
        let mut channels = Vec::new();
        if self.has_nodes() {
            channels.push(Channel {
                kind: ChannelKind::Node,
                k: self.k_v,
                len: self.n,
            });
        }
        channels.push(Channel {
            kind: ChannelKind::Edge,
            k: self.k_e,
            len: self.n * (self.n - 1) / 2,
        });
        Layout::new(channels)
    }

    pub fn encode(&self, g: &GraphInstance) -> Result<Vec<usize>> {
        if g.n != self.n {
            return Err(invalid(format!("graph has {} nodes, encoding expects {}", g.n, self.n)));
        }
        if g.node_cats.iter().any(|c| *c >= self.k_v) || g.edge_cats.iter().any(|c| *c >= self.k_e) {
            return Err(invalid("graph category out of range for this encoding"));
        }
        let mut out = Vec::with_capacity(self.n + g.edge_cats.len());
        if self.has_nodes() {
            out.extend_from_slice(&g.node_cats);
        }
        out.extend_from_slice(&g.edge_cats);
        Ok(out)
    }

    pub fn decode(&self, clean: &[usize]) -> Result<GraphInstance> {
        self.layout()?.check_clean(clean)?;
        let (nodes, edges) = if self.has_nodes() {
            (clean[..self.n].to_vec(), clean[self.n..].to_vec())
        } else {
            (vec![0; self.n], clean.to_vec())
        };
        GraphInstance::new(self.n, nodes, edges)
    }

    /// Per-dimension nearest vertex of a noisy state.
    pub fn decode_state(&self, state: &MultiSimplexState) -> Result<GraphInstance> {
        self.layout()?.check_state(state)?;
        let clean: Vec<usize> = state.dims.iter().map(nearest_vertex).collect();
        self.decode(&clean)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Generator {
    ErdosRenyi { p: f64 },
    /// Two equal blocks (the first `n / 2` nodes form block 0).
    TwoBlockSbm { p_in: f64, p_out: f64 },
    PathGraph,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphDatasetSpec {
    pub generator: Generator,
    pub n: usize,
    pub count: usize,
    pub seed: u64,
}

impl GraphDatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        let ok = match self.generator {
            Generator::ErdosRenyi { p } => prob(p),
            Generator::TwoBlockSbm { p_in, p_out } => prob(p_in) && prob(p_out),
            Generator::PathGraph => true,
        };
        if !ok {
            return Err(invalid("edge probabilities must lie in [0, 1]"));
        }
        if self.count == 0 || self.n == 0 {
            return Err(invalid("need count >= 1 and n >= 1"));
        }
        if self.n > 32 {
            return Err(invalid("toy graphs are limited to n <= 32"));
        }
        Ok(())
    }
}

pub fn same_block(n: usize, i: usize, j: usize) -> bool {
    (i < n / 2) == (j < n / 2)
}

fn generate_one<R: Rng + ?Sized>(generator: Generator, n: usize, rng: &mut R) -> Result<GraphInstance> {
    let mut g = GraphInstance::empty(n)?;
    for i in 0..n {
        for j in i + 1..n {
            let p = match generator {
                Generator::ErdosRenyi { p } => p,
                Generator::TwoBlockSbm { p_in, p_out } => {
                    if same_block(n, i, j) {
                        p_in
                    } else {
                        p_out
                    }
                }
                Generator::PathGraph => {
                    if j == i + 1 {
                        1.0
                    } else {
                        0.0
                    }
                }
            };
            // always draw so every pair consumes one variate
            let u: f64 = rng.random();
            if u < p {
                g.edge_cats[edge_index(n, i, j)] = 1;
            }
        }
    }
    Ok(g)
}

/// Graph `g` is drawn from stream `g` of `spec.seed`.
pub fn generate_dataset(spec: &GraphDatasetSpec) -> Result<Vec<GraphInstance>> {
    spec.validate()?;
    (0..spec.count)
        .map(|g| generate_one(spec.generator, spec.n, &mut stream_rng(spec.seed, g as u64)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::posterior::MpnnConfig;
    use crate::simplex::SimplexPoint;

    fn spec(generator: Generator, n: usize, count: usize) -> GraphDatasetSpec {
        GraphDatasetSpec {
            generator,
            n,
            count,
            seed: 7,
        }
    }

    #[test]
    fn edge_index_enumerates_upper_triangle() {
        let n = 6;
        let mut k = 0;
        for i in 0..n {
            for j in i + 1..n {
                assert_eq!(edge_index(n, i, j), k);
                assert_eq!(edge_index(n, j, i), k);
                k += 1;
            }
        }
    }

    #[test]
    fn er_extremes() {
        let full = generate_dataset(&spec(Generator::ErdosRenyi { p: 1.0 }, 4, 3)).unwrap();
        assert!(full.iter().all(|g| g.num_edges() == 6));
        let none = generate_dataset(&spec(Generator::ErdosRenyi { p: 0.0 }, 4, 3)).unwrap();
        assert!(none.iter().all(|g| g.num_edges() == 0));
        let path = generate_dataset(&spec(Generator::PathGraph, 5, 1)).unwrap();
        assert_eq!(path[0], GraphInstance::path(5).unwrap());
    }

    #[test]
    fn sbm_within_block_density() {
        let n = 8;
        let graphs = generate_dataset(&spec(Generator::TwoBlockSbm { p_in: 0.9, p_out: 0.05 }, n, 500)).unwrap();
        let mut within = 0usize;
        let mut pairs = 0usize;
        for g in &graphs {
            for i in 0..n {
                for j in i + 1..n {
                    if same_block(n, i, j) {
                        pairs += 1;
                        within += g.has_edge(i, j) as usize;
                    }
                }
            }
        }
        let f = within as f64 / pairs as f64;
        let se = (0.9 * 0.1 / pairs as f64).sqrt();
        assert!((f - 0.9).abs() <= 3.0 * se, "{f}");
    }

    #[test]
    fn generation_is_deterministic_and_validated() {
        let s = spec(Generator::ErdosRenyi { p: 0.3 }, 7, 20);
        assert_eq!(generate_dataset(&s).unwrap(), generate_dataset(&s).unwrap());
        assert!(generate_dataset(&spec(Generator::ErdosRenyi { p: 1.5 }, 4, 1)).is_err());
        assert!(generate_dataset(&spec(Generator::PathGraph, 4, 0)).is_err());
    }

    #[test]
    fn triangle_encodes_to_edge_vertices() {
        let enc = GraphEncoding::unattributed(3);
        let g = GraphInstance::complete(3).unwrap();
        assert_eq!(enc.encode(&g).unwrap(), vec![1, 1, 1]);
        assert_eq!(enc.encode(&GraphInstance::empty(3).unwrap()).unwrap(), vec![0, 0, 0]);
    }

    #[test]
    fn round_trip_random_graphs() {
        let graphs = generate_dataset(&spec(Generator::ErdosRenyi { p: 0.4 }, 6, 100)).unwrap();
        let enc = GraphEncoding::unattributed(6);
        for g in &graphs {
            assert_eq!(&enc.decode(&enc.encode(g).unwrap()).unwrap(), g);
        }
        let attributed = GraphEncoding { n: 3, k_v: 2, k_e: 3 };
        let g = GraphInstance::new(3, vec![1, 0, 1], vec![2, 0, 1]).unwrap();
        assert_eq!(attributed.decode(&attributed.encode(&g).unwrap()).unwrap(), g);
        assert_eq!(
            attributed.layout().unwrap(),
            MpnnConfig { n: 3, k_v: 2, k_e: 3, d_h: 4, rounds: 1 }.layout().unwrap()
        );
    }

    #[test]
    fn noisy_decode_is_stable_with_margin() {
        let enc = GraphEncoding::unattributed(3);
        let dims: Vec<SimplexPoint> = [0.8, 0.15, 0.9]
            .iter()
            .map(|p| SimplexPoint::new(vec![*p, 1.0 - p]).unwrap())
            .collect();
        let base = enc.decode_state(&MultiSimplexState::new(dims.clone(), 0.5).unwrap()).unwrap();
        for delta in [1e-6, -1e-6] {
            let pert: Vec<SimplexPoint> = dims
                .iter()
                .map(|d| SimplexPoint::new(vec![d.coords()[0] + delta, d.coords()[1] - delta]).unwrap())
                .collect();
            assert_eq!(enc.decode_state(&MultiSimplexState::new(pert, 0.5).unwrap()).unwrap(), base);
        }
        assert_eq!(base.edge_cats(), &[0, 1, 0]);
    }

    #[test]
    fn permutation_relabels_edges() {
        let g = GraphInstance::path(4).unwrap();
        let p = g.permuted(&[3, 2, 1, 0]).unwrap();
        assert!(p.has_edge(3, 2) && p.has_edge(2, 1) && p.has_edge(1, 0));
        assert!(g.permuted(&[0, 0, 1, 2]).is_err());
    }
}
