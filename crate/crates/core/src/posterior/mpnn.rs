use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::graph::edge_index;
use crate::posterior::params::{he_init, matvec_add, matvec_t_add, outer_add};
use crate::posterior::{
    dim_weights, log_softmax_at, softmax, time_features, ParamSet, PosteriorModel, Tensor,
    TrainExample, Trainable,
};
use crate::simplex::{CategoricalDist, Channel, ChannelKind, Layout, MultiSimplexState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MpnnConfig {
    /// Number of nodes.
    pub n: usize,
    /// Node categories; 1 means unattributed (no node channel).
    pub k_v: usize,
    pub k_e: usize,
    /// Node hidden width; edge states use `max(d_h / 4, 1)`.
    pub d_h: usize,
    pub rounds: usize,
}

impl MpnnConfig {
    pub fn d_e(&self) -> usize {
        (self.d_h / 4).max(1)
    }

    pub fn has_nodes(&self) -> bool {
        self.k_v >= 2
    }

    pub fn layout(&self) -> Result<Layout> {
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

    fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(invalid("message passing needs at least 2 nodes"));
        }
        if self.k_v == 0 || self.k_e < 2 || self.d_h == 0 {
            return Err(invalid("need K_v >= 1, K_e >= 2 and d_h >= 1"));
        }
        Ok(())
    }
}

// parameter indices
const NODE_IN_W: usize = 0;
const NODE_IN_B: usize = 1;
const EDGE_IN_W: usize = 2;
const EDGE_IN_B: usize = 3;
const ROUND_BASE: usize = 4;
const PER_ROUND: usize = 8;
// offsets within a round
const SRC_W: usize = 0;
const TRG_W: usize = 1;
const EDGE_W: usize = 2;
const MSG_B: usize = 3;
const FE_W: usize = 4;
const FE_B: usize = 5;
const FN_W: usize = 6;
const FN_B: usize = 7;

/// Small permutation-equivariant message-passing denoiser over a complete
/// graph of noisy node and edge simplices.
///
/// Each round computes, for every ordered pair `i != j`,
/// `h_ij = relu(W_src x_i + W_trg x_j + W_edge e_ij + b)`, then updates
/// `e_ij += f_edge(h_ij)` and `x_i += sum_j f_node(h_ij)` with linear
/// `f_edge`, `f_node`. Edge logits are averaged over both directions.
#[derive(Debug, Clone)]
pub struct MiniMpnn {
    config: MpnnConfig,
    layout: Layout,
    params: ParamSet,
}

struct Trace {
    node_in: Vec<Vec<f64>>,
    edge_in: Vec<Vec<f64>>,
    // per round r (0..=R): node states [n][d_h], edge states [n*n][d_e]
    xs: Vec<Vec<Vec<f64>>>,
    es: Vec<Vec<Vec<f64>>>,
    // per round r (0..R): message pre-activations [n*n][d_e]
    pre: Vec<Vec<Vec<f64>>>,
    node_logits: Vec<Vec<f64>>,
    edge_logits: Vec<Vec<f64>>,
}

impl MiniMpnn {
    pub fn zeros(config: MpnnConfig) -> Result<Self> {
        config.validate()?;
        let layout = config.layout()?;
        let d_h = config.d_h;
        let d_e = config.d_e();
        let in_v = if config.has_nodes() { config.k_v } else { 0 } + 2;
        let in_e = config.k_e + 2;
        let mut p = ParamSet::default();
        p.push(Tensor::zeros("node_in.weight", &[d_h, in_v]));
        p.push(Tensor::zeros("node_in.bias", &[d_h]));
        p.push(Tensor::zeros("edge_in.weight", &[d_e, in_e]));
        p.push(Tensor::zeros("edge_in.bias", &[d_e]));
        for r in 0..config.rounds {
            p.push(Tensor::zeros(format!("round{r}.src.weight"), &[d_e, d_h]));
            p.push(Tensor::zeros(format!("round{r}.trg.weight"), &[d_e, d_h]));
            p.push(Tensor::zeros(format!("round{r}.edge.weight"), &[d_e, d_e]));
            p.push(Tensor::zeros(format!("round{r}.msg.bias"), &[d_e]));
            p.push(Tensor::zeros(format!("round{r}.f_edge.weight"), &[d_e, d_e]));
            p.push(Tensor::zeros(format!("round{r}.f_edge.bias"), &[d_e]));
            p.push(Tensor::zeros(format!("round{r}.f_node.weight"), &[d_h, d_e]));
            p.push(Tensor::zeros(format!("round{r}.f_node.bias"), &[d_h]));
        }
        p.push(Tensor::zeros("node_out.weight", &[config.k_v, d_h]));
        p.push(Tensor::zeros("node_out.bias", &[config.k_v]));
        p.push(Tensor::zeros("edge_out.weight", &[config.k_e, d_e]));
        p.push(Tensor::zeros("edge_out.bias", &[config.k_e]));
        Ok(Self {
            config,
            layout,
            params: p,
        })
    }

    /// He-initialised weights; residual branch outputs and messages summed
    /// over `n - 1` neighbours are scaled down to keep activations bounded.
    pub fn new<R: Rng + ?Sized>(config: MpnnConfig, rng: &mut R) -> Result<Self> {
        let mut m = Self::zeros(config)?;
        let count = m.params.tensors().len();
        for i in 0..count {
            let t = &m.params.tensors()[i];
            if t.shape.len() != 2 {
                continue;
            }
            let cols = t.shape[1];
            let scale = if t.name.ends_with("f_node.weight") {
                1.0 / (config.n - 1) as f64
            } else {
                1.0
            };
            he_init(m.params.get_mut(i), cols, rng);
            m.params.get_mut(i).iter_mut().for_each(|x| *x *= scale);
        }
        Ok(m)
    }

    pub fn from_params(config: MpnnConfig, params: &ParamSet) -> Result<Self> {
        let mut m = Self::zeros(config)?;
        m.params.load_from(params)?;
        Ok(m)
    }

    pub fn config(&self) -> &MpnnConfig {
        &self.config
    }

    fn out_index(&self) -> usize {
        ROUND_BASE + PER_ROUND * self.config.rounds
    }

    fn round(&self, r: usize, off: usize) -> usize {
        ROUND_BASE + PER_ROUND * r + off
    }

    fn forward(&self, state: &MultiSimplexState) -> Result<Trace> {
        self.layout.check_state(state)?;
        let MpnnConfig { n, d_h, .. } = self.config;
        let d_e = self.config.d_e();
        let tf = time_features(state.t);
        let edge_offset = if self.config.has_nodes() { n } else { 0 };
        let p = &self.params;

        let node_in: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut u = Vec::new();
                if self.config.has_nodes() {
                    u.extend_from_slice(state.dims[i].coords());
                }
                u.extend_from_slice(&tf);
                u
            })
            .collect();
        let edge_in: Vec<Vec<f64>> = (0..n * n)
            .map(|ij| {
                let (i, j) = (ij / n, ij % n);
                if i == j {
                    return Vec::new();
                }
                let mut v = state.dims[edge_offset + edge_index(n, i, j)].coords().to_vec();
                v.extend_from_slice(&tf);
                v
            })
            .collect();

        let mut x0 = vec![vec![0.0; d_h]; n];
        for (x, u) in x0.iter_mut().zip(&node_in) {
            x.copy_from_slice(p.get(NODE_IN_B));
            matvec_add(p.get(NODE_IN_W), u, x);
        }
        let mut e0 = vec![vec![0.0; d_e]; n * n];
        for (ij, (e, v)) in e0.iter_mut().zip(&edge_in).enumerate() {
            if ij / n == ij % n {
                continue;
            }
            e.copy_from_slice(p.get(EDGE_IN_B));
            matvec_add(p.get(EDGE_IN_W), v, e);
        }

        let mut xs = vec![x0];
        let mut es = vec![e0];
        let mut pres = Vec::with_capacity(self.config.rounds);
        for r in 0..self.config.rounds {
            let x = &xs[r];
            let e = &es[r];
            let mut pre = vec![Vec::new(); n * n];
            let mut x_next = x.clone();
            let mut e_next = e.clone();
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let ij = i * n + j;
                    let mut a = p.get(self.round(r, MSG_B)).to_vec();
                    matvec_add(p.get(self.round(r, SRC_W)), &x[i], &mut a);
                    matvec_add(p.get(self.round(r, TRG_W)), &x[j], &mut a);
                    matvec_add(p.get(self.round(r, EDGE_W)), &e[ij], &mut a);
                    let h: Vec<f64> = a.iter().map(|v| v.max(0.0)).collect();
                    let en = &mut e_next[ij];
                    for (o, b) in en.iter_mut().zip(p.get(self.round(r, FE_B))) {
                        *o += b;
                    }
                    matvec_add(p.get(self.round(r, FE_W)), &h, en);
                    let xn = &mut x_next[i];
                    for (o, b) in xn.iter_mut().zip(p.get(self.round(r, FN_B))) {
                        *o += b;
                    }
                    matvec_add(p.get(self.round(r, FN_W)), &h, xn);
                    pre[ij] = a;
                }
            }
            pres.push(pre);
            xs.push(x_next);
            es.push(e_next);
        }

        let out = self.out_index();
        let x_last = xs.last().expect("at least the embedding");
        let e_last = es.last().expect("at least the embedding");
        let node_logits = if self.config.has_nodes() {
            x_last
                .iter()
                .map(|x| {
                    let mut z = p.get(out + 1).to_vec();
                    matvec_add(p.get(out), x, &mut z);
                    z
                })
                .collect()
        } else {
            Vec::new()
        };
        let mut edge_logits = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                let avg: Vec<f64> = e_last[i * n + j]
                    .iter()
                    .zip(&e_last[j * n + i])
                    .map(|(a, b)| 0.5 * (a + b))
                    .collect();
                let mut y = p.get(out + 3).to_vec();
                matvec_add(p.get(out + 2), &avg, &mut y);
                edge_logits.push(y);
            }
        }
        Ok(Trace {
            node_in,
            edge_in,
            xs,
            es,
            pre: pres,
            node_logits,
            edge_logits,
        })
    }

    /// Node logits followed by edge logits, in layout order.
    pub fn logits(&self, state: &MultiSimplexState) -> Result<Vec<Vec<f64>>> {
        let tr = self.forward(state)?;
        Ok(tr.node_logits.into_iter().chain(tr.edge_logits).collect())
    }
}

impl PosteriorModel for MiniMpnn {
    fn layout(&self) -> &Layout {
        &self.layout
    }

    fn evaluate(&self, state: &MultiSimplexState) -> Result<Vec<CategoricalDist>> {
        self.logits(state)?
            .iter()
            .map(|z| CategoricalDist::from_logits(z))
            .collect()
    }
}

impl Trainable for MiniMpnn {
    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn example_loss_grad(&self, example: &TrainExample, gamma: f64, grad: &mut ParamSet) -> Result<f64> {
        self.layout.check_clean(&example.clean)?;
        let tr = self.forward(&example.state)?;
        let MpnnConfig { n, d_h, .. } = self.config;
        let d_e = self.config.d_e();
        let p = &self.params;
        let out = self.out_index();
        let weights = dim_weights(&self.layout, gamma);

        let logits: Vec<&Vec<f64>> = tr.node_logits.iter().chain(&tr.edge_logits).collect();
        let mut loss = 0.0;
        let mut dlogits: Vec<Vec<f64>> = Vec::with_capacity(logits.len());
        for ((z, c), w) in logits.iter().zip(&example.clean).zip(&weights) {
            loss -= w * log_softmax_at(z, *c);
            let mut d = softmax(z);
            d[*c] -= 1.0;
            d.iter_mut().for_each(|v| *v *= w);
            dlogits.push(d);
        }
        let (dnode, dedge) = dlogits.split_at(tr.node_logits.len());

        let r_count = self.config.rounds;
        let mut dx = vec![vec![0.0; d_h]; n];
        let mut de = vec![vec![0.0; d_e]; n * n];
        for (i, dz) in dnode.iter().enumerate() {
            outer_add(grad.get_mut(out), dz, &tr.xs[r_count][i]);
            for (g, v) in grad.get_mut(out + 1).iter_mut().zip(dz) {
                *g += v;
            }
            matvec_t_add(p.get(out), dz, &mut dx[i]);
        }
        let mut pair = 0;
        for i in 0..n {
            for j in i + 1..n {
                let dy = &dedge[pair];
                pair += 1;
                let avg: Vec<f64> = tr.es[r_count][i * n + j]
                    .iter()
                    .zip(&tr.es[r_count][j * n + i])
                    .map(|(a, b)| 0.5 * (a + b))
                    .collect();
                outer_add(grad.get_mut(out + 2), dy, &avg);
                for (g, v) in grad.get_mut(out + 3).iter_mut().zip(dy) {
                    *g += v;
                }
                let mut davg = vec![0.0; d_e];
                matvec_t_add(p.get(out + 2), dy, &mut davg);
                for k in 0..d_e {
                    de[i * n + j][k] += 0.5 * davg[k];
                    de[j * n + i][k] += 0.5 * davg[k];
                }
            }
        }

        for r in (0..r_count).rev() {
            let x = &tr.xs[r];
            let e = &tr.es[r];
            // residual paths carry the incoming gradients through unchanged
            let mut dx_prev = dx.clone();
            let mut de_prev = de.clone();
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let ij = i * n + j;
                    let a = &tr.pre[r][ij];
                    let h: Vec<f64> = a.iter().map(|v| v.max(0.0)).collect();
                    let mut dh = vec![0.0; d_e];
                    matvec_t_add(p.get(self.round(r, FE_W)), &de[ij], &mut dh);
                    matvec_t_add(p.get(self.round(r, FN_W)), &dx[i], &mut dh);
                    outer_add(grad.get_mut(self.round(r, FE_W)), &de[ij], &h);
                    for (g, v) in grad.get_mut(self.round(r, FE_B)).iter_mut().zip(&de[ij]) {
                        *g += v;
                    }
                    outer_add(grad.get_mut(self.round(r, FN_W)), &dx[i], &h);
                    for (g, v) in grad.get_mut(self.round(r, FN_B)).iter_mut().zip(&dx[i]) {
                        *g += v;
                    }
                    let da: Vec<f64> = dh
                        .iter()
                        .zip(a)
                        .map(|(g, v)| if *v > 0.0 { *g } else { 0.0 })
                        .collect();
                    outer_add(grad.get_mut(self.round(r, SRC_W)), &da, &x[i]);
                    outer_add(grad.get_mut(self.round(r, TRG_W)), &da, &x[j]);
                    outer_add(grad.get_mut(self.round(r, EDGE_W)), &da, &e[ij]);
                    for (g, v) in grad.get_mut(self.round(r, MSG_B)).iter_mut().zip(&da) {
                        *g += v;
                    }
                    matvec_t_add(p.get(self.round(r, SRC_W)), &da, &mut dx_prev[i]);
                    matvec_t_add(p.get(self.round(r, TRG_W)), &da, &mut dx_prev[j]);
                    matvec_t_add(p.get(self.round(r, EDGE_W)), &da, &mut de_prev[ij]);
                }
            }
            dx = dx_prev;
            de = de_prev;
        }

        for (dxi, u) in dx.iter().zip(&tr.node_in) {
            outer_add(grad.get_mut(NODE_IN_W), dxi, u);
            for (g, v) in grad.get_mut(NODE_IN_B).iter_mut().zip(dxi) {
                *g += v;
            }
        }
        for (ij, (deij, v)) in de.iter().zip(&tr.edge_in).enumerate() {
            if ij / n == ij % n {
                continue;
            }
            outer_add(grad.get_mut(EDGE_IN_W), deij, v);
            for (g, w) in grad.get_mut(EDGE_IN_B).iter_mut().zip(deij) {
                *g += w;
            }
        }
        Ok(loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::par::stream_rng;
    use crate::paths::{noise_layout, NoiseSchedule};
    use crate::posterior::gradient_check;
    use crate::simplex::SimplexPoint;
    use approx::assert_relative_eq;
    use rand::seq::SliceRandom;

    fn config(k_v: usize) -> MpnnConfig {
        MpnnConfig {
            n: 5,
            k_v,
            k_e: 2,
            d_h: 8,
            rounds: 2,
        }
    }

    fn noisy(cfg: &MpnnConfig, seed: u64) -> (Vec<usize>, MultiSimplexState) {
        let layout = cfg.layout().unwrap();
        let mut rng = stream_rng(seed, 0);
        let clean: Vec<usize> = layout.dims().map(|(_, k)| rng.random_range(0..k)).collect();
        let state = noise_layout(&NoiseSchedule::default(), &layout, &clean, 0.5, &mut rng).unwrap();
        (clean, state)
    }

    // relabel node i as perm[i]
    fn permute_state(cfg: &MpnnConfig, state: &MultiSimplexState, perm: &[usize]) -> MultiSimplexState {
        let n = cfg.n;
        let off = if cfg.has_nodes() { n } else { 0 };
        let mut dims = state.dims.clone();
        for i in 0..n {
            if cfg.has_nodes() {
                dims[perm[i]] = state.dims[i].clone();
            }
            for j in i + 1..n {
                dims[off + edge_index(n, perm[i], perm[j])] = state.dims[off + edge_index(n, i, j)].clone();
            }
        }
        MultiSimplexState::new(dims, state.t).unwrap()
    }

    #[test]
    fn equivariant_under_node_permutations() {
        for k_v in [1usize, 3] {
            let cfg = config(k_v);
            let mut rng = stream_rng(70 + k_v as u64, 0);
            let model = MiniMpnn::new(cfg, &mut rng).unwrap();
            let (_, state) = noisy(&cfg, 71);
            let base = model.logits(&state).unwrap();
            let off = if cfg.has_nodes() { cfg.n } else { 0 };
            let mut perm: Vec<usize> = (0..cfg.n).collect();
            for _ in 0..100 {
                perm.shuffle(&mut rng);
                let out = model.logits(&permute_state(&cfg, &state, &perm)).unwrap();
                for i in 0..cfg.n {
                    if cfg.has_nodes() {
                        for (a, b) in base[i].iter().zip(&out[perm[i]]) {
                            assert!((a - b).abs() <= 1e-9);
                        }
                    }
                    for j in i + 1..cfg.n {
                        let a = &base[off + edge_index(cfg.n, i, j)];
                        let b = &out[off + edge_index(cfg.n, perm[i], perm[j])];
                        for (x, y) in a.iter().zip(b) {
                            assert!((x - y).abs() <= 1e-9);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn edge_outputs_are_symmetric() {
        // symmetric by construction: the output for (i, j) averages both
        // directed edge states, so relabelling i <-> j leaves it unchanged
        let cfg = config(3);
        let mut rng = stream_rng(72, 0);
        let model = MiniMpnn::new(cfg, &mut rng).unwrap();
        let (_, state) = noisy(&cfg, 73);
        let tr = model.forward(&state).unwrap();
        let n = cfg.n;
        let last = tr.es.last().unwrap();
        let mut k = 0;
        for i in 0..n {
            for j in i + 1..n {
                let fwd: Vec<f64> = last[i * n + j].iter().zip(&last[j * n + i]).map(|(a, b)| 0.5 * (a + b)).collect();
                let rev: Vec<f64> = last[j * n + i].iter().zip(&last[i * n + j]).map(|(a, b)| 0.5 * (a + b)).collect();
                assert_eq!(fwd, rev);
                let mut y = model.params.get(model.out_index() + 3).to_vec();
                matvec_add(model.params.get(model.out_index() + 2), &rev, &mut y);
                assert_eq!(y, tr.edge_logits[k]);
                k += 1;
            }
        }
    }

    #[test]
    fn zero_weights_give_uniform() {
        let cfg = config(3);
        let model = MiniMpnn::zeros(cfg).unwrap();
        let (_, state) = noisy(&cfg, 74);
        for (pi, (_, k)) in model.evaluate(&state).unwrap().iter().zip(model.layout().dims()) {
            for p in pi.probs() {
                assert_relative_eq!(*p, 1.0 / k as f64, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for (k_v, gamma) in [(3usize, 0.5), (1, 0.5), (2, 0.3)] {
            let cfg = config(k_v);
            let mut rng = stream_rng(75 + k_v as u64, 0);
            let model = MiniMpnn::new(cfg, &mut rng).unwrap();
            let batch: Vec<TrainExample> = (0..3)
                .map(|s| {
                    let (clean, state) = noisy(&cfg, 80 + s);
                    TrainExample { clean, state }
                })
                .collect();
            let report = gradient_check(&model, &batch, gamma, 20, 1e-5, &mut rng).unwrap();
            assert!(report.max_rel_error <= 1e-4, "{report:?}");
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        let cfg = config(3);
        let model = MiniMpnn::zeros(cfg).unwrap();
        let state = MultiSimplexState::new(vec![SimplexPoint::uniform(2); 3], 0.1).unwrap();
        assert!(model.evaluate(&state).is_err());
        assert!(MiniMpnn::zeros(MpnnConfig { n: 1, ..cfg }).is_err());
    }
}
