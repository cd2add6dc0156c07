//! GraphSAGE layers with batch normalisation, forward and backward.
//!
//! Each layer computes `ReLU(BN(W_self·h_v + W_neigh·mean_{u∈S(v)} h_u + b))`
//! where `S(v)` is the sampled in-neighbourhood (shared by both layers) and
//! an empty neighbourhood contributes the zero vector. The graph embedding is
//! the mean of the second layer's node outputs.

use std::ops::Range;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{neighborhoods, CodeGraph, EncoderError, EMBED_DIM, HIDDEN_DIM, INPUT_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNormState {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub momentum: f64,
    pub eps: f64,
    pub training: bool,
}

impl BatchNormState {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: Array1::ones(dim),
            beta: Array1::zeros(dim),
            running_mean: Array1::zeros(dim),
            running_var: Array1::ones(dim),
            momentum: 0.1,
            eps: 1e-5,
            training: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub w_self: Array2<f64>,
    pub w_neigh: Array2<f64>,
    pub bias: Array1<f64>,
    pub bn: BatchNormState,
}

impl LayerParams {
    fn zeros(out: usize, inp: usize) -> Self {
        Self {
            w_self: Array2::zeros((out, inp)),
            w_neigh: Array2::zeros((out, inp)),
            bias: Array1::zeros(out),
            bn: BatchNormState::new(out),
        }
    }

    fn check(&self, out: usize, inp: usize, name: &str) -> Result<(), EncoderError> {
        let ok = self.w_self.dim() == (out, inp)
            && self.w_neigh.dim() == (out, inp)
            && self.bias.len() == out
            && self.bn.gamma.len() == out
            && self.bn.beta.len() == out
            && self.bn.running_mean.len() == out
            && self.bn.running_var.len() == out;
        if ok {
            Ok(())
        } else {
            Err(EncoderError::ShapeMismatch(format!(
                "{name} is not {out}x{inp}"
            )))
        }
    }
}

/// Weights of both SAGE layers (768→256→128).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SageParams {
    pub layer1: LayerParams,
    pub layer2: LayerParams,
}

impl SageParams {
    pub fn zeros() -> Self {
        Self {
            layer1: LayerParams::zeros(HIDDEN_DIM, INPUT_DIM),
            layer2: LayerParams::zeros(EMBED_DIM, HIDDEN_DIM),
        }
    }

    pub fn check_shapes(&self) -> Result<(), EncoderError> {
        self.layer1.check(HIDDEN_DIM, INPUT_DIM, "layer1")?;
        self.layer2.check(EMBED_DIM, HIDDEN_DIM, "layer2")
    }

    /// Transposed copies of the first-layer weights for sparse products.
    pub fn prepare(&self) -> SagePrepared {
        SagePrepared {
            w1s_t: self.layer1.w_self.t().as_standard_layout().into_owned(),
            w1n_t: self.layer1.w_neigh.t().as_standard_layout().into_owned(),
        }
    }
}

pub struct SagePrepared {
    w1s_t: Array2<f64>,
    w1n_t: Array2<f64>,
}

pub(crate) fn xavier(rng: &mut ChaCha8Rng, out: usize, inp: usize) -> Array2<f64> {
    let bound = (6.0 / (inp + out) as f64).sqrt();
    Array2::from_shape_simple_fn((out, inp), || rng.random_range(-bound..bound))
}

pub(crate) fn init_with(rng: &mut ChaCha8Rng) -> SageParams {
    let mut p = SageParams::zeros();
    p.layer1.w_self = xavier(rng, HIDDEN_DIM, INPUT_DIM);
    p.layer1.w_neigh = xavier(rng, HIDDEN_DIM, INPUT_DIM);
    p.layer2.w_self = xavier(rng, EMBED_DIM, HIDDEN_DIM);
    p.layer2.w_neigh = xavier(rng, EMBED_DIM, HIDDEN_DIM);
    p
}

/// Xavier-uniform weights, zero biases, identity batch norm.
pub fn init_params(seed: u64) -> SageParams {
    init_with(&mut ChaCha8Rng::seed_from_u64(seed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphEmbedding {
    pub vector: Array1<f64>,
}

/// Row-sparse matrix; node features are mostly zeros.
#[derive(Debug, Clone)]
struct SparseRows {
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseRows {
    fn from_dense(a: &Array2<f64>) -> Self {
        let rows = a
            .outer_iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .filter(|(_, &x)| x != 0.0)
                    .map(|(j, &x)| (j, x))
                    .collect()
            })
            .collect();
        Self { rows }
    }

    fn mean_aggregate(&self, nbhd: &[Vec<usize>], dim: usize) -> Self {
        let mut acc = vec![0.0; dim];
        let mut touched = vec![false; dim];
        let rows = nbhd
            .iter()
            .map(|nb| {
                if nb.is_empty() {
                    return Vec::new();
                }
                let mut cols = Vec::new();
                for &u in nb {
                    for &(j, x) in &self.rows[u] {
                        if !touched[j] {
                            touched[j] = true;
                            cols.push(j);
                        }
                        acc[j] += x;
                    }
                }
                cols.sort_unstable();
                let k = nb.len() as f64;
                let row = cols
                    .iter()
                    .map(|&j| {
                        let v = acc[j] / k;
                        acc[j] = 0.0;
                        touched[j] = false;
                        (j, v)
                    })
                    .filter(|&(_, v)| v != 0.0)
                    .collect();
                row
            })
            .collect();
        Self { rows }
    }

    /// `self · w_t` where `w_t` is (in × out).
    fn matmul(&self, w_t: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((self.rows.len(), w_t.ncols()));
        for (v, row) in self.rows.iter().enumerate() {
            let mut o = out.row_mut(v);
            for &(j, x) in row {
                o.scaled_add(x, &w_t.row(j));
            }
        }
        out
    }

    /// `acc += selfᵀ · d` with `acc` (in × out).
    fn accumulate_outer(&self, d: &Array2<f64>, acc: &mut Array2<f64>) {
        for (v, row) in self.rows.iter().enumerate() {
            let dv = d.row(v);
            for &(j, x) in row {
                acc.row_mut(j).scaled_add(x, &dv);
            }
        }
    }
}

fn mean_aggregate_dense(h: &Array2<f64>, nbhd: &[Vec<usize>]) -> Array2<f64> {
    let mut out = Array2::zeros(h.dim());
    for (v, nb) in nbhd.iter().enumerate() {
        if nb.is_empty() {
            continue;
        }
        let mut o = out.row_mut(v);
        for &u in nb {
            o += &h.row(u);
        }
        o /= nb.len() as f64;
    }
    out
}

/// Adjoint of `mean_aggregate_dense`.
fn mean_scatter(d: &Array2<f64>, nbhd: &[Vec<usize>]) -> Array2<f64> {
    let mut out = Array2::zeros(d.dim());
    for (v, nb) in nbhd.iter().enumerate() {
        if nb.is_empty() {
            continue;
        }
        let scale = 1.0 / nb.len() as f64;
        for &u in nb {
            out.row_mut(u).scaled_add(scale, &d.row(v));
        }
    }
    out
}

struct LayerCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    /// post-BN, pre-ReLU
    y: Array2<f64>,
    h: Array2<f64>,
    batch_mean: Array1<f64>,
    batch_var: Array1<f64>,
}

fn bn_relu_forward(z: Array2<f64>, bn: &BatchNormState, mode: Mode) -> LayerCache {
    let n = z.nrows();
    let (mean, var) = match mode {
        Mode::Train => {
            let mean = z.mean_axis(Axis(0)).expect("non-empty graph");
            let centered = &z - &mean;
            let var = (&centered * &centered).sum_axis(Axis(0)) / n as f64;
            (mean, var)
        }
        Mode::Eval => (bn.running_mean.clone(), bn.running_var.clone()),
    };
    let inv_std = var.mapv(|v| 1.0 / (v + bn.eps).sqrt());
    let xhat = (z - &mean) * &inv_std;
    let y = &xhat * &bn.gamma + &bn.beta;
    let h = y.mapv(|v| v.max(0.0));
    LayerCache {
        xhat,
        inv_std,
        y,
        h,
        batch_mean: mean,
        batch_var: var,
    }
}

/// Returns (dz, dgamma, dbeta) for upstream gradient `dh` of the ReLU output.
fn bn_relu_backward(
    dh: &Array2<f64>,
    cache: &LayerCache,
    bn: &BatchNormState,
    mode: Mode,
) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
    let mut dy = dh.clone();
    ndarray::Zip::from(&mut dy).and(&cache.y).for_each(|d, &y| {
        if y <= 0.0 {
            *d = 0.0;
        }
    });
    let dgamma = (&dy * &cache.xhat).sum_axis(Axis(0));
    let dbeta = dy.sum_axis(Axis(0));
    let dxhat = &dy * &bn.gamma;
    let dz = match mode {
        Mode::Eval => dxhat * &cache.inv_std,
        Mode::Train => {
            let n = dy.nrows() as f64;
            let sum_dxhat = dxhat.sum_axis(Axis(0));
            let sum_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(0));
            ((dxhat * n - &sum_dxhat) - &cache.xhat * &sum_dxhat_xhat) * &cache.inv_std / n
        }
    };
    (dz, dgamma, dbeta)
}

/// Everything the backward pass needs from a forward pass.
pub struct SageCache {
    pub mode: Mode,
    pub nbhd: Vec<Vec<usize>>,
    /// Node rows of each graph in the batch.
    pub segments: Vec<Range<usize>>,
    x: SparseRows,
    ax: SparseRows,
    l1: LayerCache,
    m1: Array2<f64>,
    l2: LayerCache,
    /// One pooled row per graph.
    pub graph_embeddings: Array2<f64>,
}

impl SageCache {
    /// Second-layer node embeddings (N×128) over the whole batch.
    pub fn node_embeddings(&self) -> &Array2<f64> {
        &self.l2.h
    }

    /// Which first- and second-layer units are active, node by node.
    pub fn relu_pattern(&self) -> impl Iterator<Item = bool> + '_ {
        self.l1.y.iter().chain(self.l2.y.iter()).map(|&y| y > 0.0)
    }

    pub fn graph_nodes(&self, i: usize) -> ArrayView2<'_, f64> {
        self.l2.h.slice(s![self.segments[i].clone(), ..])
    }
}

pub(crate) fn forward(
    graph: &CodeGraph,
    params: &SageParams,
    prepared: &SagePrepared,
    mode: Mode,
    seed: Option<u64>,
) -> SageCache {
    forward_batch(&[graph], params, prepared, mode, &[seed])
}

/// Forward pass over the disjoint union of `graphs`. Layers see one node
/// matrix, so in training mode batch norm uses statistics over every node of
/// the batch; pooling stays per graph.
pub(crate) fn forward_batch(
    graphs: &[&CodeGraph],
    params: &SageParams,
    prepared: &SagePrepared,
    mode: Mode,
    seeds: &[Option<u64>],
) -> SageCache {
    let mut nbhd = Vec::new();
    let mut rows = Vec::new();
    let mut segments = Vec::with_capacity(graphs.len());
    for (g, &seed) in graphs.iter().zip(seeds) {
        let offset = nbhd.len();
        for nb in neighborhoods(g, seed) {
            nbhd.push(nb.into_iter().map(|u| u + offset).collect());
        }
        rows.extend(SparseRows::from_dense(&g.features).rows);
        segments.push(offset..nbhd.len());
    }
    let x = SparseRows { rows };
    let ax = x.mean_aggregate(&nbhd, INPUT_DIM);
    let z1 = x.matmul(&prepared.w1s_t) + ax.matmul(&prepared.w1n_t) + &params.layer1.bias;
    let l1 = bn_relu_forward(z1, &params.layer1.bn, mode);
    let m1 = mean_aggregate_dense(&l1.h, &nbhd);
    let z2 = l1.h.dot(&params.layer2.w_self.t())
        + m1.dot(&params.layer2.w_neigh.t())
        + &params.layer2.bias;
    let l2 = bn_relu_forward(z2, &params.layer2.bn, mode);
    let mut graph_embeddings = Array2::zeros((segments.len(), EMBED_DIM));
    for (i, seg) in segments.iter().enumerate() {
        let pooled =
            l2.h.slice(s![seg.clone(), ..])
                .mean_axis(Axis(0))
                .expect("non-empty graph");
        graph_embeddings.row_mut(i).assign(&pooled);
    }
    SageCache {
        mode,
        nbhd,
        segments,
        x,
        ax,
        l1,
        m1,
        l2,
        graph_embeddings,
    }
}

fn update_bn(bn: &mut BatchNormState, cache: &LayerCache, n: usize) {
    // a single row carries no variance estimate
    if n < 2 {
        return;
    }
    let m = bn.momentum;
    let unbiased = &cache.batch_var * (n as f64 / (n as f64 - 1.0));
    bn.running_mean = &bn.running_mean * (1.0 - m) + &cache.batch_mean * m;
    bn.running_var = &bn.running_var * (1.0 - m) + unbiased * m;
}

/// Folds a training-mode forward pass into the running statistics.
pub(crate) fn update_running_stats(params: &mut SageParams, cache: &SageCache) {
    if cache.mode != Mode::Train {
        return;
    }
    let n = cache.l1.h.nrows();
    update_bn(&mut params.layer1.bn, &cache.l1, n);
    update_bn(&mut params.layer2.bn, &cache.l2, n);
}

/// Transposed first-layer gradient accumulators; flushed once per step.
pub(crate) struct SageGradBuffers {
    w1s_t: Array2<f64>,
    w1n_t: Array2<f64>,
}

impl SageGradBuffers {
    pub(crate) fn new() -> Self {
        Self {
            w1s_t: Array2::zeros((INPUT_DIM, HIDDEN_DIM)),
            w1n_t: Array2::zeros((INPUT_DIM, HIDDEN_DIM)),
        }
    }

    pub(crate) fn flush(self, grads: &mut SageParams) {
        grads.layer1.w_self += &self.w1s_t.t();
        grads.layer1.w_neigh += &self.w1n_t.t();
    }
}

/// Accumulates parameter gradients given `d_nodes`, the gradient of the loss
/// with respect to the second-layer node embeddings of the whole batch
/// (pooling already folded in).
pub(crate) fn backward(
    params: &SageParams,
    cache: &SageCache,
    d_nodes: &Array2<f64>,
    grads: &mut SageParams,
    buffers: &mut SageGradBuffers,
) {
    let mode = cache.mode;
    let (dz2, dg2, db2) = bn_relu_backward(d_nodes, &cache.l2, &params.layer2.bn, mode);
    grads.layer2.bn.gamma += &dg2;
    grads.layer2.bn.beta += &db2;
    grads.layer2.bias += &dz2.sum_axis(Axis(0));
    grads.layer2.w_self += &dz2.t().dot(&cache.l1.h);
    grads.layer2.w_neigh += &dz2.t().dot(&cache.m1);
    let dh1 = dz2.dot(&params.layer2.w_self)
        + mean_scatter(&dz2.dot(&params.layer2.w_neigh), &cache.nbhd);

    let (dz1, dg1, db1) = bn_relu_backward(&dh1, &cache.l1, &params.layer1.bn, mode);
    grads.layer1.bn.gamma += &dg1;
    grads.layer1.bn.beta += &db1;
    grads.layer1.bias += &dz1.sum_axis(Axis(0));
    cache.x.accumulate_outer(&dz1, &mut buffers.w1s_t);
    cache.ax.accumulate_outer(&dz1, &mut buffers.w1n_t);
}

/// Encodes a graph. Training mode normalises with the graph's own node
/// statistics but leaves the running statistics untouched.
pub fn encode_graph(
    graph: &CodeGraph,
    params: &SageParams,
    mode: Mode,
    seed: Option<u64>,
) -> Result<(GraphEmbedding, Array2<f64>), EncoderError> {
    params.check_shapes()?;
    if graph.features.ncols() != INPUT_DIM {
        return Err(EncoderError::ShapeMismatch("feature width".into()));
    }
    if graph.num_nodes == 0 {
        return Err(EncoderError::ShapeMismatch("graph has no nodes".into()));
    }
    let cache = forward(graph, params, &params.prepare(), mode, seed);
    let nodes = cache.l2.h.clone();
    Ok((
        GraphEmbedding {
            vector: cache.graph_embeddings.row(0).to_owned(),
        },
        nodes,
    ))
}
