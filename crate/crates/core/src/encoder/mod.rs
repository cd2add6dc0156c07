//! Structural branch: uAST → featured graph → two-layer GraphSAGE embedding.

mod sage;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::uast::{UastDocument, UastNode, UniversalCategory};

pub(crate) use sage::{
    backward, forward_batch, init_with as sage_init_with, update_running_stats, xavier,
    SageGradBuffers,
};
pub use sage::{
    encode_graph, init_params, BatchNormState, GraphEmbedding, LayerParams, Mode, SageCache,
    SageParams, SagePrepared,
};

pub const INPUT_DIM: usize = 768;
pub const HIDDEN_DIM: usize = 256;
pub const EMBED_DIM: usize = 128;
/// Neighbours sampled per node per layer.
pub const SAMPLE_SIZE: usize = 10;

/// Feature layout of a node vector.
pub mod layout {
    pub const CATEGORY: std::ops::Range<usize> = 0..47;
    pub const NATIVE_TYPE: std::ops::Range<usize> = 47..111;
    pub const TOKENS: std::ops::Range<usize> = 111..623;
    pub const DEPTH: usize = 623;
    pub const SPAN_LEN: usize = 624;
    pub const CHILD_COUNT: usize = 625;
    pub const START_POS: usize = 626;
}

/// Multiplier for bucket selection (64-bit golden ratio).
pub const HASH_MULT: u64 = 0x9E37_79B9_7F4A_7C15;
/// Multiplier whose top product bit picks the sign.
pub const SIGN_MULT: u64 = 0xC2B2_AE3D_27D4_EB4F;

#[derive(Debug, Error, PartialEq)]
pub enum EncoderError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("edge ({0}, {1}) has an endpoint out of range")]
    EdgeOutOfRange(usize, usize),
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Signed multiply-shift hash of `token` into `2^bits` buckets.
pub fn signed_bucket(token: &str, bits: u32) -> (usize, f64) {
    let key = fnv1a(token.as_bytes());
    let bucket = (key.wrapping_mul(HASH_MULT) >> (64 - bits)) as usize;
    let sign = if key.wrapping_mul(SIGN_MULT) >> 63 == 1 {
        -1.0
    } else {
        1.0
    };
    (bucket, sign)
}

/// Deterministic 768-dim node features. `source_len` normalises the start
/// position (pass the root span's end byte).
pub fn featurize_node(node: &UastNode, depth: usize, source_len: usize) -> Array1<f64> {
    let mut f = Array1::zeros(INPUT_DIM);
    f[layout::CATEGORY.start + node.universal_category.code() as usize] = 1.0;
    let (b, s) = signed_bucket(&node.native_type, 6);
    f[layout::NATIVE_TYPE.start + b] += s;
    for token in node.text.split_whitespace() {
        let (b, s) = signed_bucket(token, 9);
        f[layout::TOKENS.start + b] += s;
    }
    f[layout::DEPTH] = (depth as f64).ln_1p();
    f[layout::SPAN_LEN] = (node.span.len() as f64).ln_1p();
    f[layout::CHILD_COUNT] = (node.children.len() as f64).ln_1p();
    f[layout::START_POS] = node.span.start_byte as f64 / source_len.max(1) as f64;
    f
}

/// Directed graph over uAST nodes with both directions of every tree edge.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeGraph {
    pub num_nodes: usize,
    pub features: Array2<f64>,
    pub edges: Vec<(usize, usize)>,
    pub node_doc_index: Vec<usize>,
    in_adj: Vec<Vec<usize>>,
}

impl CodeGraph {
    pub fn new(
        features: Array2<f64>,
        edges: Vec<(usize, usize)>,
        node_doc_index: Vec<usize>,
    ) -> Result<Self, EncoderError> {
        let n = features.nrows();
        if features.ncols() != INPUT_DIM {
            return Err(EncoderError::ShapeMismatch(format!(
                "features have {} columns, expected {INPUT_DIM}",
                features.ncols()
            )));
        }
        if node_doc_index.len() != n {
            return Err(EncoderError::ShapeMismatch(format!(
                "node_doc_index has {} entries for {n} nodes",
                node_doc_index.len()
            )));
        }
        let mut in_adj = vec![Vec::new(); n];
        for &(src, dst) in &edges {
            if src >= n || dst >= n {
                return Err(EncoderError::EdgeOutOfRange(src, dst));
            }
            in_adj[dst].push(src);
        }
        for list in &mut in_adj {
            list.sort_unstable();
        }
        Ok(Self {
            num_nodes: n,
            features,
            edges,
            node_doc_index,
            in_adj,
        })
    }

    /// In-neighbours of `node`, ascending.
    pub fn in_neighbors(&self, node: usize) -> &[usize] {
        &self.in_adj[node]
    }

    pub fn max_in_degree(&self) -> usize {
        self.in_adj.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// True when every edge has its reverse.
    pub fn is_symmetric(&self) -> bool {
        let set: std::collections::HashSet<_> = self.edges.iter().copied().collect();
        self.edges.iter().all(|&(a, b)| set.contains(&(b, a)))
    }
}

pub fn build_graph(doc: &UastDocument) -> CodeGraph {
    let depths = doc.depths();
    let source_len = doc.root().span.end_byte;
    let n = doc.nodes.len();
    let mut features = Array2::zeros((n, INPUT_DIM));
    let mut edges = Vec::with_capacity(2 * n.saturating_sub(1));
    for node in &doc.nodes {
        features
            .row_mut(node.index)
            .assign(&featurize_node(node, depths[node.index], source_len));
        if let Some(p) = node.parent {
            edges.push((p, node.index));
            edges.push((node.index, p));
        }
    }
    CodeGraph::new(features, edges, (0..n).collect()).expect("document graph is well-formed")
}

/// Up to `k` in-neighbours of `node`. Full neighbourhoods of size ≤ k come
/// back sorted; larger ones are sampled without replacement from a per-node
/// stream of `seed`, or truncated to the k smallest indices when `seed` is
/// `None`.
pub fn sample_neighbors(graph: &CodeGraph, node: usize, k: usize, seed: Option<u64>) -> Vec<usize> {
    let all = graph.in_neighbors(node);
    if all.len() <= k {
        return all.to_vec();
    }
    match seed {
        None => all[..k].to_vec(),
        Some(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(node as u64);
            let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, all.len(), k)
                .into_iter()
                .map(|i| all[i])
                .collect();
            picked.sort_unstable();
            picked
        }
    }
}

/// Sampled neighbourhood of every node.
pub fn neighborhoods(graph: &CodeGraph, seed: Option<u64>) -> Vec<Vec<usize>> {
    (0..graph.num_nodes)
        .map(|v| sample_neighbors(graph, v, SAMPLE_SIZE, seed))
        .collect()
}

/// Category one-hot position, exposed for tests.
pub fn category_dim(cat: UniversalCategory) -> usize {
    layout::CATEGORY.start + cat.code() as usize
}
