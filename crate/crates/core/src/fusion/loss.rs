//! Composite objective `CE + λ_nce·InfoNCE + λ_lap·Laplacian` and its
//! hand-written gradient.

use ndarray::{s, Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::encoder::{self, CodeGraph, Mode, SageCache, SageGradBuffers, SageParams};

use super::ops::{self, l2_normalize, LayerNormCache};
use super::{
    ClassifierParams, FusionError, FusionModel, GateParams, ProjectionParams, TrainConfig,
};

/// A sample with its graph built and its semantic embedding computed and
/// L2-normalised, so training never re-parses or re-embeds.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub graph: CodeGraph,
    pub h_l: Array1<f64>,
    pub label: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub total: f64,
    pub ce: f64,
    pub nce: f64,
    pub lap: f64,
}

pub(crate) struct FusionGrads {
    pub sage: SageParams,
    pub proj: ProjectionParams,
    pub gate: GateParams,
    pub clf: ClassifierParams,
}

impl FusionGrads {
    pub(crate) fn zeros(semantic_dim: usize) -> Self {
        let mut proj = ProjectionParams::zeros();
        proj.w_l = Array2::zeros((proj.w_l.nrows(), semantic_dim));
        proj.ln_g.gamma.fill(0.0);
        proj.ln_l.gamma.fill(0.0);
        let mut sage = SageParams::zeros();
        for l in [&mut sage.layer1, &mut sage.layer2] {
            l.bn.gamma.fill(0.0);
        }
        Self {
            sage,
            proj,
            gate: GateParams::zeros(),
            clf: ClassifierParams::zeros(),
        }
    }
}

struct SampleForward {
    h_g: Array1<f64>,
    h_g_n: Array1<f64>,
    z_g: Array1<f64>,
    ln_g: LayerNormCache,
    g: Array1<f64>,
    z_l: Array1<f64>,
    ln_l: LayerNormCache,
    l: Array1<f64>,
    alpha_g: f64,
    alpha_l: f64,
    fused: Array1<f64>,
    probs: [f64; 2],
    log_probs: [f64; 2],
}

fn sample_forward(s: &PreparedSample, h_g: Array1<f64>, model: &FusionModel) -> SampleForward {
    let h_g_n = l2_normalize(&h_g);
    let p = &model.proj;
    let z_g = p.w_g.dot(&h_g_n) + &p.b_g;
    let (g, ln_g) = ops::layer_norm(&ops::relu(&z_g), &p.ln_g.gamma, &p.ln_g.beta);
    let z_l = p.w_l.dot(&s.h_l) + &p.b_l;
    let (l, ln_l) = ops::layer_norm(&ops::relu(&z_l), &p.ln_l.gamma, &p.ln_l.beta);
    let (alpha_g, alpha_l, fused) = super::gate_and_fuse(&g, &l, &model.gate);
    let logits = model.clf.w.dot(&fused) + &model.clf.b;
    let lp = ops::log_softmax(logits.view());
    SampleForward {
        h_g,
        h_g_n,
        z_g,
        ln_g,
        g,
        z_l,
        ln_l,
        l,
        alpha_g,
        alpha_l,
        fused,
        probs: [lp[0].exp(), lp[1].exp()],
        log_probs: [lp[0], lp[1]],
    }
}

fn stack(rows: impl Iterator<Item = Array1<f64>>, dim: usize) -> Array2<f64> {
    let rows: Vec<_> = rows.collect();
    let mut out = Array2::zeros((rows.len(), dim));
    for (i, r) in rows.iter().enumerate() {
        out.row_mut(i).assign(r);
    }
    out
}

/// Symmetric InfoNCE over in-batch pairs; returns (loss, dS) where dS is the
/// gradient with respect to the similarity matrix.
pub(crate) fn info_nce(g: &Array2<f64>, l: &Array2<f64>, tau: f64) -> (f64, Array2<f64>) {
    let b = g.nrows();
    let s = g.dot(&l.t()) / tau;
    let mut loss = 0.0;
    let mut ds = Array2::zeros((b, b));
    for i in 0..b {
        let row = ops::log_softmax(s.row(i));
        let col = ops::log_softmax(s.column(i));
        loss -= row[i] + col[i];
        for j in 0..b {
            ds[[i, j]] += row[j].exp();
            ds[[j, i]] += col[j].exp();
        }
        ds[[i, i]] -= 2.0;
    }
    let scale = 1.0 / (2.0 * b as f64);
    (loss * scale, ds * scale)
}

/// Mean squared edge difference of node embeddings and its gradient.
pub(crate) fn laplacian(z: &Array2<f64>, edges: &[(usize, usize)]) -> (f64, Array2<f64>) {
    let mut grad = Array2::zeros(z.raw_dim());
    if edges.is_empty() {
        return (0.0, grad);
    }
    let e = edges.len() as f64;
    let mut total = 0.0;
    for &(u, v) in edges {
        let diff = &z.row(u) - &z.row(v);
        total += diff.dot(&diff);
        let d = diff * (2.0 / e);
        grad.row_mut(u).scaled_add(1.0, &d);
        grad.row_mut(v).scaled_add(-1.0, &d);
    }
    (total / e, grad)
}

pub(crate) struct BatchOutput {
    pub components: LossComponents,
    /// Active/inactive state of every ReLU in the forward pass.
    pub relu_pattern: Vec<bool>,
    pub grads: Option<FusionGrads>,
    pub cache: SageCache,
}

/// Forward pass over a batch, plus the full gradient when `with_grads`.
/// `seeds[i]` drives the neighbour sampling of sample `i`.
pub(crate) fn batch_forward_backward(
    model: &FusionModel,
    batch: &[&PreparedSample],
    cfg: &TrainConfig,
    mode: Mode,
    seeds: &[Option<u64>],
    with_grads: bool,
) -> Result<BatchOutput, FusionError> {
    if batch.is_empty() {
        return Err(FusionError::EmptyBatch);
    }
    let bsz = batch.len();
    let b = bsz as f64;
    let graphs: Vec<&CodeGraph> = batch.iter().map(|s| &s.graph).collect();
    let cache = encoder::forward_batch(&graphs, &model.sage, &model.sage.prepare(), mode, seeds);
    let fw: Vec<SampleForward> = batch
        .iter()
        .enumerate()
        .map(|(i, s)| sample_forward(s, cache.graph_embeddings.row(i).to_owned(), model))
        .collect();

    let ce = fw
        .iter()
        .zip(batch)
        .map(|(f, s)| -f.log_probs[usize::from(s.label == 1)])
        .sum::<f64>()
        / b;

    let dim = model.proj.b_g.len();
    let g_n = stack(fw.iter().map(|f| l2_normalize(&f.g)), dim);
    let l_n = stack(fw.iter().map(|f| l2_normalize(&f.l)), dim);
    let (nce, ds) = info_nce(&g_n, &l_n, cfg.tau);

    let mut lap = 0.0;
    let mut lap_grads = Vec::with_capacity(bsz);
    for (i, s) in batch.iter().enumerate() {
        let (v, g) = laplacian(&cache.graph_nodes(i).to_owned(), &s.graph.edges);
        lap += v;
        lap_grads.push(g);
    }
    lap /= b;

    let components = LossComponents {
        total: ce + cfg.lambda_nce * nce + cfg.lambda_lap * lap,
        ce,
        nce,
        lap,
    };
    let relu_pattern = cache
        .relu_pattern()
        .chain(
            fw.iter()
                .flat_map(|f| f.z_g.iter().chain(f.z_l.iter()).map(|&z| z > 0.0)),
        )
        .collect();
    if !with_grads {
        return Ok(BatchOutput {
            components,
            relu_pattern,
            grads: None,
            cache,
        });
    }

    let mut grads = FusionGrads::zeros(model.proj.w_l.ncols());
    let mut buffers = SageGradBuffers::new();
    let mut d_nodes = Array2::zeros(cache.node_embeddings().raw_dim());
    let d_gn = ds.dot(&l_n) * (cfg.lambda_nce / cfg.tau);
    let d_ln = ds.t().dot(&g_n) * (cfg.lambda_nce / cfg.tau);

    for (i, (f, s)) in fw.iter().zip(batch).enumerate() {
        let y = usize::from(s.label == 1);
        let mut dlogits = Array1::from(vec![f.probs[0], f.probs[1]]);
        dlogits[y] -= 1.0;
        dlogits /= b;
        grads.clf.w += &outer(&dlogits, &f.fused);
        grads.clf.b += &dlogits;
        let dfused = model.clf.w.t().dot(&dlogits);

        let da_g = dfused.dot(&f.g);
        let da_l = dfused.dot(&f.l);
        let mix = f.alpha_g * da_g + f.alpha_l * da_l;
        let ds_g = f.alpha_g * (da_g - mix);
        let ds_l = f.alpha_l * (da_l - mix);
        grads.gate.score_g.w.scaled_add(ds_g, &f.g);
        grads.gate.score_g.b += ds_g;
        grads.gate.score_l.w.scaled_add(ds_l, &f.l);
        grads.gate.score_l.b += ds_l;

        let mut dg = &dfused * f.alpha_g + &model.gate.score_g.w * ds_g;
        let mut dl = &dfused * f.alpha_l + &model.gate.score_l.w * ds_l;
        dg += &ops::l2_normalize_backward(&f.g, &g_n.row(i).to_owned(), &d_gn.row(i).to_owned());
        dl += &ops::l2_normalize_backward(&f.l, &l_n.row(i).to_owned(), &d_ln.row(i).to_owned());

        // graph side of the projection
        let (dr_g, dgam, dbet) = ops::layer_norm_backward(&dg, &f.ln_g, &model.proj.ln_g.gamma);
        grads.proj.ln_g.gamma += &dgam;
        grads.proj.ln_g.beta += &dbet;
        let dz_g = relu_mask(&dr_g, &f.z_g);
        grads.proj.w_g += &outer(&dz_g, &f.h_g_n);
        grads.proj.b_g += &dz_g;
        let dh_g_n = model.proj.w_g.t().dot(&dz_g);
        let dh_g = ops::l2_normalize_backward(&f.h_g, &f.h_g_n, &dh_g_n);

        // semantic side
        let (dr_l, dgam, dbet) = ops::layer_norm_backward(&dl, &f.ln_l, &model.proj.ln_l.gamma);
        grads.proj.ln_l.gamma += &dgam;
        grads.proj.ln_l.beta += &dbet;
        let dz_l = relu_mask(&dr_l, &f.z_l);
        grads.proj.w_l += &outer(&dz_l, &s.h_l);
        grads.proj.b_l += &dz_l;

        // mean pooling and the Laplacian term meet at the node embeddings
        let n = s.graph.num_nodes as f64;
        let mut rows = d_nodes.slice_mut(s![cache.segments[i].clone(), ..]);
        rows.scaled_add(cfg.lambda_lap / b, &lap_grads[i]);
        rows += &(dh_g / n).insert_axis(Axis(0));
    }
    encoder::backward(&model.sage, &cache, &d_nodes, &mut grads.sage, &mut buffers);
    buffers.flush(&mut grads.sage);
    Ok(BatchOutput {
        components,
        relu_pattern,
        grads: Some(grads),
        cache,
    })
}

fn relu_mask(d: &Array1<f64>, z: &Array1<f64>) -> Array1<f64> {
    ndarray::Zip::from(d)
        .and(z)
        .map_collect(|&d, &z| if z > 0.0 { d } else { 0.0 })
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let a2 = a.view().insert_axis(Axis(1));
    let b2 = b.view().insert_axis(Axis(0));
    a2.dot(&b2)
}

/// Loss of a batch without gradients. Eval mode uses the running batch-norm
/// statistics and deterministic neighbour truncation.
pub fn composite_loss(
    batch: &[PreparedSample],
    model: &FusionModel,
    cfg: &TrainConfig,
    mode: Mode,
) -> Result<LossComponents, FusionError> {
    let refs: Vec<&PreparedSample> = batch.iter().collect();
    let seeds = vec![None; batch.len()];
    Ok(batch_forward_backward(model, &refs, cfg, mode, &seeds, false)?.components)
}
