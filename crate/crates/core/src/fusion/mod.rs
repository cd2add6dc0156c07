//! Gated fusion of the structural and semantic embeddings, the binary
//! classifier on top, and everything needed to train it.

mod gradcheck;
mod loss;
mod ops;
mod optim;
mod train;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{self, build_graph, CodeGraph, EncoderError, Mode, SageParams, EMBED_DIM};
use crate::semantic::{embed_source, EmbedError, EmbedderConfig, SEMANTIC_DIM};
use crate::uast::{parse_to_uast, Language, UastDocument, UastError};

pub use gradcheck::{grad_check, grad_check_with, GradCheckOptions, GradCheckReport};
pub use loss::{composite_loss, LossComponents, PreparedSample};
pub use ops::{l2_normalize, softmax2, LN_EPS};
pub use optim::{adamw_step, AdamState, ParamSlice};
pub use train::{
    load_checkpoint, prepare_samples, save_checkpoint, train, train_prepared, Dataset,
    EarlyStopping, EpochRecord, LabeledSample, TrainConfig, TrainHistory, CHECKPOINT_VERSION,
};

pub(crate) use loss::FusionGrads;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error(transparent)]
    Uast(#[from] UastError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("degenerate dataset: {0}")]
    DegenerateDataset(String),
    #[error("length mismatch: {predictions} predictions for {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNormParams {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

impl LayerNormParams {
    pub fn identity(dim: usize) -> Self {
        Self {
            gamma: Array1::ones(dim),
            beta: Array1::zeros(dim),
        }
    }
}

/// Per-modality `LayerNorm(ReLU(W·h + b))` maps into the shared latent space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionParams {
    pub w_g: Array2<f64>,
    pub b_g: Array1<f64>,
    pub w_l: Array2<f64>,
    pub b_l: Array1<f64>,
    pub ln_g: LayerNormParams,
    pub ln_l: LayerNormParams,
}

/// Affine scoring map of one modality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreParams {
    pub w: Array1<f64>,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateParams {
    pub score_g: ScoreParams,
    pub score_l: ScoreParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierParams {
    /// Row 1 scores the vulnerable class.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionModel {
    pub sage: SageParams,
    pub proj: ProjectionParams,
    pub gate: GateParams,
    pub clf: ClassifierParams,
    pub embedder_cfg: EmbedderConfig,
}

impl ProjectionParams {
    pub fn zeros() -> Self {
        Self {
            w_g: Array2::zeros((EMBED_DIM, EMBED_DIM)),
            b_g: Array1::zeros(EMBED_DIM),
            w_l: Array2::zeros((EMBED_DIM, SEMANTIC_DIM)),
            b_l: Array1::zeros(EMBED_DIM),
            ln_g: LayerNormParams::identity(EMBED_DIM),
            ln_l: LayerNormParams::identity(EMBED_DIM),
        }
    }
}

impl GateParams {
    pub fn zeros() -> Self {
        let score = ScoreParams {
            w: Array1::zeros(EMBED_DIM),
            b: 0.0,
        };
        Self {
            score_g: score.clone(),
            score_l: score,
        }
    }
}

impl ClassifierParams {
    pub fn zeros() -> Self {
        Self {
            w: Array2::zeros((2, EMBED_DIM)),
            b: Array1::zeros(2),
        }
    }
}

impl FusionModel {
    /// Xavier-uniform weights everywhere, zero biases, identity norms.
    pub fn init(seed: u64, embedder_cfg: EmbedderConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sage = encoder::sage_init_with(&mut rng);
        let mut proj = ProjectionParams::zeros();
        proj.w_g = encoder::xavier(&mut rng, EMBED_DIM, EMBED_DIM);
        proj.w_l = encoder::xavier(&mut rng, EMBED_DIM, SEMANTIC_DIM);
        let mut gate = GateParams::zeros();
        gate.score_g.w = encoder::xavier(&mut rng, 1, EMBED_DIM).row(0).to_owned();
        gate.score_l.w = encoder::xavier(&mut rng, 1, EMBED_DIM).row(0).to_owned();
        let mut clf = ClassifierParams::zeros();
        clf.w = encoder::xavier(&mut rng, 2, EMBED_DIM);
        Self {
            sage,
            proj,
            gate,
            clf,
            embedder_cfg,
        }
    }

    pub fn zeros(embedder_cfg: EmbedderConfig) -> Self {
        Self {
            sage: SageParams::zeros(),
            proj: ProjectionParams::zeros(),
            gate: GateParams::zeros(),
            clf: ClassifierParams::zeros(),
            embedder_cfg,
        }
    }

    pub fn check_shapes(&self) -> Result<(), FusionError> {
        self.sage.check_shapes()?;
        let p = &self.proj;
        let ok = p.w_g.dim() == (EMBED_DIM, EMBED_DIM)
            && p.b_g.len() == EMBED_DIM
            && p.w_l.dim() == (EMBED_DIM, self.embedder_cfg.dim)
            && p.b_l.len() == EMBED_DIM
            && [&p.ln_g, &p.ln_l]
                .iter()
                .all(|ln| ln.gamma.len() == EMBED_DIM && ln.beta.len() == EMBED_DIM)
            && self.gate.score_g.w.len() == EMBED_DIM
            && self.gate.score_l.w.len() == EMBED_DIM
            && self.clf.w.dim() == (2, EMBED_DIM)
            && self.clf.b.len() == 2;
        if ok {
            Ok(())
        } else {
            Err(FusionError::ShapeMismatch("fusion parameters".into()))
        }
    }

    pub fn all_finite(&self) -> bool {
        let mut copy = self.clone();
        let mut finite = true;
        optim::visit_model(&mut copy, |s| {
            finite &= s.data.iter().all(|x| x.is_finite())
        });
        finite
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub flag: u8,
    pub prob_vulnerable: f64,
    pub alpha_g: f64,
    pub alpha_l: f64,
    pub fused: Array1<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dominant {
    Structural,
    Semantic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationRecord {
    pub alpha_g: f64,
    pub alpha_l: f64,
    pub dominant: Dominant,
    pub flag: u8,
    pub prob: f64,
}

/// Maps both modalities into the shared space. Inputs are expected to be
/// L2-normalised already.
pub fn project(
    h_g: &Array1<f64>,
    h_l: &Array1<f64>,
    proj: &ProjectionParams,
) -> Result<(Array1<f64>, Array1<f64>), FusionError> {
    if h_g.len() != proj.w_g.ncols() || h_l.len() != proj.w_l.ncols() {
        return Err(FusionError::ShapeMismatch(format!(
            "inputs of {} and {} for projections of {} and {}",
            h_g.len(),
            h_l.len(),
            proj.w_g.ncols(),
            proj.w_l.ncols()
        )));
    }
    Ok((project_g(h_g, proj), project_l(h_l, proj)))
}

pub(crate) fn project_g(h_g: &Array1<f64>, proj: &ProjectionParams) -> Array1<f64> {
    let r = ops::relu(&(proj.w_g.dot(h_g) + &proj.b_g));
    ops::layer_norm(&r, &proj.ln_g.gamma, &proj.ln_g.beta).0
}

pub(crate) fn project_l(h_l: &Array1<f64>, proj: &ProjectionParams) -> Array1<f64> {
    let r = ops::relu(&(proj.w_l.dot(h_l) + &proj.b_l));
    ops::layer_norm(&r, &proj.ln_l.gamma, &proj.ln_l.beta).0
}

pub fn gate_scores(g_hat: &Array1<f64>, l_hat: &Array1<f64>, gate: &GateParams) -> (f64, f64) {
    (
        gate.score_g.w.dot(g_hat) + gate.score_g.b,
        gate.score_l.w.dot(l_hat) + gate.score_l.b,
    )
}

/// Convex mix with fixed weights.
pub fn fuse_with(g_hat: &Array1<f64>, l_hat: &Array1<f64>, alpha_g: f64) -> Array1<f64> {
    g_hat * alpha_g + l_hat * (1.0 - alpha_g)
}

pub fn gate_and_fuse(
    g_hat: &Array1<f64>,
    l_hat: &Array1<f64>,
    gate: &GateParams,
) -> (f64, f64, Array1<f64>) {
    let (s_g, s_l) = gate_scores(g_hat, l_hat, gate);
    let (alpha_g, alpha_l) = softmax2(s_g, s_l);
    let fused = g_hat * alpha_g + l_hat * alpha_l;
    (alpha_g, alpha_l, fused)
}

/// Probability of the vulnerable class and the inclusive 0.5 flag.
pub fn classify(fused: &Array1<f64>, clf: &ClassifierParams) -> (f64, u8) {
    let logits = clf.w.dot(fused) + &clf.b;
    let (_, p) = softmax2(logits[0], logits[1]);
    (p, u8::from(p >= 0.5))
}

/// Classifier output of the graph branch alone, as if α_g were pinned to 1.
pub fn structural_only(h_g: &Array1<f64>, model: &FusionModel) -> (f64, u8) {
    classify(&project_g(&l2_normalize(h_g), &model.proj), &model.clf)
}

/// Detection from an already parsed document and its source text.
pub fn detect_document(
    doc: &UastDocument,
    source: &str,
    model: &FusionModel,
) -> Result<DetectionResult, FusionError> {
    let graph = build_graph(doc);
    let semantic = embed_source(source, &model.embedder_cfg)?;
    detect_graph(&graph, &semantic.vector, model)
}

pub fn detect_graph(
    graph: &CodeGraph,
    h_l: &Array1<f64>,
    model: &FusionModel,
) -> Result<DetectionResult, FusionError> {
    let (emb, _) = encoder::encode_graph(graph, &model.sage, Mode::Eval, None)?;
    let (g_hat, l_hat) = project(&l2_normalize(&emb.vector), &l2_normalize(h_l), &model.proj)?;
    let (alpha_g, alpha_l, fused) = gate_and_fuse(&g_hat, &l_hat, &model.gate);
    let (prob_vulnerable, flag) = classify(&fused, &model.clf);
    Ok(DetectionResult {
        flag,
        prob_vulnerable,
        alpha_g,
        alpha_l,
        fused,
    })
}

pub fn detect(
    source: &[u8],
    language: Language,
    model: &FusionModel,
) -> Result<DetectionResult, FusionError> {
    let doc = parse_to_uast(source, language)?;
    let text = std::str::from_utf8(source).map_err(UastError::from)?;
    detect_document(&doc, text, model)
}

/// Ties go to the structural branch.
pub fn explain(result: &DetectionResult) -> ExplanationRecord {
    ExplanationRecord {
        alpha_g: result.alpha_g,
        alpha_l: result.alpha_l,
        dominant: if result.alpha_g >= result.alpha_l {
            Dominant::Structural
        } else {
            Dominant::Semantic
        },
        flag: result.flag,
        prob: result.prob_vulnerable,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Binary metrics with the vulnerable class (1) as positive.
pub fn evaluate_metrics(predictions: &[u8], labels: &[u8]) -> Result<Metrics, FusionError> {
    if predictions.len() != labels.len() {
        return Err(FusionError::LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    let (mut tp, mut fp, mut fn_, mut correct) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &y) in predictions.iter().zip(labels) {
        match (p == 1, y == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
        correct += usize::from((p == 1) == (y == 1));
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(Metrics {
        accuracy: ratio(correct, labels.len()),
        precision,
        recall,
        f1,
    })
}
