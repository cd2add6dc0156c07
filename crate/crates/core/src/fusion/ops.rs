use ndarray::{Array1, ArrayView1};

pub const LN_EPS: f64 = 1e-5;

/// `v / ‖v‖₂`; the zero vector maps to itself.
pub fn l2_normalize(v: &Array1<f64>) -> Array1<f64> {
    let norm = v.dot(v).sqrt();
    if norm == 0.0 {
        v.clone()
    } else {
        v / norm
    }
}

/// Gradient through `l2_normalize` at `x` given the output `y`.
pub(crate) fn l2_normalize_backward(
    x: &Array1<f64>,
    y: &Array1<f64>,
    dy: &Array1<f64>,
) -> Array1<f64> {
    let norm = x.dot(x).sqrt();
    if norm == 0.0 {
        return Array1::zeros(x.len());
    }
    (dy - &(y * y.dot(dy))) / norm
}

pub(crate) struct LayerNormCache {
    pub xhat: Array1<f64>,
    pub inv_std: f64,
}

pub(crate) fn layer_norm(
    x: &Array1<f64>,
    gamma: &Array1<f64>,
    beta: &Array1<f64>,
) -> (Array1<f64>, LayerNormCache) {
    let d = x.len() as f64;
    let mean = x.sum() / d;
    let centered = x - mean;
    let var = centered.dot(&centered) / d;
    let inv_std = 1.0 / (var + LN_EPS).sqrt();
    let xhat = centered * inv_std;
    let y = &xhat * gamma + beta;
    (y, LayerNormCache { xhat, inv_std })
}

/// Returns (dx, dgamma, dbeta).
pub(crate) fn layer_norm_backward(
    dy: &Array1<f64>,
    cache: &LayerNormCache,
    gamma: &Array1<f64>,
) -> (Array1<f64>, Array1<f64>, Array1<f64>) {
    let d = dy.len() as f64;
    let dgamma = dy * &cache.xhat;
    let dxhat = dy * gamma;
    let sum = dxhat.sum();
    let sum_x = dxhat.dot(&cache.xhat);
    let dx = (dxhat * d - sum - &cache.xhat * sum_x) * (cache.inv_std / d);
    (dx, dgamma, dy.clone())
}

pub(crate) fn relu(x: &Array1<f64>) -> Array1<f64> {
    x.mapv(|v| v.max(0.0))
}

/// Numerically stable softmax of a pair.
pub fn softmax2(a: f64, b: f64) -> (f64, f64) {
    let m = a.max(b);
    let ea = (a - m).exp();
    let eb = (b - m).exp();
    let s = ea + eb;
    (ea / s, eb / s)
}

pub(crate) fn log_softmax(row: ArrayView1<f64>) -> Array1<f64> {
    let (arg, m) =
        row.iter().enumerate().fold(
            (0, f64::NEG_INFINITY),
            |(ai, a), (i, &b)| if b > a { (i, b) } else { (ai, a) },
        );
    // the max term contributes exactly 1, so ln_1p keeps small tails precise
    let rest: f64 = row
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != arg)
        .map(|(_, &v)| (v - m).exp())
        .sum();
    let lse = rest.ln_1p();
    row.mapv(|v| (v - m) - lse)
}
