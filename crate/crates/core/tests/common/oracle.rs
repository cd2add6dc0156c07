use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use vlf_core::encoder::{init_params, LayerParams, Mode, SageParams, INPUT_DIM};

pub type Mat = Vec<Vec<f64>>;

pub fn to_rows(a: &Array2<f64>) -> Mat {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Plain-loop forward pass over full in-neighbourhoods.
pub fn dense_layer(h: &Mat, adj: &[Vec<usize>], p: &LayerParams, mode: Mode) -> Mat {
    let n = h.len();
    let out = p.bias.len();
    let w_self = to_rows(&p.w_self);
    let w_neigh = to_rows(&p.w_neigh);
    let mut z = vec![vec![0.0; out]; n];
    for v in 0..n {
        let width = h[v].len();
        let mut agg = vec![0.0; width];
        for &u in &adj[v] {
            for k in 0..width {
                agg[k] += h[u][k];
            }
        }
        if !adj[v].is_empty() {
            for a in &mut agg {
                *a /= adj[v].len() as f64;
            }
        }
        for o in 0..out {
            let mut s = p.bias[o];
            for k in 0..width {
                s += w_self[o][k] * h[v][k] + w_neigh[o][k] * agg[k];
            }
            z[v][o] = s;
        }
    }
    let (mean, var): (Vec<f64>, Vec<f64>) = match mode {
        Mode::Eval => (p.bn.running_mean.to_vec(), p.bn.running_var.to_vec()),
        Mode::Train => (0..out)
            .map(|o| {
                let m = z.iter().map(|r| r[o]).sum::<f64>() / n as f64;
                let v = z.iter().map(|r| (r[o] - m).powi(2)).sum::<f64>() / n as f64;
                (m, v)
            })
            .unzip(),
    };
    z.iter()
        .map(|row| {
            (0..out)
                .map(|o| {
                    let y = (row[o] - mean[o]) / (var[o] + p.bn.eps).sqrt() * p.bn.gamma[o]
                        + p.bn.beta[o];
                    y.max(0.0)
                })
                .collect()
        })
        .collect()
}

pub fn dense_encode(
    features: &Mat,
    edges: &[(usize, usize)],
    params: &SageParams,
    mode: Mode,
) -> Vec<f64> {
    let n = features.len();
    let mut adj = vec![Vec::new(); n];
    for &(s, d) in edges {
        adj[d].push(s);
    }
    let h1 = dense_layer(features, &adj, &params.layer1, mode);
    let h2 = dense_layer(&h1, &adj, &params.layer2, mode);
    let width = h2[0].len();
    (0..width)
        .map(|k| h2.iter().map(|r| r[k]).sum::<f64>() / n as f64)
        .collect()
}

pub fn perturbed_params(rng: &mut ChaCha8Rng) -> SageParams {
    let mut p = init_params(rng.random());
    for layer in [&mut p.layer1, &mut p.layer2] {
        layer.bias.mapv_inplace(|_| rng.random_range(-0.2..0.2));
        layer.bn.gamma.mapv_inplace(|_| rng.random_range(0.5..1.5));
        layer.bn.beta.mapv_inplace(|_| rng.random_range(-0.3..0.3));
        layer
            .bn
            .running_mean
            .mapv_inplace(|_| rng.random_range(-0.1..0.1));
        layer
            .bn
            .running_var
            .mapv_inplace(|_| rng.random_range(0.5..2.0));
    }
    p
}

pub fn random_graph(
    rng: &mut ChaCha8Rng,
    n: usize,
    max_in: usize,
) -> (Array2<f64>, Vec<(usize, usize)>) {
    let mut f = Array2::zeros((n, INPUT_DIM));
    for v in 0..n {
        for _ in 0..24 {
            f[[v, rng.random_range(0..INPUT_DIM)]] = rng.random_range(-1.0..1.0);
        }
    }
    let mut edges = Vec::new();
    for d in 0..n {
        let mut sources: Vec<usize> = (0..n).filter(|&s| s != d && rng.random_bool(0.4)).collect();
        sources.truncate(max_in);
        edges.extend(sources.into_iter().map(|s| (s, d)));
    }
    (f, edges)
}
