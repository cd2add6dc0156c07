use crate::encoder::{LayerParams, SageParams};

use super::{
    ClassifierParams, FusionGrads, FusionModel, GateParams, ProjectionParams, TrainConfig,
};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// A named, contiguous view of one parameter array. `decay` marks weight
/// matrices (and the gate scoring weights), which receive weight decay.
pub struct ParamSlice<'a> {
    pub name: &'static str,
    pub decay: bool,
    pub data: &'a mut [f64],
}

fn slice<'a, D: ndarray::Dimension>(
    name: &'static str,
    decay: bool,
    a: &'a mut ndarray::Array<f64, D>,
) -> ParamSlice<'a> {
    ParamSlice {
        name,
        decay,
        data: a.as_slice_mut().expect("parameters are contiguous"),
    }
}

fn layer<'a>(out: &mut Vec<ParamSlice<'a>>, l: &'a mut LayerParams, names: [&'static str; 5]) {
    out.push(slice(names[0], true, &mut l.w_self));
    out.push(slice(names[1], true, &mut l.w_neigh));
    out.push(slice(names[2], false, &mut l.bias));
    out.push(slice(names[3], false, &mut l.bn.gamma));
    out.push(slice(names[4], false, &mut l.bn.beta));
}

/// Every trainable array in a fixed order. Batch-norm running statistics are
/// not parameters and are left out.
pub(crate) fn slices<'a>(
    sage: &'a mut SageParams,
    proj: &'a mut ProjectionParams,
    gate: &'a mut GateParams,
    clf: &'a mut ClassifierParams,
) -> Vec<ParamSlice<'a>> {
    let mut out = Vec::with_capacity(24);
    layer(
        &mut out,
        &mut sage.layer1,
        [
            "sage.l1.w_self",
            "sage.l1.w_neigh",
            "sage.l1.bias",
            "sage.l1.bn.gamma",
            "sage.l1.bn.beta",
        ],
    );
    layer(
        &mut out,
        &mut sage.layer2,
        [
            "sage.l2.w_self",
            "sage.l2.w_neigh",
            "sage.l2.bias",
            "sage.l2.bn.gamma",
            "sage.l2.bn.beta",
        ],
    );
    out.push(slice("proj.w_g", true, &mut proj.w_g));
    out.push(slice("proj.b_g", false, &mut proj.b_g));
    out.push(slice("proj.w_l", true, &mut proj.w_l));
    out.push(slice("proj.b_l", false, &mut proj.b_l));
    out.push(slice("proj.ln_g.gamma", false, &mut proj.ln_g.gamma));
    out.push(slice("proj.ln_g.beta", false, &mut proj.ln_g.beta));
    out.push(slice("proj.ln_l.gamma", false, &mut proj.ln_l.gamma));
    out.push(slice("proj.ln_l.beta", false, &mut proj.ln_l.beta));
    out.push(slice("gate.score_g.w", true, &mut gate.score_g.w));
    out.push(ParamSlice {
        name: "gate.score_g.b",
        decay: false,
        data: std::slice::from_mut(&mut gate.score_g.b),
    });
    out.push(slice("gate.score_l.w", true, &mut gate.score_l.w));
    out.push(ParamSlice {
        name: "gate.score_l.b",
        decay: false,
        data: std::slice::from_mut(&mut gate.score_l.b),
    });
    out.push(slice("clf.w", true, &mut clf.w));
    out.push(slice("clf.b", false, &mut clf.b));
    out
}

pub(crate) fn model_slices(m: &mut FusionModel) -> Vec<ParamSlice<'_>> {
    slices(&mut m.sage, &mut m.proj, &mut m.gate, &mut m.clf)
}

pub(crate) fn grad_slices(g: &mut FusionGrads) -> Vec<ParamSlice<'_>> {
    slices(&mut g.sage, &mut g.proj, &mut g.gate, &mut g.clf)
}

pub(crate) fn visit_model(m: &mut FusionModel, mut f: impl FnMut(&mut ParamSlice<'_>)) {
    for mut s in model_slices(m) {
        f(&mut s);
    }
}

/// First and second moment estimates, one pair per parameter array.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

/// One AdamW update at step `t` (1-based). Decay is decoupled: weights are
/// shrunk by `lr·weight_decay·w` before the adaptive step.
pub fn adamw_step(
    params: &mut [ParamSlice<'_>],
    grads: &[&[f64]],
    state: &mut AdamState,
    cfg: &TrainConfig,
    t: u64,
) {
    assert!(t >= 1, "AdamW steps are 1-based");
    assert_eq!(params.len(), grads.len());
    if state.m.is_empty() {
        state.m = params.iter().map(|p| vec![0.0; p.data.len()]).collect();
        state.v = state.m.clone();
    }
    let bc1 = 1.0 - BETA1.powi(t as i32);
    let bc2 = 1.0 - BETA2.powi(t as i32);
    for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        for i in 0..p.data.len() {
            let gi = g[i];
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * gi;
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * gi * gi;
            if p.decay {
                p.data[i] -= cfg.lr * cfg.weight_decay * p.data[i];
            }
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p.data[i] -= cfg.lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}

pub(crate) fn model_step(
    model: &mut FusionModel,
    grads: &mut FusionGrads,
    state: &mut AdamState,
    cfg: &TrainConfig,
    t: u64,
) {
    let g = grad_slices(grads);
    let views: Vec<&[f64]> = g.iter().map(|s| &*s.data).collect();
    let mut p = model_slices(model);
    adamw_step(&mut p, &views, state, cfg, t);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semantic::EmbedderConfig;

    fn cfg(wd: f64) -> TrainConfig {
        TrainConfig {
            weight_decay: wd,
            ..TrainConfig::default()
        }
    }

    fn step(w: f64, g: f64, decay: bool, c: &TrainConfig) -> (f64, AdamState) {
        let mut data = [w];
        let mut state = AdamState::default();
        let mut p = [ParamSlice {
            name: "w",
            decay,
            data: &mut data,
        }];
        adamw_step(&mut p, &[&[g]], &mut state, c, 1);
        (data[0], state)
    }

    #[test]
    fn zero_gradient_zero_decay_is_a_no_op() {
        assert_eq!(step(0.7, 0.0, true, &cfg(0.0)).0, 0.7);
    }

    #[test]
    fn first_step_by_hand() {
        let (w, state) = step(1.0, 1.0, true, &cfg(0.0));
        assert!((state.m[0][0] - 0.1).abs() < 1e-15);
        assert!((state.v[0][0] - 0.001).abs() < 1e-15);
        // m̂ = 1, v̂ = 1
        let expected = 1.0 - 1e-3 / (1.0 + 1e-8);
        assert!((w - expected).abs() < 1e-15);
        assert!((w - 0.999).abs() < 1e-9);
    }

    #[test]
    fn decay_adds_decoupled_term() {
        let (plain, _) = step(2.0, 0.5, true, &cfg(0.0));
        let (decayed, _) = step(2.0, 0.5, true, &cfg(1e-4));
        assert!(((plain - decayed) - 1e-3 * 1e-4 * 2.0).abs() < 1e-15);
        let (bias, _) = step(2.0, 0.5, false, &cfg(1e-4));
        assert_eq!(bias, plain);
    }

    #[test]
    fn decay_covers_weights_only() {
        let mut m = FusionModel::zeros(EmbedderConfig::stub(0));
        let names: Vec<_> = model_slices(&mut m)
            .iter()
            .filter(|s| s.decay)
            .map(|s| s.name)
            .collect();
        assert_eq!(
            names,
            [
                "sage.l1.w_self",
                "sage.l1.w_neigh",
                "sage.l2.w_self",
                "sage.l2.w_neigh",
                "proj.w_g",
                "proj.w_l",
                "gate.score_g.w",
                "gate.score_l.w",
                "clf.w"
            ]
        );
        assert_eq!(model_slices(&mut m).len(), 24);
    }
}
