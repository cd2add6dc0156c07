use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::Mode;

use super::loss::{batch_forward_backward, PreparedSample};
use super::optim::{grad_slices, model_slices};
use super::{FusionError, FusionModel, TrainConfig};

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub h: f64,
    /// Largest-|gradient| coordinates checked per parameter array.
    pub top_per_group: usize,
    /// Uniformly drawn coordinates checked per parameter array.
    pub random_per_group: usize,
    pub seed: u64,
    /// Adds the offset to every analytic gradient entry of the named array.
    pub corrupt: Option<(String, f64)>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-5,
            top_per_group: 4,
            random_per_group: 4,
            seed: 0,
            corrupt: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: String,
    pub per_group: Vec<(String, f64)>,
    pub coordinates_checked: usize,
    /// Coordinates left out because a ReLU switched between `x-h` and `x+h`,
    /// where central differences do not estimate the derivative.
    pub kinks_skipped: usize,
}

fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / 1f64.max(a.abs()).max(n.abs())
}

fn eval_loss(
    model: &FusionModel,
    batch: &[&PreparedSample],
    cfg: &TrainConfig,
) -> Result<(f64, Vec<bool>), FusionError> {
    let seeds = vec![None; batch.len()];
    let out = batch_forward_backward(model, batch, cfg, Mode::Eval, &seeds, false)?;
    Ok((out.components.total, out.relu_pattern))
}

/// Analytic gradient of the full composite loss against central differences,
/// with batch norm on its running statistics.
pub fn grad_check_with(
    model: &FusionModel,
    samples: &[PreparedSample],
    cfg: &TrainConfig,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport, FusionError> {
    let batch: Vec<&PreparedSample> = samples.iter().collect();
    let seeds = vec![None; batch.len()];
    let mut grads = batch_forward_backward(model, &batch, cfg, Mode::Eval, &seeds, true)?
        .grads
        .expect("gradients requested");
    let analytic: Vec<(&'static str, Vec<f64>)> = grad_slices(&mut grads)
        .into_iter()
        .map(|s| {
            let mut v = s.data.to_vec();
            if let Some((name, offset)) = &opts.corrupt {
                if name == s.name {
                    v.iter_mut().for_each(|x| *x += offset);
                }
            }
            (s.name, v)
        })
        .collect();

    let mut probe = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: String::new(),
        per_group: Vec::new(),
        coordinates_checked: 0,
        kinks_skipped: 0,
    };
    for (k, (name, grad)) in analytic.iter().enumerate() {
        let mut order: Vec<usize> = (0..grad.len()).collect();
        order.sort_by(|&a, &b| grad[b].abs().total_cmp(&grad[a].abs()));
        let mut coords: Vec<usize> = order.into_iter().take(opts.top_per_group).collect();
        for _ in 0..opts.random_per_group {
            coords.push(rng.random_range(0..grad.len()));
        }
        coords.sort_unstable();
        coords.dedup();
        let mut worst = 0.0f64;
        for &i in &coords {
            let orig = model_slices(&mut probe)[k].data[i];
            model_slices(&mut probe)[k].data[i] = orig + opts.h;
            let (plus, above) = eval_loss(&probe, &batch, cfg)?;
            model_slices(&mut probe)[k].data[i] = orig - opts.h;
            let (minus, below) = eval_loss(&probe, &batch, cfg)?;
            model_slices(&mut probe)[k].data[i] = orig;
            if above != below {
                report.kinks_skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * opts.h);
            worst = worst.max(rel_error(grad[i], numeric));
            report.coordinates_checked += 1;
        }
        if worst > report.max_rel_error || report.worst.is_empty() {
            report.max_rel_error = worst;
            report.worst = name.to_string();
        }
        report.per_group.push((name.to_string(), worst));
    }
    Ok(report)
}

pub fn grad_check(
    model: &FusionModel,
    samples: &[PreparedSample],
    cfg: &TrainConfig,
) -> Result<f64, FusionError> {
    Ok(grad_check_with(model, samples, cfg, &GradCheckOptions::default())?.max_rel_error)
}
