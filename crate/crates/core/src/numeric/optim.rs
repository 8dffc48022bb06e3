use super::tensor::ParamSet;
use crate::error::{Error, Result};

/// Outcome of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    /// Global L2 norm of the gradients before clipping.
    pub grad_norm: f64,
    pub clipped: bool,
}

/// Global L2 norm over every populated gradient buffer.
pub fn global_grad_norm(params: &ParamSet) -> f64 {
    params
        .iter()
        .filter_map(|(_, _, t)| t.grad())
        .flat_map(|g| g.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt()
}

/// Plain SGD with global-norm clipping. Gradients are cleared afterwards.
///
/// Frozen rows keep their values regardless of the gradient they received.
pub fn sgd_step(params: &mut ParamSet, lr: f64, clip_norm: f64) -> Result<StepReport> {
    if !params.iter().any(|(_, _, t)| t.grad().is_some()) {
        return Err(Error::State("sgd step without any gradients".into()));
    }
    let norm = global_grad_norm(params);
    if !norm.is_finite() {
        return Err(Error::Domain(format!("non-finite gradient norm {norm}")));
    }
    let clipped = clip_norm > 0.0 && norm > clip_norm;
    let factor = if clipped { clip_norm / norm } else { 1.0 };
    for t in params.tensors_mut() {
        let frozen = t.frozen_row();
        let cols = t.cols();
        let Some(grad) = t.grad_mut().map(std::mem::take) else {
            continue;
        };
        if t.requires_grad {
            for (i, (v, g)) in t.values_mut().iter_mut().zip(&grad).enumerate() {
                if frozen.is_some_and(|r| i / cols == r) {
                    continue;
                }
                *v -= lr * factor * g;
            }
        }
        t.clear_grad();
    }
    Ok(StepReport {
        grad_norm: norm,
        clipped,
    })
}
