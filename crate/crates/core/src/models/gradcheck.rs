use rand::Rng;

use super::Model;
use crate::error::{Error, Result};
use crate::nn::{cross_entropy, Module, Tensor};
use crate::seed::labeled_rng;

#[derive(Debug, Clone, PartialEq)]
pub struct GradSample {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub samples: Vec<GradSample>,
    pub max_rel_err: f64,
}

/// `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Compare backprop gradients of the cross-entropy loss against central
/// differences on `samples` randomly drawn trainable scalars.
///
/// Both passes run in training mode so batch statistics are part of the
/// differentiated function.
pub fn gradient_check(
    model: &mut Model,
    x: &Tensor,
    labels: &[usize],
    samples: usize,
    eps: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    if !model.spec().kind.is_classifier() {
        return Err(Error::InvalidArgument("gradient check needs a classifier".into()));
    }
    model.zero_grad();
    let logits = model.forward(x, true)?;
    let (_, g) = cross_entropy(&logits, labels);
    model.backward(&g);

    // Pick a trainable tensor uniformly, then an element of it, so small
    // layers are covered as often as large ones.
    let tensors: Vec<(usize, usize)> = model
        .params()
        .iter()
        .enumerate()
        .filter(|(_, p)| p.trainable())
        .map(|(i, p)| (i, p.len()))
        .collect();
    let mut r = labeled_rng(seed, "gradcheck");
    let picks: Vec<(usize, usize)> = (0..samples)
        .map(|_| {
            let (pi, n) = tensors[r.random_range(0..tensors.len())];
            (pi, r.random_range(0..n))
        })
        .collect();

    let mut out = Vec::with_capacity(picks.len());
    for (pi, ei) in picks {
        let (name, v0, analytic) = {
            let ps = model.params();
            (ps[pi].name.clone(), ps[pi].value[ei], ps[pi].grad[ei])
        };
        let numeric = (loss_at(model, x, labels, pi, ei, v0 + eps)? - loss_at(model, x, labels, pi, ei, v0 - eps)?) / (2.0 * eps);
        out.push(GradSample { param: name, index: ei, analytic, numeric, rel_err: relative_error(analytic, numeric) });
    }
    let max_rel_err = out.iter().map(|s| s.rel_err).fold(0.0, f64::max);
    Ok(GradCheckReport { samples: out, max_rel_err })
}

/// Training-mode loss with one scalar temporarily replaced.
fn loss_at(model: &mut Model, x: &Tensor, labels: &[usize], pi: usize, ei: usize, v: f64) -> Result<f64> {
    let old = std::mem::replace(&mut model.params_mut()[pi].value[ei], v);
    let out = model.forward(x, true);
    model.params_mut()[pi].value[ei] = old;
    Ok(cross_entropy(&out?, labels).0)
}
