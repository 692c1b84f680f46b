use crate::data::Dataset;
use crate::error::{QeflError, Result};

use super::layer::{
    affine, affine_backward, quantum_layer_backward, quantum_layer_forward_with_pre,
};
use super::params::{Gradients, ParamVector, QennArchitecture};

/// Intermediate values kept from a forward pass for backpropagation.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationCache {
    /// `activations[0]` is the input; `activations[l]` the output of sine layer `l`.
    pub activations: Vec<Vec<f64>>,
    /// Pre-activations `W z + phi` of each sine layer.
    pub pre_activations: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
}

fn check_params(arch: &QennArchitecture, params: &ParamVector) -> Result<()> {
    if params.len() != arch.param_count() {
        return Err(QeflError::ShapeMismatch {
            context: "parameter vector",
            expected: arch.param_count(),
            actual: params.len(),
        });
    }
    Ok(())
}

/// Sine layers in order, then the affine head.
pub fn forward(
    arch: &QennArchitecture,
    params: &ParamVector,
    x: &[f64],
) -> Result<(Vec<f64>, ActivationCache)> {
    check_params(arch, params)?;
    if x.len() != arch.input_dim() {
        return Err(QeflError::ShapeMismatch {
            context: "input features",
            expected: arch.input_dim(),
            actual: x.len(),
        });
    }
    let p = params.as_slice();
    let spans = arch.spans();
    let mut activations = Vec::with_capacity(spans.len());
    let mut pre_activations = Vec::with_capacity(spans.len() - 1);
    activations.push(x.to_vec());
    let mut logits = Vec::new();
    for span in &spans {
        let input = activations.last().expect("input is always present");
        if span.is_head {
            logits = affine(&p[span.weight_range()], &p[span.bias_range()], input)?;
        } else {
            let (pre, out) = quantum_layer_forward_with_pre(
                &p[span.weight_range()],
                &p[span.bias_range()],
                input,
            )?;
            pre_activations.push(pre);
            activations.push(out);
        }
    }
    let cache = ActivationCache {
        activations,
        pre_activations,
        logits: logits.clone(),
    };
    Ok((logits, cache))
}

pub fn logits(arch: &QennArchitecture, params: &ParamVector, x: &[f64]) -> Result<Vec<f64>> {
    forward(arch, params, x).map(|(l, _)| l)
}

/// Accumulate `d loss / d params` into `grads` given `d loss / d logits`.
pub fn backward_into(
    arch: &QennArchitecture,
    params: &ParamVector,
    cache: &ActivationCache,
    dlogits: &[f64],
    grads: &mut Gradients,
) -> Result<()> {
    check_params(arch, params)?;
    if grads.len() != params.len() {
        return Err(QeflError::ShapeMismatch {
            context: "gradient buffer",
            expected: params.len(),
            actual: grads.len(),
        });
    }
    let p = params.as_slice();
    let spans = arch.spans();
    let n_sine = spans.len() - 1;
    if cache.pre_activations.len() != n_sine || cache.activations.len() != n_sine + 1 {
        return Err(QeflError::ShapeMismatch {
            context: "activation cache layers",
            expected: n_sine,
            actual: cache.pre_activations.len(),
        });
    }
    let g = grads.as_mut_slice();

    let head = spans[n_sine];
    let lg = affine_backward(&p[head.weight_range()], &cache.activations[n_sine], dlogits)?;
    accumulate(&mut g[head.weight_range()], &lg.d_weights);
    accumulate(&mut g[head.bias_range()], &lg.d_bias);
    let mut upstream = lg.d_input;

    for l in (0..n_sine).rev() {
        let span = spans[l];
        let lg = quantum_layer_backward(
            &p[span.weight_range()],
            &cache.pre_activations[l],
            &cache.activations[l],
            &upstream,
        )?;
        accumulate(&mut g[span.weight_range()], &lg.d_weights);
        accumulate(&mut g[span.bias_range()], &lg.d_bias);
        upstream = lg.d_input;
    }
    Ok(())
}

fn accumulate(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Cross-entropy of `softmax(logits)` against `label`, and its gradient
/// with respect to the logits.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(QeflError::LabelOutOfRange {
            label,
            classes: logits.len(),
        });
    }
    let top = argmax(logits);
    let max = logits[top];
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    // log-sum-exp = max + ln(1 + Σ_{i != top} e^(l_i - max))
    let rest: f64 = exps
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != top)
        .map(|(_, e)| e)
        .sum();
    let loss = (rest.ln_1p() - (logits[label] - max)).max(0.0);
    let mut grad: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// Loss and parameter gradient for a single example.
pub fn example_loss_and_grad(
    arch: &QennArchitecture,
    params: &ParamVector,
    x: &[f64],
    label: usize,
) -> Result<(f64, Gradients)> {
    let (logits, cache) = forward(arch, params, x)?;
    let (loss, dlogits) = softmax_cross_entropy(&logits, label)?;
    let mut grads = Gradients::zeros(params.len());
    backward_into(arch, params, &cache, &dlogits, &mut grads)?;
    Ok((loss, grads))
}

/// Mean loss and mean gradient over the examples at `indices`.
pub fn batch_loss_and_grad(
    arch: &QennArchitecture,
    params: &ParamVector,
    data: &Dataset,
    indices: &[usize],
) -> Result<(f64, Gradients)> {
    if indices.is_empty() {
        return Err(QeflError::EmptyDataset);
    }
    let mut grads = Gradients::zeros(params.len());
    let mut total = 0.0;
    for &i in indices {
        let ex = &data.examples()[i];
        let (logits, cache) = forward(arch, params, &ex.features)?;
        let (loss, dlogits) = softmax_cross_entropy(&logits, ex.label)?;
        backward_into(arch, params, &cache, &dlogits, &mut grads)?;
        total += loss;
    }
    let n = indices.len() as f64;
    grads.scale(1.0 / n);
    Ok((total / n, grads))
}

/// Mean cross-entropy over a dataset.
pub fn local_loss(arch: &QennArchitecture, params: &ParamVector, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(QeflError::EmptyDataset);
    }
    let mut total = 0.0;
    for ex in data.examples() {
        let logits = logits(arch, params, &ex.features)?;
        total += softmax_cross_entropy(&logits, ex.label)?.0;
    }
    Ok(total / data.len() as f64)
}

/// Index of the largest logit; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn predict(arch: &QennArchitecture, params: &ParamVector, x: &[f64]) -> Result<usize> {
    logits(arch, params, x).map(|l| argmax(&l))
}
