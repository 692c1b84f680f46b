//! Single-layer kernels. Weights are row-major `rows x cols` slices; the
//! shape is taken from the phase (or bias) and input lengths.

use crate::error::{QeflError, Result};

/// Gradients of one layer with respect to its weights, phases (or bias) and input.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub d_weights: Vec<f64>,
    pub d_bias: Vec<f64>,
    pub d_input: Vec<f64>,
}

fn check_shape(weights: &[f64], rows: usize, cols: usize) -> Result<()> {
    if weights.len() != rows * cols {
        return Err(QeflError::ShapeMismatch {
            context: "layer weights",
            expected: rows * cols,
            actual: weights.len(),
        });
    }
    Ok(())
}

/// `W z + b`.
pub fn affine(weights: &[f64], bias: &[f64], input: &[f64]) -> Result<Vec<f64>> {
    let (rows, cols) = (bias.len(), input.len());
    check_shape(weights, rows, cols)?;
    Ok(weights
        .chunks_exact(cols.max(1))
        .take(rows)
        .zip(bias)
        .map(|(row, b)| row.iter().zip(input).map(|(w, z)| w * z).sum::<f64>() + b)
        .collect())
}

/// `sin(W z + phi)`, returned together with the pre-activation `W z + phi`.
pub fn quantum_layer_forward_with_pre(
    weights: &[f64],
    phases: &[f64],
    input: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let pre = affine(weights, phases, input)?;
    let out = pre.iter().map(|a| a.sin()).collect();
    Ok((pre, out))
}

/// `sin(W z + phi)`.
pub fn quantum_layer_forward(weights: &[f64], phases: &[f64], input: &[f64]) -> Result<Vec<f64>> {
    quantum_layer_forward_with_pre(weights, phases, input).map(|(_, out)| out)
}

/// Backward through an affine map given the gradient at its output.
pub fn affine_backward(weights: &[f64], input: &[f64], upstream: &[f64]) -> Result<LayerGrads> {
    let (rows, cols) = (upstream.len(), input.len());
    check_shape(weights, rows, cols)?;
    let mut d_weights = vec![0.0; rows * cols];
    let mut d_input = vec![0.0; cols];
    for (i, &g) in upstream.iter().enumerate() {
        let w_row = &weights[i * cols..(i + 1) * cols];
        let dw_row = &mut d_weights[i * cols..(i + 1) * cols];
        for j in 0..cols {
            dw_row[j] = g * input[j];
            d_input[j] += w_row[j] * g;
        }
    }
    Ok(LayerGrads {
        d_weights,
        d_bias: upstream.to_vec(),
        d_input,
    })
}

/// Backward through `sin(W z + phi)`: with `g = upstream * cos(a)`,
/// `dW = g z^T`, `dphi = g`, `dz = W^T g`.
pub fn quantum_layer_backward(
    weights: &[f64],
    pre_activation: &[f64],
    input: &[f64],
    upstream: &[f64],
) -> Result<LayerGrads> {
    if pre_activation.len() != upstream.len() {
        return Err(QeflError::ShapeMismatch {
            context: "layer upstream gradient",
            expected: pre_activation.len(),
            actual: upstream.len(),
        });
    }
    let local: Vec<f64> = upstream
        .iter()
        .zip(pre_activation)
        .map(|(u, a)| u * a.cos())
        .collect();
    affine_backward(weights, input, &local)
}
