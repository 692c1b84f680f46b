use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{QeflError, Result};

/// Layer widths of a sine network: `input_dim -> hidden_dims... -> output_dim`.
///
/// Every hidden layer computes `sin(W z + phi)`; the output head is affine.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QennArchitecture {
    input_dim: usize,
    hidden_dims: Vec<usize>,
    output_dim: usize,
}

/// Location of one layer's parameters inside a [`ParamVector`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpan {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub is_head: bool,
}

impl LayerSpan {
    pub fn weight_range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.rows * self.cols
    }

    /// Phases for a sine layer, bias for the head.
    pub fn bias_range(&self) -> std::ops::Range<usize> {
        let start = self.offset + self.rows * self.cols;
        start..start + self.rows
    }

    /// Parameters in the layer: weights plus phases/bias.
    pub fn param_count(&self) -> usize {
        self.rows * self.cols + self.rows
    }
}

impl QennArchitecture {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, output_dim: usize) -> Result<Self> {
        if hidden_dims.is_empty() {
            return Err(QeflError::InvalidArchitecture(
                "at least one hidden layer is required".into(),
            ));
        }
        if input_dim == 0 || output_dim == 0 || hidden_dims.contains(&0) {
            return Err(QeflError::InvalidArchitecture(
                "all layer widths must be at least 1".into(),
            ));
        }
        Ok(Self {
            input_dim,
            hidden_dims,
            output_dim,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dims(&self) -> &[usize] {
        &self.hidden_dims
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    /// Widths from input to output, inclusive.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.output_dim);
        dims
    }

    /// Sine layers first, head last.
    pub fn spans(&self) -> Vec<LayerSpan> {
        let dims = self.dims();
        let mut offset = 0;
        let n_layers = dims.len() - 1;
        (0..n_layers)
            .map(|l| {
                let span = LayerSpan {
                    offset,
                    rows: dims[l + 1],
                    cols: dims[l],
                    is_head: l + 1 == n_layers,
                };
                offset += span.param_count();
                span
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.dims().windows(2).map(|w| w[1] * w[0] + w[1]).sum()
    }

    /// Fresh parameters: weights uniform in `±sqrt(6 / (fan_in + fan_out))`,
    /// phases and head bias zero.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let mut values = vec![0.0; self.param_count()];
        for span in self.spans() {
            let limit = (6.0 / (span.rows + span.cols) as f64).sqrt();
            for w in &mut values[span.weight_range()] {
                *w = limit * (2.0 * crate::rng::uniform(rng) - 1.0);
            }
        }
        ParamVector(values)
    }
}

/// All model parameters packed flat: per layer row-major `W` then phases,
/// head weights then bias last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    /// Checks length against `arch` and that every entry is finite.
    pub fn for_arch(arch: &QennArchitecture, values: Vec<f64>) -> Result<Self> {
        if values.len() != arch.param_count() {
            return Err(QeflError::ShapeMismatch {
                context: "parameter vector",
                expected: arch.param_count(),
                actual: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(QeflError::InvalidParameter {
                name: "params",
                reason: format!("entry {i} is not finite"),
            });
        }
        Ok(Self(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Euclidean distance to `other`.
    pub fn distance(&self, other: &ParamVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Gradient of a loss with respect to a [`ParamVector`], same packing.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(Vec<f64>);

impl Gradients {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn scale(&mut self, factor: f64) {
        self.0.iter_mut().for_each(|g| *g *= factor);
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
    }
}

/// One layer's weights and phase/bias, unpacked.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// Row-major, `rows x cols`.
    pub weights: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
    pub bias: Vec<f64>,
}

pub fn unpack(arch: &QennArchitecture, params: &ParamVector) -> Result<Vec<LayerParams>> {
    if params.len() != arch.param_count() {
        return Err(QeflError::ShapeMismatch {
            context: "parameter vector",
            expected: arch.param_count(),
            actual: params.len(),
        });
    }
    let v = params.as_slice();
    Ok(arch
        .spans()
        .iter()
        .map(|s| LayerParams {
            weights: v[s.weight_range()].to_vec(),
            rows: s.rows,
            cols: s.cols,
            bias: v[s.bias_range()].to_vec(),
        })
        .collect())
}

pub fn pack(layers: &[LayerParams]) -> ParamVector {
    let mut values =
        Vec::with_capacity(layers.iter().map(|l| l.weights.len() + l.bias.len()).sum());
    for layer in layers {
        values.extend_from_slice(&layer.weights);
        values.extend_from_slice(&layer.bias);
    }
    ParamVector(values)
}
