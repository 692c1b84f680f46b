//! Central finite-difference check of the analytic backward pass.

use crate::error::Result;
use crate::rng::{seeded, standard_normal_vec, uniform};

use super::network::{example_loss_and_grad, forward, softmax_cross_entropy};
use super::params::{Gradients, ParamVector, QennArchitecture};

pub const FD_STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-5;

/// Worst coordinate seen in one layer across all draws.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWorst {
    /// 0-based position in the layer stack; the last one is the head.
    pub layer: usize,
    /// Offset inside the layer's packed block.
    pub coordinate: usize,
    pub draw: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub draws: usize,
    pub max_error: f64,
    pub per_layer: Vec<LayerWorst>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_error < TOLERANCE
    }
}

/// `|a - n| / max(1, |a|, |n|)`: relative for large gradients, absolute near
/// zero where a pure ratio is dominated by rounding in the difference quotient.
pub fn coordinate_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

fn example_loss(arch: &QennArchitecture, params: &ParamVector, x: &[f64], label: usize) -> f64 {
    let (logits, _) = forward(arch, params, x).expect("shapes come from the same architecture");
    softmax_cross_entropy(&logits, label)
        .expect("label drawn in range")
        .0
}

/// Finite-difference check over `draws` random architectures, parameters,
/// inputs and labels, using the network's own backward pass.
pub fn gradcheck(seed: u64, draws: usize) -> Result<GradcheckReport> {
    gradcheck_with(seed, draws, |arch, params, x, label| {
        example_loss_and_grad(arch, params, x, label).map(|(_, g)| g)
    })
}

/// As [`gradcheck`], with the analytic gradient supplied by `grad_fn`.
pub fn gradcheck_with<F>(seed: u64, draws: usize, grad_fn: F) -> Result<GradcheckReport>
where
    F: Fn(&QennArchitecture, &ParamVector, &[f64], usize) -> Result<Gradients>,
{
    let mut rng = seeded(seed);
    let mut per_layer: Vec<Option<LayerWorst>> = Vec::new();
    let mut max_error: f64 = 0.0;
    for draw in 0..draws {
        let input = 1 + (uniform(&mut rng) * 5.0) as usize;
        let depth = 1 + (uniform(&mut rng) * 3.0) as usize;
        let hidden = (0..depth)
            .map(|_| 1 + (uniform(&mut rng) * 6.0) as usize)
            .collect();
        let output = 2 + (uniform(&mut rng) * 3.0) as usize;
        let arch = QennArchitecture::new(input, hidden, output)?;
        let params = ParamVector::new(
            standard_normal_vec(&mut rng, arch.param_count())
                .into_iter()
                .map(|v| 0.8 * v)
                .collect(),
        );
        let x = standard_normal_vec(&mut rng, input);
        let label = (uniform(&mut rng) * output as f64) as usize % output;

        let analytic = grad_fn(&arch, &params, &x, label)?;
        let spans = arch.spans();
        if per_layer.len() < spans.len() {
            per_layer.resize(spans.len(), None);
        }
        let mut probe = params.clone();
        for (l, span) in spans.iter().enumerate() {
            for i in span.offset..span.offset + span.param_count() {
                let orig = probe.as_slice()[i];
                probe.as_mut_slice()[i] = orig + FD_STEP;
                let up = example_loss(&arch, &probe, &x, label);
                probe.as_mut_slice()[i] = orig - FD_STEP;
                let down = example_loss(&arch, &probe, &x, label);
                probe.as_mut_slice()[i] = orig;
                let numeric = (up - down) / (2.0 * FD_STEP);
                let a = analytic.as_slice().get(i).copied().unwrap_or(f64::NAN);
                let mut error = coordinate_error(a, numeric);
                if error.is_nan() {
                    error = f64::INFINITY;
                }
                max_error = max_error.max(error);
                let worse = per_layer[l].as_ref().is_none_or(|w| error > w.error);
                if worse {
                    per_layer[l] = Some(LayerWorst {
                        layer: l,
                        coordinate: i - span.offset,
                        draw,
                        analytic: a,
                        numeric,
                        error,
                    });
                }
            }
        }
    }
    Ok(GradcheckReport {
        draws,
        max_error,
        per_layer: per_layer.into_iter().flatten().collect(),
    })
}
