//! Labeled datasets, the synthetic sum-threshold benchmark, splitting and
//! client sharding, and IDX image loading.

mod idx;
mod shard;

pub use idx::{load_idx, read_idx_images, read_idx_labels, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use shard::{shard_dirichlet, shard_iid, shard_per_client_seed, ShardPlan, ShardStrategy};

use std::io::Write;

use crate::error::{invalid, QeflError, Result};
use crate::rng::{seeded, shuffle, uniform};

pub const SYNTHETIC_DIM: usize = 10;
pub const SYNTHETIC_THRESHOLD: f64 = 5.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    examples: Vec<Example>,
    input_dim: usize,
    n_classes: usize,
}

impl Dataset {
    pub fn new(examples: Vec<Example>, input_dim: usize, n_classes: usize) -> Result<Self> {
        for (i, ex) in examples.iter().enumerate() {
            if ex.features.len() != input_dim {
                return Err(QeflError::ShapeMismatch {
                    context: "example features",
                    expected: input_dim,
                    actual: ex.features.len(),
                });
            }
            if ex.label >= n_classes {
                return Err(QeflError::LabelOutOfRange {
                    label: ex.label,
                    classes: n_classes,
                });
            }
            if ex.features.iter().any(|f| !f.is_finite()) {
                return Err(invalid(
                    "features",
                    format!("example {i} has a non-finite feature"),
                ));
            }
        }
        Ok(Self {
            examples,
            input_dim,
            n_classes,
        })
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    /// Examples at `indices`, in that order (repeats allowed).
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            examples: indices.iter().map(|&i| self.examples[i].clone()).collect(),
            input_dim: self.input_dim,
            n_classes: self.n_classes,
        }
    }

    /// First `n` examples (or all, if fewer).
    pub fn take(&self, n: usize) -> Dataset {
        Dataset {
            examples: self.examples.iter().take(n).cloned().collect(),
            input_dim: self.input_dim,
            n_classes: self.n_classes,
        }
    }

    pub fn concat(parts: &[Dataset]) -> Result<Dataset> {
        let first = parts.first().ok_or(QeflError::EmptyDataset)?;
        let mut examples = Vec::with_capacity(parts.iter().map(Dataset::len).sum());
        for part in parts {
            if part.input_dim != first.input_dim || part.n_classes != first.n_classes {
                return Err(invalid(
                    "datasets",
                    "cannot concatenate datasets of different shapes",
                ));
            }
            examples.extend(part.examples.iter().cloned());
        }
        Ok(Dataset {
            examples,
            input_dim: first.input_dim,
            n_classes: first.n_classes,
        })
    }

    pub fn label_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for ex in &self.examples {
            counts[ex.label] += 1;
        }
        counts
    }

    /// CSV with one row per example: feature columns `x1..xd`, then `label`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let mut header: Vec<String> = (1..=self.input_dim).map(|i| format!("x{i}")).collect();
        header.push("label".into());
        writeln!(out, "{}", header.join(","))?;
        for ex in &self.examples {
            let mut row: Vec<String> = ex.features.iter().map(|f| f.to_string()).collect();
            row.push(ex.label.to_string());
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Label of the synthetic benchmark: 1 iff the features sum to strictly more than 5.
pub fn synthetic_label(features: &[f64]) -> usize {
    usize::from(features.iter().sum::<f64>() > SYNTHETIC_THRESHOLD)
}

/// `n` examples with ten features i.i.d. uniform on [0, 1).
pub fn gen_synthetic(n: usize, seed: u64) -> Dataset {
    let mut rng = seeded(seed);
    let examples = (0..n)
        .map(|_| {
            let features: Vec<f64> = (0..SYNTHETIC_DIM).map(|_| uniform(&mut rng)).collect();
            let label = synthetic_label(&features);
            Example { features, label }
        })
        .collect();
    Dataset {
        examples,
        input_dim: SYNTHETIC_DIM,
        n_classes: 2,
    }
}

/// Shuffle and split off `round(test_fraction * n)` examples as the test set.
pub fn train_test_split(
    data: &Dataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(invalid(
            "test_fraction",
            format!("{test_fraction} is not in (0, 1)"),
        ));
    }
    let n = data.len();
    let n_test = (test_fraction * n as f64).round() as usize;
    if n_test == 0 || n_test >= n {
        return Err(invalid(
            "test_fraction",
            format!("{test_fraction} of {n} examples leaves an empty split"),
        ));
    }
    let mut order: Vec<usize> = (0..n).collect();
    shuffle(&mut seeded(seed), &mut order);
    let (test_idx, train_idx) = order.split_at(n_test);
    Ok((data.subset(train_idx), data.subset(test_idx)))
}
