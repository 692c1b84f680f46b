use rand::Rng;

use crate::data::Dataset;
use crate::error::{invalid, QeflError, Result};
use crate::rng::shuffle;

use super::network::batch_loss_and_grad;
use super::params::{Gradients, ParamVector, QennArchitecture};

/// `params - eta * grads`.
pub fn sgd_step(params: &ParamVector, grads: &Gradients, eta: f64) -> Result<ParamVector> {
    if grads.len() != params.len() {
        return Err(QeflError::ShapeMismatch {
            context: "gradient length",
            expected: params.len(),
            actual: grads.len(),
        });
    }
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(invalid(
            "learning_rate",
            format!("{eta} is not a finite non-negative rate"),
        ));
    }
    if let Some(index) = grads.as_slice().iter().position(|g| !g.is_finite()) {
        return Err(QeflError::NonFiniteGradient { index });
    }
    Ok(ParamVector::new(
        params
            .as_slice()
            .iter()
            .zip(grads.as_slice())
            .map(|(p, g)| p - eta * g)
            .collect(),
    ))
}

/// Hyperparameters for local mini-batch SGD.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

/// `epochs` passes of mini-batch SGD. The example order is reshuffled with
/// `rng` at the start of every epoch; the last batch of an epoch may be short.
pub fn train_epochs<R: Rng + ?Sized>(
    arch: &QennArchitecture,
    params: &ParamVector,
    data: &Dataset,
    cfg: SgdConfig,
    rng: &mut R,
) -> Result<ParamVector> {
    if cfg.epochs == 0 {
        return Err(invalid("local_epochs", "must be at least 1"));
    }
    if cfg.batch_size == 0 {
        return Err(invalid("batch_size", "must be at least 1"));
    }
    if data.is_empty() {
        return Err(QeflError::EmptyDataset);
    }
    let mut params = params.clone();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..cfg.epochs {
        shuffle(rng, &mut order);
        for batch in order.chunks(cfg.batch_size) {
            let (_, grads) = batch_loss_and_grad(arch, &params, data, batch)?;
            params = sgd_step(&params, &grads, cfg.learning_rate)?;
        }
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, Dataset};
    use crate::nn::network::example_loss_and_grad;
    use crate::rng::seeded;

    #[test]
    fn zero_gradient_leaves_params() {
        let p = ParamVector::new(vec![1.5, -2.0, 0.25]);
        assert_eq!(sgd_step(&p, &Gradients::zeros(3), 0.3).unwrap(), p);
    }

    #[test]
    fn unit_rate_on_self_gradient_zeroes() {
        let p = ParamVector::new(vec![1.5, -2.0, 0.25]);
        let g = Gradients::new(p.as_slice().to_vec());
        assert_eq!(sgd_step(&p, &g, 1.0).unwrap(), ParamVector::zeros(3));
    }

    #[test]
    fn step_arithmetic() {
        let p = ParamVector::new(vec![1.0, 2.0]);
        let g = Gradients::new(vec![10.0, 10.0]);
        assert_eq!(
            sgd_step(&p, &g, 0.1).unwrap(),
            ParamVector::new(vec![0.0, 1.0])
        );
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let p = ParamVector::new(vec![1.0, 2.0]);
        let g = Gradients::new(vec![0.0, f64::INFINITY]);
        assert_eq!(
            sgd_step(&p, &g, 0.1),
            Err(QeflError::NonFiniteGradient { index: 1 })
        );
        assert!(sgd_step(&p, &Gradients::zeros(3), 0.1).is_err());
    }

    fn setup() -> (QennArchitecture, ParamVector, Dataset) {
        let arch = QennArchitecture::new(10, vec![6], 2).unwrap();
        let params = arch.init_params(&mut seeded(1));
        (arch, params, gen_synthetic(40, 2))
    }

    #[test]
    fn zero_rate_leaves_params() {
        let (arch, params, data) = setup();
        let cfg = SgdConfig {
            epochs: 3,
            learning_rate: 0.0,
            batch_size: 8,
        };
        assert_eq!(
            train_epochs(&arch, &params, &data, cfg, &mut seeded(4)).unwrap(),
            params
        );
    }

    #[test]
    fn training_is_rng_deterministic() {
        let (arch, params, data) = setup();
        let cfg = SgdConfig {
            epochs: 2,
            learning_rate: 0.1,
            batch_size: 7,
        };
        let a = train_epochs(&arch, &params, &data, cfg, &mut seeded(4)).unwrap();
        let b = train_epochs(&arch, &params, &data, cfg, &mut seeded(4)).unwrap();
        let c = train_epochs(&arch, &params, &data, cfg, &mut seeded(5)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn single_example_epoch_is_one_manual_step() {
        let (arch, params, data) = setup();
        let one = data.subset(&[3]);
        let ex = &one.examples()[0];
        let (_, g) = example_loss_and_grad(&arch, &params, &ex.features, ex.label).unwrap();
        let manual = sgd_step(&params, &g, 0.2).unwrap();
        let cfg = SgdConfig {
            epochs: 1,
            learning_rate: 0.2,
            batch_size: 32,
        };
        let trained = train_epochs(&arch, &params, &one, cfg, &mut seeded(0)).unwrap();
        assert_eq!(trained, manual);
    }

    #[test]
    fn training_reduces_loss_on_synthetic_task() {
        let (arch, params, data) = setup();
        let before = crate::nn::local_loss(&arch, &params, &data).unwrap();
        let cfg = SgdConfig {
            epochs: 30,
            learning_rate: 0.1,
            batch_size: 8,
        };
        let trained = train_epochs(&arch, &params, &data, cfg, &mut seeded(4)).unwrap();
        let after = crate::nn::local_loss(&arch, &trained, &data).unwrap();
        assert!(after < before, "{after} >= {before}");
    }

    #[test]
    fn invalid_settings_are_rejected() {
        let (arch, params, data) = setup();
        let bad_epochs = SgdConfig {
            epochs: 0,
            learning_rate: 0.1,
            batch_size: 8,
        };
        assert!(train_epochs(&arch, &params, &data, bad_epochs, &mut seeded(0)).is_err());
        let bad_batch = SgdConfig {
            epochs: 1,
            learning_rate: 0.1,
            batch_size: 0,
        };
        assert!(train_epochs(&arch, &params, &data, bad_batch, &mut seeded(0)).is_err());
    }
}
