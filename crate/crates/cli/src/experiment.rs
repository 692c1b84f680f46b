//! Builds datasets, clients and the initial model from a [`RunConfig`].

use anyhow::{Context, Result};

use qefl_core::data::{
    gen_synthetic, load_idx, shard_dirichlet, shard_iid, shard_per_client_seed, train_test_split,
    Dataset,
};
use qefl_core::federation::ClientState;
use qefl_core::nn::{ParamVector, QennArchitecture};
use qefl_core::rng::{mix_seed, seeded};

use crate::config::{DatasetKind, RunConfig, ShardKind};

const DATA_STREAM: u64 = 1;
const SPLIT_STREAM: u64 = 2;
const SHARD_STREAM: u64 = 3;
const INIT_STREAM: u64 = 4;

pub struct Prepared {
    pub arch: QennArchitecture,
    pub train: Dataset,
    pub test: Dataset,
    pub clients: Vec<ClientState>,
    pub initial: ParamVector,
}

fn sub_seed(cfg: &RunConfig, tag: u64) -> u64 {
    mix_seed(&[cfg.master_seed, tag])
}

fn load_source(cfg: &RunConfig) -> Result<Dataset> {
    match cfg.dataset {
        DatasetKind::Synthetic => Ok(gen_synthetic(cfg.synthetic_n, sub_seed(cfg, DATA_STREAM))),
        DatasetKind::Idx => {
            let images = cfg.idx_images.as_ref().expect("validated");
            let labels = cfg.idx_labels.as_ref().expect("validated");
            let data = load_idx(images, labels)
                .with_context(|| format!("loading {} / {}", images.display(), labels.display()))?;
            Ok(match cfg.idx_limit {
                Some(n) => data.take(n),
                None => data,
            })
        }
    }
}

/// Test split of the configured data, without sharding or model init.
pub fn test_set(cfg: &RunConfig) -> Result<Dataset> {
    cfg.validate()?;
    Ok(split(cfg)?.1)
}

fn split(cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    if cfg.dataset == DatasetKind::Synthetic && cfg.shard == ShardKind::PerClientSeed {
        // every client draws its own data; the test set has a seed of its own
        let n_test = (cfg.test_fraction * cfg.synthetic_n as f64).round() as usize;
        let test = gen_synthetic(n_test, sub_seed(cfg, SPLIT_STREAM));
        let train_n = cfg.synthetic_n - n_test;
        cfg.validate_against(train_n)?;
        let (train, _) = shard_per_client_seed(
            cfg.n_clients,
            train_n / cfg.n_clients,
            sub_seed(cfg, DATA_STREAM),
            gen_synthetic,
        )?;
        return Ok((train, test));
    }
    let source = load_source(cfg)?;
    let (train, test) = train_test_split(&source, cfg.test_fraction, sub_seed(cfg, SPLIT_STREAM))
        .map_err(|e| anyhow::anyhow!("config field `test_fraction`: {e}"))?;
    Ok((train, test))
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    cfg.validate()?;
    let (train, test) = split(cfg)?;
    cfg.validate_against(train.len())?;
    let plan = match cfg.shard {
        ShardKind::Iid => shard_iid(&train, cfg.n_clients, sub_seed(cfg, SHARD_STREAM))?,
        ShardKind::Dirichlet => shard_dirichlet(
            &train,
            cfg.n_clients,
            cfg.dirichlet_alpha,
            sub_seed(cfg, SHARD_STREAM),
        )?,
        ShardKind::PerClientSeed => {
            let per_client = train.len() / cfg.n_clients;
            let assignment = (0..train.len()).map(|i| i / per_client).collect();
            qefl_core::data::ShardPlan::new(
                assignment,
                cfg.n_clients,
                qefl_core::data::ShardStrategy::PerClientSeed,
            )?
        }
    };
    let clients = ClientState::from_shards(plan.shards(&train)?)?;
    let arch = QennArchitecture::new(
        train.input_dim(),
        cfg.hidden_dims.clone(),
        train.n_classes(),
    )?;
    let initial = arch.init_params(&mut seeded(sub_seed(cfg, INIT_STREAM)));
    Ok(Prepared {
        arch,
        train,
        test,
        clients,
        initial,
    })
}
