//! Round orchestration: every participating client mutates the global model
//! K times, fine-tunes each variant with local SGD, keeps the variant with the
//! lowest local loss, optionally clips it, adds Gaussian noise and sends it
//! back; the server averages what it receives.
//!
//! Random streams are keyed by (round, client, purpose) under the master seed,
//! so clients can run in parallel without changing any result.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{invalid, QeflError, Result};
use crate::evolution::{mutate, select_best, MutationConfig, VariantOutcome};
use crate::metrics::{evaluate, RoundMetrics};
use crate::nn::{local_loss, train_epochs, ParamVector, QennArchitecture, SgdConfig};
use crate::privacy::{account_round_lenient, add_noise, clip_update, PrivacyConfig, PrivacyReport};
use crate::rng::{fill_standard_normal, stream, uniform, Purpose, SimRng, StreamKey};

/// Client id used for round-level streams (dropout).
pub const SERVER_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    /// Plain mean over participants.
    Uniform,
    /// Mean weighted by each participant's example count.
    Weighted,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundConfig {
    pub n_clients: usize,
    pub local_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub mutation: MutationConfig,
    pub privacy: PrivacyConfig,
    pub rounds: usize,
    pub dropout_prob: f64,
    pub aggregation: AggregationMode,
    pub master_seed: u64,
    /// Run client rounds on the rayon pool. Results do not depend on it.
    pub parallel: bool,
}

impl Default for RoundConfig {
    /// Five clients, 20 rounds of 5 local epochs, K = 10 variants at σ = 0.1.
    fn default() -> Self {
        Self {
            n_clients: 5,
            local_epochs: 5,
            learning_rate: 0.05,
            batch_size: 32,
            mutation: MutationConfig { sigma: 0.1, k: 10 },
            privacy: PrivacyConfig::default(),
            rounds: 20,
            dropout_prob: 0.0,
            aggregation: AggregationMode::Uniform,
            master_seed: 42,
            parallel: false,
        }
    }
}

impl RoundConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_clients == 0 {
            return Err(invalid("n_clients", "must be at least 1"));
        }
        if self.local_epochs == 0 {
            return Err(invalid("local_epochs", "must be at least 1"));
        }
        if self.rounds == 0 {
            return Err(invalid("rounds", "must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid(
                "learning_rate",
                format!("{} is not positive", self.learning_rate),
            ));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.dropout_prob) {
            return Err(invalid(
                "dropout_prob",
                format!("{} is not in [0, 1]", self.dropout_prob),
            ));
        }
        self.mutation.validate()?;
        self.privacy.validate()
    }

    pub fn sgd(&self) -> SgdConfig {
        SgdConfig {
            epochs: self.local_epochs,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
        }
    }

    pub fn stream(&self, round: usize, client: u64, purpose: Purpose) -> SimRng {
        stream(
            self.master_seed,
            StreamKey::new(round as u64, client, purpose),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientState {
    pub id: usize,
    pub shard: Dataset,
}

impl ClientState {
    pub fn from_shards(shards: Vec<Dataset>) -> Result<Vec<ClientState>> {
        shards
            .into_iter()
            .enumerate()
            .map(|(id, shard)| {
                if shard.is_empty() {
                    Err(invalid("shard", format!("client {id} has no examples")))
                } else {
                    Ok(ClientState { id, shard })
                }
            })
            .collect()
    }
}

/// What one client sends back, plus diagnostics that stay local.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_id: usize,
    /// Selected variant after clipping and noise.
    pub params: ParamVector,
    /// Local loss of the selected variant before noise.
    pub best_loss: f64,
    /// 1-based.
    pub best_variant: usize,
    pub variant_losses: Vec<f64>,
    /// L2 norm of selected minus global, before clipping.
    pub update_norm: f64,
}

/// Spawn the K mutations of `global` for one client and fine-tune each.
/// Variant `k` (1-based) uses the `Mutation{k}` and `Shuffle{k}` streams.
pub fn fine_tuned_variants(
    arch: &QennArchitecture,
    global: &ParamVector,
    client: &ClientState,
    cfg: &RoundConfig,
    round: usize,
) -> Result<Vec<VariantOutcome>> {
    if client.shard.is_empty() {
        return Err(QeflError::EmptyDataset);
    }
    (1..=cfg.mutation.k)
        .map(|k| {
            let variant = k as u32;
            let mut mutation_rng =
                cfg.stream(round, client.id as u64, Purpose::Mutation { variant });
            let mut shuffle_rng = cfg.stream(round, client.id as u64, Purpose::Shuffle { variant });
            let mutated = mutate(global, cfg.mutation.sigma, &mut mutation_rng);
            let tuned = train_epochs(arch, &mutated, &client.shard, cfg.sgd(), &mut shuffle_rng)?;
            let loss = local_loss(arch, &tuned, &client.shard)?;
            Ok(VariantOutcome {
                variant_index: k,
                params: tuned,
                loss,
            })
        })
        .collect()
}

/// One client's share of a round.
pub fn client_round(
    arch: &QennArchitecture,
    global: &ParamVector,
    client: &ClientState,
    cfg: &RoundConfig,
    round: usize,
) -> Result<ClientUpdate> {
    let variants = fine_tuned_variants(arch, global, client, cfg, round)?;
    let variant_losses = variants.iter().map(|v| v.loss).collect();
    let best = select_best(variants)?;
    let update_norm = best.params.distance(global);
    let released = match (cfg.privacy.enabled, cfg.privacy.clip_norm) {
        (true, Some(c)) => clip_update(&best.params, global, c)?,
        _ => best.params,
    };
    let mut noise_rng = cfg.stream(round, client.id as u64, Purpose::Noise);
    let params = add_noise(&released, cfg.privacy.effective_sigma(), &mut noise_rng);
    Ok(ClientUpdate {
        client_id: client.id,
        params,
        best_loss: best.loss,
        best_variant: best.variant_index,
        variant_losses,
        update_norm,
    })
}

/// Federated average. With `weights`, model `i` gets `w_i / Σ w`.
pub fn aggregate(models: &[ParamVector], weights: Option<&[f64]>) -> Result<ParamVector> {
    let first = models.first().ok_or(QeflError::NoModels)?;
    if let Some(m) = models.iter().find(|m| m.len() != first.len()) {
        return Err(QeflError::ShapeMismatch {
            context: "aggregated model",
            expected: first.len(),
            actual: m.len(),
        });
    }
    match weights {
        None => {
            let mut acc = first.as_slice().to_vec();
            for m in &models[1..] {
                for (a, v) in acc.iter_mut().zip(m.as_slice()) {
                    *a += v;
                }
            }
            let n = models.len() as f64;
            Ok(ParamVector::new(acc.into_iter().map(|a| a / n).collect()))
        }
        Some(w) => {
            if w.len() != models.len() {
                return Err(QeflError::ShapeMismatch {
                    context: "aggregation weights",
                    expected: models.len(),
                    actual: w.len(),
                });
            }
            if w.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
                return Err(invalid("weights", "aggregation weights must be positive"));
            }
            let total: f64 = w.iter().sum();
            let share = w[0] / total;
            let mut acc: Vec<f64> = first.as_slice().iter().map(|v| share * v).collect();
            for (m, &wi) in models[1..].iter().zip(&w[1..]) {
                let share = wi / total;
                for (a, v) in acc.iter_mut().zip(m.as_slice()) {
                    *a += share * v;
                }
            }
            Ok(ParamVector::new(acc))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    /// 1-based.
    pub round: usize,
    pub global: ParamVector,
    pub participants: Vec<usize>,
    /// Pre-noise loss of each participant's selected variant, participant order.
    pub best_losses: Vec<f64>,
    /// Every client dropped out; the global model was kept.
    pub empty_round: bool,
    pub privacy: PrivacyReport,
}

/// Clients that stay in round `round`; one uniform draw per client, in id order.
pub fn surviving_clients(clients: &[ClientState], cfg: &RoundConfig, round: usize) -> Vec<usize> {
    let mut rng = cfg.stream(round, SERVER_STREAM, Purpose::Dropout);
    clients
        .iter()
        .enumerate()
        .filter_map(|(i, _)| (uniform(&mut rng) >= cfg.dropout_prob).then_some(i))
        .collect()
}

pub fn run_round(
    arch: &QennArchitecture,
    global: &ParamVector,
    clients: &[ClientState],
    cfg: &RoundConfig,
    round: usize,
    privacy: &PrivacyReport,
) -> Result<RoundOutcome> {
    if clients.is_empty() {
        return Err(invalid("clients", "at least one client is required"));
    }
    let survivors = surviving_clients(clients, cfg, round);
    if survivors.is_empty() {
        return Ok(RoundOutcome {
            round,
            global: global.clone(),
            participants: Vec::new(),
            best_losses: Vec::new(),
            empty_round: true,
            privacy: PrivacyReport {
                round,
                epsilon_round: 0.0,
                ..*privacy
            },
        });
    }
    let run = |&i: &usize| client_round(arch, global, &clients[i], cfg, round);
    let updates: Vec<ClientUpdate> = if cfg.parallel {
        survivors.par_iter().map(run).collect::<Result<_>>()?
    } else {
        survivors.iter().map(run).collect::<Result<_>>()?
    };
    let models: Vec<ParamVector> = updates.iter().map(|u| u.params.clone()).collect();
    let new_global = match cfg.aggregation {
        AggregationMode::Uniform => aggregate(&models, None)?,
        AggregationMode::Weighted => {
            let w: Vec<f64> = survivors
                .iter()
                .map(|&i| clients[i].shard.len() as f64)
                .collect();
            aggregate(&models, Some(&w))?
        }
    };
    let max_norm = updates.iter().map(|u| u.update_norm).fold(0.0, f64::max);
    let report = account_round_lenient(
        privacy,
        max_norm,
        cfg.privacy.clip_norm,
        cfg.privacy.effective_sigma(),
    )?;
    Ok(RoundOutcome {
        round,
        global: new_global,
        participants: updates.iter().map(|u| u.client_id).collect(),
        best_losses: updates.iter().map(|u| u.best_loss).collect(),
        empty_round: false,
        privacy: PrivacyReport { round, ..report },
    })
}

/// `Σ (n_i / n) L_i(θ)`: the data-weighted training objective.
pub fn weighted_loss(
    arch: &QennArchitecture,
    params: &ParamVector,
    clients: &[ClientState],
) -> Result<f64> {
    let n: usize = clients.iter().map(|c| c.shard.len()).sum();
    if n == 0 {
        return Err(QeflError::EmptyDataset);
    }
    clients.iter().try_fold(0.0, |acc, c| {
        Ok(acc + c.shard.len() as f64 / n as f64 * local_loss(arch, params, &c.shard)?)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub outcome: RoundOutcome,
    /// Global model on the held-out test set.
    pub metrics: RoundMetrics,
    /// Global model's data-weighted training loss.
    pub train_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRun {
    pub final_params: ParamVector,
    pub history: Vec<RoundRecord>,
}

impl TrainingRun {
    pub fn metrics(&self) -> Vec<RoundMetrics> {
        self.history.iter().map(|r| r.metrics).collect()
    }

    pub fn privacy_reports(&self) -> Vec<PrivacyReport> {
        self.history.iter().map(|r| r.outcome.privacy).collect()
    }

    pub fn train_losses(&self) -> Vec<f64> {
        self.history.iter().map(|r| r.train_loss).collect()
    }
}

/// Run all rounds, evaluating the global model on `test` after each and
/// handing every record to `sink` as it is produced.
///
/// ```
/// use qefl_core::data::{gen_synthetic, shard_iid, train_test_split};
/// use qefl_core::federation::{run_training, ClientState, RoundConfig};
/// use qefl_core::nn::{init_params, QennArchitecture};
///
/// # fn main() -> qefl_core::Result<()> {
/// let data = gen_synthetic(200, 1);
/// let (train, test) = train_test_split(&data, 0.3, 2)?;
/// let clients = ClientState::from_shards(shard_iid(&train, 2, 3)?.shards(&train)?)?;
/// let arch = QennArchitecture::new(10, vec![8], 2)?;
/// let theta0 = init_params(&arch, 4);
/// let cfg = RoundConfig { n_clients: 2, rounds: 2, ..RoundConfig::default() };
/// let run = run_training(&arch, &theta0, &clients, &test, &cfg, |rec| {
///     println!("round {} acc {:.3}", rec.metrics.round, rec.metrics.accuracy);
/// })?;
/// assert_eq!(run.history.len(), 2);
/// # Ok(())
/// # }
/// ```
pub fn run_training<F>(
    arch: &QennArchitecture,
    initial: &ParamVector,
    clients: &[ClientState],
    test: &Dataset,
    cfg: &RoundConfig,
    mut sink: F,
) -> Result<TrainingRun>
where
    F: FnMut(&RoundRecord),
{
    cfg.validate()?;
    if clients.len() != cfg.n_clients {
        return Err(invalid(
            "n_clients",
            format!(
                "config says {} but {} clients were given",
                cfg.n_clients,
                clients.len()
            ),
        ));
    }
    let mut global = initial.clone();
    let mut privacy = PrivacyReport::empty(cfg.privacy.delta);
    let mut history = Vec::with_capacity(cfg.rounds);
    for round in 1..=cfg.rounds {
        let outcome = run_round(arch, &global, clients, cfg, round, &privacy)?;
        global = outcome.global.clone();
        privacy = outcome.privacy;
        let eval = evaluate(arch, &global, test)?;
        let record = RoundRecord {
            metrics: RoundMetrics::from_evaluation(round, &eval, privacy.epsilon_total),
            train_loss: weighted_loss(arch, &global, clients)?,
            outcome,
        };
        sink(&record);
        history.push(record);
    }
    Ok(TrainingRun {
        final_params: global,
        history,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveEstimateConfig {
    /// Weight of the `(λ/2)‖δ‖²` noise penalty.
    pub lambda: f64,
    pub mc_samples: usize,
}

impl Default for ObjectiveEstimateConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            mc_samples: 16,
        }
    }
}

/// Monte-Carlo estimate of
/// `Σ_i (n_i/n) E[min_k L_i(θ + ε_k) + (λ/2)‖δ_i‖²]`.
///
/// Draw order per sample, per client in order: K mutations (each one
/// standard-normal vector scaled by σ), then one noise vector scaled by σ_p.
pub fn estimate_objective(
    arch: &QennArchitecture,
    theta: &ParamVector,
    clients: &[ClientState],
    mutation: MutationConfig,
    sigma_p: f64,
    obj: ObjectiveEstimateConfig,
    rng: &mut SimRng,
) -> Result<f64> {
    mutation.validate()?;
    if obj.mc_samples == 0 {
        return Err(invalid("mc_samples", "must be at least 1"));
    }
    if !(obj.lambda >= 0.0 && obj.lambda.is_finite()) {
        return Err(invalid(
            "lambda",
            format!("{} is not a finite value >= 0", obj.lambda),
        ));
    }
    let n: usize = clients.iter().map(|c| c.shard.len()).sum();
    if n == 0 {
        return Err(QeflError::EmptyDataset);
    }
    let mut noise = vec![0.0; theta.len()];
    let mut total = 0.0;
    for _ in 0..obj.mc_samples {
        let mut sample = 0.0;
        for client in clients {
            let mut best = f64::INFINITY;
            for _ in 0..mutation.k {
                let candidate = mutate(theta, mutation.sigma, rng);
                best = best.min(local_loss(arch, &candidate, &client.shard)?);
            }
            fill_standard_normal(rng, &mut noise);
            let sq_norm: f64 = noise.iter().map(|z| (sigma_p * z) * (sigma_p * z)).sum();
            let penalty = 0.5 * obj.lambda * sq_norm;
            sample += client.shard.len() as f64 / n as f64 * (best + penalty);
        }
        total += sample;
    }
    Ok(total / obj.mc_samples as f64)
}
