use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{invalid, QeflError, Result};
use crate::rng::{mix_seed, seeded, shuffle, uniform};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShardStrategy {
    Iid,
    Dirichlet { alpha: f64 },
    PerClientSeed,
}

/// Assignment of every example of a dataset to exactly one client.
#[derive(Debug, Clone, PartialEq)]
pub struct ShardPlan {
    assignment: Vec<usize>,
    n_clients: usize,
    strategy: ShardStrategy,
}

impl ShardPlan {
    pub fn new(assignment: Vec<usize>, n_clients: usize, strategy: ShardStrategy) -> Result<Self> {
        let mut sizes = vec![0usize; n_clients];
        for &c in &assignment {
            if c >= n_clients {
                return Err(invalid("assignment", format!("client {c} >= {n_clients}")));
            }
            sizes[c] += 1;
        }
        if let Some(empty) = sizes.iter().position(|&s| s == 0) {
            return Err(invalid(
                "assignment",
                format!("client {empty} has no examples"),
            ));
        }
        Ok(Self {
            assignment,
            n_clients,
            strategy,
        })
    }

    /// Client of each example, by example index.
    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn n_clients(&self) -> usize {
        self.n_clients
    }

    pub fn strategy(&self) -> ShardStrategy {
        self.strategy
    }

    /// Example indices of one client, ascending.
    pub fn indices_for(&self, client: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == client)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_clients];
        for &c in &self.assignment {
            sizes[c] += 1;
        }
        sizes
    }

    pub fn shards(&self, data: &Dataset) -> Result<Vec<Dataset>> {
        if data.len() != self.assignment.len() {
            return Err(QeflError::ShapeMismatch {
                context: "shard plan length",
                expected: self.assignment.len(),
                actual: data.len(),
            });
        }
        Ok((0..self.n_clients)
            .map(|c| data.subset(&self.indices_for(c)))
            .collect())
    }
}

fn check_clients(n_clients: usize, n_examples: usize) -> Result<()> {
    if n_clients == 0 {
        return Err(invalid("n_clients", "must be at least 1"));
    }
    if n_clients > n_examples {
        return Err(QeflError::TooManyClients {
            clients: n_clients,
            examples: n_examples,
        });
    }
    Ok(())
}

/// Random permutation cut into contiguous near-equal slices; the first
/// `n % n_clients` clients get one extra example.
pub fn shard_iid(data: &Dataset, n_clients: usize, seed: u64) -> Result<ShardPlan> {
    let n = data.len();
    check_clients(n_clients, n)?;
    let mut order: Vec<usize> = (0..n).collect();
    shuffle(&mut seeded(seed), &mut order);
    let base = n / n_clients;
    let extra = n % n_clients;
    let mut assignment = vec![0; n];
    let mut pos = 0;
    for client in 0..n_clients {
        let size = base + usize::from(client < extra);
        for &i in &order[pos..pos + size] {
            assignment[i] = client;
        }
        pos += size;
    }
    ShardPlan::new(assignment, n_clients, ShardStrategy::Iid)
}

/// Label-skewed shards: for each class, client proportions are drawn from a
/// symmetric Dirichlet(alpha) and that class's (shuffled) examples are cut
/// accordingly. Clients left empty receive one example from the currently
/// largest shard.
pub fn shard_dirichlet(
    data: &Dataset,
    n_clients: usize,
    alpha: f64,
    seed: u64,
) -> Result<ShardPlan> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(invalid(
            "dirichlet_alpha",
            format!("{alpha} is not a positive finite value"),
        ));
    }
    let n = data.len();
    check_clients(n_clients, n)?;
    let mut rng = seeded(seed);
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| invalid("dirichlet_alpha", e.to_string()))?;
    let mut assignment = vec![0; n];
    for class in 0..data.n_classes() {
        let mut members: Vec<usize> = data
            .examples()
            .iter()
            .enumerate()
            .filter(|(_, ex)| ex.label == class)
            .map(|(i, _)| i)
            .collect();
        if members.is_empty() {
            continue;
        }
        shuffle(&mut rng, &mut members);
        let mut weights: Vec<f64> = (0..n_clients).map(|_| gamma.sample(&mut rng)).collect();
        let total: f64 = weights.iter().sum();
        if total > 0.0 && total.is_finite() {
            weights.iter_mut().for_each(|w| *w /= total);
        } else {
            // every draw underflowed; hand the class to one client
            let pick = ((uniform(&mut rng) * n_clients as f64) as usize).min(n_clients - 1);
            weights = (0..n_clients)
                .map(|c| f64::from(u8::from(c == pick)))
                .collect();
        }
        let m = members.len();
        let mut start = 0;
        let mut cumulative = 0.0;
        for (client, w) in weights.iter().enumerate() {
            cumulative += w;
            let end = if client + 1 == n_clients {
                m
            } else {
                ((cumulative * m as f64).round() as usize).clamp(start, m)
            };
            for &i in &members[start..end] {
                assignment[i] = client;
            }
            start = end;
        }
    }
    repair_empty(&mut assignment, n_clients);
    ShardPlan::new(assignment, n_clients, ShardStrategy::Dirichlet { alpha })
}

fn repair_empty(assignment: &mut [usize], n_clients: usize) {
    loop {
        let mut sizes = vec![0usize; n_clients];
        for &c in assignment.iter() {
            sizes[c] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let largest = (0..n_clients)
            .max_by(|&a, &b| sizes[a].cmp(&sizes[b]).then(b.cmp(&a)))
            .expect("at least one client");
        let donor = assignment
            .iter()
            .rposition(|&c| c == largest)
            .expect("largest shard is non-empty");
        assignment[donor] = empty;
    }
}

/// Each client gets its own dataset generated from a client-specific seed.
/// Returns the concatenated data and the contiguous plan over it.
pub fn shard_per_client_seed<F>(
    n_clients: usize,
    per_client: usize,
    base_seed: u64,
    generate: F,
) -> Result<(Dataset, ShardPlan)>
where
    F: Fn(usize, u64) -> Dataset,
{
    if n_clients == 0 || per_client == 0 {
        return Err(invalid(
            "n_clients",
            "clients and examples per client must be at least 1",
        ));
    }
    let parts: Vec<Dataset> = (0..n_clients)
        .map(|c| generate(per_client, mix_seed(&[base_seed, c as u64])))
        .collect();
    let data = Dataset::concat(&parts)?;
    let assignment = parts
        .iter()
        .enumerate()
        .flat_map(|(c, p)| std::iter::repeat_n(c, p.len()))
        .collect();
    let plan = ShardPlan::new(assignment, n_clients, ShardStrategy::PerClientSeed)?;
    Ok((data, plan))
}
