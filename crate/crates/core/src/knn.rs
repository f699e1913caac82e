//! Nearest-neighbour target prediction baseline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::multiplex::{mae, BrainNetwork};
use crate::numerics::DenseTensor;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnnConfig {
    pub k_values: Vec<usize>,
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self {
            k_values: (2..=10).collect(),
        }
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Training indices sorted by source distance to `query`; ties keep dataset order.
pub fn neighbour_order(train_sources: &[Vec<f64>], query: &[f64]) -> Vec<usize> {
    let dist: Vec<f64> = train_sources.iter().map(|s| squared_distance(s, query)).collect();
    let mut order: Vec<usize> = (0..dist.len()).collect();
    order.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)));
    order
}

fn check_k(k: usize, available: usize) -> Result<()> {
    if available == 0 {
        return Err(Error::EmptyTrainingSet);
    }
    if k == 0 || k > available {
        return Err(Error::KTooLarge { k, available });
    }
    Ok(())
}

fn mean_of(targets: &[&BrainNetwork], picks: &[usize]) -> Result<BrainNetwork> {
    let first = targets[picks[0]];
    let mut acc = DenseTensor::zeros(first.weights().shape());
    for &p in picks {
        acc.axpy(1.0, targets[p].weights())?;
    }
    let acc = acc.scale(1.0 / picks.len() as f64);
    BrainNetwork::sanitized(acc, first.view_label())
}

/// Entrywise mean of the targets of the `k` training subjects whose sources
/// are nearest (Euclidean, upper triangle) to `query`.
pub fn knn_predict(train: &[(&BrainNetwork, &BrainNetwork)], query: &BrainNetwork, k: usize) -> Result<BrainNetwork> {
    check_k(k, train.len())?;
    let sources: Vec<Vec<f64>> = train.iter().map(|(s, _)| s.upper_triangle()).collect();
    if sources[0].len() != query.upper_triangle().len() {
        return Err(Error::SizeMismatch {
            expected: train[0].0.n(),
            actual: query.n(),
        });
    }
    let order = neighbour_order(&sources, &query.upper_triangle());
    let targets: Vec<&BrainNetwork> = train.iter().map(|(_, t)| *t).collect();
    mean_of(&targets, &order[..k])
}

/// Mean over `k_values` of the mean test-subject MAE.
pub fn knn_average_mae(
    train: &[(&BrainNetwork, &BrainNetwork)],
    test: &[(&BrainNetwork, &BrainNetwork)],
    cfg: &KnnConfig,
) -> Result<f64> {
    let per_k = knn_mae_per_k(train, test, cfg)?;
    Ok(per_k.iter().map(|(_, m)| m).sum::<f64>() / per_k.len() as f64)
}

/// `(K, mean test MAE)` for each configured K.
pub fn knn_mae_per_k(
    train: &[(&BrainNetwork, &BrainNetwork)],
    test: &[(&BrainNetwork, &BrainNetwork)],
    cfg: &KnnConfig,
) -> Result<Vec<(usize, f64)>> {
    if test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if cfg.k_values.is_empty() {
        return Err(Error::Config("k_values is empty".into()));
    }
    for &k in &cfg.k_values {
        check_k(k, train.len())?;
    }
    let sources: Vec<Vec<f64>> = train.iter().map(|(s, _)| s.upper_triangle()).collect();
    let targets: Vec<&BrainNetwork> = train.iter().map(|(_, t)| *t).collect();
    let orders: Vec<Vec<usize>> = test
        .iter()
        .map(|(s, _)| neighbour_order(&sources, &s.upper_triangle()))
        .collect();
    cfg.k_values
        .iter()
        .map(|&k| {
            let mut total = 0.0;
            for ((_, truth), order) in test.iter().zip(&orders) {
                total += mae(&mean_of(&targets, &order[..k])?, truth)?;
            }
            Ok((k, total / test.len() as f64))
        })
        .collect()
}
