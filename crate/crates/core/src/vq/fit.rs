//! Synthetic convergence experiment: learn a codebook on Gaussian clusters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use super::{squared_distance, Codebook, CodebookConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub clusters: usize,
    pub codes: usize,
    pub dim: usize,
    pub steps: usize,
    pub batch: usize,
    pub sigma: f64,
    /// Cluster means are drawn from `[-1, 1]^dim` at least this far apart.
    pub min_separation: f64,
    /// Standard deviation of the normally distributed initial codes.
    pub init_scale: f64,
    pub codebook: CodebookConfig,
    pub seed: u64,
}

impl FitConfig {
    pub fn new(clusters: usize, codes: usize, seed: u64) -> Self {
        Self {
            clusters,
            codes,
            dim: 2,
            steps: 200,
            batch: 256,
            sigma: 0.05,
            min_separation: 0.5,
            init_scale: 0.5,
            codebook: CodebookConfig::new(0.01),
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub cluster_means: Vec<Vec<f64>>,
    pub codes: Vec<Vec<f64>>,
    /// L2 distance from each code to its nearest cluster mean.
    pub code_distances: Vec<f64>,
    pub final_usage: Vec<f64>,
    /// Number of times each code was reset over the run.
    pub reset_counts: Vec<usize>,
    pub final_commitment_loss: f64,
}

impl FitReport {
    /// Distinct codes reset at least once.
    pub fn codes_reset(&self) -> usize {
        self.reset_counts.iter().filter(|&&c| c > 0).count()
    }

    pub fn max_code_distance(&self) -> f64 {
        self.code_distances.iter().copied().fold(0.0, f64::max)
    }
}

fn cluster_means(cfg: &FitConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
    let min_sq = cfg.min_separation * cfg.min_separation;
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(cfg.clusters);
    let mut attempts = 0;
    while means.len() < cfg.clusters {
        attempts += 1;
        if attempts > 100_000 {
            return Err(Error::InvalidConfig(format!(
                "cannot place {} clusters {} apart in [-1,1]^{}",
                cfg.clusters, cfg.min_separation, cfg.dim
            )));
        }
        let candidate: Vec<f64> = (0..cfg.dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        if means.iter().all(|m| squared_distance(m, &candidate) >= min_sq) {
            means.push(candidate);
        }
    }
    Ok(means)
}

/// Trains a randomly initialised codebook on seeded Gaussian clusters.
///
/// Each step draws a batch, resets dead codes from it, quantizes it and
/// applies one EMA update.
pub fn fit_clusters(cfg: &FitConfig) -> Result<FitReport> {
    if cfg.clusters == 0 || cfg.batch == 0 || cfg.dim == 0 {
        return Err(Error::InvalidConfig(
            "clusters, batch and dim must be positive".into(),
        ));
    }
    let noise = Normal::new(0.0, cfg.sigma)
        .map_err(|e| Error::InvalidConfig(format!("sigma {}: {e}", cfg.sigma)))?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let means = cluster_means(cfg, &mut rng)?;
    let init = Normal::new(0.0, cfg.init_scale)
        .map_err(|e| Error::InvalidConfig(format!("init_scale {}: {e}", cfg.init_scale)))?;
    let rows: Vec<Vec<f64>> = (0..cfg.codes)
        .map(|_| (0..cfg.dim).map(|_| init.sample(&mut rng)).collect())
        .collect();
    let mut codebook = Codebook::from_rows(&rows, cfg.codebook)?;
    let mut reset_counts = vec![0usize; cfg.codes];
    let mut last_loss = 0.0;

    for _ in 0..cfg.steps {
        let batch: Vec<Vec<f64>> = (0..cfg.batch)
            .map(|_| {
                let mean = &means[rng.random_range(0..means.len())];
                mean.iter().map(|m| m + noise.sample(&mut rng)).collect()
            })
            .collect();
        for k in codebook.reset_dead_codes(&batch, rng.random())? {
            reset_counts[k] += 1;
        }
        let q = codebook.quantize(&batch)?;
        codebook.ema_update(&batch, &q.indices)?;
        last_loss = q.commitment_loss;
    }

    let codes: Vec<Vec<f64>> = codebook.vectors().map(<[f64]>::to_vec).collect();
    let code_distances = codes
        .iter()
        .map(|c| {
            means
                .iter()
                .map(|m| squared_distance(c, m))
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect();
    Ok(FitReport {
        cluster_means: means,
        codes,
        code_distances,
        final_usage: codebook.usage().to_vec(),
        reset_counts,
        final_commitment_loss: last_loss,
    })
}
