//! Single-codebook vector quantization.
//!
//! A [`Codebook`] holds `size` code vectors of length `dim` together with the
//! exponential-moving-average statistics used to re-estimate them:
//!
//! ```text
//! cluster_size[k] <- decay * cluster_size[k] + (1 - decay) * count[k]
//! embed_sum[k]    <- decay * embed_sum[k]    + (1 - decay) * sum(inputs assigned to k)
//! vector[k]        = embed_sum[k] / max(cluster_size[k], 1e-5)
//! usage[k]        <- decay * usage[k]        + (1 - decay) * count[k] / batch_len
//! ```
//!
//! Codes whose `usage` drops below `reset_threshold` are considered dead and
//! can be replaced with randomly chosen inputs via
//! [`Codebook::reset_dead_codes`].
//!
//! All mutation goes through `&mut self`; a codebook shared between threads
//! must be wrapped by the caller.

mod fit;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use fit::{fit_clusters, FitConfig, FitReport};

/// Floor applied to `cluster_size` before dividing.
pub const EMA_EPSILON: f64 = 1e-5;

/// Hyper-parameters shared by every code in a codebook.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodebookConfig {
    pub decay: f64,
    pub commitment_coeff: f64,
    pub reset_threshold: f64,
}

impl CodebookConfig {
    /// Decay 0.99 and commitment coefficient 10.0; the reset threshold has no
    /// sensible default and must be supplied.
    pub fn new(reset_threshold: f64) -> Self {
        Self {
            decay: 0.99,
            commitment_coeff: 10.0,
            reset_threshold,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "decay must lie in (0, 1), got {}",
                self.decay
            )));
        }
        if !(self.commitment_coeff >= 0.0 && self.commitment_coeff.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "commitment_coeff must be a finite nonnegative number, got {}",
                self.commitment_coeff
            )));
        }
        if !(self.reset_threshold >= 0.0 && self.reset_threshold <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "reset_threshold must lie in [0, 1], got {}",
                self.reset_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizeResult {
    pub indices: Vec<usize>,
    pub quantized: Vec<Vec<f64>>,
    /// Squared L2 distance between each input and its code.
    pub distances: Vec<f64>,
    pub commitment_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CodebookFile", into = "CodebookFile")]
pub struct Codebook {
    dim: usize,
    size: usize,
    config: CodebookConfig,
    vectors: Vec<f64>,
    ema_cluster_size: Vec<f64>,
    ema_embed_sum: Vec<f64>,
    usage: Vec<f64>,
}

impl Codebook {
    /// Builds a codebook from explicit rows.
    ///
    /// EMA statistics start as if every code had been freshly reset:
    /// `cluster_size = 1`, `embed_sum = vector`, `usage = reset_threshold`.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R], config: CodebookConfig) -> Result<Self> {
        config.validate()?;
        let first = rows.first().ok_or(Error::EmptyInput("codebook rows"))?;
        let dim = first.as_ref().len();
        if dim == 0 {
            return Err(Error::InvalidConfig("codebook dim must be positive".into()));
        }
        let mut vectors = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: row.len(),
                });
            }
            vectors.extend_from_slice(row);
        }
        let size = rows.len();
        Ok(Self {
            dim,
            size,
            config,
            ema_cluster_size: vec![1.0; size],
            ema_embed_sum: vectors.clone(),
            vectors,
            usage: vec![config.reset_threshold; size],
        })
    }

    /// Codes drawn from a standard normal distribution.
    pub fn random(size: usize, dim: usize, config: CodebookConfig, seed: u64) -> Result<Self> {
        if size == 0 || dim == 0 {
            return Err(Error::InvalidConfig(format!(
                "codebook needs positive size and dim, got {size}x{dim}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..size)
            .map(|_| (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        Self::from_rows(&rows, config)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn config(&self) -> &CodebookConfig {
        &self.config
    }

    pub fn vector(&self, k: usize) -> &[f64] {
        &self.vectors[k * self.dim..(k + 1) * self.dim]
    }

    pub fn vectors(&self) -> impl Iterator<Item = &[f64]> {
        self.vectors.chunks_exact(self.dim)
    }

    pub fn ema_cluster_size(&self) -> &[f64] {
        &self.ema_cluster_size
    }

    pub fn ema_embed_sum(&self, k: usize) -> &[f64] {
        &self.ema_embed_sum[k * self.dim..(k + 1) * self.dim]
    }

    pub fn usage(&self) -> &[f64] {
        &self.usage
    }

    /// Zeroes the EMA statistics, leaving the vectors untouched.
    pub fn zero_ema_stats(&mut self) {
        self.ema_cluster_size.fill(0.0);
        self.ema_embed_sum.fill(0.0);
    }

    fn check_inputs<R: AsRef<[f64]>>(&self, inputs: &[R]) -> Result<()> {
        if inputs.is_empty() {
            return Err(Error::EmptyInput("quantizer inputs"));
        }
        for row in inputs {
            let len = row.as_ref().len();
            if len != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    actual: len,
                });
            }
        }
        Ok(())
    }

    /// Nearest code and its squared distance; ties go to the lowest index.
    pub fn nearest(&self, input: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (k, code) in self.vectors().enumerate() {
            let d = squared_distance(input, code);
            if d < best.1 {
                best = (k, d);
            }
        }
        best
    }

    pub fn quantize<R: AsRef<[f64]>>(&self, inputs: &[R]) -> Result<QuantizeResult> {
        self.check_inputs(inputs)?;
        let n = inputs.len();
        let mut indices = Vec::with_capacity(n);
        let mut quantized = Vec::with_capacity(n);
        let mut distances = Vec::with_capacity(n);
        for row in inputs {
            let (k, d) = self.nearest(row.as_ref());
            indices.push(k);
            quantized.push(self.vector(k).to_vec());
            distances.push(d);
        }
        let mean = distances.iter().sum::<f64>() / n as f64;
        Ok(QuantizeResult {
            indices,
            quantized,
            distances,
            commitment_loss: self.config.commitment_coeff * mean,
        })
    }

    /// One EMA step from a batch and its code assignments.
    pub fn ema_update<R: AsRef<[f64]>>(&mut self, inputs: &[R], indices: &[usize]) -> Result<()> {
        self.check_inputs(inputs)?;
        if inputs.len() != indices.len() {
            return Err(Error::LengthMismatch {
                what: "inputs vs indices",
                left: inputs.len(),
                right: indices.len(),
            });
        }
        if let Some(&index) = indices.iter().find(|&&k| k >= self.size) {
            return Err(Error::IndexOutOfRange {
                index,
                size: self.size,
            });
        }

        let dim = self.dim;
        let mut counts = vec![0usize; self.size];
        let mut sums = vec![0.0; self.size * dim];
        for (row, &k) in inputs.iter().zip(indices) {
            counts[k] += 1;
            for (acc, x) in sums[k * dim..(k + 1) * dim].iter_mut().zip(row.as_ref()) {
                *acc += x;
            }
        }

        let decay = self.config.decay;
        let n = inputs.len() as f64;
        for (k, &count) in counts.iter().enumerate() {
            let count = count as f64;
            self.ema_cluster_size[k] = decay * self.ema_cluster_size[k] + (1.0 - decay) * count;
            self.usage[k] = decay * self.usage[k] + (1.0 - decay) * (count / n);
            let denom = self.ema_cluster_size[k].max(EMA_EPSILON);
            let span = k * dim..(k + 1) * dim;
            for ((sum, batch_sum), v) in self.ema_embed_sum[span.clone()]
                .iter_mut()
                .zip(&sums[span.clone()])
                .zip(&mut self.vectors[span])
            {
                *sum = decay * *sum + (1.0 - decay) * batch_sum;
                *v = *sum / denom;
            }
        }
        Ok(())
    }

    /// Ids of codes whose usage is below the reset threshold, ascending.
    pub fn dead_codes(&self) -> Vec<usize> {
        let threshold = self.config.reset_threshold;
        (0..self.size).filter(|&k| self.usage[k] < threshold).collect()
    }

    /// Replaces every dead code with a uniformly chosen candidate row.
    ///
    /// Returns the replaced ids in ascending order. Identical seeds give
    /// identical replacements.
    pub fn reset_dead_codes<R: AsRef<[f64]>>(
        &mut self,
        candidates: &[R],
        seed: u64,
    ) -> Result<Vec<usize>> {
        let dead = self.dead_codes();
        if dead.is_empty() {
            return Ok(dead);
        }
        if candidates.is_empty() {
            return Err(Error::NoResetCandidates { dead: dead.len() });
        }
        self.check_inputs(candidates)?;

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = self.dim;
        for &k in &dead {
            let row = candidates[rng.random_range(0..candidates.len())].as_ref();
            self.vectors[k * dim..(k + 1) * dim].copy_from_slice(row);
            self.ema_embed_sum[k * dim..(k + 1) * dim].copy_from_slice(row);
            self.ema_cluster_size[k] = 1.0;
            self.usage[k] = self.config.reset_threshold;
        }
        Ok(dead)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Information rate of a single-codebook token stream: `log2(K) * frame_rate`.
pub fn bitrate(codebook_size: u64, frame_rate: f64) -> Result<f64> {
    if codebook_size < 2 {
        return Err(Error::InvalidConfig(format!(
            "codebook size must be at least 2, got {codebook_size}"
        )));
    }
    if !(frame_rate > 0.0 && frame_rate.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "frame rate must be positive, got {frame_rate}"
        )));
    }
    Ok((codebook_size as f64).log2() * frame_rate)
}

/// Codebook size implied by a bitrate at a frame rate, rounded to the
/// nearest integer.
pub fn codebook_size_for(bitrate_bps: f64, frame_rate: f64) -> Result<u64> {
    if !(frame_rate > 0.0 && bitrate_bps >= frame_rate) {
        return Err(Error::InvalidConfig(format!(
            "need bitrate >= frame rate > 0, got {bitrate_bps} bps at {frame_rate} Hz"
        )));
    }
    Ok((bitrate_bps / frame_rate).exp2().round() as u64)
}

#[derive(Serialize, Deserialize)]
struct CodebookHeader {
    dim: usize,
    size: usize,
    decay: f64,
    commitment_coeff: f64,
    reset_threshold: f64,
}

#[derive(Serialize, Deserialize)]
struct CodebookFile {
    header: CodebookHeader,
    vectors: Vec<f64>,
    ema_cluster_size: Vec<f64>,
    ema_embed_sum: Vec<f64>,
    usage: Vec<f64>,
}

impl From<Codebook> for CodebookFile {
    fn from(cb: Codebook) -> Self {
        CodebookFile {
            header: CodebookHeader {
                dim: cb.dim,
                size: cb.size,
                decay: cb.config.decay,
                commitment_coeff: cb.config.commitment_coeff,
                reset_threshold: cb.config.reset_threshold,
            },
            vectors: cb.vectors,
            ema_cluster_size: cb.ema_cluster_size,
            ema_embed_sum: cb.ema_embed_sum,
            usage: cb.usage,
        }
    }
}

impl TryFrom<CodebookFile> for Codebook {
    type Error = Error;

    fn try_from(file: CodebookFile) -> Result<Self> {
        let CodebookHeader {
            dim,
            size,
            decay,
            commitment_coeff,
            reset_threshold,
        } = file.header;
        let config = CodebookConfig {
            decay,
            commitment_coeff,
            reset_threshold,
        };
        config.validate()?;
        if dim == 0 || size == 0 {
            return Err(Error::InvalidConfig(format!(
                "codebook needs positive size and dim, got {size}x{dim}"
            )));
        }
        let check = |what: &'static str, len: usize, expected: usize| {
            if len == expected {
                Ok(())
            } else {
                Err(Error::LengthMismatch {
                    what,
                    left: len,
                    right: expected,
                })
            }
        };
        check("vectors", file.vectors.len(), size * dim)?;
        check("ema_embed_sum", file.ema_embed_sum.len(), size * dim)?;
        check("ema_cluster_size", file.ema_cluster_size.len(), size)?;
        check("usage", file.usage.len(), size)?;
        Ok(Codebook {
            dim,
            size,
            config,
            vectors: file.vectors,
            ema_cluster_size: file.ema_cluster_size,
            ema_embed_sum: file.ema_embed_sum,
            usage: file.usage,
        })
    }
}
