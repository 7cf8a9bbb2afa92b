//! Frame-rate arithmetic and the causality primitives of a streaming encoder.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Products within this distance of an integer count as that integer, so that
/// e.g. `0.29 * 100.0` yields 29 frames rather than 28.
const FRAME_SNAP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameConfig {
    /// Speech tokens per second.
    #[serde(default = "default_frame_rate")]
    pub frame_rate: f64,
    /// Block length processed per step by the streaming tokenizer, in seconds.
    #[serde(default = "default_tokenizer_block")]
    pub tokenizer_block_s: f64,
}

fn default_frame_rate() -> f64 {
    12.5
}

fn default_tokenizer_block() -> f64 {
    0.8
}

impl Default for FrameConfig {
    fn default() -> Self {
        Self {
            frame_rate: default_frame_rate(),
            tokenizer_block_s: default_tokenizer_block(),
        }
    }
}

impl FrameConfig {
    pub fn new(frame_rate: f64, tokenizer_block_s: f64) -> Result<Self> {
        let cfg = Self {
            frame_rate,
            tokenizer_block_s,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        positive("frame_rate", self.frame_rate)?;
        positive("tokenizer_block_s", self.tokenizer_block_s)
    }
}

pub(crate) fn positive(name: &str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "{name} must be positive and finite, got {value}"
        )))
    }
}

/// Whole frames contained in `duration_s` seconds of audio at `frame_rate`.
///
/// A partial trailing frame never produces a token.
pub fn frames_in(duration_s: f64, frame_rate: f64) -> Result<usize> {
    if !(duration_s >= 0.0 && duration_s.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "duration must be a finite nonnegative number, got {duration_s}"
        )));
    }
    positive("frame_rate", frame_rate)?;
    Ok((duration_s * frame_rate + FRAME_SNAP).floor() as usize)
}

pub fn token_count(duration_s: f64, cfg: &FrameConfig) -> Result<usize> {
    frames_in(duration_s, cfg.frame_rate)
}

/// Whether query `i` may attend to key `j` under block-causal attention.
#[inline]
pub fn block_causal_allowed(i: usize, j: usize, block: usize) -> bool {
    j / block <= i / block
}

/// Dense `seq_len x seq_len` block-causal mask; `true` means attention allowed.
pub fn block_causal_mask(seq_len: usize, block: usize) -> Result<Vec<Vec<bool>>> {
    if block == 0 {
        return Err(Error::InvalidConfig("attention block size must be >= 1".into()));
    }
    Ok((0..seq_len)
        .map(|i| {
            (0..seq_len)
                .map(|j| block_causal_allowed(i, j, block))
                .collect()
        })
        .collect())
}

/// `out[t] = sum_j kernel[j] * signal[t - j]`, with zeros before the start.
pub fn causal_conv1d(signal: &[f64], kernel: &[f64]) -> Result<Vec<f64>> {
    let mut state = CausalConv1d::new(kernel.to_vec())?;
    Ok(state.process(signal))
}

/// Incremental causal convolution that keeps the last `k - 1` inputs between
/// calls. Feeding a signal in pieces gives the same output as feeding it whole.
#[derive(Debug, Clone)]
pub struct CausalConv1d {
    kernel: Vec<f64>,
    // most recent input last
    history: Vec<f64>,
}

impl CausalConv1d {
    pub fn new(kernel: Vec<f64>) -> Result<Self> {
        if kernel.is_empty() {
            return Err(Error::EmptyInput("convolution kernel"));
        }
        let history = vec![0.0; kernel.len() - 1];
        Ok(Self { kernel, history })
    }

    pub fn process(&mut self, chunk: &[f64]) -> Vec<f64> {
        let k = self.kernel.len();
        let mut window = std::mem::take(&mut self.history);
        window.extend_from_slice(chunk);
        let out = (0..chunk.len())
            .map(|t| {
                // window[t + k - 1] is chunk[t]
                self.kernel
                    .iter()
                    .enumerate()
                    .map(|(j, w)| w * window[t + k - 1 - j])
                    .sum()
            })
            .collect();
        self.history = window.split_off(window.len() - (k - 1));
        out
    }

    pub fn reset(&mut self) {
        self.history.fill(0.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_counts() {
        let cfg = FrameConfig::default();
        assert_eq!(token_count(4.0, &cfg).unwrap(), 50);
        assert_eq!(token_count(0.0, &cfg).unwrap(), 0);
        assert_eq!(token_count(0.81, &cfg).unwrap(), 10);
        assert_eq!(frames_in(0.29, 100.0).unwrap(), 29);
        assert!(token_count(-0.1, &cfg).is_err());
        assert!(token_count(f64::NAN, &cfg).is_err());
    }

    #[test]
    fn mask_block_two() {
        let mask = block_causal_mask(4, 2).unwrap();
        let rows: Vec<String> = mask
            .iter()
            .map(|r| r.iter().map(|&b| if b { '1' } else { '0' }).collect())
            .collect();
        assert_eq!(rows, ["1100", "1100", "1111", "1111"]);
    }

    #[test]
    fn mask_degenerate_blocks() {
        let causal = block_causal_mask(6, 1).unwrap();
        for (i, row) in causal.iter().enumerate() {
            for (j, &allowed) in row.iter().enumerate() {
                assert_eq!(allowed, j <= i);
            }
        }
        let full = block_causal_mask(6, 6).unwrap();
        assert!(full.iter().flatten().all(|&b| b));
        assert!(block_causal_mask(3, 0).is_err());
        assert!(block_causal_mask(0, 3).unwrap().is_empty());
    }

    #[test]
    fn conv_impulse_and_identity() {
        let out = causal_conv1d(&[1.0, 0.0, 0.0, 0.0, 0.0], &[2.0, 3.0, 4.0]).unwrap();
        assert_eq!(out, vec![2.0, 3.0, 4.0, 0.0, 0.0]);
        let signal = [0.5, -1.0, 3.25];
        assert_eq!(causal_conv1d(&signal, &[1.0]).unwrap(), signal);
        assert!(causal_conv1d(&signal, &[]).is_err());
        assert!(causal_conv1d(&[], &[1.0, 2.0]).unwrap().is_empty());
    }

    #[test]
    fn streaming_conv_matches_whole_signal() {
        let signal: Vec<f64> = (0..23).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
        let kernel = vec![0.5, -0.25, 1.0, 2.0];
        let whole = causal_conv1d(&signal, &kernel).unwrap();
        let mut conv = CausalConv1d::new(kernel).unwrap();
        let mut pieces = Vec::new();
        for chunk in signal.chunks(3) {
            pieces.extend(conv.process(chunk));
        }
        assert_eq!(pieces, whole);
    }
}
