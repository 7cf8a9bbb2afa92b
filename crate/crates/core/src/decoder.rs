//! Chunked streaming speech decoding.
//!
//! Audio is decoded in blocks of `block_s` seconds. Chunk `n` (1-based)
//! synthesizes `[(n-1)·b, n·b)` seconds, conditioned on the audio already
//! produced for `[0, (n-1)·b)`. At 12.5 tokens/s and `b = 0.8` each chunk
//! needs 10 speech tokens, so the first audio cannot start before the 10th
//! speech token exists.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::framing::positive;

const INTEGRAL_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDecoderConfig", into = "RawDecoderConfig")]
pub struct DecoderConfig {
    block_s: f64,
    frame_rate: f64,
    tokens_per_block: usize,
}

#[derive(Serialize, Deserialize)]
struct RawDecoderConfig {
    #[serde(default = "default_block_s")]
    block_s: f64,
    #[serde(default = "default_frame_rate")]
    frame_rate: f64,
}

fn default_block_s() -> f64 {
    0.8
}

fn default_frame_rate() -> f64 {
    12.5
}

impl TryFrom<RawDecoderConfig> for DecoderConfig {
    type Error = Error;

    fn try_from(raw: RawDecoderConfig) -> Result<Self> {
        DecoderConfig::new(raw.block_s, raw.frame_rate)
    }
}

impl From<DecoderConfig> for RawDecoderConfig {
    fn from(cfg: DecoderConfig) -> Self {
        RawDecoderConfig {
            block_s: cfg.block_s,
            frame_rate: cfg.frame_rate,
        }
    }
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            block_s: default_block_s(),
            frame_rate: default_frame_rate(),
            tokens_per_block: 10,
        }
    }
}

impl DecoderConfig {
    /// Fails unless `block_s * frame_rate` is a positive integer.
    pub fn new(block_s: f64, frame_rate: f64) -> Result<Self> {
        positive("block_s", block_s)?;
        positive("frame_rate", frame_rate)?;
        let tokens = block_s * frame_rate;
        let rounded = tokens.round();
        if (tokens - rounded).abs() > INTEGRAL_TOLERANCE || rounded < 1.0 {
            return Err(Error::InvalidConfig(format!(
                "block of {block_s} s at {frame_rate} tokens/s spans {tokens} tokens; \
                 need a positive integer"
            )));
        }
        Ok(Self {
            block_s,
            frame_rate,
            tokens_per_block: rounded as usize,
        })
    }

    pub fn block_s(&self) -> f64 {
        self.block_s
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn tokens_per_block(&self) -> usize {
        self.tokens_per_block
    }

    /// Speech tokens needed before the first audio can be produced.
    pub fn min_tokens_for_first_audio(&self) -> usize {
        self.tokens_per_block
    }

    /// The `n`-th chunk (1-based) of a stream of `total_tokens` tokens.
    fn chunk(&self, n: usize, total_tokens: usize) -> DecoderChunk {
        let token_start = (n - 1) * self.tokens_per_block;
        let token_end = (n * self.tokens_per_block).min(total_tokens);
        let audio_start_s = (n - 1) as f64 * self.block_s;
        let audio_end_s = if token_end - token_start == self.tokens_per_block {
            n as f64 * self.block_s
        } else {
            token_end as f64 / self.frame_rate
        };
        DecoderChunk {
            n,
            token_start,
            token_end,
            audio_start_s,
            audio_end_s,
            prompt_end_s: audio_start_s,
        }
    }
}

pub fn min_tokens_for_first_audio(cfg: &DecoderConfig) -> usize {
    cfg.min_tokens_for_first_audio()
}

/// One decoder step. The prompt always starts at 0 s and ends where this
/// chunk's audio begins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoderChunk {
    pub n: usize,
    pub token_start: usize,
    pub token_end: usize,
    pub audio_start_s: f64,
    pub audio_end_s: f64,
    pub prompt_end_s: f64,
}

impl DecoderChunk {
    pub fn len(&self) -> usize {
        self.token_end - self.token_start
    }

    pub fn is_empty(&self) -> bool {
        self.token_end == self.token_start
    }

    pub fn token_span(&self) -> std::ops::Range<usize> {
        self.token_start..self.token_end
    }

    pub fn audio_span(&self) -> (f64, f64) {
        (self.audio_start_s, self.audio_end_s)
    }

    pub fn prompt_span(&self) -> (f64, f64) {
        (0.0, self.prompt_end_s)
    }
}

/// Full schedule for a known number of tokens; the last chunk may be short.
pub fn plan_chunks(total_tokens: usize, cfg: &DecoderConfig) -> Vec<DecoderChunk> {
    let count = total_tokens.div_ceil(cfg.tokens_per_block);
    (1..=count).map(|n| cfg.chunk(n, total_tokens)).collect()
}

pub fn plan_to_json(plan: &[DecoderChunk]) -> Result<String> {
    Ok(serde_json::to_string_pretty(plan)?)
}

pub fn plan_from_json(text: &str) -> Result<Vec<DecoderChunk>> {
    Ok(serde_json::from_str(text)?)
}

/// Incremental form of [`plan_chunks`]: buffers tokens as the language model
/// produces them and releases a chunk each time a full block is available.
#[derive(Debug, Clone)]
pub struct StreamingDecoder {
    cfg: DecoderConfig,
    tokens: Vec<u32>,
    emitted: usize,
    flushed: bool,
}

impl StreamingDecoder {
    pub fn new(cfg: DecoderConfig) -> Self {
        Self {
            cfg,
            tokens: Vec::new(),
            emitted: 0,
            flushed: false,
        }
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.cfg
    }

    /// Every token received so far.
    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    pub fn chunk_tokens(&self, chunk: &DecoderChunk) -> &[u32] {
        &self.tokens[chunk.token_span()]
    }

    /// Tokens received but not yet part of an emitted chunk.
    pub fn buffered(&self) -> usize {
        self.tokens.len() - self.emitted * self.cfg.tokens_per_block
    }

    pub fn is_flushed(&self) -> bool {
        self.flushed
    }

    pub fn feed(&mut self, new_tokens: &[u32]) -> Result<Vec<DecoderChunk>> {
        if self.flushed {
            return Err(Error::DecoderFlushed);
        }
        self.tokens.extend_from_slice(new_tokens);
        let complete = self.tokens.len() / self.cfg.tokens_per_block;
        let ready = (self.emitted + 1..=complete)
            .map(|n| self.cfg.chunk(n, self.tokens.len()))
            .collect();
        self.emitted = complete;
        Ok(ready)
    }

    /// Ends the stream, releasing a trailing partial chunk if any.
    pub fn flush(&mut self) -> Option<DecoderChunk> {
        if self.flushed {
            return None;
        }
        self.flushed = true;
        if self.buffered() == 0 {
            return None;
        }
        self.emitted += 1;
        Some(self.cfg.chunk(self.emitted, self.tokens.len()))
    }
}
