//! Analytic first-audio latency.
//!
//! Time from the end of the user's speech to the first synthesized audio is
//! the sum of four stages:
//!
//! | stage          | cost evaluated at                                    |
//! |----------------|------------------------------------------------------|
//! | tokenize       | one tokenizer block (the streaming tokenizer has     |
//! |                | already consumed everything before the last block)   |
//! | prefill        | `floor(frame_rate * user_speech_s)` prompt tokens    |
//! | decode         | tokens generated until the first decoder block of    |
//! |                | speech exists (13 + 10 = 23 with the defaults)       |
//! | speech decode  | one decoder block of speech tokens                   |
//!
//! Stage costs are user-supplied functions of a unit count; see [`StageCost`].

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decoder::DecoderConfig;
use crate::error::{Error, Result};
use crate::framing::{frames_in, positive, FrameConfig};
use crate::template::TemplateConfig;

/// Seconds taken to process `n` units (tokens or blocks).
///
/// Every variant is nonnegative and nondecreasing in `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", try_from = "RawStageCost")]
pub enum StageCost {
    Constant { seconds: f64 },
    Affine { base_s: f64, per_unit_s: f64 },
    /// Piecewise-linear through `(units, seconds)` points sorted by units.
    Table { points: Vec<(f64, f64)> },
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum RawStageCost {
    Constant { seconds: f64 },
    Affine { base_s: f64, per_unit_s: f64 },
    Table { points: Vec<(f64, f64)> },
}

impl TryFrom<RawStageCost> for StageCost {
    type Error = Error;

    fn try_from(raw: RawStageCost) -> Result<Self> {
        let cost = match raw {
            RawStageCost::Constant { seconds } => StageCost::Constant { seconds },
            RawStageCost::Affine { base_s, per_unit_s } => StageCost::Affine { base_s, per_unit_s },
            RawStageCost::Table { points } => StageCost::Table { points },
        };
        cost.validate()?;
        Ok(cost)
    }
}

fn nonneg(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "{name} must be finite and nonnegative, got {v}"
        )))
    }
}

impl StageCost {
    pub const ZERO: StageCost = StageCost::Constant { seconds: 0.0 };

    pub fn constant(seconds: f64) -> Self {
        StageCost::Constant { seconds }
    }

    pub fn affine(base_s: f64, per_unit_s: f64) -> Self {
        StageCost::Affine { base_s, per_unit_s }
    }

    pub fn table(points: Vec<(f64, f64)>) -> Result<Self> {
        let cost = StageCost::Table { points };
        cost.validate()?;
        Ok(cost)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            StageCost::Constant { seconds } => nonneg("constant cost", *seconds),
            StageCost::Affine { base_s, per_unit_s } => {
                nonneg("affine base_s", *base_s)?;
                nonneg("affine per_unit_s", *per_unit_s)
            }
            StageCost::Table { points } => {
                if points.is_empty() {
                    return Err(Error::InvalidConfig("cost table has no points".into()));
                }
                for &(u, s) in points {
                    nonneg("table units", u)?;
                    nonneg("table seconds", s)?;
                }
                for w in points.windows(2) {
                    if w[1].0 <= w[0].0 {
                        return Err(Error::InvalidConfig(format!(
                            "cost table units must strictly increase ({} then {})",
                            w[0].0, w[1].0
                        )));
                    }
                    if w[1].1 < w[0].1 {
                        return Err(Error::InvalidConfig(format!(
                            "cost table seconds must not decrease ({} then {})",
                            w[0].1, w[1].1
                        )));
                    }
                }
                Ok(())
            }
        }
    }

    pub fn cost(&self, units: usize) -> Result<f64> {
        let n = units as f64;
        match self {
            StageCost::Constant { seconds } => Ok(*seconds),
            StageCost::Affine { base_s, per_unit_s } => Ok(base_s + per_unit_s * n),
            StageCost::Table { points } => {
                let (first, last) = (points[0], points[points.len() - 1]);
                if n < first.0 || n > last.0 {
                    return Err(Error::CostOutOfRange {
                        units: n,
                        min: first.0,
                        max: last.0,
                    });
                }
                // first point with units >= n
                let i = points.partition_point(|&(u, _)| u < n);
                let (u1, s1) = points[i];
                if u1 == n || i == 0 {
                    return Ok(s1);
                }
                let (u0, s0) = points[i - 1];
                Ok(s0 + (s1 - s0) * (n - u0) / (u1 - u0))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageCosts {
    pub tokenize: StageCost,
    pub prefill: StageCost,
    pub decode: StageCost,
    pub speech_decode: StageCost,
}

impl StageCosts {
    pub fn uniform(cost: StageCost) -> Self {
        Self {
            tokenize: cost.clone(),
            prefill: cost.clone(),
            decode: cost.clone(),
            speech_decode: cost,
        }
    }

    pub fn zero() -> Self {
        Self::uniform(StageCost::ZERO)
    }

    fn validate(&self) -> Result<()> {
        self.tokenize.validate()?;
        self.prefill.validate()?;
        self.decode.validate()?;
        self.speech_decode.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyScenario {
    pub user_speech_s: f64,
    #[serde(flatten)]
    pub frame: FrameConfig,
    #[serde(default)]
    pub template: TemplateConfig,
    #[serde(default)]
    pub decoder: DecoderConfig,
    pub costs: StageCosts,
}

impl LatencyScenario {
    /// Default frame, template and decoder settings.
    pub fn new(user_speech_s: f64, costs: StageCosts) -> Self {
        Self {
            user_speech_s,
            frame: FrameConfig::default(),
            template: TemplateConfig::default(),
            decoder: DecoderConfig::default(),
            costs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        nonneg("user_speech_s", self.user_speech_s)?;
        self.frame.validate()?;
        positive("decoder block_s", self.decoder.block_s())?;
        if self.decoder.frame_rate() != self.frame.frame_rate {
            return Err(Error::InvalidConfig(format!(
                "decoder frame rate {} differs from scenario frame rate {}",
                self.decoder.frame_rate(),
                self.frame.frame_rate
            )));
        }
        self.costs.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let scenario: Self = serde_json::from_str(text)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Prompt tokens the language model must prefill.
pub fn prefill_token_count(scenario: &LatencyScenario) -> Result<usize> {
    frames_in(scenario.user_speech_s, scenario.frame.frame_rate)
}

/// Tokens the language model must generate before the first decoder block of
/// speech is complete: all text blocks that precede it plus the speech
/// tokens themselves.
pub fn first_chunk_decode_tokens(template: &TemplateConfig, decoder: &DecoderConfig) -> usize {
    template.position_of_speech_token(decoder.tokens_per_block())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyBreakdown {
    pub t_tokenize: f64,
    pub t_prefill: f64,
    pub t_decode: f64,
    pub t_speech_decode: f64,
    pub total: f64,
}

impl LatencyBreakdown {
    pub fn from_stages(t_tokenize: f64, t_prefill: f64, t_decode: f64, t_speech_decode: f64) -> Self {
        Self {
            t_tokenize,
            t_prefill,
            t_decode,
            t_speech_decode,
            total: t_tokenize + t_prefill + t_decode + t_speech_decode,
        }
    }
}

impl fmt::Display for LatencyBreakdown {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows = [
            ("speech tokenize", self.t_tokenize),
            ("llm prefill", self.t_prefill),
            ("llm decode", self.t_decode),
            ("speech decode", self.t_speech_decode),
        ];
        writeln!(f, "{:<16} {:>12}", "stage", "seconds")?;
        for (name, t) in rows {
            writeln!(f, "{name:<16} {t:>12.6}")?;
        }
        write!(f, "{:<16} {:>12.6}", "total", self.total)
    }
}

pub fn total_latency(scenario: &LatencyScenario) -> Result<LatencyBreakdown> {
    scenario.validate()?;
    let costs = &scenario.costs;
    Ok(LatencyBreakdown::from_stages(
        costs.tokenize.cost(1)?,
        costs.prefill.cost(prefill_token_count(scenario)?)?,
        costs
            .decode
            .cost(first_chunk_decode_tokens(&scenario.template, &scenario.decoder))?,
        costs.speech_decode.cost(scenario.decoder.tokens_per_block())?,
    ))
}
