//! Supervised fine-tuning sequences with per-modality loss masks.
//!
//! A turn is laid out as the user's speech (followed by its transcript, if
//! present) and then the interleaved answer. Loss is only ever taken on the
//! answer. [`split_dual_objective`] derives two copies of one example: one
//! supervising only the text answer, one supervising only the speech answer.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::template::{interleave, Modality, TaggedToken, TemplateConfig};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnSample {
    #[serde(default)]
    pub q_speech: Vec<u32>,
    #[serde(default)]
    pub q_text: Option<Vec<u32>>,
    #[serde(default)]
    pub a_text: Vec<u32>,
    #[serde(default)]
    pub a_speech: Vec<u32>,
}

impl TurnSample {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Segment {
    Input,
    Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentToken {
    pub kind: Modality,
    pub id: u32,
    pub segment: Segment,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub tokens: Vec<SegmentToken>,
    #[serde(rename = "mask")]
    pub loss_mask: Vec<bool>,
}

impl TrainingExample {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn supervised(&self) -> usize {
        self.loss_mask.iter().filter(|&&m| m).count()
    }

    /// Checks the mask length and that no input token carries loss.
    pub fn validate(&self) -> Result<()> {
        if self.tokens.len() != self.loss_mask.len() {
            return Err(Error::LengthMismatch {
                what: "tokens vs loss mask",
                left: self.tokens.len(),
                right: self.loss_mask.len(),
            });
        }
        if let Some(p) = self
            .tokens
            .iter()
            .zip(&self.loss_mask)
            .position(|(t, &m)| m && t.segment == Segment::Input)
        {
            return Err(Error::InvalidConfig(format!(
                "loss on input token at position {p}"
            )));
        }
        Ok(())
    }

    fn with_mask(&self, keep: impl Fn(&SegmentToken) -> bool) -> TrainingExample {
        TrainingExample {
            tokens: self.tokens.clone(),
            loss_mask: self
                .tokens
                .iter()
                .zip(&self.loss_mask)
                .map(|(t, &m)| m && keep(t))
                .collect(),
        }
    }
}

fn input_tokens(turn: &TurnSample) -> impl Iterator<Item = SegmentToken> + '_ {
    let speech = turn.q_speech.iter().map(|&id| SegmentToken {
        kind: Modality::Speech,
        id,
        segment: Segment::Input,
    });
    let text = turn.q_text.iter().flatten().map(|&id| SegmentToken {
        kind: Modality::Text,
        id,
        segment: Segment::Input,
    });
    speech.chain(text)
}

fn output_tokens(turn: &TurnSample, template: &TemplateConfig) -> Result<Vec<TaggedToken>> {
    if turn.a_text.is_empty() && turn.a_speech.is_empty() {
        return Err(Error::EmptyInput("turn has no output tokens"));
    }
    Ok(interleave(&turn.a_text, &turn.a_speech, template))
}

pub fn build_streaming_turn(turn: &TurnSample, template: &TemplateConfig) -> Result<TrainingExample> {
    build_with_history(&[], turn, template)
}

fn build_with_history(
    history: &[SegmentToken],
    turn: &TurnSample,
    template: &TemplateConfig,
) -> Result<TrainingExample> {
    let outputs = output_tokens(turn, template)?;
    let mut tokens: Vec<SegmentToken> = history.to_vec();
    tokens.extend(input_tokens(turn));
    let inputs = tokens.len();
    tokens.extend(outputs.iter().map(|t| SegmentToken {
        kind: t.kind,
        id: t.id,
        segment: Segment::Output,
    }));
    let loss_mask = (0..tokens.len()).map(|i| i >= inputs).collect();
    Ok(TrainingExample { tokens, loss_mask })
}

/// One example per turn. Earlier turns, answers included, become input
/// context, so each example only supervises its own final answer.
pub fn build_conversation(turns: &[TurnSample], template: &TemplateConfig) -> Result<Vec<TrainingExample>> {
    let mut history = Vec::new();
    let mut out = Vec::with_capacity(turns.len());
    for turn in turns {
        let example = build_with_history(&history, turn, template)?;
        history = example
            .tokens
            .iter()
            .map(|t| SegmentToken {
                segment: Segment::Input,
                ..*t
            })
            .collect();
        out.push(example);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DualSplit {
    /// Loss on output text only.
    pub text_focus: TrainingExample,
    /// Loss on output speech only.
    pub speech_focus: TrainingExample,
    /// Set when the example has no supervised text, so `text_focus` trains nothing.
    pub text_focus_empty: bool,
    /// Set when the example has no supervised speech, so `speech_focus` trains nothing.
    pub speech_focus_empty: bool,
}

pub fn split_dual_objective(ex: &TrainingExample) -> Result<DualSplit> {
    ex.validate()?;
    if ex.supervised() == 0 {
        return Err(Error::EmptyInput("example has no output tokens"));
    }
    let text_focus = ex.with_mask(|t| t.kind == Modality::Text);
    let speech_focus = ex.with_mask(|t| t.kind == Modality::Speech);
    Ok(DualSplit {
        text_focus_empty: text_focus.supervised() == 0,
        speech_focus_empty: speech_focus.supervised() == 0,
        text_focus,
        speech_focus,
    })
}

/// Writes one `{tokens, mask}` JSON object per line.
pub fn write_examples<W: Write>(mut w: W, examples: &[TrainingExample]) -> Result<()> {
    for ex in examples {
        serde_json::to_writer(&mut w, ex)?;
        w.write_all(b"\n").map_err(|e| Error::io("<examples>", e))?;
    }
    Ok(())
}

pub fn read_examples<R: BufRead>(r: R) -> Result<Vec<TrainingExample>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line.map_err(|e| Error::io("<examples>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: TrainingExample = serde_json::from_str(&line)?;
        ex.validate()?;
        out.push(ex);
    }
    Ok(out)
}
