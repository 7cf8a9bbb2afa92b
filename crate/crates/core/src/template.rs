//! Interleaved text/speech output layout.
//!
//! The language model answers in alternating blocks: `text_chunk` text tokens,
//! then `speech_chunk` speech tokens, repeating. With the default 13:26 split
//! the text side always stays ahead of the speech it guides. Concatenating the
//! text-tagged tokens gives the text answer; the speech-tagged tokens give the
//! spoken answer.
//!
//! When either side runs out, the other is emitted contiguously until it is
//! exhausted too.

use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Speech,
}

impl Modality {
    pub fn other(self) -> Self {
        match self {
            Modality::Text => Modality::Speech,
            Modality::Speech => Modality::Text,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Text => "text",
            Modality::Speech => "speech",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawTemplate")]
pub struct TemplateConfig {
    pub text_chunk: usize,
    pub speech_chunk: usize,
}

#[derive(Deserialize)]
struct RawTemplate {
    #[serde(default = "default_text_chunk")]
    text_chunk: usize,
    #[serde(default = "default_speech_chunk")]
    speech_chunk: usize,
}

fn default_text_chunk() -> usize {
    13
}

fn default_speech_chunk() -> usize {
    26
}

impl TryFrom<RawTemplate> for TemplateConfig {
    type Error = Error;

    fn try_from(raw: RawTemplate) -> Result<Self> {
        TemplateConfig::new(raw.text_chunk, raw.speech_chunk)
    }
}

impl Default for TemplateConfig {
    fn default() -> Self {
        Self {
            text_chunk: default_text_chunk(),
            speech_chunk: default_speech_chunk(),
        }
    }
}

impl TemplateConfig {
    pub fn new(text_chunk: usize, speech_chunk: usize) -> Result<Self> {
        if text_chunk == 0 || speech_chunk == 0 {
            return Err(Error::InvalidConfig(format!(
                "template chunks must be >= 1, got {text_chunk}:{speech_chunk}"
            )));
        }
        Ok(Self {
            text_chunk,
            speech_chunk,
        })
    }

    pub fn period(&self) -> usize {
        self.text_chunk + self.speech_chunk
    }

    /// Modality the template assigns to stream position `p`.
    pub fn position_kind(&self, p: usize) -> Modality {
        if p % self.period() < self.text_chunk {
            Modality::Text
        } else {
            Modality::Speech
        }
    }

    /// Stream length at which the `n`-th speech token (1-based) has been
    /// emitted, assuming text never runs out.
    pub fn position_of_speech_token(&self, n: usize) -> usize {
        if n == 0 {
            return 0;
        }
        let full_blocks = (n - 1) / self.speech_chunk;
        let within = (n - 1) % self.speech_chunk + 1;
        full_blocks * self.period() + self.text_chunk + within
    }
}

/// Free-function form of [`TemplateConfig::position_kind`].
pub fn position_kind(cfg: &TemplateConfig, p: usize) -> Modality {
    cfg.position_kind(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedToken {
    pub kind: Modality,
    pub id: u32,
}

impl TaggedToken {
    pub fn text(id: u32) -> Self {
        Self {
            kind: Modality::Text,
            id,
        }
    }

    pub fn speech(id: u32) -> Self {
        Self {
            kind: Modality::Speech,
            id,
        }
    }
}

pub fn interleave(text: &[u32], speech: &[u32], cfg: &TemplateConfig) -> Vec<TaggedToken> {
    let mut out = Vec::with_capacity(text.len() + speech.len());
    let (mut ti, mut si) = (0, 0);
    while ti < text.len() || si < speech.len() {
        let want = cfg.position_kind(out.len());
        let take_text = match want {
            Modality::Text => ti < text.len(),
            Modality::Speech => si >= speech.len(),
        };
        if take_text {
            out.push(TaggedToken::text(text[ti]));
            ti += 1;
        } else {
            out.push(TaggedToken::speech(speech[si]));
            si += 1;
        }
    }
    out
}

/// Checks that `stream` follows the template, allowing one modality to stop
/// early and the other to continue alone.
pub fn validate(stream: &[TaggedToken], cfg: &TemplateConfig) -> Result<()> {
    let Some(deviation) = stream
        .iter()
        .enumerate()
        .position(|(p, tok)| tok.kind != cfg.position_kind(p))
    else {
        return Ok(());
    };
    // Past the first deviation only the deviating modality may appear.
    let found = stream[deviation].kind;
    if stream[deviation..].iter().all(|t| t.kind == found) {
        Ok(())
    } else {
        Err(Error::TemplateViolation {
            position: deviation,
            expected: found.other(),
            found,
        })
    }
}

/// Splits a validated stream into its text and speech id sequences.
pub fn deinterleave(stream: &[TaggedToken], cfg: &TemplateConfig) -> Result<(Vec<u32>, Vec<u32>)> {
    validate(stream, cfg)?;
    let mut text = Vec::new();
    let mut speech = Vec::new();
    for tok in stream {
        match tok.kind {
            Modality::Text => text.push(tok.id),
            Modality::Speech => speech.push(tok.id),
        }
    }
    Ok((text, speech))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamRecord {
    pub pos: usize,
    pub kind: Modality,
    pub id: u32,
}

/// Writes one `{pos, kind, id}` JSON object per line.
pub fn write_stream<W: Write>(mut w: W, stream: &[TaggedToken]) -> Result<()> {
    for (pos, tok) in stream.iter().enumerate() {
        let record = StreamRecord {
            pos,
            kind: tok.kind,
            id: tok.id,
        };
        serde_json::to_writer(&mut w, &record)?;
        w.write_all(b"\n").map_err(|e| Error::io("<stream>", e))?;
    }
    Ok(())
}

pub fn read_stream<R: BufRead>(r: R) -> Result<Vec<TaggedToken>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line.map_err(|e| Error::io("<stream>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: StreamRecord = serde_json::from_str(&line)?;
        if record.pos != out.len() {
            return Err(Error::Parse(format!(
                "stream record out of order: expected pos {}, got {}",
                out.len(),
                record.pos
            )));
        }
        out.push(TaggedToken {
            kind: record.kind,
            id: record.id,
        });
    }
    Ok(out)
}
