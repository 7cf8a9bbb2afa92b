//! Deterministic discrete-event simulation of the speech-in/speech-out loop.
//!
//! Mock components stand in for the neural models:
//!
//! - [`MockTokenizer`] hashes fixed-length frames of a synthetic waveform into
//!   speech token ids, one tokenizer block at a time.
//! - [`MockLm`] emits a scripted answer in the interleaved template.
//! - [`MockVocoder`] renders each speech token as `1 / frame_rate` seconds of
//!   a tone keyed by the token id.
//!
//! Time is simulated, not measured, and starts when the user stops speaking.
//! The stages run as in the latency model: the last tokenizer block, the
//! prefill, token-by-token decoding, and chunked speech decoding on a single
//! vocoder that processes chunks in order. Decoding token `k` (1-based)
//! completes `decode.cost(k)` seconds after the prefill finishes.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::decoder::{DecoderChunk, StreamingDecoder};
use crate::error::{Error, Result};
use crate::framing::frames_in;
use crate::latency::{first_chunk_decode_tokens, LatencyScenario};
use crate::template::{interleave, validate, Modality, TaggedToken, TemplateConfig};

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;
pub const SPEECH_VOCAB: u32 = 16_384;
pub const TEXT_VOCAB: u32 = 151_000;

fn fnv1a(seed: u64, words: impl IntoIterator<Item = u32>) -> u64 {
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed;
    for w in words {
        for b in w.to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(PRIME);
        }
    }
    h
}

/// Deterministic two-tone waveform standing in for the user's voice.
pub fn synth_user_speech(duration_s: f64, sample_rate: u32, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f1: f64 = rng.random_range(90.0..250.0);
    let f2: f64 = rng.random_range(500.0..2500.0);
    let n = (duration_s * f64::from(sample_rate)).floor() as usize;
    (0..n)
        .map(|i| {
            let t = i as f64 / f64::from(sample_rate);
            (0.6 * (std::f64::consts::TAU * f1 * t).sin() + 0.2 * (std::f64::consts::TAU * f2 * t).sin())
                as f32
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct MockTokenizer {
    pub frame_rate: f64,
    pub block_s: f64,
    pub sample_rate: u32,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenized {
    pub tokens: Vec<u32>,
    pub blocks: usize,
}

impl MockTokenizer {
    /// Streams `samples` (which cover `duration_s` seconds) through the
    /// tokenizer block by block. Only whole frames produce tokens.
    pub fn tokenize(&self, samples: &[f32], duration_s: f64) -> Result<Tokenized> {
        let frames = frames_in(duration_s, self.frame_rate)?;
        let sr = f64::from(self.sample_rate);
        let frame_end = |i: usize| ((i as f64 * sr / self.frame_rate).floor() as usize).min(samples.len());
        let block_len = ((self.block_s * sr).round() as usize).max(1);
        let mut tokens = Vec::with_capacity(frames);
        let mut blocks = 0;
        let mut start = 0;
        while tokens.len() < frames || start < samples.len() {
            let end = (start + block_len).min(samples.len());
            blocks += 1;
            // frames that finish inside the audio received so far
            while tokens.len() < frames && (frame_end(tokens.len() + 1) <= end || end == samples.len()) {
                let i = tokens.len();
                let frame = &samples[frame_end(i)..frame_end(i + 1)];
                let h = fnv1a(self.seed, frame.iter().map(|s| s.to_bits()));
                tokens.push((h % u64::from(SPEECH_VOCAB)) as u32);
            }
            if end == samples.len() {
                break;
            }
            start = end;
        }
        Ok(Tokenized { tokens, blocks })
    }
}

/// Answer content for the mock language model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Script {
    pub a_text: Vec<u32>,
    pub a_speech: Vec<u32>,
}

impl Script {
    /// Three template periods of pseudo-random ids derived from the prompt,
    /// stretched if one decoder block exceeds a speech block.
    pub fn generate(prompt: &[u32], template: &TemplateConfig, tokens_per_block: usize, seed: u64) -> Self {
        let periods = 3.max(tokens_per_block.div_ceil(template.speech_chunk) + 1);
        let h = fnv1a(seed, prompt.iter().copied());
        let mut rng = ChaCha8Rng::seed_from_u64(h);
        Script {
            a_text: (0..periods * template.text_chunk)
                .map(|_| rng.random_range(0..TEXT_VOCAB))
                .collect(),
            a_speech: (0..periods * template.speech_chunk)
                .map(|_| rng.random_range(0..SPEECH_VOCAB))
                .collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MockLm {
    pub template: TemplateConfig,
    pub script: Script,
}

impl MockLm {
    pub fn stream(&self) -> Vec<TaggedToken> {
        interleave(&self.script.a_text, &self.script.a_speech, &self.template)
    }
}

#[derive(Debug, Clone)]
pub struct MockVocoder {
    sample_rate: u32,
    samples_per_token: usize,
}

impl MockVocoder {
    /// Fails unless each token maps to a whole number of samples.
    pub fn new(sample_rate: u32, frame_rate: f64) -> Result<Self> {
        let spt = f64::from(sample_rate) / frame_rate;
        if spt.fract() != 0.0 || spt < 1.0 {
            return Err(Error::InvalidConfig(format!(
                "{sample_rate} Hz audio does not divide into {frame_rate} tokens/s"
            )));
        }
        Ok(Self {
            sample_rate,
            samples_per_token: spt as usize,
        })
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn samples_per_token(&self) -> usize {
        self.samples_per_token
    }

    pub fn synthesize(&self, tokens: &[u32]) -> Vec<f32> {
        let sr = f64::from(self.sample_rate);
        let mut out = Vec::with_capacity(tokens.len() * self.samples_per_token);
        for &id in tokens {
            let freq = 110.0 + f64::from(id % 64) * 15.0;
            out.extend((0..self.samples_per_token).map(|i| {
                (0.25 * (std::f64::consts::TAU * freq * i as f64 / sr).sin()) as f32
            }));
        }
        out
    }
}

/// A latency scenario plus what the mocks need to run it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    #[serde(flatten)]
    pub latency: LatencyScenario,
    /// Answer content; generated from the prompt and seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<Script>,
    #[serde(default = "default_sample_rate")]
    pub sample_rate: u32,
}

fn default_sample_rate() -> u32 {
    DEFAULT_SAMPLE_RATE
}

impl From<LatencyScenario> for SimScenario {
    fn from(latency: LatencyScenario) -> Self {
        Self {
            latency,
            script: None,
            sample_rate: DEFAULT_SAMPLE_RATE,
        }
    }
}

impl SimScenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let scenario: Self = serde_json::from_str(text)?;
        scenario.latency.validate()?;
        Ok(scenario)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Tokenize,
    Prefill,
    Decode,
    ChunkReady,
    AudioOut,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Tokenize => "tokenize",
            Stage::Prefill => "prefill",
            Stage::Decode => "decode",
            Stage::ChunkReady => "chunk_ready",
            Stage::AudioOut => "audio_out",
        }
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "tokenize" => Stage::Tokenize,
            "prefill" => Stage::Prefill,
            "decode" => Stage::Decode,
            "chunk_ready" => Stage::ChunkReady,
            "audio_out" => Stage::AudioOut,
            other => return Err(Error::Parse(format!("unknown stage {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub t: f64,
    pub stage: Stage,
    pub payload: Value,
}

#[derive(Debug, Clone)]
pub struct SimRun {
    pub events: Vec<TraceEvent>,
    pub prompt_tokens: usize,
    pub speech_tokens: usize,
    pub audio_samples: usize,
    pub sample_rate: u32,
}

impl SimRun {
    /// Timestamp of the first audio output.
    pub fn first_audio(&self) -> Option<f64> {
        self.events
            .iter()
            .find(|e| e.stage == Stage::AudioOut)
            .map(|e| e.t)
    }

    /// Seconds of synthesized audio across all chunks.
    pub fn audio_seconds(&self) -> f64 {
        self.audio_samples as f64 / f64::from(self.sample_rate)
    }
}

enum Action {
    TokenizeDone,
    PrefillDone,
    Token(usize),
    AudioOut { chunk: DecoderChunk, samples: usize, checksum: u64 },
}

struct Scheduled {
    t: f64,
    seq: u64,
    action: Action,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        self.t.total_cmp(&other.t).then(self.seq.cmp(&other.seq))
    }
}

#[derive(Default)]
struct Queue {
    heap: BinaryHeap<Reverse<Scheduled>>,
    seq: u64,
}

impl Queue {
    fn push(&mut self, t: f64, action: Action) {
        self.seq += 1;
        self.heap.push(Reverse(Scheduled {
            t,
            seq: self.seq,
            action,
        }));
    }

    fn pop(&mut self) -> Option<Scheduled> {
        self.heap.pop().map(|Reverse(s)| s)
    }
}

fn chunk_payload(chunk: &DecoderChunk) -> Value {
    serde_json::to_value(chunk).expect("chunk serializes")
}

/// Runs one scenario to completion and returns its trace.
pub fn run_scenario(scenario: &SimScenario, seed: u64) -> Result<SimRun> {
    let sc = &scenario.latency;
    sc.validate()?;
    let costs = &sc.costs;
    let tpb = sc.decoder.tokens_per_block();
    let vocoder = MockVocoder::new(scenario.sample_rate, sc.frame.frame_rate)?;

    let tokenizer = MockTokenizer {
        frame_rate: sc.frame.frame_rate,
        block_s: sc.frame.tokenizer_block_s,
        sample_rate: scenario.sample_rate,
        seed,
    };
    let audio = synth_user_speech(sc.user_speech_s, scenario.sample_rate, seed);
    let prompt = tokenizer.tokenize(&audio, sc.user_speech_s)?;

    let script = match &scenario.script {
        Some(s) => s.clone(),
        None => Script::generate(&prompt.tokens, &sc.template, tpb, seed),
    };
    let first_chunk_tokens = first_chunk_decode_tokens(&sc.template, &sc.decoder);
    let text_needed = first_chunk_tokens - tpb;
    if script.a_speech.len() < tpb || script.a_text.len() < text_needed {
        return Err(Error::InvalidConfig(format!(
            "script needs at least {text_needed} text and {tpb} speech tokens before the first \
             audio, got {} and {}",
            script.a_text.len(),
            script.a_speech.len()
        )));
    }
    let lm = MockLm {
        template: sc.template,
        script,
    };
    let stream = lm.stream();
    validate(&stream, &sc.template)?;

    let mut decoder = StreamingDecoder::new(sc.decoder);
    let mut queue = Queue::default();
    let mut events = Vec::new();
    let mut decode_start = 0.0;
    let mut vocoder_free = 0.0;
    let mut audio_samples = 0;

    queue.push(costs.tokenize.cost(1)?, Action::TokenizeDone);
    while let Some(Scheduled { t, action, .. }) = queue.pop() {
        match action {
            Action::TokenizeDone => {
                events.push(TraceEvent {
                    t,
                    stage: Stage::Tokenize,
                    payload: json!({"blocks": prompt.blocks, "tokens": prompt.tokens.len()}),
                });
                queue.push(
                    t + costs.prefill.cost(prompt.tokens.len())?,
                    Action::PrefillDone,
                );
            }
            Action::PrefillDone => {
                events.push(TraceEvent {
                    t,
                    stage: Stage::Prefill,
                    payload: json!({"tokens": prompt.tokens.len()}),
                });
                decode_start = t;
                if !stream.is_empty() {
                    queue.push(decode_start + costs.decode.cost(1)?, Action::Token(0));
                }
            }
            Action::Token(k) => {
                let tok = stream[k];
                events.push(TraceEvent {
                    t,
                    stage: Stage::Decode,
                    payload: json!({"pos": k, "kind": tok.kind, "id": tok.id}),
                });
                if k + 1 < stream.len() {
                    queue.push(decode_start + costs.decode.cost(k + 2)?, Action::Token(k + 1));
                }
                let mut ready = if tok.kind == Modality::Speech {
                    decoder.feed(&[tok.id])?
                } else {
                    Vec::new()
                };
                if k + 1 == stream.len() {
                    ready.extend(decoder.flush());
                }
                for chunk in ready {
                    events.push(TraceEvent {
                        t,
                        stage: Stage::ChunkReady,
                        payload: chunk_payload(&chunk),
                    });
                    let start = if vocoder_free > t { vocoder_free } else { t };
                    let done = start + costs.speech_decode.cost(chunk.len())?;
                    vocoder_free = done;
                    let pcm = vocoder.synthesize(decoder.chunk_tokens(&chunk));
                    let checksum = fnv1a(0, pcm.iter().map(|s| s.to_bits()));
                    queue.push(
                        done,
                        Action::AudioOut {
                            chunk,
                            samples: pcm.len(),
                            checksum,
                        },
                    );
                }
            }
            Action::AudioOut {
                chunk,
                samples,
                checksum,
            } => {
                audio_samples += samples;
                events.push(TraceEvent {
                    t,
                    stage: Stage::AudioOut,
                    payload: json!({
                        "n": chunk.n,
                        "samples": samples,
                        "audio_start_s": chunk.audio_start_s,
                        "audio_end_s": chunk.audio_end_s,
                        "checksum": format!("{checksum:016x}"),
                    }),
                });
            }
        }
    }

    Ok(SimRun {
        events,
        prompt_tokens: prompt.tokens.len(),
        speech_tokens: decoder.tokens().len(),
        audio_samples,
        sample_rate: vocoder.sample_rate(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceFormat {
    Json,
    Csv,
}

impl FromStr for TraceFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(TraceFormat::Json),
            "csv" => Ok(TraceFormat::Csv),
            other => Err(Error::Parse(format!("unknown trace format {other:?}"))),
        }
    }
}

/// Line-delimited JSON, or CSV with header `t,stage,payload` where the
/// payload column holds compact JSON.
pub fn write_trace<W: Write>(w: W, events: &[TraceEvent], format: TraceFormat) -> Result<()> {
    match format {
        TraceFormat::Json => {
            let mut w = w;
            for e in events {
                serde_json::to_writer(&mut w, e)?;
                w.write_all(b"\n").map_err(|e| Error::io("<trace>", e))?;
            }
            w.flush().map_err(|e| Error::io("<trace>", e))
        }
        TraceFormat::Csv => {
            let mut writer = csv::Writer::from_writer(w);
            writer.write_record(["t", "stage", "payload"])?;
            for e in events {
                writer.write_record([e.t.to_string(), e.stage.as_str().to_string(), e.payload.to_string()])?;
            }
            writer.flush().map_err(|e| Error::io("<trace>", e))
        }
    }
}

pub fn parse_trace<R: BufRead>(r: R, format: TraceFormat) -> Result<Vec<TraceEvent>> {
    match format {
        TraceFormat::Json => {
            let mut events = Vec::new();
            for line in r.lines() {
                let line = line.map_err(|e| Error::io("<trace>", e))?;
                if !line.trim().is_empty() {
                    events.push(serde_json::from_str(&line)?);
                }
            }
            Ok(events)
        }
        TraceFormat::Csv => {
            let mut reader = csv::Reader::from_reader(r);
            let header = reader.headers()?.clone();
            if header.iter().collect::<Vec<_>>() != ["t", "stage", "payload"] {
                return Err(Error::Parse(format!("unexpected trace header {header:?}")));
            }
            reader
                .records()
                .map(|rec| {
                    let rec = rec?;
                    let t = rec[0]
                        .parse()
                        .map_err(|_| Error::Parse(format!("bad time {:?}", &rec[0])))?;
                    Ok(TraceEvent {
                        t,
                        stage: rec[1].parse()?,
                        payload: serde_json::from_str(&rec[2])?,
                    })
                })
                .collect()
        }
    }
}

pub fn emit_trace(events: &[TraceEvent], format: TraceFormat, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_trace(std::io::BufWriter::new(file), events, format).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn read_trace(path: impl AsRef<Path>, format: TraceFormat) -> Result<Vec<TraceEvent>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_trace(std::io::BufReader::new(file), format)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latency::{total_latency, StageCost, StageCosts};

    fn scenario(secs: f64, costs: StageCosts) -> SimScenario {
        LatencyScenario::new(secs, costs).into()
    }

    #[test]
    fn zero_cost_first_audio_at_origin() {
        let run = run_scenario(&scenario(4.0, StageCosts::zero()), 1).unwrap();
        assert_eq!(run.first_audio(), Some(0.0));
    }

    #[test]
    fn affine_matches_latency_model() {
        let s = scenario(4.0, StageCosts::uniform(StageCost::affine(0.0, 0.01)));
        let run = run_scenario(&s, 3).unwrap();
        let model = total_latency(&s.latency).unwrap();
        assert_eq!(run.first_audio(), Some(model.total));
        assert!((model.total - 0.84).abs() < 1e-12);
        assert_eq!(run.prompt_tokens, 50);
    }

    #[test]
    fn tokenizer_counts_whole_frames_blockwise() {
        let tok = MockTokenizer {
            frame_rate: 12.5,
            block_s: 0.8,
            sample_rate: 16_000,
            seed: 5,
        };
        let audio = synth_user_speech(2.5, 16_000, 5);
        let out = tok.tokenize(&audio, 2.5).unwrap();
        assert_eq!(out.tokens.len(), 31);
        assert_eq!(out.blocks, 4);
        assert!(out.tokens.iter().all(|&t| t < SPEECH_VOCAB));
        assert_eq!(tok.tokenize(&audio, 2.5).unwrap(), out);
        assert_eq!(tok.tokenize(&[], 0.0).unwrap().tokens.len(), 0);
    }

    #[test]
    fn vocoder_sample_counts() {
        let v = MockVocoder::new(16_000, 12.5).unwrap();
        assert_eq!(v.samples_per_token(), 1280);
        assert_eq!(v.synthesize(&[1, 2, 3]).len(), 3840);
        assert!(MockVocoder::new(16_000, 12.3).is_err());
    }

    #[test]
    fn short_script_rejected() {
        let mut s = scenario(1.0, StageCosts::zero());
        s.script = Some(Script {
            a_text: vec![1; 12],
            a_speech: vec![1; 30],
        });
        assert!(matches!(run_scenario(&s, 0), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn empty_trace_csv_is_header_only() {
        let mut buf = Vec::new();
        write_trace(&mut buf, &[], TraceFormat::Csv).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "t,stage,payload\n");
        let mut buf = Vec::new();
        write_trace(&mut buf, &[], TraceFormat::Json).unwrap();
        assert!(buf.is_empty());
    }

    #[test]
    fn trace_round_trips_in_both_formats() {
        let events = vec![
            TraceEvent {
                t: 0.1,
                stage: Stage::Tokenize,
                payload: json!({"blocks": 5, "tokens": 50}),
            },
            TraceEvent {
                t: 1.0 / 3.0,
                stage: Stage::Decode,
                payload: json!({"pos": 0, "kind": "text", "id": 7}),
            },
            TraceEvent {
                t: 0.84,
                stage: Stage::AudioOut,
                payload: json!({"n": 1, "audio_end_s": 0.8, "note": "a,\"quoted\" value"}),
            },
        ];
        for format in [TraceFormat::Json, TraceFormat::Csv] {
            let mut buf = Vec::new();
            write_trace(&mut buf, &events, format).unwrap();
            assert_eq!(parse_trace(&buf[..], format).unwrap(), events, "{format:?}");
        }
    }
}
