//! Systems mechanics of an end-to-end streaming spoken chatbot.
//!
//! The crate covers everything around the neural networks that can be
//! checked without them:
//!
//! - [`vq`]: nearest-neighbour codebook with EMA learning, dead-code reset
//!   and bitrate accounting for single-codebook speech tokenizers.
//! - [`framing`]: frame-rate token counting, block-causal attention masks
//!   and a causal 1-D convolution reference.
//! - [`template`]: the interleaved text/speech output layout ("streaming
//!   thoughts") and its inverse.
//! - [`decoder`]: the chunked streaming speech-decoder schedule.
//! - [`latency`]: the analytic first-audio latency model.
//! - [`mixture`]: pre-training token budget planning.
//! - [`sft`]: dual-objective loss masks for supervised fine-tuning.
//! - [`sim`]: a deterministic discrete-event simulator with mock
//!   tokenizer, language model and vocoder.

pub mod decoder;
pub mod error;
pub mod framing;
pub mod latency;
pub mod mixture;
pub mod sft;
pub mod sim;
pub mod template;
pub mod vq;

pub use error::{Error, Result};
