//! Runs the guide's code blocks as doctests. One module per chapter keeps
//! failures traceable to their page.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/tokens.md")]
pub mod tokens {}
#[doc = include_str!("../../../book/src/framing.md")]
pub mod framing {}
#[doc = include_str!("../../../book/src/template.md")]
pub mod template {}
#[doc = include_str!("../../../book/src/decoding.md")]
pub mod decoding {}
#[doc = include_str!("../../../book/src/latency.md")]
pub mod latency {}
#[doc = include_str!("../../../book/src/mixture.md")]
pub mod mixture {}
#[doc = include_str!("../../../book/src/sft.md")]
pub mod sft {}
#[doc = include_str!("../../../book/src/simulator.md")]
pub mod simulator {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
