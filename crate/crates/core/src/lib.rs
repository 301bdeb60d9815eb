//! Syntax-aware graph encoder for speech synthesis front ends.
//!
//! Text is turned into phonemes ([`textfront`]), a dependency parse into a
//! normalized syntax graph ([`syngraph`]), and a two-layer GCN
//! ([`gcnmath`]) runs over word-pooled phoneme embeddings inside the
//! [`encoder`], which emits per-phoneme Gaussian statistics. [`align`]
//! extracts durations by monotonic alignment search, [`bsp`] is a
//! tile-parallel engine for the GCN forward pass, and [`tensorio`] is the
//! `.fgt` tensor container used by the [`cli`].

pub mod align;
pub mod bsp;
pub mod cli;
pub mod encoder;
pub mod gcnmath;
pub mod syngraph;
pub mod tensorio;
pub mod textfront;
