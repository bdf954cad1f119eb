//! Rewriting translated-style text into original-style text without
//! parallel data.
//!
//! The pipeline mines pseudo-parallel `(tr, og)` pairs from comparable
//! corpora with the model's own representations ([`spe`]), trains an
//! encoder-decoder on them, and optionally adds an unsupervised objective
//! (target-style language-model loss plus semantic similarity over
//! Gumbel-Softmax relaxed outputs, see [`losses`]). Model selection is fully
//! unsupervised ([`trainer`]) and [`evalsuite`] scores the result.

pub mod annindex;
pub mod autograd;
pub mod corpus;
pub mod evalsuite;
pub mod losses;
pub mod net;
pub mod spe;
pub mod synth;
pub mod tensor;
pub mod trainer;
