//! Sensor-language pretraining at desk scale.
//!
//! The crate covers the whole pipeline: a 26-channel minutely wearable-day
//! data model with a deterministic synthetic generator, a three-level caption
//! generator (statistical, structural, semantic), a word-level tokenizer, a
//! sensor encoder / text encoder / multimodal decoder trained with contrastive
//! and captioning objectives on a small reverse-mode autodiff tape, and the
//! evaluation protocols (zero-shot classification with prompt ensembles,
//! cross-modal retrieval, few-shot linear probing, caption metrics).

pub mod autodiff;
pub mod caption;
pub mod data;
mod error;
pub mod eval;
pub mod model;
pub mod objectives;
pub mod pipeline;
pub mod rng;
pub mod text;
pub mod trainer;

pub use error::{Error, Result};
