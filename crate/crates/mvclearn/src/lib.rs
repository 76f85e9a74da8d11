//! Multi-view contrastive representation learning for 3D lesion volumes.
//!
//! The crate covers the full desk-scale workflow:
//!
//! - [`volume`] — HU windowing, isotropic trilinear resampling, and lesion
//!   cropping of raw CT-style volumes.
//! - [`views`] — deterministic extraction of up to nine fixed-orientation 2D
//!   views per lesion cube (three axis-aligned planes plus six diagonal ones).
//! - [`nn`] — a small trainable core: tensors, a three-conv encoder, an MLP
//!   projector with final ℓ2 normalization, momentum SGD with a step schedule,
//!   and bitwise checkpointing. Every layer has a hand-written backward pass.
//! - [`contrastive`] — the multi-view contrastive objective with two
//!   denominator conventions and analytic gradients.
//! - [`data`] — consensus labeling, manifest filtering, stratified splits,
//!   nested label subsampling, and a seeded synthetic-lesion generator.
//! - [`eval`] — frozen-representation linear probing, fine-tuning,
//!   classification metrics, and embedding-geometry diagnostics.
//! - [`pipeline`] — the pretraining loop: batch assembly, multi-view forward,
//!   loss, backward, optimizer step, logging, resume.
//! - [`cli`] — the `mvclearn` command-line front end.
//!
//! Runnable walkthroughs for each capability live under `examples/`.

pub mod cli;
pub mod contrastive;
pub mod data;
pub mod error;
pub mod eval;
pub mod nn;
pub mod pipeline;
mod util;
pub mod views;
pub mod volume;

pub use error::{Error, Result};
