//! Joint expert distillation over cached embeddings.
//!
//! Per-dataset students (an adjustment module plus a classification head over
//! one expert's feature segment) and per-dataset teacher ensembles (a linear
//! meta-classifier over all segments) are trained together with a single
//! combined objective. Everything runs on pre-computed, frozen embeddings.
//!
//! Module map:
//!
//! - [`math`]: dense tensors, layer kernels with hand-written backward passes,
//!   AdamW and a finite-difference gradient checker.
//! - [`store`]: the on-disk embedding cache.
//! - [`model`]: adjustment modules, students, teachers, initialization.
//! - [`loss`]: classification, hinge and distillation losses and the combined
//!   objective.
//! - [`train`]: batching, the joint training loop, checkpoints, ablations.
//! - [`metrics`]: acc@k, mAP, reports and curves.
//! - [`synth`]: synthetic multi-dataset worlds and linear expert oracles.

// `!(x > 0.0)` style checks are deliberate: they reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod loss;
pub mod math;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod store;
pub mod synth;
pub mod train;

pub use error::{Error, Result, StoreError};
