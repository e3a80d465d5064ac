//! UAV 3D trajectory forecasting with a from-scratch GRU encoder-decoder.
//!
//! The crate covers the full pipeline: parametric trajectory generation
//! (circles and figure-eights in arbitrary 3D planes), resampling and
//! velocity derivation, whitening / max-norm normalization with exact
//! inverses, GRU sequence-to-sequence training via analytic
//! backpropagation through time, evaluation metrics, and a streaming
//! real-time prediction simulator.
//!
//! Velocity-channel models are translation-equivariant in position:
//! differencing removes the absolute position and integration re-anchors
//! predictions at the newest buffered sample, so they keep working far
//! outside the position range seen in training.

// Validation uses negated comparisons (`!(x > 0.0)`) so NaN inputs fail.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod dataset;
pub mod metrics;
pub mod model;
pub mod normalize;
pub mod numerics;
pub mod stream;
pub mod train;
pub mod trajgen;
