//! Online learning for haphazard input streams: binary classification where
//! the set of observed features changes from one instance to the next.
//!
//! The engine keeps one small recurrent cell per feature ever seen, plus a
//! shared long-term memory aggregated across whatever features are present.
//! Instances arrive one at a time; the model predicts, the label is revealed,
//! and a single truncated backward pass updates only the cells that fired.
//!
//! Modules:
//! - [`numerics`]: dense kernels, activations, AdamW, seeded RNG, finite
//!   differences.
//! - [`cells`]: the per-feature recurrent cell zoo (time-aware LSTMs, decay
//!   LSTM, vanilla LSTM, GRU, plain RNN) with exact analytic gradients.
//! - [`pool`]: the per-feature cell pool, aggregation, prediction head,
//!   online training step, capacity management, checkpointing.
//! - [`normalize`]: streaming per-feature normalization (Welford statistics).
//! - [`streams`]: dataset readers, masking, and feature-availability
//!   schedules that turn dense datasets into haphazard streams.
//! - [`eval`]: prequential evaluation and ranking metrics.
//! - [`baselines`]: dense-input LSTM over imputed vectors for comparison.

pub mod baselines;
pub mod cells;
pub mod checkpoint;
pub mod eval;
pub mod normalize;
pub mod numerics;
pub mod pool;
pub mod streams;
