//! Combining a view adapter with an object adapter.
//!
//! [`merge_linear`] forms a convex combination of the two deltas.
//! [`train_merge`] instead learns one gate per delta column for each adapter,
//! trained on both concepts' data with a penalty that pushes the two gate
//! vectors of every layer apart.

mod gates;
mod linear;
mod train;

pub use gates::{
    column_dot_penalty_grad, cosine_penalty, cosine_penalty_grad, gated_delta, gated_delta_from, GatePair,
    MergeGates, PenaltyGrad, PenaltyTarget, COSINE_EPS,
};
pub use linear::{linear_deltas, merge_linear};
pub use train::{compose_for_inference, train_merge, write_merge_log, MergeConfig, MergeLogRecord, MergeMode};
