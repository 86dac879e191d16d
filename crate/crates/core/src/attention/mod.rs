//! Multi-head dilated attention: sparsified segment attention mixed across
//! (segment length, dilation ratio) pairs, its quadratic reference, and FLOP
//! accounting.

pub(crate) mod dilated;
mod flops;
mod kernel;
mod multihead;
pub mod oracle;
mod schedule;

pub use dilated::dilated_head;
pub use flops::{attention_flops, dense_flops, flops_estimate, projection_flops};
pub(crate) use kernel::{attend_row, Accumulator};
pub use kernel::{mixing_weights, segment_attention, select_indices, SegmentOutput};
pub use multihead::{multihead_dilated_attention, AttentionWeights};
pub use oracle::{dense_mha, oracle_masked_dense, DENSE_ORACLE_MAX_TOKENS};
pub use schedule::{
    DilationSchedule, SegmentPair, PRETRAIN_RATIOS, PRETRAIN_SEGMENTS, RESOLUTION_TABLE,
};
