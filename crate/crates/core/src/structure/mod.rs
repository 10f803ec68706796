//! Fields and chunks inferred from tags, and the mutations built on them.

mod chunk;
mod field;
mod mutations;

pub use chunk::{find_chunk_end, get_random_chunk, ChunkSpan};
pub use field::{
    field_mutation, find_field_end, go_left_while_same_tag, go_right_while_same_tag, mutate_field,
    FieldOp, FieldSpan, MAX_FIELD_DEPTH,
};
pub use mutations::{chunk_addition, chunk_deletion, chunk_splicing, ChunkKind, ChunkMutation, Donor};

/// Probabilities steering the structural heuristics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StructParams {
    /// Chance of mutating a field whose first byte is input-to-state.
    pub pr_i2s: f64,
    /// Chance of extending a chunk over untagged and later bytes.
    pub pr_extend: f64,
    /// Chance of picking a chunk from a random position rather than by tag.
    pub pr_chunk12: f64,
}

impl Default for StructParams {
    fn default() -> Self {
        StructParams {
            pr_i2s: 0.1,
            pr_extend: 0.5,
            pr_chunk12: 0.75,
        }
    }
}
