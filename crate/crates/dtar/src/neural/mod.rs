//! Self-contained dense-tensor numeric core with reverse-mode automatic
//! differentiation: the tape, layer builders, the edge-featured GAT encoder,
//! masked categorical distributions, Adam, and checkpoint I/O.
//!
//! Everything runs in f64; desk-scale graph sizes make 32-bit savings
//! irrelevant and keep gradient checks tight.

mod checkpoint;
mod gat;
mod masked;
mod nn;
mod tape;

pub use checkpoint::{load_checkpoint, save_checkpoint, LoadedCheckpoint};
pub use gat::{
    GatEncoder, GatLayer, GraphEdges, ATTENTION_HEADS, EDGE_FEATURE_DIM, EMBED_DIM, HIDDEN_DIM,
    NODE_FEATURE_DIM,
};
pub use masked::{MaskedCategorical, MASK_PENALTY};
pub use nn::{
    adam_step, clip_grad_norm, xavier_uniform, Activation, AdamConfig, AdamState, Linear,
    LayerNorm, Mlp, Param, ParamId, ParamSet, TapeBindings,
};
pub use tape::{log_softmax_rows, segment_softmax, Tape, Var};
