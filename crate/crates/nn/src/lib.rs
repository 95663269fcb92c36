//! Differentiable building blocks shared by the encoder, assimilation and
//! forecasting networks: a reverse-mode tape over dense matrices, masked
//! multi-head attention, layer norm, GELU/SwiGLU feed-forward blocks, patch
//! embeddings, masked losses, AdamW with a cosine schedule, and a
//! finite-difference gradient checker.

pub mod attention;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod loss;
pub mod optim;
pub mod params;
pub mod scalar;
pub mod tensor;

pub use attention::AttnMask;
pub use error::{NnError, Result};
pub use gradcheck::{grad_check, grad_check_with, GradCheckConfig, GradCheckReport};
pub use graph::{Graph, Var};
pub use layers::{
    patchify, unpatchify_index, Embedding, Ffn, GeluFfn, LayerNorm, Linear, MultiHeadAttention,
    PatchEmbed, SwigluFfn, TransformerBlock,
};
pub use optim::{AdamW, AdamWConfig, CosineSchedule};
pub use params::{Init, ParamId, ParamStore};
pub use scalar::Scalar;
pub use tensor::Tensor;
