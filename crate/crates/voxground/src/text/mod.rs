//! Toy text encoding plus the attention primitives used by the fusion
//! blocks: token self-attention, voxel-to-text cross-attention, and the
//! baseline's concat fusion.

pub mod attention;
pub mod encode;
pub mod vocab;

pub use attention::{attention_t, cross_attention, self_attention, AttnNodes, AttnWeights};
pub use encode::{
    concat_fuse, concat_fuse_t, encode_text, encode_text_t, TextEncoderWeights, TokenSet,
};
pub use vocab::{Vocabulary, CATEGORIES, COLORS, GLUE_WORDS, MAX_WORDS, UNK};
