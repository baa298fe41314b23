//! Toy text encoder and the concat fusion of the baseline path.

use std::sync::Arc;

use crate::autodiff::{NodeId, ParamStore, Tape};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::sparse::SparseGrid;

use super::attention::{attention_t, AttnNodes, AttnWeights};
use super::vocab::{Vocabulary, MAX_WORDS};

/// Encoded description: one feature row per token.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenSet {
    pub feats: Matrix,
    pub token_ids: Vec<usize>,
}

impl TokenSet {
    pub fn w(&self) -> usize {
        self.feats.rows()
    }

    pub fn d(&self) -> usize {
        self.feats.cols()
    }
}

/// Weights of the toy encoder: embedding and positional tables plus one
/// self-attention layer.
#[derive(Clone, Debug)]
pub struct TextEncoderWeights {
    pub embed: Matrix,
    pub pos: Matrix,
    pub attn: AttnWeights,
}

fn token_ids(words: &[String], vocab: &Vocabulary) -> Result<Vec<usize>> {
    if words.is_empty() {
        return Err(Error::EmptyText);
    }
    if words.len() > MAX_WORDS {
        return Err(Error::InvalidInput(format!(
            "description of {} words exceeds the {MAX_WORDS}-token limit",
            words.len()
        )));
    }
    Ok(words.iter().map(|w| vocab.id_of(w)).collect())
}

/// Tape-recorded encoder: embedding + positional lookup, then one
/// self-attention layer bound from `tokens.embed`, `tokens.pos` and
/// `encoder.self.*`.
pub fn encode_text_t(
    tape: &mut Tape,
    store: &ParamStore,
    words: &[String],
    vocab: &Vocabulary,
    heads: usize,
) -> Result<(NodeId, Vec<usize>)> {
    let ids = token_ids(words, vocab)?;
    let embed = tape.param(store, "tokens.embed")?;
    let pos = tape.param(store, "tokens.pos")?;
    let emb_rows = tape.gather_rows(embed, Arc::new(ids.clone()))?;
    let pos_rows = tape.gather_rows(pos, Arc::new((0..ids.len()).collect()))?;
    let x = tape.add(emb_rows, pos_rows)?;
    let attn = AttnNodes::from_store(tape, store, "encoder.self", heads)?;
    let out = attention_t(tape, x, x, &attn)?;
    Ok((out, ids))
}

/// Encodes a description with explicit weights.
pub fn encode_text(
    words: &[String],
    vocab: &Vocabulary,
    w: &TextEncoderWeights,
) -> Result<TokenSet> {
    token_ids(words, vocab)?;
    let mut store = ParamStore::new(0);
    store.insert("tokens.embed", w.embed.clone());
    store.insert("tokens.pos", w.pos.clone());
    store.insert("encoder.self.wq", w.attn.wq.clone());
    store.insert("encoder.self.wk", w.attn.wk.clone());
    store.insert("encoder.self.wv", w.attn.wv.clone());
    store.insert("encoder.self.wo", w.attn.wo.clone());
    let mut tape = Tape::new();
    let (out, ids) = encode_text_t(&mut tape, &store, words, vocab, w.attn.heads)?;
    Ok(TokenSet { feats: tape.value(out).clone(), token_ids: ids })
}

/// Mean-pools tokens to one row and appends it to every voxel row.
pub fn concat_fuse_t(tape: &mut Tape, feats: NodeId, tokens: NodeId) -> Result<NodeId> {
    let (n, _) = tape.shape(feats);
    let pooled = tape.mean_rows(tokens);
    let tiled = tape.broadcast_rows(pooled, n)?;
    tape.concat_cols(feats, tiled)
}

/// Widens voxel features from `C` to `C + d` with the pooled description.
pub fn concat_fuse(grid: &SparseGrid, tokens: &TokenSet) -> Result<SparseGrid> {
    let mut tape = Tape::new();
    let f = tape.constant(grid.feats().clone());
    let t = tape.constant(tokens.feats.clone());
    let out = concat_fuse_t(&mut tape, f, t)?;
    SparseGrid::new(
        grid.coords().to_vec(),
        tape.value(out).clone(),
        grid.level,
        grid.voxel_size,
    )
}
