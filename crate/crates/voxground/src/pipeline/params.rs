//! Parameter-store construction for a given configuration.

use crate::autodiff::ParamStore;
use crate::error::Result;
use crate::text::Vocabulary;
use crate::text::MAX_WORDS;

use super::config::{AdditionMode, FusionMode, ModelConfig};

fn init_attn(store: &mut ParamStore, prefix: &str, c: usize, d: usize) {
    store.init_uniform(&format!("{prefix}.wq"), c, c, c);
    store.init_uniform(&format!("{prefix}.wk"), d, c, d);
    store.init_uniform(&format!("{prefix}.wv"), d, c, d);
    store.init_uniform(&format!("{prefix}.wo"), c, c, c);
}

fn init_mlp_head1(store: &mut ParamStore, prefix: &str, c: usize) {
    store.init_uniform(&format!("{prefix}.w0"), c, 2 * c, c);
    store.init_zeros(&format!("{prefix}.b0"), 1, 2 * c);
    store.init_uniform(&format!("{prefix}.w1"), 2 * c, 1, 2 * c);
    store.init_zeros(&format!("{prefix}.b1"), 1, 1);
}

/// Builds all learnable tensors the configured pipeline binds.
///
/// Pruning-block weights are created for every attention-bearing fusion
/// mode with identical shapes, so one store can drive the original block,
/// the simplified block and the no-prune attention path interchangeably.
pub fn init_params(config: &ModelConfig, vocab: &Vocabulary) -> Result<ParamStore> {
    config.validate()?;
    let mut store = ParamStore::new(config.seed);
    let c = &config.channels;
    let d = config.token_dim;

    // stem: 1 cm -> 4 cm, two stride-2 convolutions
    store.init_uniform("stem.conv0.w", 8 * 6, c[0], 8 * 6);
    store.init_uniform("stem.conv1.w", 8 * c[0], c[0], 8 * c[0]);
    // three downsampling residual blocks
    for l in 1..=3 {
        let (ci, co) = (c[l - 1], c[l]);
        let p = format!("backbone.rb{l}");
        store.init_uniform(&format!("{p}.down.w"), 8 * ci, co, 8 * ci);
        store.init_uniform(&format!("{p}.conv_a.w"), 27 * co, co, 27 * co);
        store.init_uniform(&format!("{p}.conv_b.w"), 27 * co, co, 27 * co);
    }

    // text encoder
    store.init_uniform("tokens.embed", vocab.len(), d, d);
    store.init_uniform("tokens.pos", MAX_WORDS, d, d);
    init_attn(&mut store, "encoder.self", d, d);

    // fusion blocks at levels 3 and 2
    if config.fusion_mode != FusionMode::Concat {
        for level in [3usize, 2] {
            let cw = c[level];
            let p = format!("tgp.level{level}");
            init_attn(&mut store, &format!("{p}.token_self"), d, d);
            init_attn(&mut store, &format!("{p}.cross_probe"), cw, d);
            init_attn(&mut store, &format!("{p}.vox_self"), cw, cw);
            init_attn(&mut store, &format!("{p}.cross_enrich"), cw, d);
            init_mlp_head1(&mut store, &format!("{p}.mlp"), cw);
        }
    }

    // generative upsampling convolutions
    store.init_uniform(
        "upsample.l3to2.w",
        8 * config.fused_width(3),
        c[2],
        8 * config.fused_width(3),
    );
    store.init_uniform(
        "upsample.l2to1.w",
        8 * config.fused_width(2),
        c[1],
        8 * config.fused_width(2),
    );

    // completion blocks
    if config.addition_mode == AdditionMode::Cba {
        for &level in &config.cba_levels {
            let cw = c[level];
            let p = format!("cba.level{level}");
            init_attn(&mut store, &format!("{p}.cross"), cw, d);
            init_mlp_head1(&mut store, &format!("{p}.mlp"), cw);
        }
    }

    // grounding head
    let head_in = c[1] + d;
    let hidden = 2 * c[1];
    store.init_uniform("head.conv.w", 27 * head_in, c[1], 27 * head_in);
    store.init_uniform("head.mlp.w0", c[1], hidden, c[1]);
    store.init_zeros("head.mlp.b0", 1, hidden);
    store.init_uniform("head.mlp.w1", hidden, 7, hidden);
    store.init_zeros("head.mlp.b1", 1, 7);

    Ok(store)
}
