#pragma once

#include <cstdint>
#include <vector>

#include "mvpr/diffcore.hpp"
#include "mvpr/tensor.hpp"

namespace mvpr {

struct EncoderConfig {
    int input_dim = 32;      // token width D_in of raw observations
    int width = 32;          // block width D
    int mlp_hidden = 0;      // 0 -> 4 * width
    int adapter_hidden = 0;  // 0 -> width / 4
    int descriptor_dim = 64;
    double ln_eps = 1e-5;
    // By default only the input embedding, adapter branch, scale s, GeM
    // exponent p and the projection head receive optimizer updates; the rest
    // of the block stays frozen at its initialization.
    bool train_full_block = false;

    int mlp_hidden_dim() const { return mlp_hidden > 0 ? mlp_hidden : 4 * width; }
    int adapter_hidden_dim() const { return adapter_hidden > 0 ? adapter_hidden : width / 4; }
};

// All trainable quantities of the descriptor network, keyed by fixed names in
// a ParamStore ("embed.W", "attn.Wq", "adapter.s", "gem.p", ...).
struct EncoderParams {
    EncoderConfig cfg;
    diff::ParamStore store;

    double adapter_scale() const { return store.scalar("adapter.s"); }
    double gem_exponent() const { return store.scalar("gem.p"); }
};

EncoderParams make_encoder(const EncoderConfig& cfg, std::uint64_t seed);

// Flip the frozen/trainable split after construction (ablation support).
void set_full_block_trainable(EncoderParams& params, bool trainable);

struct BlockCache {
    diff::LayerNormCache ln1;
    diff::AttentionCache attn;
    Mat zprime;
    diff::LayerNormCache ln2;
    Mat ln2_out;
    diff::MlpCache mlp;
    diff::MlpCache adapter;
    diff::ScaleByCache scale;
};

// z'  = MHA(LN(z_in)) + z_in
// out = MLP(LN(z')) + s * Adapter(LN(z')) + z'
Mat adapter_block_forward(const Mat& z_in, const EncoderParams& params,
                          BlockCache* cache = nullptr);

// Accumulates parameter gradients into params.store and returns d(z_in).
Mat adapter_block_backward(const BlockCache& cache, EncoderParams& params, const Mat& dout);

// The same block with the adapter branch absent (not multiplied by zero).
Mat plain_block_forward(const Mat& z_in, const EncoderParams& params);

struct EncodeCache {
    diff::LinearCache embed;
    BlockCache block;
    Mat block_out;
    diff::GemPoolCache gem;
    diff::LinearCache proj;
    diff::L2NormalizeCache norm;
};

// embed -> adapter block -> GeM pool -> projection -> L2 normalize.
// Throws NumericError if the descriptor comes out non-finite.
Vec encode_tokens(const Mat& tokens, const EncoderParams& params, EncodeCache* cache = nullptr);

// Accumulates gradients of a scalar loss into params.store given d(descriptor)
// and returns d(tokens).
Mat encode_backward(const EncodeCache& cache, EncoderParams& params, const Vec& ddesc);

std::vector<Vec> encode_batch_tokens(const std::vector<Mat>& token_mats,
                                     const EncoderParams& params);

}  // namespace mvpr
