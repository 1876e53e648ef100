#include "mvpr/encoder.hpp"

#include <cmath>
#include <string>

#include "mvpr/errors.hpp"
#include "mvpr/rng.hpp"

namespace mvpr {

using diff::ParamStore;

namespace {

Mat random_init(int rows, int cols, Rng& rng) {
    const double std = std::sqrt(2.0 / static_cast<double>(rows + cols));
    Mat w(rows, cols);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.normal(0.0, std);
    return w;
}

}  // namespace

EncoderParams make_encoder(const EncoderConfig& cfg, std::uint64_t seed) {
    if (cfg.input_dim < 1 || cfg.width < 4 || cfg.descriptor_dim < 1)
        throw ParamError("make_encoder: dimensions out of range");
    EncoderParams P;
    P.cfg = cfg;
    Rng rng(derive_seed(seed, "encoder-init"));
    const int D = cfg.width;
    const int H = cfg.mlp_hidden_dim();
    const int A = cfg.adapter_hidden_dim();
    const bool full = cfg.train_full_block;
    ParamStore& s = P.store;

    s.add("embed.W", random_init(cfg.input_dim, D, rng));
    s.add("embed.b", Mat::Zero(1, D));
    s.add("ln1.g", Mat::Ones(1, D), full);
    s.add("ln1.b", Mat::Zero(1, D), full);
    s.add("attn.Wq", random_init(D, D, rng), full);
    s.add("attn.Wk", random_init(D, D, rng), full);
    s.add("attn.Wv", random_init(D, D, rng), full);
    s.add("attn.Wo", random_init(D, D, rng), full);
    s.add("ln2.g", Mat::Ones(1, D), full);
    s.add("ln2.b", Mat::Zero(1, D), full);
    s.add("mlp.W1", random_init(D, H, rng), full);
    s.add("mlp.b1", Mat::Zero(1, H), full);
    s.add("mlp.W2", random_init(H, D, rng), full);
    s.add("mlp.b2", Mat::Zero(1, D), full);
    s.add("adapter.W1", random_init(D, A, rng));
    s.add("adapter.b1", Mat::Zero(1, A));
    s.add("adapter.W2", random_init(A, D, rng));
    s.add("adapter.b2", Mat::Zero(1, D));
    s.add("adapter.s", Mat::Ones(1, 1));
    s.add("gem.p", Mat::Constant(1, 1, 3.0));
    s.add("proj.W", random_init(D, cfg.descriptor_dim, rng));
    s.add("proj.b", Mat::Zero(1, cfg.descriptor_dim));
    return P;
}

void set_full_block_trainable(EncoderParams& params, bool trainable) {
    for (const char* name : {"ln1.g", "ln1.b", "attn.Wq", "attn.Wk", "attn.Wv", "attn.Wo",
                             "ln2.g", "ln2.b", "mlp.W1", "mlp.b1", "mlp.W2", "mlp.b2"}) {
        params.store.entry(name).trainable = trainable;
    }
    params.cfg.train_full_block = trainable;
}

Mat adapter_block_forward(const Mat& z_in, const EncoderParams& params, BlockCache* cache) {
    const ParamStore& s = params.store;
    const double eps = params.cfg.ln_eps;
    BlockCache local;
    BlockCache& c = cache ? *cache : local;

    Mat ln1 = diff::layer_norm_forward(z_in, s.value("ln1.g"), s.value("ln1.b"), eps, &c.ln1);
    Mat zprime = diff::attention_forward(ln1, s.value("attn.Wq"), s.value("attn.Wk"),
                                         s.value("attn.Wv"), s.value("attn.Wo"), &c.attn);
    zprime += z_in;
    c.zprime = zprime;

    Mat ln2 = diff::layer_norm_forward(zprime, s.value("ln2.g"), s.value("ln2.b"), eps, &c.ln2);
    c.ln2_out = ln2;
    Mat mlp_out = diff::mlp_forward(ln2, s.value("mlp.W1"), s.value("mlp.b1"), s.value("mlp.W2"),
                                    s.value("mlp.b2"), &c.mlp);
    Mat adapter_out =
        diff::mlp_forward(ln2, s.value("adapter.W1"), s.value("adapter.b1"),
                          s.value("adapter.W2"), s.value("adapter.b2"), &c.adapter);
    Mat scaled = diff::scale_by_forward(adapter_out, s.scalar("adapter.s"), &c.scale);
    return mlp_out + scaled + zprime;
}

Mat plain_block_forward(const Mat& z_in, const EncoderParams& params) {
    const ParamStore& s = params.store;
    const double eps = params.cfg.ln_eps;
    Mat ln1 = diff::layer_norm_forward(z_in, s.value("ln1.g"), s.value("ln1.b"), eps);
    Mat zprime = diff::attention_forward(ln1, s.value("attn.Wq"), s.value("attn.Wk"),
                                         s.value("attn.Wv"), s.value("attn.Wo"));
    zprime += z_in;
    Mat ln2 = diff::layer_norm_forward(zprime, s.value("ln2.g"), s.value("ln2.b"), eps);
    Mat mlp_out = diff::mlp_forward(ln2, s.value("mlp.W1"), s.value("mlp.b1"), s.value("mlp.W2"),
                                    s.value("mlp.b2"));
    return mlp_out + zprime;
}

Mat adapter_block_backward(const BlockCache& cache, EncoderParams& params, const Mat& dout) {
    ParamStore& s = params.store;

    // adapter branch
    Mat d_adapter_out;
    double ds = 0.0;
    diff::scale_by_backward(cache.scale, dout, d_adapter_out, ds);
    s.grad("adapter.s")(0, 0) += ds;
    Mat d_ln2_a, daW1, dab1, daW2, dab2;
    diff::mlp_backward(cache.adapter, s.value("adapter.W1"), s.value("adapter.W2"), d_adapter_out,
                       d_ln2_a, daW1, dab1, daW2, dab2);
    s.grad("adapter.W1") += daW1;
    s.grad("adapter.b1") += dab1;
    s.grad("adapter.W2") += daW2;
    s.grad("adapter.b2") += dab2;

    // MLP branch
    Mat d_ln2_m, dW1, db1, dW2, db2;
    diff::mlp_backward(cache.mlp, s.value("mlp.W1"), s.value("mlp.W2"), dout, d_ln2_m, dW1, db1,
                       dW2, db2);
    s.grad("mlp.W1") += dW1;
    s.grad("mlp.b1") += db1;
    s.grad("mlp.W2") += dW2;
    s.grad("mlp.b2") += db2;

    Mat d_ln2_out = d_ln2_a + d_ln2_m;
    Mat dzprime, dg2, dbeta2;
    diff::layer_norm_backward(cache.ln2, s.value("ln2.g"), d_ln2_out, dzprime, dg2, dbeta2);
    s.grad("ln2.g") += dg2;
    s.grad("ln2.b") += dbeta2;
    dzprime += dout;  // residual into the second sum

    // attention branch
    Mat d_ln1_out, dWq, dWk, dWv, dWo;
    diff::attention_backward(cache.attn, s.value("attn.Wq"), s.value("attn.Wk"),
                             s.value("attn.Wv"), s.value("attn.Wo"), dzprime, d_ln1_out, dWq, dWk,
                             dWv, dWo);
    s.grad("attn.Wq") += dWq;
    s.grad("attn.Wk") += dWk;
    s.grad("attn.Wv") += dWv;
    s.grad("attn.Wo") += dWo;

    Mat dz_in, dg1, dbeta1;
    diff::layer_norm_backward(cache.ln1, s.value("ln1.g"), d_ln1_out, dz_in, dg1, dbeta1);
    s.grad("ln1.g") += dg1;
    s.grad("ln1.b") += dbeta1;
    dz_in += dzprime;  // residual into z'
    return dz_in;
}

Vec encode_tokens(const Mat& tokens, const EncoderParams& params, EncodeCache* cache) {
    if (tokens.cols() != params.cfg.input_dim)
        throw ContractError("encode: token width " + std::to_string(tokens.cols()) +
                            " does not match encoder input_dim " +
                            std::to_string(params.cfg.input_dim));
    const ParamStore& s = params.store;
    EncodeCache local;
    EncodeCache& c = cache ? *cache : local;

    Mat embedded = diff::linear_forward(tokens, s.value("embed.W"), s.value("embed.b"), &c.embed);
    Mat block_out = adapter_block_forward(embedded, params, &c.block);
    c.block_out = block_out;
    RowVec pooled = diff::gem_pool_forward(block_out, s.scalar("gem.p"), &c.gem);
    Mat projected = diff::linear_forward(pooled, s.value("proj.W"), s.value("proj.b"), &c.proj);
    Vec desc = diff::l2_normalize_forward(projected.row(0).transpose(), &c.norm);
    if (!desc.allFinite()) throw NumericError("encode: non-finite descriptor");
    return desc;
}

Mat encode_backward(const EncodeCache& cache, EncoderParams& params, const Vec& ddesc) {
    ParamStore& s = params.store;
    Vec dproj_row = diff::l2_normalize_backward(cache.norm, ddesc);
    Mat dpooled, dWp, dbp;
    diff::linear_backward(cache.proj, s.value("proj.W"), dproj_row.transpose(), dpooled, dWp, dbp);
    s.grad("proj.W") += dWp;
    s.grad("proj.b") += dbp;

    Mat dblock_out;
    double dp = 0.0;
    diff::gem_pool_backward(cache.gem, cache.block_out, dpooled.row(0), dblock_out, dp);
    s.grad("gem.p")(0, 0) += dp;

    Mat dembedded = adapter_block_backward(cache.block, params, dblock_out);

    Mat dtokens, dWe, dbe;
    diff::linear_backward(cache.embed, s.value("embed.W"), dembedded, dtokens, dWe, dbe);
    s.grad("embed.W") += dWe;
    s.grad("embed.b") += dbe;
    return dtokens;
}

std::vector<Vec> encode_batch_tokens(const std::vector<Mat>& token_mats,
                                     const EncoderParams& params) {
    std::vector<Vec> out;
    out.reserve(token_mats.size());
    for (std::size_t i = 0; i < token_mats.size(); ++i) {
        try {
            out.push_back(encode_tokens(token_mats[i], params));
        } catch (const ContractError& e) {
            throw ContractError("encode_batch[" + std::to_string(i) + "]: " + e.what());
        }
    }
    return out;
}

}  // namespace mvpr
