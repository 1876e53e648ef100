#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "mvpr/tensor.hpp"

namespace mvpr::diff {

// ---------------------------------------------------------------------------
// Parameter storage
// ---------------------------------------------------------------------------

struct ParamEntry {
    std::string name;
    Mat value;
    Mat grad;
    Mat m;  // Adam first moment
    Mat v;  // Adam second moment
    bool trainable = true;
};

// Named parameter tensors with stable insertion order, per-parameter gradient
// accumulators and Adam moment state.
class ParamStore {
public:
    Mat& add(const std::string& name, const Mat& init, bool trainable = true);

    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    Mat& value(const std::string& name) { return entry(name).value; }
    const Mat& value(const std::string& name) const { return entry(name).value; }
    Mat& grad(const std::string& name) { return entry(name).grad; }

    double scalar(const std::string& name) const { return entry(name).value(0, 0); }
    void set_scalar(const std::string& name, double x) { entry(name).value(0, 0) = x; }

    ParamEntry& entry(const std::string& name);
    const ParamEntry& entry(const std::string& name) const;

    std::vector<ParamEntry>& entries() { return entries_; }
    const std::vector<ParamEntry>& entries() const { return entries_; }

    void zero_grads();
    std::size_t coordinate_count() const;

    std::uint64_t step_count = 0;  // Adam timestep

private:
    std::vector<ParamEntry> entries_;
    std::map<std::string, std::size_t> index_;
};

// Standard Adam with bias correction. Updates trainable entries only and
// zeroes every gradient afterwards.
void adam_step(ParamStore& store, double lr, double beta1 = 0.9, double beta2 = 0.999,
               double eps = 1e-8);

// ---------------------------------------------------------------------------
// Primitives: forward(...) -> output, backward(upstream) -> input/param grads.
// Each forward fills a cache consumed by the matching backward.
// ---------------------------------------------------------------------------

struct LinearCache {
    Mat x;
};
// y = x * W + 1 b   (x: n x in, W: in x out, b: 1 x out)
Mat linear_forward(const Mat& x, const Mat& W, const Mat& b, LinearCache* cache = nullptr);
void linear_backward(const LinearCache& cache, const Mat& W, const Mat& dy, Mat& dx, Mat& dW,
                     Mat& db);

struct LayerNormCache {
    Mat xhat;
    Vec inv_sigma;  // per row
};
// Row-wise layer norm with affine (gamma, beta both 1 x D).
Mat layer_norm_forward(const Mat& x, const Mat& gamma, const Mat& beta, double eps,
                       LayerNormCache* cache = nullptr);
void layer_norm_backward(const LayerNormCache& cache, const Mat& gamma, const Mat& dy, Mat& dx,
                         Mat& dgamma, Mat& dbeta);

struct AttentionCache {
    Mat x, q, k, v, attn, ctx;
};
// Single-head self attention: softmax(QK^T / sqrt(D)) V, then output projection.
Mat attention_forward(const Mat& x, const Mat& Wq, const Mat& Wk, const Mat& Wv, const Mat& Wo,
                      AttentionCache* cache = nullptr);
void attention_backward(const AttentionCache& cache, const Mat& Wq, const Mat& Wk, const Mat& Wv,
                        const Mat& Wo, const Mat& dy, Mat& dx, Mat& dWq, Mat& dWk, Mat& dWv,
                        Mat& dWo);

struct MlpCache {
    Mat x, h1, g;
};
// Two-layer feed-forward with GELU: gelu(x W1 + b1) W2 + b2.
Mat mlp_forward(const Mat& x, const Mat& W1, const Mat& b1, const Mat& W2, const Mat& b2,
                MlpCache* cache = nullptr);
void mlp_backward(const MlpCache& cache, const Mat& W1, const Mat& W2, const Mat& dy, Mat& dx,
                  Mat& dW1, Mat& db1, Mat& dW2, Mat& db2);

struct L2NormalizeCache {
    Vec y;
    double norm = 0.0;
};
Vec l2_normalize_forward(const Vec& x, L2NormalizeCache* cache = nullptr);
Vec l2_normalize_backward(const L2NormalizeCache& cache, const Vec& dy);

// Inputs are clamped to >= kGemClamp before exponentiation so x^p stays
// differentiable near zero.
inline constexpr double kGemClamp = 1e-6;

struct GemPoolCache {
    Mat clamped;
    Mat powed;        // clamped^p
    RowVec mean_pow;  // per-dimension mean of clamped^p
    RowVec out;
    double p = 0.0;
};
// Per-dimension generalized mean over rows: ((1/T) sum_t x_td^p)^(1/p).
RowVec gem_pool_forward(const Mat& x, double p, GemPoolCache* cache = nullptr);
void gem_pool_backward(const GemPoolCache& cache, const Mat& x, const RowVec& dy, Mat& dx,
                       double& dp);

struct ScaleByCache {
    Mat x;
    double s = 0.0;
};
Mat scale_by_forward(const Mat& x, double s, ScaleByCache* cache = nullptr);
void scale_by_backward(const ScaleByCache& cache, const Mat& dy, Mat& dx, double& ds);

double gelu(double x);
double gelu_grad(double x);

// ---------------------------------------------------------------------------
// Finite-difference oracle
// ---------------------------------------------------------------------------

// Compares the analytic gradients currently stored in `store` against central
// differences of `loss` (which must recompute the forward pass from the
// store's current values). Returns max over coordinates of
// |analytic - fd| / max(|analytic|, |fd|, 1e-8). h must lie in [1e-7, 1e-3].
double fd_check(ParamStore& store, const std::function<double()>& loss, double h);

}  // namespace mvpr::diff
