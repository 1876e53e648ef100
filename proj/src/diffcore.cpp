#include "mvpr/diffcore.hpp"

#include <cmath>

#include "mvpr/errors.hpp"

namespace mvpr::diff {

namespace {

void require(bool ok, const char* primitive, const char* what) {
    if (!ok) throw ContractError(std::string(primitive) + ": " + what);
}

}  // namespace

// ---------------------------------------------------------------------------
// ParamStore
// ---------------------------------------------------------------------------

Mat& ParamStore::add(const std::string& name, const Mat& init, bool trainable) {
    if (contains(name)) throw ContractError("ParamStore: duplicate parameter '" + name + "'");
    ParamEntry e;
    e.name = name;
    e.value = init;
    e.grad = Mat::Zero(init.rows(), init.cols());
    e.m = Mat::Zero(init.rows(), init.cols());
    e.v = Mat::Zero(init.rows(), init.cols());
    e.trainable = trainable;
    entries_.push_back(std::move(e));
    index_[name] = entries_.size() - 1;
    return entries_.back().value;
}

ParamEntry& ParamStore::entry(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("ParamStore: unknown parameter '" + name + "'");
    return entries_[it->second];
}

const ParamEntry& ParamStore::entry(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("ParamStore: unknown parameter '" + name + "'");
    return entries_[it->second];
}

void ParamStore::zero_grads() {
    for (auto& e : entries_) e.grad.setZero();
}

std::size_t ParamStore::coordinate_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += static_cast<std::size_t>(e.value.size());
    return n;
}

void adam_step(ParamStore& store, double lr, double beta1, double beta2, double eps) {
    if (!(lr > 0.0)) throw ParamError("adam_step: learning rate must be > 0");
    store.step_count += 1;
    const double t = static_cast<double>(store.step_count);
    const double bc1 = 1.0 - std::pow(beta1, t);
    const double bc2 = 1.0 - std::pow(beta2, t);
    for (auto& e : store.entries()) {
        if (e.trainable) {
            e.m = beta1 * e.m + (1.0 - beta1) * e.grad;
            e.v = beta2 * e.v + (1.0 - beta2) * e.grad.array().square().matrix();
            const Mat mhat = e.m / bc1;
            const Mat vhat = e.v / bc2;
            e.value.array() -= lr * mhat.array() / (vhat.array().sqrt() + eps);
        }
        e.grad.setZero();
    }
}

// ---------------------------------------------------------------------------
// linear
// ---------------------------------------------------------------------------

Mat linear_forward(const Mat& x, const Mat& W, const Mat& b, LinearCache* cache) {
    require(x.cols() == W.rows(), "linear", "input width must match weight rows");
    require(b.rows() == 1 && b.cols() == W.cols(), "linear", "bias must be 1 x out");
    if (cache) cache->x = x;
    Mat y = x * W;
    y.rowwise() += b.row(0);
    return y;
}

void linear_backward(const LinearCache& cache, const Mat& W, const Mat& dy, Mat& dx, Mat& dW,
                     Mat& db) {
    require(dy.rows() == cache.x.rows() && dy.cols() == W.cols(), "linear",
            "upstream gradient shape mismatch");
    dx.noalias() = dy * W.transpose();
    dW.noalias() = cache.x.transpose() * dy;
    db = dy.colwise().sum();
}

// ---------------------------------------------------------------------------
// layer_norm
// ---------------------------------------------------------------------------

Mat layer_norm_forward(const Mat& x, const Mat& gamma, const Mat& beta, double eps,
                       LayerNormCache* cache) {
    require(eps > 0.0, "layer_norm", "epsilon must be > 0");
    require(gamma.rows() == 1 && gamma.cols() == x.cols(), "layer_norm", "gamma must be 1 x D");
    require(beta.rows() == 1 && beta.cols() == x.cols(), "layer_norm", "beta must be 1 x D");
    const auto T = x.rows();
    const auto D = x.cols();
    Mat xhat(T, D);
    Vec inv_sigma(T);
    for (Eigen::Index r = 0; r < T; ++r) {
        const double mu = x.row(r).mean();
        const double var = (x.row(r).array() - mu).square().mean();
        const double is = 1.0 / std::sqrt(var + eps);
        xhat.row(r) = (x.row(r).array() - mu) * is;
        inv_sigma(r) = is;
    }
    if (cache) {
        cache->xhat = xhat;
        cache->inv_sigma = inv_sigma;
    }
    Mat y = xhat.array().rowwise() * gamma.row(0).array();
    y.rowwise() += beta.row(0);
    return y;
}

void layer_norm_backward(const LayerNormCache& cache, const Mat& gamma, const Mat& dy, Mat& dx,
                         Mat& dgamma, Mat& dbeta) {
    const auto T = cache.xhat.rows();
    const auto D = cache.xhat.cols();
    require(dy.rows() == T && dy.cols() == D, "layer_norm", "upstream gradient shape mismatch");
    dx.resize(T, D);
    dgamma = Mat::Zero(1, D);
    dbeta = Mat::Zero(1, D);
    const double invD = 1.0 / static_cast<double>(D);
    for (Eigen::Index r = 0; r < T; ++r) {
        const RowVec dxhat = dy.row(r).array() * gamma.row(0).array();
        const RowVec xh = cache.xhat.row(r);
        const double a = dxhat.sum();
        const double b = (dxhat.array() * xh.array()).sum();
        dx.row(r) = cache.inv_sigma(r) * (dxhat.array() - invD * a - xh.array() * (invD * b));
    }
    dgamma.row(0) = (dy.array() * cache.xhat.array()).colwise().sum();
    dbeta.row(0) = dy.colwise().sum();
}

// ---------------------------------------------------------------------------
// single-head attention
// ---------------------------------------------------------------------------

namespace {

Mat softmax_rows(const Mat& s) {
    Mat a(s.rows(), s.cols());
    for (Eigen::Index r = 0; r < s.rows(); ++r) {
        const double mx = s.row(r).maxCoeff();
        RowVec e = (s.row(r).array() - mx).exp();
        a.row(r) = e / e.sum();
    }
    return a;
}

}  // namespace

Mat attention_forward(const Mat& x, const Mat& Wq, const Mat& Wk, const Mat& Wv, const Mat& Wo,
                      AttentionCache* cache) {
    const auto D = x.cols();
    require(Wq.rows() == D && Wk.rows() == D && Wv.rows() == D, "single_head_attention",
            "projection rows must match token width");
    require(Wq.cols() == Wk.cols(), "single_head_attention", "Wq/Wk output widths must match");
    require(Wo.rows() == Wv.cols(), "single_head_attention", "Wo rows must match Wv cols");
    Mat q = x * Wq;
    Mat k = x * Wk;
    Mat v = x * Wv;
    const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
    Mat attn = softmax_rows(q * k.transpose() * scale);
    Mat ctx = attn * v;
    Mat y = ctx * Wo;
    if (cache) {
        cache->x = x;
        cache->q = std::move(q);
        cache->k = std::move(k);
        cache->v = std::move(v);
        cache->attn = std::move(attn);
        cache->ctx = std::move(ctx);
    }
    return y;
}

void attention_backward(const AttentionCache& cache, const Mat& Wq, const Mat& Wk, const Mat& Wv,
                        const Mat& Wo, const Mat& dy, Mat& dx, Mat& dWq, Mat& dWk, Mat& dWv,
                        Mat& dWo) {
    require(dy.rows() == cache.x.rows() && dy.cols() == Wo.cols(), "single_head_attention",
            "upstream gradient shape mismatch");
    const double scale = 1.0 / std::sqrt(static_cast<double>(cache.q.cols()));
    Mat dctx = dy * Wo.transpose();
    dWo.noalias() = cache.ctx.transpose() * dy;
    Mat dattn = dctx * cache.v.transpose();
    Mat dv = cache.attn.transpose() * dctx;
    // softmax backward, row-wise
    Mat ds(dattn.rows(), dattn.cols());
    for (Eigen::Index r = 0; r < dattn.rows(); ++r) {
        const double dot = (dattn.row(r).array() * cache.attn.row(r).array()).sum();
        ds.row(r) = cache.attn.row(r).array() * (dattn.row(r).array() - dot);
    }
    Mat dq = ds * cache.k * scale;
    Mat dk = ds.transpose() * cache.q * scale;
    dWq.noalias() = cache.x.transpose() * dq;
    dWk.noalias() = cache.x.transpose() * dk;
    dWv.noalias() = cache.x.transpose() * dv;
    dx.noalias() = dq * Wq.transpose();
    dx.noalias() += dk * Wk.transpose();
    dx.noalias() += dv * Wv.transpose();
}

// ---------------------------------------------------------------------------
// two-layer MLP with GELU
// ---------------------------------------------------------------------------

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * 0.70710678118654752440)); }

double gelu_grad(double x) {
    const double phi = std::exp(-0.5 * x * x) * 0.39894228040143267794;  // standard normal pdf
    return 0.5 * (1.0 + std::erf(x * 0.70710678118654752440)) + x * phi;
}

Mat mlp_forward(const Mat& x, const Mat& W1, const Mat& b1, const Mat& W2, const Mat& b2,
                MlpCache* cache) {
    Mat h1 = linear_forward(x, W1, b1, nullptr);
    Mat g = h1.unaryExpr([](double t) { return gelu(t); });
    Mat y = linear_forward(g, W2, b2, nullptr);
    if (cache) {
        cache->x = x;
        cache->h1 = std::move(h1);
        cache->g = std::move(g);
    }
    return y;
}

void mlp_backward(const MlpCache& cache, const Mat& W1, const Mat& W2, const Mat& dy, Mat& dx,
                  Mat& dW1, Mat& db1, Mat& dW2, Mat& db2) {
    require(dy.rows() == cache.x.rows() && dy.cols() == W2.cols(), "mlp_2layer",
            "upstream gradient shape mismatch");
    Mat dg = dy * W2.transpose();
    dW2.noalias() = cache.g.transpose() * dy;
    db2 = dy.colwise().sum();
    Mat dh1 = dg.array() * cache.h1.unaryExpr([](double t) { return gelu_grad(t); }).array();
    dW1.noalias() = cache.x.transpose() * dh1;
    db1 = dh1.colwise().sum();
    dx.noalias() = dh1 * W1.transpose();
}

// ---------------------------------------------------------------------------
// l2_normalize
// ---------------------------------------------------------------------------

Vec l2_normalize_forward(const Vec& x, L2NormalizeCache* cache) {
    const double n = x.norm();
    require(n > 0.0, "l2_normalize", "zero vector has no direction");
    Vec y = x / n;
    if (cache) {
        cache->y = y;
        cache->norm = n;
    }
    return y;
}

Vec l2_normalize_backward(const L2NormalizeCache& cache, const Vec& dy) {
    require(dy.size() == cache.y.size(), "l2_normalize", "upstream gradient shape mismatch");
    return (dy - cache.y * cache.y.dot(dy)) / cache.norm;
}

// ---------------------------------------------------------------------------
// gem_pool
// ---------------------------------------------------------------------------

RowVec gem_pool_forward(const Mat& x, double p, GemPoolCache* cache) {
    if (!(p >= 1.0)) throw ParamError("gem_pool: exponent p must be >= 1");
    const double T = static_cast<double>(x.rows());
    Mat clamped = x.array().max(kGemClamp);
    Mat powed = clamped.array().pow(p);
    RowVec mean_pow = powed.colwise().sum() / T;
    RowVec out = mean_pow.array().pow(1.0 / p);
    if (cache) {
        cache->clamped = clamped;
        cache->powed = std::move(powed);
        cache->mean_pow = mean_pow;
        cache->out = out;
        cache->p = p;
    }
    return out;
}

void gem_pool_backward(const GemPoolCache& cache, const Mat& x, const RowVec& dy, Mat& dx,
                       double& dp) {
    require(dy.cols() == cache.out.cols(), "gem_pool", "upstream gradient shape mismatch");
    const double p = cache.p;
    const double T = static_cast<double>(x.rows());
    // d out_d / d c_td = out_d / mean_d * (1/T) * c_td^(p-1), zero where clamped.
    RowVec coef = dy.array() * cache.out.array() / cache.mean_pow.array() / T;
    Mat cpm1 = cache.clamped.array().pow(p - 1.0);
    dx = (cpm1.array().rowwise() * coef.array()) *
         (x.array() > kGemClamp).cast<double>();
    // d out_d / d p = out_d * ( -(1/p^2) ln mean_d + (1/p) (sum c^p ln c) / (T mean_d) )
    Mat plogc = cache.powed.array() * cache.clamped.array().log();
    RowVec sum_plogc = plogc.colwise().sum();
    dp = 0.0;
    for (Eigen::Index d = 0; d < dy.cols(); ++d) {
        const double term = -std::log(cache.mean_pow(d)) / (p * p) +
                            sum_plogc(d) / (T * cache.mean_pow(d) * p);
        dp += dy(d) * cache.out(d) * term;
    }
}

// ---------------------------------------------------------------------------
// scale_by
// ---------------------------------------------------------------------------

Mat scale_by_forward(const Mat& x, double s, ScaleByCache* cache) {
    if (cache) {
        cache->x = x;
        cache->s = s;
    }
    return s * x;
}

void scale_by_backward(const ScaleByCache& cache, const Mat& dy, Mat& dx, double& ds) {
    require(dy.rows() == cache.x.rows() && dy.cols() == cache.x.cols(), "scale_by",
            "upstream gradient shape mismatch");
    dx = cache.s * dy;
    ds = (dy.array() * cache.x.array()).sum();
}

// ---------------------------------------------------------------------------
// finite differences
// ---------------------------------------------------------------------------

double fd_check(ParamStore& store, const std::function<double()>& loss, double h) {
    if (!(h >= 1e-7 && h <= 1e-3)) throw ParamError("fd_check: h must lie in [1e-7, 1e-3]");
    double max_rel = 0.0;
    for (auto& e : store.entries()) {
        for (Eigen::Index i = 0; i < e.value.size(); ++i) {
            double* coord = e.value.data() + i;
            const double saved = *coord;
            *coord = saved + h;
            const double lp = loss();
            *coord = saved - h;
            const double lm = loss();
            *coord = saved;
            const double fd = (lp - lm) / (2.0 * h);
            const double an = *(e.grad.data() + i);
            const double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-8});
            if (rel > max_rel) max_rel = rel;
        }
    }
    return max_rel;
}

}  // namespace mvpr::diff
