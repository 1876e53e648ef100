#include "mvpr/lmcl.hpp"

#include <cmath>

#include "mvpr/errors.hpp"

namespace mvpr {

ClassifierWeights::ClassifierWeights(int dim, double gamma, double margin)
    : dim_(dim), gamma_(gamma), margin_(margin) {
    if (dim < 1) throw ParamError("ClassifierWeights: dim must be >= 1");
    W_.resize(0, dim);
    m_.resize(0, dim);
    v_.resize(0, dim);
}

int ClassifierWeights::index_of(const PlaceLabel& label) const {
    auto it = index_.find(label);
    return it == index_.end() ? -1 : it->second;
}

int ClassifierWeights::add_class(const PlaceLabel& label, const Vec& row) {
    if (row.size() != dim_) throw ContractError("ClassifierWeights: row dimension mismatch");
    if (index_.count(label)) throw ContractError("ClassifierWeights: duplicate label");
    const double n = row.norm();
    if (!(n > 0.0)) throw ContractError("ClassifierWeights: zero init row");
    const int idx = static_cast<int>(labels_.size());
    W_.conservativeResize(idx + 1, dim_);
    m_.conservativeResize(idx + 1, dim_);
    v_.conservativeResize(idx + 1, dim_);
    W_.row(idx) = row.transpose() / n;
    m_.row(idx).setZero();
    v_.row(idx).setZero();
    labels_.push_back(label);
    index_[label] = idx;
    return idx;
}

void ClassifierWeights::apply_gradient(const Mat& dW, double lr, double beta1, double beta2,
                                       double eps) {
    if (!(lr > 0.0)) throw ParamError("ClassifierWeights: learning rate must be > 0");
    if (dW.rows() != W_.rows() || dW.cols() != W_.cols())
        throw ContractError("ClassifierWeights: gradient shape mismatch");
    step_count += 1;
    const double t = static_cast<double>(step_count);
    const double bc1 = 1.0 - std::pow(beta1, t);
    const double bc2 = 1.0 - std::pow(beta2, t);
    m_ = beta1 * m_ + (1.0 - beta1) * dW;
    v_ = beta2 * v_ + (1.0 - beta2) * dW.array().square().matrix();
    W_.array() -= lr * (m_ / bc1).array() / ((v_ / bc2).array().sqrt() + eps);
    for (Eigen::Index r = 0; r < W_.rows(); ++r) {
        const double n = W_.row(r).norm();
        if (n > 0.0) W_.row(r) /= n;
    }
}

void ClassifierWeights::set_hyper(int dim, double gamma, double margin) {
    dim_ = dim;
    gamma_ = gamma;
    margin_ = margin;
}

void ClassifierWeights::rebuild_index(std::vector<PlaceLabel> labels) {
    labels_ = std::move(labels);
    index_.clear();
    for (std::size_t i = 0; i < labels_.size(); ++i)
        index_[labels_[i]] = static_cast<int>(i);
}

namespace {

void check_unit_rows(const Mat& m, const char* what) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        if (std::fabs(m.row(r).norm() - 1.0) > 1e-4)
            throw ContractError(std::string("lmcl: ") + what + " row " + std::to_string(r) +
                                " is not unit-norm");
    }
}

// Per-sample logits z_j = gamma * (cos_j - margin * [j == y]).
// loss = logsumexp(z) - z_y, computed as
//   z_max + log1p(sum_{j != argmax} exp(z_j - z_max)) - z_y
// so the near-saturated case keeps its tiny positive value.
double sample_loss(const RowVec& z, int y) {
    Eigen::Index jmax = 0;
    const double zmax = z.maxCoeff(&jmax);
    double rest = 0.0;
    for (Eigen::Index j = 0; j < z.size(); ++j)
        if (j != jmax) rest += std::exp(z(j) - zmax);
    // (zmax - z_y) first: it is exactly 0 when y is the argmax, so the
    // near-saturated loss keeps its tiny positive log1p term.
    return (zmax - z(y)) + std::log1p(rest);
}

Mat logits(const Mat& features, const std::vector<int>& targets, const ClassifierWeights& w) {
    Mat z = w.gamma() * (features * w.rows().transpose());
    for (std::size_t b = 0; b < targets.size(); ++b)
        z(static_cast<Eigen::Index>(b), targets[b]) -= w.gamma() * w.margin();
    return z;
}

void check_inputs(const Mat& features, const std::vector<int>& targets,
                  const ClassifierWeights& w) {
    if (features.cols() != w.dim()) throw ContractError("lmcl: feature dimension mismatch");
    if (static_cast<std::size_t>(features.rows()) != targets.size())
        throw ContractError("lmcl: one target per feature row required");
    if (w.class_count() < 1) throw ContractError("lmcl: classifier has no classes");
    for (int t : targets)
        if (t < 0 || t >= w.class_count()) throw ContractError("lmcl: target index out of range");
    check_unit_rows(features, "feature");
    check_unit_rows(w.rows(), "weight");
}

}  // namespace

double lmcl_loss(const Mat& features, const std::vector<int>& targets,
                 const ClassifierWeights& weights) {
    check_inputs(features, targets, weights);
    const Mat z = logits(features, targets, weights);
    double total = 0.0;
    for (std::size_t b = 0; b < targets.size(); ++b)
        total += sample_loss(z.row(static_cast<Eigen::Index>(b)), targets[b]);
    return total / static_cast<double>(targets.size());
}

LmclGrads lmcl_backward(const Mat& features, const std::vector<int>& targets,
                        const ClassifierWeights& weights) {
    check_inputs(features, targets, weights);
    const double invB = 1.0 / static_cast<double>(targets.size());
    const Mat z = logits(features, targets, weights);

    LmclGrads out;
    out.loss = 0.0;
    Mat dz(z.rows(), z.cols());
    for (Eigen::Index b = 0; b < z.rows(); ++b) {
        out.loss += sample_loss(z.row(b), targets[static_cast<std::size_t>(b)]);
        const double zmax = z.row(b).maxCoeff();
        RowVec e = (z.row(b).array() - zmax).exp();
        dz.row(b) = e / e.sum() * invB;
        dz(b, targets[static_cast<std::size_t>(b)]) -= invB;
    }
    out.loss *= invB;
    out.dfeatures = weights.gamma() * (dz * weights.rows());
    out.dweights = weights.gamma() * (dz.transpose() * features);
    return out;
}

ClassifierWeights remap_after_recluster(const ClassifierWeights& weights,
                                        const std::map<CellId, CellClusters>& reclustered) {
    ClassifierWeights out(weights.dim(), weights.gamma(), weights.margin());
    out.step_count = weights.step_count;
    // carried-over rows keep their previous index order and optimizer state
    for (int i = 0; i < weights.class_count(); ++i) {
        const PlaceLabel& label = weights.label_of(i);
        if (reclustered.count(label.cell)) continue;
        const int idx = out.add_class(label, weights.rows().row(i).transpose());
        out.raw_rows().row(idx) = weights.rows().row(i);
        out.raw_m().row(idx) = weights.raw_m().row(i);
        out.raw_v().row(idx) = weights.raw_v().row(i);
    }
    // re-clustered cells get fresh rows at the new cluster centroids
    for (const auto& [cell, cc] : reclustered) {
        for (Eigen::Index h = 0; h < cc.centroids.rows(); ++h) {
            Vec row = cc.centroids.row(h).transpose();
            if (row.norm() < 1e-12) row = Vec::Ones(weights.dim());
            out.add_class(PlaceLabel{cell, static_cast<int>(h)}, row);
        }
    }
    return out;
}

}  // namespace mvpr
