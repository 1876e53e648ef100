#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mvpr/clusterer.hpp"
#include "mvpr/tensor.hpp"

namespace mvpr {

// Large margin cosine classifier: one unit-norm row per active PlaceLabel.
// Rows are renormalized after every optimizer step rather than
// reparameterized.
class ClassifierWeights {
public:
    ClassifierWeights() = default;
    ClassifierWeights(int dim, double gamma, double margin);

    int dim() const { return dim_; }
    double gamma() const { return gamma_; }
    double margin() const { return margin_; }
    int class_count() const { return static_cast<int>(labels_.size()); }

    const Mat& rows() const { return W_; }
    const std::vector<PlaceLabel>& labels() const { return labels_; }

    // -1 when the label has no row.
    int index_of(const PlaceLabel& label) const;
    const PlaceLabel& label_of(int index) const { return labels_.at(index); }

    // Appends a row (renormalized copy of `row`); zeroed Adam moments.
    int add_class(const PlaceLabel& label, const Vec& row);

    // Adam update on all rows followed by row renormalization.
    void apply_gradient(const Mat& dW, double lr, double beta1 = 0.9, double beta2 = 0.999,
                        double eps = 1e-8);

    std::uint64_t step_count = 0;

    // Serialization access (cli module owns the format).
    Mat& raw_rows() { return W_; }
    Mat& raw_m() { return m_; }
    Mat& raw_v() { return v_; }
    const Mat& raw_m() const { return m_; }
    const Mat& raw_v() const { return v_; }
    void set_hyper(int dim, double gamma, double margin);
    void rebuild_index(std::vector<PlaceLabel> labels);

private:
    int dim_ = 0;
    double gamma_ = 30.0;
    double margin_ = 0.4;
    Mat W_;  // C x d
    Mat m_;
    Mat v_;
    std::vector<PlaceLabel> labels_;
    std::map<PlaceLabel, int> index_;
};

// Mean over the batch of -log( e^{g(cos_y - m)} / (e^{g(cos_y - m)} +
// sum_{j != y} e^{g cos_j}) ), with log-sum-exp stabilization. Features and
// weight rows must be unit-norm within 1e-4.
double lmcl_loss(const Mat& features, const std::vector<int>& targets,
                 const ClassifierWeights& weights);

struct LmclGrads {
    double loss = 0.0;
    Mat dfeatures;  // B x d
    Mat dweights;   // C x d
};

LmclGrads lmcl_backward(const Mat& features, const std::vector<int>& targets,
                        const ClassifierWeights& weights);

// After re-clustering some cells: rows of re-clustered cells are replaced by
// the unit-normalized centroids of the new assignment (fresh optimizer
// moments); rows of untouched cells are carried over bit-exactly.
ClassifierWeights remap_after_recluster(const ClassifierWeights& weights,
                                        const std::map<CellId, CellClusters>& reclustered);

}  // namespace mvpr
