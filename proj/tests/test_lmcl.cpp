#include "doctest.h"

#include "mvpr/diffcore.hpp"
#include "mvpr/errors.hpp"
#include "mvpr/lmcl.hpp"
#include "mvpr/rng.hpp"

#include <Eigen/Dense>
#include <cmath>

using namespace mvpr;

namespace {

Vec random_unit(int d, Rng& rng) {
    Vec v(d);
    for (int i = 0; i < d; ++i) v(i) = rng.normal();
    return v / v.norm();
}

ClassifierWeights make_weights(int d, int C, double gamma, double margin, std::uint64_t seed) {
    ClassifierWeights w(d, gamma, margin);
    Rng rng(seed);
    for (int c = 0; c < C; ++c) w.add_class(PlaceLabel{CellId{c, 0}, 0}, random_unit(d, rng));
    return w;
}

// Features arranged so cos to the target row and to the other row are both c:
// symmetric two-class case, loss must be log(1 + e^{gamma * margin}).
void check_symmetric_two_class(double c, double gamma, double margin) {
    ClassifierWeights w(4, gamma, margin);
    w.add_class(PlaceLabel{CellId{0, 0}, 0}, Vec::Unit(4, 0));
    w.add_class(PlaceLabel{CellId{1, 0}, 0}, Vec::Unit(4, 1));
    // f = c*w0 + c*w1 + sqrt(1-2c^2)*e2 is unit-norm with f.w0 = f.w1 = c
    Vec f = Vec::Zero(4);
    f(0) = c;
    f(1) = c;
    f(2) = std::sqrt(1.0 - 2.0 * c * c);
    Mat features = f.transpose();
    const double loss = lmcl_loss(features, {0}, w);
    const double expected = std::log(1.0 + std::exp(gamma * margin));
    CHECK(loss == doctest::Approx(expected).epsilon(1e-9));
}

}  // namespace

TEST_CASE("symmetric two-class closed form, independent of the shared cosine") {
    check_symmetric_two_class(0.3, 30.0, 0.4);
    check_symmetric_two_class(-0.2, 30.0, 0.4);
    check_symmetric_two_class(0.0, 30.0, 0.4);
    // gamma*margin = 12 -> 12.0000061...
    ClassifierWeights w(4, 30.0, 0.4);
    w.add_class(PlaceLabel{CellId{0, 0}, 0}, Vec::Unit(4, 0));
    w.add_class(PlaceLabel{CellId{1, 0}, 0}, Vec::Unit(4, 1));
    Vec f = Vec::Zero(4);
    f(0) = 0.5;
    f(1) = 0.5;
    f(2) = std::sqrt(0.5);
    CHECK(std::fabs(lmcl_loss(f.transpose(), {0}, w) - 12.000006144174602) <= 1e-9);
}

TEST_CASE("margin 0 reduces to scaled softmax cross-entropy on cosines") {
    Rng rng(3);
    const int d = 6, C = 4, B = 5;
    ClassifierWeights w = make_weights(d, C, 20.0, 0.0, 11);
    Mat features(B, d);
    std::vector<int> targets;
    for (int b = 0; b < B; ++b) {
        features.row(b) = random_unit(d, rng).transpose();
        targets.push_back(static_cast<int>(rng.uniform_index(C)));
    }
    const double loss = lmcl_loss(features, targets, w);
    double expected = 0.0;
    for (int b = 0; b < B; ++b) {
        Vec z = 20.0 * (w.rows() * features.row(b).transpose());
        const double zmax = z.maxCoeff();
        expected += std::log((z.array() - zmax).exp().sum()) + zmax - z(targets[static_cast<std::size_t>(b)]);
    }
    expected /= B;
    CHECK(loss == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("saturated case keeps its tiny positive value") {
    // cos_y = 1, two other classes at cos = -1
    ClassifierWeights w(4, 30.0, 0.4);
    w.add_class(PlaceLabel{CellId{0, 0}, 0}, Vec::Unit(4, 0));
    w.add_class(PlaceLabel{CellId{1, 0}, 0}, -Vec::Unit(4, 0));
    w.add_class(PlaceLabel{CellId{2, 0}, 0}, -Vec::Unit(4, 0));
    Mat f = Vec::Unit(4, 0).transpose();
    const double loss = lmcl_loss(f, {0}, w);
    const double expected = std::log1p(2.0 * std::exp(-48.0));  // ~2.9e-21
    CHECK(loss > 0.0);
    CHECK(loss == doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("loss is positive on random inputs") {
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        const int C = 2 + static_cast<int>(rng.uniform_index(6));
        ClassifierWeights w = make_weights(8, C, 30.0, 0.4, derive_seed(trial, "pos"));
        Mat f = random_unit(8, rng).transpose();
        CHECK(lmcl_loss(f, {static_cast<int>(rng.uniform_index(C))}, w) > 0.0);
    }
}

TEST_CASE("gradients match finite differences") {
    // gamma varies but stays moderate: central differences at h = 1e-5 carry
    // a truncation term that scales with gamma^3 and swamps the comparison
    // once the softmax saturates.
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const double gamma = 2.0 + static_cast<double>(seed % 5) * 2.0;
        const double tol = 1e-4;
        Rng rng(derive_seed(seed, "lmcl-fd"));
        const int d = 8, C = 5, B = 4;
        diff::ParamStore store;
        Mat features(B, d);
        std::vector<int> targets;
        for (int b = 0; b < B; ++b) {
            features.row(b) = random_unit(d, rng).transpose();
            targets.push_back(static_cast<int>(rng.uniform_index(C)));
        }
        Mat rows(C, d);
        Rng wrng(derive_seed(seed, "lmcl-fd-w"));
        for (int c = 0; c < C; ++c) rows.row(c) = random_unit(d, wrng).transpose();
        store.add("F", features);
        store.add("W", rows);

        const auto classifier_from_store = [&] {
            ClassifierWeights wl(d, gamma, 0.4);
            for (int c = 0; c < C; ++c)
                wl.add_class(PlaceLabel{CellId{c, 0}, 0}, store.value("W").row(c).transpose());
            wl.raw_rows() = store.value("W");  // keep perturbed rows as-is
            return wl;
        };
        const auto loss = [&] { return lmcl_loss(store.value("F"), targets, classifier_from_store()); };
        LmclGrads grads = lmcl_backward(store.value("F"), targets, classifier_from_store());
        store.grad("F") = grads.dfeatures;
        store.grad("W") = grads.dweights;
        CHECK(diff::fd_check(store, loss, 1e-5) <= tol);
    }
}

TEST_CASE("gradients at the training gamma stay within fd oracle noise") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(derive_seed(seed, "lmcl-fd30"));
        const int d = 8, C = 5, B = 4;
        diff::ParamStore store;
        Mat features(B, d);
        std::vector<int> targets;
        for (int b = 0; b < B; ++b) {
            features.row(b) = random_unit(d, rng).transpose();
            targets.push_back(static_cast<int>(rng.uniform_index(C)));
        }
        Mat rows(C, d);
        Rng wrng(derive_seed(seed, "lmcl-fd30-w"));
        for (int c = 0; c < C; ++c) rows.row(c) = random_unit(d, wrng).transpose();
        store.add("F", features);
        store.add("W", rows);
        const auto classifier_from_store = [&] {
            ClassifierWeights wl(d, 30.0, 0.4);
            for (int c = 0; c < C; ++c)
                wl.add_class(PlaceLabel{CellId{c, 0}, 0}, store.value("W").row(c).transpose());
            wl.raw_rows() = store.value("W");
            return wl;
        };
        const auto loss = [&] { return lmcl_loss(store.value("F"), targets, classifier_from_store()); };
        LmclGrads grads = lmcl_backward(store.value("F"), targets, classifier_from_store());
        store.grad("F") = grads.dfeatures;
        store.grad("W") = grads.dweights;
        CHECK(diff::fd_check(store, loss, 1e-5) <= 1e-3);
    }
}

TEST_CASE("symmetric two-class gradient points toward the target row") {
    ClassifierWeights w(4, 30.0, 0.4);
    Vec w0 = Vec::Unit(4, 0), w1 = Vec::Unit(4, 1);
    w.add_class(PlaceLabel{CellId{0, 0}, 0}, w0);
    w.add_class(PlaceLabel{CellId{1, 0}, 0}, w1);
    Vec f = Vec::Zero(4);
    f(0) = 0.4;
    f(1) = 0.4;
    f(2) = std::sqrt(1.0 - 0.32);
    LmclGrads g = lmcl_backward(f.transpose(), {0}, w);
    // moving opposite the gradient must increase cos to w0 and decrease cos to w1
    Vec step = -g.dfeatures.row(0).transpose();
    CHECK(step.dot(w0) > 0.0);
    CHECK(step.dot(w1) < 0.0);
}

TEST_CASE("gamma 0 yields exactly zero gradients and constant loss") {
    Rng rng(9);
    ClassifierWeights w = make_weights(6, 3, 0.0, 0.4, 21);
    Mat f = random_unit(6, rng).transpose();
    CHECK(lmcl_loss(f, {1}, w) == doctest::Approx(std::log(3.0)).epsilon(1e-12));
    LmclGrads g = lmcl_backward(f, {1}, w);
    CHECK(g.dfeatures.cwiseAbs().maxCoeff() == 0.0);
    CHECK(g.dweights.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("loss is invariant under a shared rotation of features and rows") {
    Rng rng(13);
    const int d = 6, C = 4, B = 3;
    ClassifierWeights w = make_weights(d, C, 30.0, 0.4, 31);
    Mat features(B, d);
    std::vector<int> targets{0, 2, 1};
    for (int b = 0; b < B; ++b) features.row(b) = random_unit(d, rng).transpose();
    const double base = lmcl_loss(features, targets, w);

    // random orthogonal matrix via QR
    Mat gauss(d, d);
    for (Eigen::Index i = 0; i < gauss.size(); ++i) gauss.data()[i] = rng.normal();
    Eigen::HouseholderQR<Mat> qr(gauss);
    Mat Q = qr.householderQ();

    ClassifierWeights wr(d, 30.0, 0.4);
    for (int c = 0; c < C; ++c)
        wr.add_class(PlaceLabel{CellId{c, 0}, 0}, (w.rows().row(c) * Q.transpose()).transpose());
    wr.raw_rows() = w.rows() * Q.transpose();
    Mat rotated = features * Q.transpose();
    CHECK(lmcl_loss(rotated, targets, wr) == doctest::Approx(base).epsilon(1e-9));
}

TEST_CASE("non-normalized inputs beyond tolerance are rejected") {
    ClassifierWeights w = make_weights(4, 2, 30.0, 0.4, 1);
    Mat f = 1.5 * Vec::Unit(4, 0).transpose();
    CHECK_THROWS_AS(lmcl_loss(f, {0}, w), ContractError);
    CHECK_THROWS_AS(lmcl_backward(f, {0}, w), ContractError);
    Mat ok = Vec::Unit(4, 0).transpose();
    CHECK_THROWS_AS(lmcl_loss(ok, {7}, w), ContractError);
}

TEST_CASE("loss decreases on a linearly separable toy problem for every seed") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(derive_seed(seed, "toy"));
        const int d = 16, C = 4, B = 32;
        // four separated bundles of unit features
        std::vector<Vec> centers;
        for (int c = 0; c < C; ++c) centers.push_back(Vec::Unit(d, c * 3));
        Mat features(B, d);
        std::vector<int> targets;
        for (int b = 0; b < B; ++b) {
            const int c = b % C;
            Vec v = centers[static_cast<std::size_t>(c)] + 0.15 * random_unit(d, rng);
            features.row(b) = (v / v.norm()).transpose();
            targets.push_back(c);
        }
        ClassifierWeights w = make_weights(d, C, 30.0, 0.4, derive_seed(seed, "toy-w"));
        const double initial = lmcl_loss(features, targets, w);
        double final_loss = initial;
        for (int step = 0; step < 50; ++step) {
            LmclGrads g = lmcl_backward(features, targets, w);
            w.apply_gradient(g.dweights, 1e-2);
            final_loss = g.loss;
        }
        CHECK(final_loss < initial);
    }
}

TEST_CASE("remap_after_recluster") {
    Rng rng(17);
    ClassifierWeights w(4, 30.0, 0.4);
    w.add_class(PlaceLabel{CellId{0, 0}, 0}, random_unit(4, rng));
    w.add_class(PlaceLabel{CellId{0, 0}, 1}, random_unit(4, rng));
    w.add_class(PlaceLabel{CellId{5, 5}, 0}, random_unit(4, rng));
    w.step_count = 42;

    SUBCASE("no cells re-clustered keeps weights bit-exact") {
        ClassifierWeights out = remap_after_recluster(w, {});
        CHECK(out.class_count() == 3);
        CHECK((out.rows() - w.rows()).cwiseAbs().maxCoeff() == 0.0);
        CHECK(out.step_count == 42);
        for (int i = 0; i < 3; ++i) CHECK(out.label_of(i) == w.label_of(i));
    }
    SUBCASE("re-clustered cell rows become the normalized new centroids") {
        CellClusters cc;
        cc.centroids = Mat::Zero(2, 4);
        cc.centroids.row(0) << 2.0, 0.0, 0.0, 0.0;
        cc.centroids.row(1) << 0.0, 0.5, 0.5, 0.0;
        cc.assignments["a"] = 0;
        cc.assignments["b"] = 1;
        ClassifierWeights out = remap_after_recluster(w, {{CellId{0, 0}, cc}});
        CHECK(out.class_count() == 3);
        // untouched cell first (kept order), then the re-clustered cell
        CHECK(out.label_of(0) == PlaceLabel{CellId{5, 5}, 0});
        CHECK((out.rows().row(0) - w.rows().row(2)).cwiseAbs().maxCoeff() == 0.0);
        const int i0 = out.index_of(PlaceLabel{CellId{0, 0}, 0});
        const int i1 = out.index_of(PlaceLabel{CellId{0, 0}, 1});
        REQUIRE(i0 >= 0);
        REQUIRE(i1 >= 0);
        CHECK(out.rows().row(i0)(0) == doctest::Approx(1.0));
        CHECK(out.rows().row(i1).norm() == doctest::Approx(1.0));
    }
    SUBCASE("shrinking K_eff shrinks the row count and keeps the map bijective") {
        CellClusters cc;
        cc.centroids = Mat::Zero(1, 4);
        cc.centroids.row(0) << 1.0, 0.0, 0.0, 0.0;
        cc.assignments["a"] = 0;
        ClassifierWeights out = remap_after_recluster(w, {{CellId{0, 0}, cc}});
        CHECK(out.class_count() == 2);
        CHECK(out.index_of(PlaceLabel{CellId{0, 0}, 0}) >= 0);
        CHECK(out.index_of(PlaceLabel{CellId{0, 0}, 1}) == -1);
        CHECK(out.index_of(PlaceLabel{CellId{5, 5}, 0}) >= 0);
    }
}
