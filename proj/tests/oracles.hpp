#pragma once

// Test-only brute-force oracles, independent of the library implementations
// they check.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "mvpr/tensor.hpp"

namespace oracle {

struct KmeansOptimum {
    std::vector<int> assignments;
    double objective = std::numeric_limits<double>::infinity();
    bool unique = true;  // no second partition within 1e-12 of the optimum
};

// Exhaustive search over all K^N assignments (centroid of each group is its
// mean). Assignments are canonicalized by first occurrence so label
// permutations compare equal.
inline std::vector<int> canonical_partition(const std::vector<int>& assign) {
    std::vector<int> remap(assign.size(), -1);
    std::vector<int> out(assign.size());
    int next = 0;
    for (std::size_t i = 0; i < assign.size(); ++i) {
        if (remap[static_cast<std::size_t>(assign[i])] < 0)
            remap[static_cast<std::size_t>(assign[i])] = next++;
        out[i] = remap[static_cast<std::size_t>(assign[i])];
    }
    return out;
}

inline double partition_sse(const mvpr::Mat& points, const std::vector<int>& assign, int K) {
    const auto d = points.cols();
    mvpr::Mat sums = mvpr::Mat::Zero(K, d);
    std::vector<int> counts(static_cast<std::size_t>(K), 0);
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        sums.row(assign[static_cast<std::size_t>(i)]) += points.row(i);
        counts[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])] += 1;
    }
    double sse = 0.0;
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        const int c = assign[static_cast<std::size_t>(i)];
        const mvpr::RowVec centroid = sums.row(c) / counts[static_cast<std::size_t>(c)];
        sse += (points.row(i) - centroid).squaredNorm();
    }
    return sse;
}

inline KmeansOptimum brute_force_kmeans(const mvpr::Mat& points, int K) {
    const int n = static_cast<int>(points.rows());
    KmeansOptimum best;
    std::vector<int> assign(static_cast<std::size_t>(n), 0);
    std::vector<int> best_canon;
    for (;;) {
        bool valid = true;
        std::vector<int> counts(static_cast<std::size_t>(K), 0);
        for (int a : assign) counts[static_cast<std::size_t>(a)] += 1;
        for (int c = 0; c < K; ++c) {
            // require used labels to be a prefix so each partition is
            // enumerated once in canonical form
            if (counts[static_cast<std::size_t>(c)] == 0) {
                for (int c2 = c + 1; c2 < K; ++c2) valid = valid && counts[static_cast<std::size_t>(c2)] == 0;
                break;
            }
        }
        if (valid) {
            const std::vector<int> canon = canonical_partition(assign);
            if (canon == assign) {  // canonical representative only
                int used = 0;
                for (int c = 0; c < K; ++c)
                    if (counts[static_cast<std::size_t>(c)] > 0) ++used;
                const double sse = partition_sse(points, assign, used);
                if (sse < best.objective - 1e-12) {
                    best.objective = sse;
                    best.assignments = assign;
                    best.unique = true;
                } else if (std::fabs(sse - best.objective) <= 1e-12 && assign != best.assignments) {
                    best.unique = false;
                }
            }
        }
        // next assignment in base-K
        int i = n - 1;
        for (; i >= 0; --i) {
            if (assign[static_cast<std::size_t>(i)] + 1 < K) {
                assign[static_cast<std::size_t>(i)] += 1;
                std::fill(assign.begin() + i + 1, assign.end(), 0);
                break;
            }
        }
        if (i < 0) break;
    }
    return best;
}

// Full-sort exact nearest neighbors: (squared distance, id) ascending.
struct BruteNeighbor {
    std::string id;
    double distance = 0.0;
};

inline std::vector<BruteNeighbor> brute_force_knn(const std::vector<std::string>& ids,
                                                  const mvpr::Mat& descriptors,
                                                  const mvpr::Vec& query, int k) {
    std::vector<std::pair<double, std::string>> all;
    for (Eigen::Index i = 0; i < descriptors.rows(); ++i)
        all.emplace_back((descriptors.row(i).transpose() - query).norm(),
                         ids[static_cast<std::size_t>(i)]);
    std::sort(all.begin(), all.end());
    std::vector<BruteNeighbor> out;
    for (int i = 0; i < k && i < static_cast<int>(all.size()); ++i)
        out.push_back({all[static_cast<std::size_t>(i)].second, all[static_cast<std::size_t>(i)].first});
    return out;
}

}  // namespace oracle
