#include "mvpr/clusterer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "mvpr/errors.hpp"
#include "mvpr/rng.hpp"

namespace mvpr {

namespace {

int count_distinct_rows(const Mat& points) {
    std::vector<int> idx(points.rows());
    for (int i = 0; i < points.rows(); ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](int a, int b) {
        for (Eigen::Index c = 0; c < points.cols(); ++c) {
            if (points(a, c) != points(b, c)) return points(a, c) < points(b, c);
        }
        return false;
    });
    int distinct = points.rows() > 0 ? 1 : 0;
    for (std::size_t i = 1; i < idx.size(); ++i)
        if (points.row(idx[i]) != points.row(idx[i - 1])) ++distinct;
    return distinct;
}

double sq_dist(const Mat& points, int row, const Mat& centroids, int c) {
    return (points.row(row) - centroids.row(c)).squaredNorm();
}

struct LloydRun {
    std::vector<int> assignments;
    Mat centroids;
    double objective = std::numeric_limits<double>::infinity();
    std::vector<double> trace;
};

LloydRun lloyd_once(const Mat& points, int k_eff, int max_iter, std::uint64_t seed) {
    const int n = static_cast<int>(points.rows());
    Rng rng(seed);
    LloydRun run;
    run.centroids.resize(k_eff, points.cols());

    // k-means++ seeding
    std::vector<double> d2(n, std::numeric_limits<double>::infinity());
    const int first = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(n)));
    run.centroids.row(0) = points.row(first);
    for (int c = 1; c < k_eff; ++c) {
        double total = 0.0;
        for (int i = 0; i < n; ++i) {
            d2[i] = std::min(d2[i], sq_dist(points, i, run.centroids, c - 1));
            total += d2[i];
        }
        int pick = -1;
        const double u = rng.uniform() * total;
        double acc = 0.0;
        for (int i = 0; i < n; ++i) {
            acc += d2[i];
            if (u < acc) {
                pick = i;
                break;
            }
        }
        if (pick < 0) {  // numeric tail: fall back to the farthest point
            double best = -1.0;
            for (int i = 0; i < n; ++i)
                if (d2[i] > best) {
                    best = d2[i];
                    pick = i;
                }
        }
        run.centroids.row(c) = points.row(pick);
    }

    std::vector<int> assign(n, -1), prev;
    for (int iter = 0; iter < max_iter; ++iter) {
        // assignment step; ties go to the lowest centroid index
        for (int i = 0; i < n; ++i) {
            int best_c = 0;
            double best_d = sq_dist(points, i, run.centroids, 0);
            for (int c = 1; c < k_eff; ++c) {
                const double d = sq_dist(points, i, run.centroids, c);
                if (d < best_d) {
                    best_d = d;
                    best_c = c;
                }
            }
            assign[i] = best_c;
        }
        // empty-cluster repair: re-seed at the point farthest from its centroid
        for (int c = 0; c < k_eff; ++c) {
            if (std::find(assign.begin(), assign.end(), c) != assign.end()) continue;
            int far = 0;
            double far_d = -1.0;
            for (int i = 0; i < n; ++i) {
                const double d = sq_dist(points, i, run.centroids, assign[i]);
                if (d > far_d) {
                    far_d = d;
                    far = i;
                }
            }
            run.centroids.row(c) = points.row(far);
            assign[far] = c;
        }
        double obj = 0.0;
        for (int i = 0; i < n; ++i) obj += sq_dist(points, i, run.centroids, assign[i]);
        run.trace.push_back(obj);
        run.objective = obj;
        if (assign == prev) break;
        prev = assign;
        if (run.trace.size() < static_cast<std::size_t>(max_iter)) {
            // mean update
            Mat sums = Mat::Zero(k_eff, points.cols());
            std::vector<int> counts(k_eff, 0);
            for (int i = 0; i < n; ++i) {
                sums.row(assign[i]) += points.row(i);
                counts[assign[i]] += 1;
            }
            for (int c = 0; c < k_eff; ++c)
                if (counts[c] > 0) run.centroids.row(c) = sums.row(c) / counts[c];
        }
    }
    run.assignments = std::move(assign);
    return run;
}

}  // namespace

KmeansResult kmeans(const Mat& points, int K, int restarts, int max_iter, std::uint64_t seed) {
    if (points.rows() < 1) throw ParamError("kmeans: need at least one point");
    if (K < 1) throw ParamError("kmeans: K must be >= 1");
    if (restarts < 1 || max_iter < 1) throw ParamError("kmeans: restarts and max_iter must be >= 1");

    const int k_eff = std::min(K, count_distinct_rows(points));
    KmeansResult result;
    result.k_eff = k_eff;
    LloydRun best;
    for (int r = 0; r < restarts; ++r) {
        LloydRun run = lloyd_once(points, k_eff, max_iter, derive_seed(seed, "kmeans-restart",
                                                                       static_cast<std::uint64_t>(r)));
        result.objective_traces.push_back(run.trace);
        if (run.objective < best.objective) best = std::move(run);
    }
    result.assignments = std::move(best.assignments);
    result.centroids = std::move(best.centroids);
    result.objective = best.objective;
    return result;
}

LabelingResult assign_place_labels(
    const std::map<CellId, std::vector<std::pair<std::string, Vec>>>& cell_groups, int K,
    int restarts, int max_iter, std::uint64_t seed) {
    LabelingResult out;
    for (const auto& [cell, members] : cell_groups) {
        if (members.empty()) {
            out.warnings.push_back("cell (" + std::to_string(cell.e_i) + "," +
                                   std::to_string(cell.n_j) + ") is empty; skipped");
            continue;
        }
        Mat points(members.size(), members.front().second.size());
        for (std::size_t i = 0; i < members.size(); ++i)
            points.row(i) = members[i].second.transpose();
        KmeansResult km =
            kmeans(points, K, restarts, max_iter,
                   derive_seed(seed, "cell-kmeans", static_cast<std::uint64_t>(cell.e_i),
                               static_cast<std::uint64_t>(cell.n_j)));
        CellClusters cc;
        cc.centroids = km.centroids;
        cc.objective = km.objective;
        for (std::size_t i = 0; i < members.size(); ++i) {
            cc.assignments[members[i].first] = km.assignments[i];
            out.labels[members[i].first] = PlaceLabel{cell, km.assignments[i]};
        }
        out.cells[cell] = std::move(cc);
    }
    return out;
}

std::map<std::string, PlaceLabel> heading_bin_labels(const std::vector<GeoImage>& images,
                                                     int bins, double cell_size_m) {
    if (bins < 1) throw ParamError("heading_bin_labels: bins must be >= 1");
    std::map<std::string, PlaceLabel> labels;
    const double width = 360.0 / static_cast<double>(bins);
    for (const auto& img : images) {
        if (!std::isfinite(img.heading))
            throw ContractError("heading_bin_labels: unknown heading for id '" + img.id + "'");
        int h = static_cast<int>(std::floor(img.heading / width));
        h = std::clamp(h, 0, bins - 1);
        labels[img.id] = PlaceLabel{grid_cell(img.position, cell_size_m), h};
    }
    return labels;
}

double purity(const std::map<std::string, PlaceLabel>& labels,
              const std::map<std::string, int>& truth) {
    if (labels.size() != truth.size())
        throw ContractError("purity: label and truth key sets differ in size");
    // cell -> cluster h -> truth group -> count
    std::map<CellId, std::map<int, std::map<int, int>>> tally;
    std::map<CellId, int> cell_sizes;
    for (const auto& [id, label] : labels) {
        auto it = truth.find(id);
        if (it == truth.end()) throw ContractError("purity: no truth entry for id '" + id + "'");
        tally[label.cell][label.h][it->second] += 1;
        cell_sizes[label.cell] += 1;
    }
    double weighted = 0.0;
    std::size_t total = 0;
    for (const auto& [cell, clusters] : tally) {
        int majority_sum = 0;
        for (const auto& [h, groups] : clusters) {
            int best = 0;
            for (const auto& [g, count] : groups) best = std::max(best, count);
            majority_sum += best;
        }
        weighted += majority_sum;  // cell purity * cell size
        total += static_cast<std::size_t>(cell_sizes[cell]);
    }
    return total > 0 ? weighted / static_cast<double>(total) : 0.0;
}

namespace {

// Greedy maximum-overlap matching of prev clusters onto next clusters.
std::vector<int> match_clusters(const std::vector<std::vector<int>>& overlap) {
    const int np = static_cast<int>(overlap.size());
    const int nn = np > 0 ? static_cast<int>(overlap[0].size()) : 0;
    std::vector<int> match(np, -1);
    std::vector<bool> prev_used(np, false), next_used(nn, false);
    for (int step = 0; step < std::min(np, nn); ++step) {
        int best_i = -1, best_j = -1, best = -1;
        for (int i = 0; i < np; ++i) {
            if (prev_used[i]) continue;
            for (int j = 0; j < nn; ++j) {
                if (next_used[j]) continue;
                if (overlap[i][j] > best) {
                    best = overlap[i][j];
                    best_i = i;
                    best_j = j;
                }
            }
        }
        match[best_i] = best_j;
        prev_used[best_i] = true;
        next_used[best_j] = true;
    }
    return match;
}

}  // namespace

std::map<CellId, CellDiff> reassignment_diff(const std::map<CellId, CellClusters>& prev,
                                             const std::map<CellId, CellClusters>& next) {
    std::map<CellId, CellDiff> out;
    for (const auto& [cell, prev_cc] : prev) {
        auto it = next.find(cell);
        if (it == next.end()) continue;
        const CellClusters& next_cc = it->second;
        if (prev_cc.assignments.size() != next_cc.assignments.size())
            throw ContractError("reassignment_diff: image sets differ for a shared cell");
        int k_prev = 0, k_next = 0;
        for (const auto& [id, h] : prev_cc.assignments) k_prev = std::max(k_prev, h + 1);
        for (const auto& [id, h] : next_cc.assignments) k_next = std::max(k_next, h + 1);
        std::vector<std::vector<int>> overlap(k_prev, std::vector<int>(k_next, 0));
        for (const auto& [id, h] : prev_cc.assignments) {
            auto jt = next_cc.assignments.find(id);
            if (jt == next_cc.assignments.end())
                throw ContractError("reassignment_diff: image sets differ for a shared cell");
            overlap[h][jt->second] += 1;
        }
        const std::vector<int> match = match_clusters(overlap);
        CellDiff diff;
        for (const auto& [id, h] : prev_cc.assignments) {
            const int new_h = next_cc.assignments.at(id);
            if (match[h] != new_h) diff.moved.push_back({id, h, new_h});
        }
        diff.fraction =
            static_cast<double>(diff.moved.size()) / static_cast<double>(prev_cc.assignments.size());
        out[cell] = std::move(diff);
    }
    return out;
}

}  // namespace mvpr
