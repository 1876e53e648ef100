#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mvpr/geo.hpp"
#include "mvpr/synthworld.hpp"
#include "mvpr/tensor.hpp"

namespace mvpr {

// The training class identity: grid cell plus within-cell cluster index.
struct PlaceLabel {
    CellId cell;
    int h = 0;

    friend auto operator<=>(const PlaceLabel&, const PlaceLabel&) = default;
};

struct KmeansResult {
    std::vector<int> assignments;  // per input row
    Mat centroids;                 // K_eff x d
    double objective = 0.0;        // sum of squared distances
    // Per restart, the objective after each Lloyd iteration (non-increasing).
    std::vector<std::vector<double>> objective_traces;
    int k_eff = 0;
};

// Lloyd's algorithm with k-means++ seeding, best of `restarts` runs.
// K_eff = min(K, number of distinct rows); empty clusters are re-seeded at
// the point farthest from its assigned centroid. Deterministic given seed.
KmeansResult kmeans(const Mat& points, int K, int restarts, int max_iter, std::uint64_t seed);

struct CellClusters {
    Mat centroids;                          // K_eff x d
    std::map<std::string, int> assignments; // image id -> h
    double objective = 0.0;
    int epoch = 0;  // epoch stamp of the clustering that produced this
};

struct ReassignedImage {
    std::string id;
    int old_h = 0;
    int new_h = 0;
};

struct ReassignEvent {
    int epoch = 0;
    CellId cell;
    std::vector<ReassignedImage> moved;
    std::size_t cell_size = 0;
};

struct ClusterState {
    std::map<CellId, CellClusters> cells;
    std::vector<ReassignEvent> history;
};

struct LabelingResult {
    std::map<std::string, PlaceLabel> labels;
    std::map<CellId, CellClusters> cells;
    std::vector<std::string> warnings;
};

// Runs kmeans independently per cell; label = (cell, h). Deterministic given
// seed (each cell derives its own stream). Empty cell groups are skipped with
// a warning record.
LabelingResult assign_place_labels(
    const std::map<CellId, std::vector<std::pair<std::string, Vec>>>& cell_groups, int K,
    int restarts, int max_iter, std::uint64_t seed);

// Orientation-label baseline: h = floor(heading / (360 / bins)). Consumes no
// descriptors. Throws on images with non-finite heading.
std::map<std::string, PlaceLabel> heading_bin_labels(const std::vector<GeoImage>& images,
                                                     int bins, double cell_size_m);

// Size-weighted average over cells of (sum over clusters of the majority
// ground-truth count) / cell size. Key sets must match exactly.
double purity(const std::map<std::string, PlaceLabel>& labels,
              const std::map<std::string, int>& truth);

struct CellDiff {
    double fraction = 0.0;
    std::vector<ReassignedImage> moved;
};

// Fraction of images whose cluster changed between two clusterings of the
// same cells, after matching cluster identities by maximum overlap (greedy on
// the overlap matrix). Cells present in both states must hold identical
// image sets.
std::map<CellId, CellDiff> reassignment_diff(const std::map<CellId, CellClusters>& prev,
                                             const std::map<CellId, CellClusters>& next);

}  // namespace mvpr
