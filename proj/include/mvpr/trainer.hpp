#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mvpr/clusterer.hpp"
#include "mvpr/encoder.hpp"
#include "mvpr/lmcl.hpp"
#include "mvpr/retrieval.hpp"
#include "mvpr/rng.hpp"
#include "mvpr/synthworld.hpp"

namespace mvpr {

enum class Supervision {
    kAdaptive,    // per-cell K-means on learned descriptors, re-clustered during training
    kHeadingBin,  // fixed orientation-label baseline
};

struct TrainConfig {
    double cell_size_m = 10.0;  // M
    int K = 3;
    int group_count = 8;
    double recluster_fraction = 0.2;  // 0 disables stage 2 (static-label control)
    int epochs = 10;
    int iterations_per_epoch = 200;
    int batch_size = 32;
    double lr_encoder = 1e-5;  // cosine-annealed over the whole run
    double lr_classifier = 1e-2;
    double gamma = 30.0;
    double margin = 0.4;
    std::uint64_t seed = 0;
    int descriptor_dim = 64;
    int block_width = 32;
    int mlp_hidden = 0;  // 0 -> 4 * block_width
    bool train_full_block = false;
    Supervision supervision = Supervision::kAdaptive;
    int heading_bins = 0;  // 0 -> K
    int kmeans_restarts = 5;
    int kmeans_max_iter = 50;
};

struct Dataset {
    std::vector<GeoImage> images;
    std::map<std::string, std::size_t> by_id;
    std::map<CellId, std::vector<std::size_t>> cells;  // image indices per cell
};

Dataset build_dataset(std::vector<GeoImage> images, double cell_size_m);

struct MetricRow {
    int epoch = 0;  // 1-based
    double mean_loss = 0.0;
    double mean_purity = 0.0;  // NaN when no ground truth is known
    double reassign_fraction = 0.0;
    double lr = 0.0;  // encoder lr at the first step of the epoch
};

struct TrainState {
    TrainConfig cfg;
    EncoderParams encoder;
    ClassifierWeights classifier;
    ClusterState clusters;
    std::map<std::string, PlaceLabel> labels;
    std::map<CellId, int> cell_group;  // fixed partition of cells into epoch groups
    int epoch = 0;                     // completed epochs
    std::vector<MetricRow> metrics;
    std::vector<std::string> warnings;
};

// Grid cells, initial descriptors from the freshly initialized encoder,
// initial per-cell labels, classifier rows at the cluster centroids.
TrainState initialize(const Dataset& dataset, const TrainConfig& cfg);

// Stage 1: class-balanced LMCL training on the epoch's cell group.
// Stage 2 (adaptive supervision, recluster_fraction > 0): re-cluster a random
// subset of the group's cells with current descriptors and remap classifier
// rows. Appends one MetricRow.
void train_epoch(TrainState& state, const Dataset& dataset);

// lr_max * (1 + cos(pi * step / total_steps)) / 2, clamped past total_steps.
double cosine_lr(int step, int total_steps, double lr_max);

struct BatchItem {
    std::string id;
    PlaceLabel label;
};

// Class-balanced sampler: each batch holds distinct classes, one image per
// class, deterministic given seed. Shrinks (with a warning flag) when fewer
// classes are active than batch_size.
class BatchSampler {
public:
    BatchSampler(std::vector<std::pair<PlaceLabel, std::vector<std::string>>> classes,
                 int batch_size, std::uint64_t seed);

    std::vector<BatchItem> next();

    int effective_batch_size() const { return batch_size_; }
    bool shrunk() const { return shrunk_; }

private:
    std::vector<std::pair<PlaceLabel, std::vector<std::string>>> classes_;
    int batch_size_;
    bool shrunk_ = false;
    Rng rng_;
};

// Encodes every image and assembles the retrieval database.
DescriptorDB embed_images(const std::vector<GeoImage>& images, const EncoderParams& encoder);

// Ground truth for images that carry it (synthetic data), keyed by id.
std::map<std::string, int> known_truth(const std::vector<GeoImage>& images);

}  // namespace mvpr
