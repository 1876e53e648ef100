#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mvpr/retrieval.hpp"
#include "mvpr/synthworld.hpp"
#include "mvpr/trainer.hpp"

namespace mvpr::io {

// ---------------------------------------------------------------------------
// Run configuration: UTF-8 key-value text, '#' comments, keys mirror the
// TrainConfig field names. Canonical writer -> byte-identical round trips.
// ---------------------------------------------------------------------------

struct RunConfig {
    // training
    double M = 10.0;
    int K = 3;
    int group_count = 8;
    double recluster_fraction = 0.2;
    int epochs = 10;
    int iterations_per_epoch = 200;
    int batch_size = 32;
    double lr_encoder = 1e-5;
    double lr_classifier = 1e-2;
    double gamma = 30.0;
    double margin = 0.4;
    std::uint64_t seed = 0;
    int d = 64;
    int block_width = 32;
    int mlp_hidden = 0;
    bool train_full_block = false;
    std::string supervision = "adaptive";  // adaptive | heading_bin
    int heading_bins = 0;
    int kmeans_restarts = 5;
    int kmeans_max_iter = 50;
    // synthetic world
    int num_cells = 64;
    int places_per_cell = 1;
    int A = 3;
    int D_in = 32;
    int T = 8;
    int cell_stride = 3;
    double texture_scale = 0.15;
    double fov = 90.0;
    double noise_sigma = 0.05;
    double occlusion_prob = 0.0;
    double occlusion_rho = 0.0;
    std::string start_angles = "0,30";
    double crop_step = 60.0;
    int queries_per_place = 2;
    double query_rho = 0.0;
    // io / eval
    std::string dataset;
    std::string out;
    std::string ks = "1,5,10";
    double radius = 25.0;
};

// Throws ParseError for unknown keys or unparsable values.
void set_config_key(RunConfig& cfg, const std::string& key, const std::string& value);

RunConfig parse_config_text(const std::string& text);
RunConfig load_config_file(const std::string& path);
std::string write_config(const RunConfig& cfg);

TrainConfig to_train_config(const RunConfig& cfg);
WorldConfig to_world_config(const RunConfig& cfg);
std::vector<double> parse_double_list(const std::string& csv);
std::vector<int> parse_int_list(const std::string& csv);

// Shortest decimal form that parses back to the identical double.
std::string format_double(double v);

// ---------------------------------------------------------------------------
// Checkpoint: magic "MVPRCKPT", one version byte, then length-prefixed named
// sections; numeric payloads are little-endian IEEE-754.
// ---------------------------------------------------------------------------

void save_checkpoint(const std::string& path, const TrainState& state);
TrainState load_checkpoint(const std::string& path);

// ---------------------------------------------------------------------------
// Descriptor database: magic "MVPRDB01", u64 record count, u32 dimension,
// then fixed-width records (64-byte id, east, north, descriptor doubles).
// ---------------------------------------------------------------------------

void save_db(const std::string& path, const DescriptorDB& db);
DescriptorDB load_db(const std::string& path);

// ---------------------------------------------------------------------------
// Text artifacts (deterministic formatting)
// ---------------------------------------------------------------------------

// One line per epoch: epoch, mean loss, mean purity, reassignment fraction, lr.
std::string format_metrics(const std::vector<MetricRow>& metrics);
void write_metrics(const std::string& path, const std::vector<MetricRow>& metrics);

std::string format_eval_report(const EvalReport& report);
void write_eval_report(const std::string& path, const EvalReport& report);

std::string format_interclass_report(const InterclassReport& report);
std::string format_reassignment_report(const std::map<CellId, CellDiff>& diffs);
std::string format_history_report(const std::vector<ReassignEvent>& history);

void write_text(const std::string& path, const std::string& text);

}  // namespace mvpr::io
