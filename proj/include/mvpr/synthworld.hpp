#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mvpr/geo.hpp"
#include "mvpr/tensor.hpp"

namespace mvpr {

// One view observation. `true_group` is the generator's ground-truth view
// semantic, absent for ingested data; it is never consumed by training, only
// by baselines and analysis.
struct GeoImage {
    std::string id;
    UtmPoint position;
    double heading = 0.0;  // degrees in [0, 360)
    Mat tokens;            // T x D_in
    std::optional<int> true_group;
    bool occluded = false;
};

// A physical location with A latent scene aspects ("anchors"), one per
// semantic view group.
struct Place {
    UtmPoint position;
    Mat anchors;                          // A x D_in, unit rows
    std::vector<double> anchor_headings;  // degrees, sorted ascending
};

struct WorldConfig {
    int num_cells = 64;
    int places_per_cell = 1;
    int anchors_per_place = 3;  // A
    int input_dim = 32;         // D_in
    int tokens_per_view = 8;    // T
    double cell_size_m = 10.0;  // M
    // Populated cells are placed on a strided lattice so that distinct places
    // sit farther apart than the retrieval radius.
    int cell_stride = 3;
    double texture_scale = 0.15;
    std::uint64_t seed = 0;
};

struct World {
    WorldConfig cfg;
    std::vector<Place> places;
    Mat occluders;  // shared pool of occluder signatures, one per row
    Mat texture;    // T x D_in fixed per-world token offsets

    double cell_size() const { return cfg.cell_size_m; }
};

struct OcclusionSpec {
    double rho = 0.0;  // fraction of token rows replaced by an occluder
};

// Deterministic in cfg (including cfg.seed). Anchor sets are resampled until
// pairwise |cosine| < 0.2; gives up with GenerationError after bounded tries.
World generate_world(const WorldConfig& cfg);

// For each start angle a: a, a+step, ..., a+360-step (mod 360), deduplicated
// and sorted. step must divide 360.
std::vector<double> crop_schedule(const std::vector<double>& start_angles, double step);

// Blend of anchors within +-fov/2 of `heading` (raised-cosine falloff), tiled
// into T token rows with a fixed per-world texture offset, plus optional
// Gaussian noise. Occlusion replaces a contiguous run of round(rho*T) rows
// with one of the shared occluder signatures.
GeoImage render_view(const World& world, int place_index, double heading, double fov,
                     double noise_sigma, const OcclusionSpec& occlusion, std::uint64_t seed);

// Renders every place at every heading of `headings`; each view is occluded
// with probability occlusion_prob at strength rho.
std::vector<GeoImage> render_dataset(const World& world, const std::vector<double>& headings,
                                     double fov, double noise_sigma, double occlusion_prob,
                                     double rho, std::uint64_t seed);

// Query set: `per_place` views at uniform random headings, all occluded at
// strength rho (rho = 0 gives clean queries).
std::vector<GeoImage> render_queries(const World& world, int per_place, double fov,
                                     double noise_sigma, double rho, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Manifest interface
//
// Manifest: UTF-8 text, one record per line, `id@east@north@heading@offset`.
// Token sidecar at <manifest path>.tokens: 8-byte magic "MVPRTOK1", then T and
// D_in as 32-bit unsigned little-endian, then row-major T x D_in float32
// blocks at the recorded byte offsets.
// Truth sidecar at <manifest path>.truth (optional): `id@group@occluded`.
// ---------------------------------------------------------------------------

void save_manifest(const std::string& manifest_path, const std::vector<GeoImage>& images,
                   bool write_truth);

std::vector<GeoImage> load_manifest(const std::string& manifest_path);

std::string tokens_sidecar_path(const std::string& manifest_path);
std::string truth_sidecar_path(const std::string& manifest_path);

}  // namespace mvpr
