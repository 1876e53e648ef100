#include "mvpr/synthworld.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <map>
#include <set>

#include "mvpr/errors.hpp"
#include "mvpr/rng.hpp"

namespace mvpr {

namespace {

constexpr int kOccluderPoolSize = 4;
constexpr int kAnchorRetryBudget = 10000;
constexpr double kPi = 3.14159265358979323846;

Vec random_unit(int dim, Rng& rng) {
    Vec v(dim);
    double n = 0.0;
    do {
        for (int i = 0; i < dim; ++i) v(i) = rng.normal();
        n = v.norm();
    } while (n < 1e-12);
    return v / n;
}

// Absolute angular difference in degrees, result in [0, 180].
double angle_dist(double a, double b) {
    const double d = std::fabs(std::fmod(a - b + 540.0, 360.0) - 180.0);
    return d;
}

}  // namespace

World generate_world(const WorldConfig& cfg) {
    if (cfg.num_cells < 1 || cfg.places_per_cell < 1 || cfg.anchors_per_place < 1)
        throw ParamError("generate_world: counts must be >= 1");
    if (cfg.input_dim < 4) throw ParamError("generate_world: input_dim must be >= 4");
    if (cfg.tokens_per_view < 1) throw ParamError("generate_world: tokens_per_view must be >= 1");
    if (!(cfg.cell_size_m > 0.0)) throw ParamError("generate_world: cell size must be > 0");
    if (cfg.cell_stride < 1) throw ParamError("generate_world: cell_stride must be >= 1");

    World w;
    w.cfg = cfg;
    Rng rng(derive_seed(cfg.seed, "world"));

    const int side = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(cfg.num_cells))));
    const int A = cfg.anchors_per_place;
    const double spacing = 360.0 / static_cast<double>(A);
    int retries = 0;

    for (int c = 0; c < cfg.num_cells; ++c) {
        const int ci = (c % side) * cfg.cell_stride;
        const int cj = (c / side) * cfg.cell_stride;
        for (int p = 0; p < cfg.places_per_cell; ++p) {
            Place place;
            place.position.east = (static_cast<double>(ci) + rng.uniform(0.2, 0.8)) * cfg.cell_size_m;
            place.position.north = (static_cast<double>(cj) + rng.uniform(0.2, 0.8)) * cfg.cell_size_m;

            place.anchors.resize(A, cfg.input_dim);
            for (int a = 0; a < A; ++a) {
                for (;;) {
                    Vec cand = random_unit(cfg.input_dim, rng);
                    bool ok = true;
                    for (int b = 0; b < a && ok; ++b)
                        ok = std::fabs(cand.dot(place.anchors.row(b).transpose())) < 0.2;
                    if (ok) {
                        place.anchors.row(a) = cand.transpose();
                        break;
                    }
                    if (++retries > kAnchorRetryBudget)
                        throw GenerationError("generate_world: anchor rejection sampling exhausted");
                }
            }

            const double rotation = rng.uniform(0.0, 360.0);
            place.anchor_headings.resize(A);
            for (int a = 0; a < A; ++a) {
                const double jitter = rng.uniform(-0.15, 0.15) * spacing;
                place.anchor_headings[a] =
                    std::fmod(rotation + spacing * a + jitter + 720.0, 360.0);
            }
            std::sort(place.anchor_headings.begin(), place.anchor_headings.end());
            w.places.push_back(std::move(place));
        }
    }

    w.occluders.resize(kOccluderPoolSize, cfg.input_dim);
    for (int i = 0; i < kOccluderPoolSize; ++i)
        w.occluders.row(i) = random_unit(cfg.input_dim, rng).transpose();
    w.texture.resize(cfg.tokens_per_view, cfg.input_dim);
    for (int t = 0; t < cfg.tokens_per_view; ++t)
        w.texture.row(t) = random_unit(cfg.input_dim, rng).transpose();
    return w;
}

std::vector<double> crop_schedule(const std::vector<double>& start_angles, double step) {
    if (!(step > 0.0) || step > 360.0) throw ParamError("crop_schedule: step must be in (0, 360]");
    const double ratio = 360.0 / step;
    if (std::fabs(ratio - std::round(ratio)) > 1e-9)
        throw ParamError("crop_schedule: step must divide 360");
    const int n = static_cast<int>(std::round(ratio));
    std::set<double> headings;
    for (double a : start_angles)
        for (int i = 0; i < n; ++i)
            headings.insert(std::fmod(std::fmod(a + step * i, 360.0) + 360.0, 360.0));
    return {headings.begin(), headings.end()};
}

GeoImage render_view(const World& world, int place_index, double heading, double fov,
                     double noise_sigma, const OcclusionSpec& occlusion, std::uint64_t seed) {
    if (place_index < 0 || place_index >= static_cast<int>(world.places.size()))
        throw ParamError("render_view: place_index out of range");
    if (!(fov > 0.0) || fov > 360.0) throw ParamError("render_view: fov must be in (0, 360]");
    if (noise_sigma < 0.0) throw ParamError("render_view: noise_sigma must be >= 0");
    if (occlusion.rho < 0.0 || occlusion.rho > 1.0)
        throw ParamError("render_view: occlusion rho must be in [0, 1]");

    const Place& place = world.places[place_index];
    const int A = static_cast<int>(place.anchors.rows());
    const int T = world.cfg.tokens_per_view;
    const int D = world.cfg.input_dim;
    heading = std::fmod(std::fmod(heading, 360.0) + 360.0, 360.0);

    // Cosine falloff per anchor. The half-width is fov/2, widened to the
    // spacing toward the adjacent anchor on that side when fov is narrower:
    // between two anchors the blend then rotates at a uniform ~90/spacing
    // degrees per heading degree (exact spherical interpolation), so the view
    // manifold is continuous over the whole circle with no empty regions.
    Vec weights = Vec::Zero(A);
    const double half = fov / 2.0;
    for (int a = 0; a < A; ++a) {
        double w = 0.0;
        if (A == 1) {
            w = 1.0;
        } else {
            const int prev = (a + A - 1) % A;
            const int next = (a + 1) % A;
            const double s_prev =
                std::fmod(place.anchor_headings[a] - place.anchor_headings[prev] + 720.0, 360.0);
            const double s_next =
                std::fmod(place.anchor_headings[next] - place.anchor_headings[a] + 720.0, 360.0);
            double delta = std::fmod(heading - place.anchor_headings[a] + 540.0, 360.0) - 180.0;
            double reach;
            if (A == 2) {
                reach = std::max({half, s_prev, s_next});
            } else {
                reach = std::max(half, delta >= 0.0 ? s_next : s_prev);
            }
            const double d = std::fabs(delta);
            if (d < reach) w = std::cos(kPi * d / (2.0 * reach));
        }
        weights(a) = w;
    }
    int group = 0;
    weights.maxCoeff(&group);

    Vec blend = place.anchors.transpose() * weights;
    blend /= blend.norm();

    GeoImage img;
    {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "p%05d_h%06.1f", place_index, heading);
        img.id = buf;
    }
    img.position = place.position;
    img.heading = heading;
    img.true_group = group;
    img.tokens.resize(T, D);
    for (int t = 0; t < T; ++t) {
        Vec row = blend + world.cfg.texture_scale * world.texture.row(t).transpose();
        img.tokens.row(t) = (row / row.norm()).transpose();
    }
    if (noise_sigma > 0.0) {
        Rng noise_rng(derive_seed(seed, "view-noise"));
        for (int t = 0; t < T; ++t)
            for (int j = 0; j < D; ++j) img.tokens(t, j) += noise_rng.normal(0.0, noise_sigma);
    }
    const int occ_rows = static_cast<int>(std::lround(occlusion.rho * T));
    if (occ_rows > 0) {
        Rng occ_rng(derive_seed(seed, "view-occ"));
        const int start = static_cast<int>(occ_rng.uniform_index(T - occ_rows + 1));
        const int which = static_cast<int>(occ_rng.uniform_index(world.occluders.rows()));
        for (int t = start; t < start + occ_rows; ++t)
            img.tokens.row(t) = world.occluders.row(which);
        img.occluded = true;
    }
    return img;
}

std::vector<GeoImage> render_dataset(const World& world, const std::vector<double>& headings,
                                     double fov, double noise_sigma, double occlusion_prob,
                                     double rho, std::uint64_t seed) {
    std::vector<GeoImage> out;
    out.reserve(world.places.size() * headings.size());
    Rng occ_pick(derive_seed(seed, "dataset-occlusion"));
    for (std::size_t p = 0; p < world.places.size(); ++p) {
        for (std::size_t h = 0; h < headings.size(); ++h) {
            const bool occluded = occlusion_prob > 0.0 && occ_pick.uniform() < occlusion_prob;
            GeoImage img =
                render_view(world, static_cast<int>(p), headings[h], fov, noise_sigma,
                            OcclusionSpec{occluded ? rho : 0.0},
                            derive_seed(seed, "dataset-view", p, h));
            out.push_back(std::move(img));
        }
    }
    return out;
}

std::vector<GeoImage> render_queries(const World& world, int per_place, double fov,
                                     double noise_sigma, double rho, std::uint64_t seed) {
    std::vector<GeoImage> out;
    out.reserve(world.places.size() * static_cast<std::size_t>(per_place));
    Rng heading_rng(derive_seed(seed, "query-headings"));
    for (std::size_t p = 0; p < world.places.size(); ++p) {
        for (int q = 0; q < per_place; ++q) {
            const double heading = heading_rng.uniform(0.0, 360.0);
            GeoImage img = render_view(world, static_cast<int>(p), heading, fov, noise_sigma,
                                       OcclusionSpec{rho}, derive_seed(seed, "query-view", p, q));
            char buf[64];
            std::snprintf(buf, sizeof(buf), "q%05zu_%02d", p, q);
            img.id = buf;
            out.push_back(std::move(img));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Manifest + sidecars
// ---------------------------------------------------------------------------

static_assert(std::endian::native == std::endian::little,
              "token sidecar serialization assumes a little-endian host");

std::string tokens_sidecar_path(const std::string& manifest_path) {
    return manifest_path + ".tokens";
}

std::string truth_sidecar_path(const std::string& manifest_path) {
    return manifest_path + ".truth";
}

namespace {

constexpr char kTokenMagic[9] = "MVPRTOK1";

void write_u32(std::ostream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), 4);
}

std::uint32_t read_u32(std::istream& is) {
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    return v;
}

}  // namespace

void save_manifest(const std::string& manifest_path, const std::vector<GeoImage>& images,
                   bool write_truth) {
    if (!images.empty()) {
        const int T = static_cast<int>(images.front().tokens.rows());
        const int D = static_cast<int>(images.front().tokens.cols());
        for (const auto& img : images)
            if (img.tokens.rows() != T || img.tokens.cols() != D)
                throw ContractError("save_manifest: all token matrices must share one shape");

        std::ofstream tok(tokens_sidecar_path(manifest_path), std::ios::binary | std::ios::trunc);
        if (!tok) throw IoError("save_manifest: cannot open " + tokens_sidecar_path(manifest_path));
        tok.write(kTokenMagic, 8);
        write_u32(tok, static_cast<std::uint32_t>(T));
        write_u32(tok, static_cast<std::uint32_t>(D));

        std::ofstream man(manifest_path, std::ios::trunc);
        if (!man) throw IoError("save_manifest: cannot open " + manifest_path);
        std::uint64_t offset = 16;
        std::vector<float> block(static_cast<std::size_t>(T) * D);
        char line[256];
        for (const auto& img : images) {
            if (img.id.empty() || img.id.find('@') != std::string::npos)
                throw ContractError("save_manifest: ids must be nonempty and free of '@'");
            for (int t = 0; t < T; ++t)
                for (int j = 0; j < D; ++j)
                    block[static_cast<std::size_t>(t) * D + j] = static_cast<float>(img.tokens(t, j));
            tok.write(reinterpret_cast<const char*>(block.data()),
                      static_cast<std::streamsize>(block.size() * sizeof(float)));
            std::snprintf(line, sizeof(line), "%s@%.17g@%.17g@%.17g@%llu\n", img.id.c_str(),
                          img.position.east, img.position.north, img.heading,
                          static_cast<unsigned long long>(offset));
            man << line;
            offset += block.size() * sizeof(float);
        }
    } else {
        std::ofstream man(manifest_path, std::ios::trunc);
        if (!man) throw IoError("save_manifest: cannot open " + manifest_path);
    }

    if (write_truth) {
        std::ofstream truth(truth_sidecar_path(manifest_path), std::ios::trunc);
        if (!truth) throw IoError("save_manifest: cannot open " + truth_sidecar_path(manifest_path));
        for (const auto& img : images)
            truth << img.id << '@' << (img.true_group ? *img.true_group : -1) << '@'
                  << (img.occluded ? 1 : 0) << '\n';
    }
}

namespace {

std::vector<std::string> split_on(const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    for (;;) {
        const std::size_t pos = s.find(sep, start);
        if (pos == std::string::npos) {
            parts.push_back(s.substr(start));
            return parts;
        }
        parts.push_back(s.substr(start, pos - start));
        start = pos + 1;
    }
}

double parse_double_field(const std::string& s, const char* field, int line_no) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0' || !std::isfinite(v))
        throw ParseError("manifest line " + std::to_string(line_no) + ": bad " + field + " '" + s +
                         "'");
    return v;
}

}  // namespace

std::vector<GeoImage> load_manifest(const std::string& manifest_path) {
    std::ifstream man(manifest_path);
    if (!man) throw IoError("load_manifest: cannot open " + manifest_path);

    struct Row {
        std::string id;
        UtmPoint pos;
        double heading;
        std::uint64_t offset;
    };
    std::vector<Row> rows;
    std::set<std::string> seen;
    std::string line;
    int line_no = 0;
    while (std::getline(man, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto parts = split_on(line, '@');
        if (parts.size() != 5)
            throw ParseError("manifest line " + std::to_string(line_no) + ": expected 5 fields, got " +
                             std::to_string(parts.size()));
        Row r;
        r.id = parts[0];
        if (r.id.empty())
            throw ParseError("manifest line " + std::to_string(line_no) + ": empty id");
        if (!seen.insert(r.id).second)
            throw ParseError("manifest line " + std::to_string(line_no) + ": duplicate id '" +
                             r.id + "'");
        r.pos.east = parse_double_field(parts[1], "east", line_no);
        r.pos.north = parse_double_field(parts[2], "north", line_no);
        r.heading = parse_double_field(parts[3], "heading", line_no);
        r.heading = std::fmod(std::fmod(r.heading, 360.0) + 360.0, 360.0);
        char* end = nullptr;
        r.offset = std::strtoull(parts[4].c_str(), &end, 10);
        if (end == parts[4].c_str() || *end != '\0')
            throw ParseError("manifest line " + std::to_string(line_no) + ": bad offset '" +
                             parts[4] + "'");
        rows.push_back(std::move(r));
    }
    if (rows.empty()) return {};

    std::ifstream tok(tokens_sidecar_path(manifest_path), std::ios::binary);
    if (!tok) throw IoError("load_manifest: missing token sidecar " +
                            tokens_sidecar_path(manifest_path));
    char magic[8];
    tok.read(magic, 8);
    if (!tok || std::memcmp(magic, kTokenMagic, 8) != 0)
        throw ParseError("load_manifest: bad token sidecar magic");
    const std::uint32_t T = read_u32(tok);
    const std::uint32_t D = read_u32(tok);
    if (!tok || T == 0 || D == 0) throw ParseError("load_manifest: bad token sidecar header");

    std::vector<GeoImage> images;
    images.reserve(rows.size());
    std::vector<float> block(static_cast<std::size_t>(T) * D);
    for (const auto& r : rows) {
        tok.seekg(static_cast<std::streamoff>(r.offset));
        tok.read(reinterpret_cast<char*>(block.data()),
                 static_cast<std::streamsize>(block.size() * sizeof(float)));
        if (!tok)
            throw IoError("load_manifest: cannot read tokens for id '" + r.id + "' at offset " +
                          std::to_string(r.offset));
        GeoImage img;
        img.id = r.id;
        img.position = r.pos;
        img.heading = r.heading;
        img.tokens.resize(T, D);
        for (std::uint32_t t = 0; t < T; ++t)
            for (std::uint32_t j = 0; j < D; ++j)
                img.tokens(t, j) = static_cast<double>(block[static_cast<std::size_t>(t) * D + j]);
        if (!img.tokens.allFinite())
            throw ParseError("load_manifest: non-finite tokens for id '" + r.id + "'");
        images.push_back(std::move(img));
    }

    // Optional truth sidecar restores generator ground truth.
    std::ifstream truth(truth_sidecar_path(manifest_path));
    if (truth) {
        std::map<std::string, std::pair<int, bool>> info;
        int tline = 0;
        while (std::getline(truth, line)) {
            ++tline;
            if (line.empty()) continue;
            auto parts = split_on(line, '@');
            if (parts.size() != 3)
                throw ParseError("truth line " + std::to_string(tline) + ": expected 3 fields");
            info[parts[0]] = {std::atoi(parts[1].c_str()), parts[2] == "1"};
        }
        for (auto& img : images) {
            auto it = info.find(img.id);
            if (it != info.end()) {
                if (it->second.first >= 0) img.true_group = it->second.first;
                img.occluded = it->second.second;
            }
        }
    }
    return images;
}

}  // namespace mvpr
