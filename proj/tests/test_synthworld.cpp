#include "doctest.h"

#include "mvpr/errors.hpp"
#include "mvpr/geo.hpp"
#include "mvpr/rng.hpp"
#include "mvpr/synthworld.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

using namespace mvpr;

namespace {

WorldConfig tiny_world_cfg() {
    WorldConfig cfg;
    cfg.num_cells = 4;
    cfg.places_per_cell = 1;
    cfg.anchors_per_place = 3;
    cfg.input_dim = 32;
    cfg.seed = 7;
    return cfg;
}

double matrix_cosine(const Mat& a, const Mat& b) {
    const double num = (a.array() * b.array()).sum();
    return num / (a.norm() * b.norm());
}

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("mvpr_test_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter()++));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    static int& counter() {
        static int c = 0;
        return c;
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("generate_world counts and determinism") {
    WorldConfig cfg = tiny_world_cfg();
    World w = generate_world(cfg);
    CHECK(w.places.size() == 4);
    for (const auto& p : w.places) {
        CHECK(p.anchors.rows() == 3);
        CHECK(p.anchor_headings.size() == 3);
        CHECK(std::is_sorted(p.anchor_headings.begin(), p.anchor_headings.end()));
        for (int a = 0; a < 3; ++a) {
            CHECK(p.anchors.row(a).norm() == doctest::Approx(1.0).epsilon(1e-12));
            for (int b = a + 1; b < 3; ++b)
                CHECK(std::fabs(p.anchors.row(a).dot(p.anchors.row(b))) < 0.2);
        }
    }

    World w2 = generate_world(cfg);
    REQUIRE(w2.places.size() == w.places.size());
    for (std::size_t i = 0; i < w.places.size(); ++i) {
        CHECK(w.places[i].position.east == w2.places[i].position.east);
        CHECK((w.places[i].anchors - w2.places[i].anchors).cwiseAbs().maxCoeff() == 0.0);
    }
    CHECK((w.occluders - w2.occluders).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("generate_world validates parameters") {
    WorldConfig cfg = tiny_world_cfg();
    cfg.num_cells = 0;
    CHECK_THROWS_AS(generate_world(cfg), ParamError);
    cfg = tiny_world_cfg();
    cfg.input_dim = 2;
    CHECK_THROWS_AS(generate_world(cfg), ParamError);
}

TEST_CASE("single anchor group means every view shares true_group 0") {
    WorldConfig cfg = tiny_world_cfg();
    cfg.anchors_per_place = 1;
    World w = generate_world(cfg);
    for (double h : {0.0, 45.0, 133.0, 251.0, 359.0}) {
        GeoImage img = render_view(w, 0, h, 90.0, 0.0, {}, 1);
        CHECK(img.true_group == 0);
    }
}

TEST_CASE("crop_schedule") {
    CHECK(crop_schedule({0.0}, 60.0) ==
          std::vector<double>{0.0, 60.0, 120.0, 180.0, 240.0, 300.0});
    const auto both = crop_schedule({0.0, 30.0}, 60.0);
    CHECK(both.size() == 12);
    for (std::size_t i = 0; i < 12; ++i) CHECK(both[i] == doctest::Approx(30.0 * i));
    CHECK(crop_schedule({0.0}, 360.0) == std::vector<double>{0.0});
    CHECK_THROWS_AS(crop_schedule({0.0}, 70.0), ParamError);
    CHECK_THROWS_AS(crop_schedule({0.0}, 0.0), ParamError);
    // duplicate removal across start angles
    CHECK(crop_schedule({0.0, 60.0}, 60.0).size() == 6);
}

TEST_CASE("render_view determinism and occlusion") {
    World w = generate_world(tiny_world_cfg());
    GeoImage a = render_view(w, 1, 123.0, 90.0, 0.3, {0.5}, 99);
    GeoImage b = render_view(w, 1, 123.0, 90.0, 0.3, {0.5}, 99);
    CHECK(a.id == b.id);
    CHECK((a.tokens - b.tokens).cwiseAbs().maxCoeff() == 0.0);
    CHECK(a.occluded);

    // rho = 1: every token row equals one occluder signature
    GeoImage full = render_view(w, 2, 10.0, 90.0, 0.4, {1.0}, 5);
    bool matched = false;
    for (Eigen::Index o = 0; o < w.occluders.rows(); ++o) {
        bool all = true;
        for (Eigen::Index t = 0; t < full.tokens.rows(); ++t)
            all = all && (full.tokens.row(t) - w.occluders.row(o)).cwiseAbs().maxCoeff() == 0.0;
        matched = matched || all;
    }
    CHECK(matched);
    CHECK(full.occluded);

    // rho = 0 leaves the image unoccluded
    CHECK_FALSE(render_view(w, 2, 10.0, 90.0, 0.0, {0.0}, 5).occluded);

    CHECK_THROWS_AS(render_view(w, 99, 0.0, 90.0, 0.0, {}, 1), ParamError);
}

TEST_CASE("view at an isolated anchor heading reconstructs that anchor's blend") {
    WorldConfig cfg = tiny_world_cfg();
    World w = generate_world(cfg);
    const Place& place = w.places[0];
    // fov 60 with anchors ~120 degrees apart leaves exactly one anchor in window
    for (int k = 0; k < 3; ++k) {
        GeoImage img = render_view(w, 0, place.anchor_headings[k], 60.0, 0.0, {}, 3);
        CHECK(img.true_group == k);
        Vec anchor = place.anchors.row(k).transpose();
        for (Eigen::Index t = 0; t < img.tokens.rows(); ++t) {
            Vec expected = anchor + cfg.texture_scale * w.texture.row(t).transpose();
            expected /= expected.norm();
            CHECK((img.tokens.row(t).transpose() - expected).cwiseAbs().maxCoeff() <= 1e-12);
        }
    }
}

TEST_CASE("true_group is invariant to noise level") {
    World w = generate_world(tiny_world_cfg());
    Rng rng(31);
    for (int i = 0; i < 60; ++i) {
        const int place = static_cast<int>(rng.uniform_index(w.places.size()));
        const double heading = rng.uniform(0.0, 360.0);
        GeoImage clean = render_view(w, place, heading, 90.0, 0.0, {}, 77);
        GeoImage noisy = render_view(w, place, heading, 90.0, 0.8, {}, 77);
        CHECK(clean.true_group == noisy.true_group);
    }
}

TEST_CASE("noiseless renders one degree apart stay nearly parallel") {
    WorldConfig cfg = tiny_world_cfg();
    cfg.num_cells = 6;
    World w = generate_world(cfg);
    for (std::size_t p = 0; p < w.places.size(); ++p) {
        for (double h = 0.0; h < 360.0; h += 14.0) {
            GeoImage a = render_view(w, static_cast<int>(p), h, 90.0, 0.0, {}, 1);
            GeoImage b = render_view(w, static_cast<int>(p), h + 1.0, 90.0, 0.0, {}, 2);
            CHECK(matrix_cosine(a.tokens, b.tokens) > 0.999);
        }
    }
}

TEST_CASE("every rendered view lands in its place's grid cell") {
    World w = generate_world(tiny_world_cfg());
    const auto headings = crop_schedule({0.0, 30.0}, 60.0);
    const auto images = render_dataset(w, headings, 90.0, 0.05, 0.3, 0.3, 9);
    CHECK(images.size() == w.places.size() * headings.size());
    std::size_t idx = 0;
    for (std::size_t p = 0; p < w.places.size(); ++p) {
        const CellId cell = grid_cell(w.places[p].position, w.cell_size());
        for (std::size_t h = 0; h < headings.size(); ++h, ++idx)
            CHECK(grid_cell(images[idx].position, w.cell_size()) == cell);
    }
}

TEST_CASE("manifest round trip") {
    TempDir dir;
    World w = generate_world(tiny_world_cfg());
    auto images = render_dataset(w, crop_schedule({0.0}, 120.0), 90.0, 0.1, 0.5, 0.4, 21);
    const std::string manifest = dir.file("world.manifest");
    save_manifest(manifest, images, /*write_truth=*/true);

    auto loaded = load_manifest(manifest);
    REQUIRE(loaded.size() == images.size());
    for (std::size_t i = 0; i < images.size(); ++i) {
        CHECK(loaded[i].id == images[i].id);
        CHECK(loaded[i].position.east == images[i].position.east);  // %.17g round trip
        CHECK(loaded[i].position.north == images[i].position.north);
        CHECK(loaded[i].heading == images[i].heading);
        CHECK(loaded[i].true_group == images[i].true_group);
        CHECK(loaded[i].occluded == images[i].occluded);
        // tokens pass through float32
        for (Eigen::Index j = 0; j < loaded[i].tokens.size(); ++j)
            CHECK(loaded[i].tokens.data()[j] ==
                  static_cast<double>(static_cast<float>(images[i].tokens.data()[j])));
    }
}

TEST_CASE("manifest without truth sidecar loads as unknown") {
    TempDir dir;
    World w = generate_world(tiny_world_cfg());
    auto images = render_dataset(w, {0.0, 180.0}, 90.0, 0.0, 0.0, 0.0, 3);
    const std::string manifest = dir.file("plain.manifest");
    save_manifest(manifest, images, /*write_truth=*/false);
    auto loaded = load_manifest(manifest);
    for (const auto& img : loaded) {
        CHECK_FALSE(img.true_group.has_value());
        CHECK_FALSE(img.occluded);
    }
}

TEST_CASE("manifest parse errors name the line") {
    TempDir dir;
    const std::string manifest = dir.file("bad.manifest");
    {
        std::ofstream f(manifest);
        f << "a@1.0@2.0@3.0@16\n";
        f << "b@oops@2.0@3.0@16\n";
    }
    try {
        load_manifest(manifest);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
}

TEST_CASE("empty manifest loads as an empty list") {
    TempDir dir;
    const std::string manifest = dir.file("empty.manifest");
    std::ofstream(manifest).close();
    CHECK(load_manifest(manifest).empty());
}

TEST_CASE("missing token sidecar is an io error") {
    TempDir dir;
    const std::string manifest = dir.file("nosidecar.manifest");
    {
        std::ofstream f(manifest);
        f << "a@1.0@2.0@3.0@16\n";
    }
    CHECK_THROWS_AS(load_manifest(manifest), IoError);
}

TEST_CASE("duplicate ids are rejected") {
    TempDir dir;
    const std::string manifest = dir.file("dup.manifest");
    {
        std::ofstream f(manifest);
        f << "a@1.0@2.0@3.0@16\n";
        f << "a@4.0@5.0@6.0@144\n";
    }
    CHECK_THROWS_AS(load_manifest(manifest), ParseError);
}
