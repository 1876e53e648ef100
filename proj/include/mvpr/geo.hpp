#pragma once

#include <cstdint>
#include <compare>

namespace mvpr {

// Planar UTM coordinates in meters. The whole pipeline assumes a single UTM
// zone, so Euclidean arithmetic on (east, north) is exact.
struct UtmPoint {
    double east = 0.0;
    double north = 0.0;
};

// The M x M meter grid square a point falls into. Uses mathematical floor,
// so negative coordinates bin toward minus infinity, not toward zero.
struct CellId {
    std::int64_t e_i = 0;
    std::int64_t n_j = 0;

    friend auto operator<=>(const CellId&, const CellId&) = default;
};

CellId grid_cell(const UtmPoint& p, double cell_size_m);

double distance_m(const UtmPoint& a, const UtmPoint& b);

// Inclusive radius test: distance == radius counts as a positive match.
bool is_positive(const UtmPoint& query, const UtmPoint& ref, double radius_m);

}  // namespace mvpr
