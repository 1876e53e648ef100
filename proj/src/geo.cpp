#include "mvpr/geo.hpp"

#include <cmath>

#include "mvpr/errors.hpp"

namespace mvpr {

CellId grid_cell(const UtmPoint& p, double cell_size_m) {
    if (!(cell_size_m > 0.0)) throw ParamError("grid_cell: cell size M must be > 0");
    return CellId{static_cast<std::int64_t>(std::floor(p.east / cell_size_m)),
                  static_cast<std::int64_t>(std::floor(p.north / cell_size_m))};
}

double distance_m(const UtmPoint& a, const UtmPoint& b) {
    return std::hypot(a.east - b.east, a.north - b.north);
}

bool is_positive(const UtmPoint& query, const UtmPoint& ref, double radius_m) {
    if (!(radius_m > 0.0)) throw ParamError("is_positive: radius must be > 0");
    return distance_m(query, ref) <= radius_m;
}

}  // namespace mvpr
