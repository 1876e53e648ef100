#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mvpr/clusterer.hpp"
#include "mvpr/geo.hpp"
#include "mvpr/tensor.hpp"

namespace mvpr {

struct DbRecord {
    std::string id;
    UtmPoint position;
    Vec descriptor;  // unit norm
};

// Immutable once built; exact search only.
struct DescriptorDB {
    int dim = 0;
    std::vector<DbRecord> records;
};

// Validates unit norms (+-1e-6), unique ids, consistent dimension.
DescriptorDB make_db(int dim, std::vector<DbRecord> records);

struct Neighbor {
    std::string id;
    double distance = 0.0;
};

// Exact top-k by Euclidean distance (same ordering as descending cosine for
// unit vectors); ties broken by ascending id.
std::vector<Neighbor> knn(const DescriptorDB& db, const Vec& query, int k);

struct QueryEval {
    std::string id;  // optional caller-supplied tag
    std::vector<Neighbor> neighbors;
    bool has_positive = false;        // any db record within the radius at all
    int first_correct_rank = -1;      // 1-based rank of first positive, -1 if none in top-k
};

struct EvalReport {
    std::vector<int> ks;
    std::map<int, int> correct;      // k -> correctly located query count
    std::map<int, double> recall;    // k -> recall
    int query_count = 0;
    double radius = 25.0;
    std::string tag = "standard";
    int no_positive_count = 0;       // queries with no positive anywhere in db
    std::vector<QueryEval> per_query;
};

struct EvalQuery {
    Vec descriptor;
    UtmPoint position;
    std::string id;
};

// A query counts as correct at k iff any of its top-k results lies within
// `radius` of the query position (inclusive). Queries with no positive in the
// db count as incorrect and are recorded.
EvalReport recall_at_k(const DescriptorDB& db, const std::vector<EvalQuery>& queries,
                       const std::vector<int>& ks, double radius);

// recall_at_k over an occluded query set; report tagged "occlusion".
EvalReport occlusion_eval(const DescriptorDB& db, const std::vector<EvalQuery>& queries,
                          const std::vector<int>& ks, double radius);

struct AdjacentPairStats {
    CellId cell;
    int h_a = 0;
    int h_b = 0;
    double min_distance = 0.0;
    double mean_distance = 0.0;
    std::size_t pair_count = 0;
};

struct InterclassReport {
    std::vector<AdjacentPairStats> pairs;
    double mean_adjacent_distance = 0.0;  // over all adjacent pairs, unweighted
    double min_adjacent_distance = 0.0;
    // Histogram of pairwise distances below 0.8 across all adjacent pairs.
    static constexpr int kHistogramBins = 16;
    static constexpr double kHistogramMax = 0.8;
    std::vector<std::size_t> close_histogram;
    std::size_t close_pair_count = 0;
    std::size_t skipped_single_cluster_cells = 0;
};

// For each cell and each pair of clusters adjacent under the circular
// mean-heading ordering (falls back to cluster-index order when headings are
// absent), reports min and mean pairwise descriptor distance. Every db id
// must be labeled.
InterclassReport interclass_distance_report(
    const DescriptorDB& db, const std::map<std::string, PlaceLabel>& labels,
    const std::map<std::string, double>* headings = nullptr);

}  // namespace mvpr
