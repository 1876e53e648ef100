#include "mvpr/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "mvpr/errors.hpp"

namespace mvpr {

DescriptorDB make_db(int dim, std::vector<DbRecord> records) {
    if (dim < 1) throw ParamError("make_db: dim must be >= 1");
    std::set<std::string> ids;
    for (const auto& r : records) {
        if (r.descriptor.size() != dim) throw ContractError("make_db: descriptor dimension mismatch");
        if (std::fabs(r.descriptor.norm() - 1.0) > 1e-6)
            throw ContractError("make_db: descriptor for id '" + r.id + "' is not unit-norm");
        if (!ids.insert(r.id).second) throw ContractError("make_db: duplicate id '" + r.id + "'");
    }
    return DescriptorDB{dim, std::move(records)};
}

std::vector<Neighbor> knn(const DescriptorDB& db, const Vec& query, int k) {
    if (k < 1) throw ParamError("knn: k must be >= 1");
    if (db.records.empty()) throw ContractError("knn: empty database");
    if (query.size() != db.dim) throw ContractError("knn: query dimension mismatch");
    std::vector<std::pair<double, std::size_t>> dist(db.records.size());
    for (std::size_t i = 0; i < db.records.size(); ++i)
        dist[i] = {(db.records[i].descriptor - query).squaredNorm(), i};
    const auto cmp = [&](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first < b.first;
        return db.records[a.second].id < db.records[b.second].id;
    };
    const std::size_t kk = std::min<std::size_t>(static_cast<std::size_t>(k), dist.size());
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(kk), dist.end(), cmp);
    std::vector<Neighbor> out;
    out.reserve(kk);
    for (std::size_t i = 0; i < kk; ++i)
        out.push_back({db.records[dist[i].second].id, std::sqrt(dist[i].first)});
    return out;
}

namespace {

EvalReport eval_impl(const DescriptorDB& db, const std::vector<EvalQuery>& queries,
                     const std::vector<int>& ks, double radius, const std::string& tag) {
    if (ks.empty()) throw ParamError("recall_at_k: need at least one k");
    for (std::size_t i = 0; i < ks.size(); ++i) {
        if (ks[i] < 1) throw ParamError("recall_at_k: ks must be >= 1");
        if (i > 0 && ks[i] <= ks[i - 1]) throw ParamError("recall_at_k: ks must be sorted ascending");
    }
    if (!(radius > 0.0)) throw ParamError("recall_at_k: radius must be > 0");

    // id -> position for the radius checks
    std::map<std::string, const DbRecord*> by_id;
    for (const auto& r : db.records) by_id[r.id] = &r;

    EvalReport report;
    report.ks = ks;
    report.radius = radius;
    report.tag = tag;
    report.query_count = static_cast<int>(queries.size());
    for (int k : ks) report.correct[k] = 0;
    const int kmax = ks.back();

    for (const auto& q : queries) {
        QueryEval qe;
        qe.id = q.id;
        qe.neighbors = knn(db, q.descriptor, kmax);
        for (const auto& r : db.records) {
            if (is_positive(q.position, r.position, radius)) {
                qe.has_positive = true;
                break;
            }
        }
        if (!qe.has_positive) report.no_positive_count += 1;
        for (std::size_t rank = 0; rank < qe.neighbors.size(); ++rank) {
            const DbRecord* rec = by_id.at(qe.neighbors[rank].id);
            if (is_positive(q.position, rec->position, radius)) {
                qe.first_correct_rank = static_cast<int>(rank) + 1;
                break;
            }
        }
        for (int k : ks)
            if (qe.first_correct_rank > 0 && qe.first_correct_rank <= k) report.correct[k] += 1;
        report.per_query.push_back(std::move(qe));
    }
    for (int k : ks)
        report.recall[k] = report.query_count > 0
                               ? static_cast<double>(report.correct[k]) / report.query_count
                               : 0.0;
    return report;
}

}  // namespace

EvalReport recall_at_k(const DescriptorDB& db, const std::vector<EvalQuery>& queries,
                       const std::vector<int>& ks, double radius) {
    return eval_impl(db, queries, ks, radius, "standard");
}

EvalReport occlusion_eval(const DescriptorDB& db, const std::vector<EvalQuery>& queries,
                          const std::vector<int>& ks, double radius) {
    return eval_impl(db, queries, ks, radius, "occlusion");
}

namespace {

constexpr double kTau = 6.283185307179586476925286766559;

// Circular mean of headings in degrees.
double circular_mean_deg(const std::vector<double>& degs) {
    double s = 0.0, c = 0.0;
    for (double d : degs) {
        s += std::sin(d / 360.0 * kTau);
        c += std::cos(d / 360.0 * kTau);
    }
    double ang = std::atan2(s, c) / kTau * 360.0;
    if (ang < 0.0) ang += 360.0;
    return ang;
}

}  // namespace

InterclassReport interclass_distance_report(const DescriptorDB& db,
                                            const std::map<std::string, PlaceLabel>& labels,
                                            const std::map<std::string, double>* headings) {
    // cell -> h -> member record indices
    std::map<CellId, std::map<int, std::vector<std::size_t>>> cells;
    for (std::size_t i = 0; i < db.records.size(); ++i) {
        auto it = labels.find(db.records[i].id);
        if (it == labels.end())
            throw ContractError("interclass_distance_report: unlabeled id '" + db.records[i].id +
                                "'");
        cells[it->second.cell][it->second.h].push_back(i);
    }

    InterclassReport report;
    report.close_histogram.assign(InterclassReport::kHistogramBins, 0);
    double sum_mean = 0.0;
    double min_all = std::numeric_limits<double>::infinity();

    for (const auto& [cell, clusters] : cells) {
        if (clusters.size() < 2) {
            report.skipped_single_cluster_cells += 1;
            continue;
        }
        // order clusters by circular mean heading when available
        std::vector<int> order;
        for (const auto& [h, members] : clusters) order.push_back(h);
        if (headings) {
            std::vector<std::pair<double, int>> keyed;
            bool all_known = true;
            for (int h : order) {
                std::vector<double> degs;
                for (std::size_t i : clusters.at(h)) {
                    auto it = headings->find(db.records[i].id);
                    if (it == headings->end()) {
                        all_known = false;
                        break;
                    }
                    degs.push_back(it->second);
                }
                if (!all_known) break;
                keyed.emplace_back(circular_mean_deg(degs), h);
            }
            if (all_known) {
                std::sort(keyed.begin(), keyed.end());
                order.clear();
                for (const auto& [deg, h] : keyed) order.push_back(h);
            }
        }
        // adjacent pairs along the (circular) order
        const std::size_t n = order.size();
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t j = (i + 1) % n;
            if (n == 2 && i == 1) break;  // two clusters have a single adjacent pair
            AdjacentPairStats stats;
            stats.cell = cell;
            stats.h_a = order[i];
            stats.h_b = order[j];
            double min_d = std::numeric_limits<double>::infinity();
            double sum_d = 0.0;
            std::size_t count = 0;
            for (std::size_t a : clusters.at(order[i])) {
                for (std::size_t b : clusters.at(order[j])) {
                    const double d = (db.records[a].descriptor - db.records[b].descriptor).norm();
                    min_d = std::min(min_d, d);
                    sum_d += d;
                    count += 1;
                    if (d < InterclassReport::kHistogramMax) {
                        const int bin = std::min(
                            InterclassReport::kHistogramBins - 1,
                            static_cast<int>(d / InterclassReport::kHistogramMax *
                                             InterclassReport::kHistogramBins));
                        report.close_histogram[static_cast<std::size_t>(bin)] += 1;
                        report.close_pair_count += 1;
                    }
                }
            }
            stats.min_distance = min_d;
            stats.mean_distance = sum_d / static_cast<double>(count);
            stats.pair_count = count;
            sum_mean += stats.mean_distance;
            min_all = std::min(min_all, min_d);
            report.pairs.push_back(std::move(stats));
        }
    }
    report.mean_adjacent_distance =
        report.pairs.empty() ? 0.0 : sum_mean / static_cast<double>(report.pairs.size());
    report.min_adjacent_distance = report.pairs.empty() ? 0.0 : min_all;
    return report;
}

}  // namespace mvpr
