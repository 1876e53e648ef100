#include "mvpr/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mvpr/errors.hpp"
#include "mvpr/rng.hpp"

namespace mvpr {

namespace {

constexpr double kPi = 3.14159265358979323846;

void validate(const TrainConfig& cfg) {
    if (!(cfg.cell_size_m > 0.0)) throw ParamError("TrainConfig: M must be > 0");
    if (cfg.K < 1) throw ParamError("TrainConfig: K must be >= 1");
    if (cfg.group_count < 1) throw ParamError("TrainConfig: group_count must be >= 1");
    if (cfg.recluster_fraction < 0.0 || cfg.recluster_fraction > 1.0)
        throw ParamError("TrainConfig: recluster_fraction must be in [0, 1]");
    if (cfg.epochs < 1 || cfg.iterations_per_epoch < 1 || cfg.batch_size < 1)
        throw ParamError("TrainConfig: epochs, iterations and batch size must be >= 1");
    if (!(cfg.lr_encoder > 0.0) || !(cfg.lr_classifier > 0.0))
        throw ParamError("TrainConfig: learning rates must be > 0");
    if (cfg.descriptor_dim < 1) throw ParamError("TrainConfig: descriptor_dim must be >= 1");
}

Vec unit_or_fallback(const Vec& v, const Vec& fallback) {
    const double n = v.norm();
    if (n > 1e-12) return v / n;
    return fallback;
}

// Initial classifier rows from cluster centroids, cells in CellId order.
ClassifierWeights make_classifier(const std::map<CellId, CellClusters>& cells,
                                  const std::map<std::string, Vec>& descriptors,
                                  const TrainConfig& cfg) {
    ClassifierWeights w(cfg.descriptor_dim, cfg.gamma, cfg.margin);
    for (const auto& [cell, cc] : cells) {
        for (Eigen::Index h = 0; h < cc.centroids.rows(); ++h) {
            Vec fallback;
            for (const auto& [id, hh] : cc.assignments) {
                if (hh == static_cast<int>(h)) {
                    fallback = descriptors.at(id);
                    break;
                }
            }
            w.add_class(PlaceLabel{cell, static_cast<int>(h)},
                        unit_or_fallback(cc.centroids.row(h).transpose(), fallback));
        }
    }
    return w;
}

std::map<std::string, Vec> encode_all(const Dataset& ds, const EncoderParams& enc) {
    std::map<std::string, Vec> out;
    for (const auto& img : ds.images) out[img.id] = encode_tokens(img.tokens, enc);
    return out;
}

// Heading-bin partitions may leave bins empty; compact per cell to dense
// cluster indices so classifier rows and centroids line up.
std::map<std::string, PlaceLabel> densify_bins(const std::map<std::string, PlaceLabel>& raw) {
    std::map<CellId, std::map<int, int>> remap;  // cell -> bin -> dense index
    for (const auto& [id, label] : raw) remap[label.cell][label.h] = 0;
    for (auto& [cell, bins] : remap) {
        int next = 0;
        for (auto& [bin, dense] : bins) dense = next++;
    }
    std::map<std::string, PlaceLabel> out;
    for (const auto& [id, label] : raw)
        out[id] = PlaceLabel{label.cell, remap[label.cell][label.h]};
    return out;
}

std::map<CellId, CellClusters> cells_from_labels(const std::map<std::string, PlaceLabel>& labels,
                                                 const std::map<std::string, Vec>& descriptors,
                                                 int dim) {
    std::map<CellId, CellClusters> cells;
    std::map<CellId, int> k_eff;
    for (const auto& [id, label] : labels)
        k_eff[label.cell] = std::max(k_eff[label.cell], label.h + 1);
    for (const auto& [cell, k] : k_eff) {
        CellClusters cc;
        cc.centroids = Mat::Zero(k, dim);
        cells[cell] = std::move(cc);
    }
    std::map<CellId, std::vector<int>> counts;
    for (const auto& [cell, k] : k_eff) counts[cell].assign(static_cast<std::size_t>(k), 0);
    for (const auto& [id, label] : labels) {
        CellClusters& cc = cells[label.cell];
        cc.assignments[id] = label.h;
        cc.centroids.row(label.h) += descriptors.at(id).transpose();
        counts[label.cell][static_cast<std::size_t>(label.h)] += 1;
    }
    for (auto& [cell, cc] : cells) {
        double objective = 0.0;
        for (Eigen::Index h = 0; h < cc.centroids.rows(); ++h) {
            const int n = counts[cell][static_cast<std::size_t>(h)];
            if (n > 0) cc.centroids.row(h) /= static_cast<double>(n);
        }
        for (const auto& [id, h] : cc.assignments)
            objective += (descriptors.at(id).transpose() - cc.centroids.row(h)).squaredNorm();
        cc.objective = objective;
    }
    return cells;
}

}  // namespace

Dataset build_dataset(std::vector<GeoImage> images, double cell_size_m) {
    Dataset ds;
    ds.images = std::move(images);
    for (std::size_t i = 0; i < ds.images.size(); ++i) {
        const auto& img = ds.images[i];
        if (img.id.empty()) throw ContractError("build_dataset: empty image id");
        if (!ds.by_id.emplace(img.id, i).second)
            throw ContractError("build_dataset: duplicate id '" + img.id + "'");
        ds.cells[grid_cell(img.position, cell_size_m)].push_back(i);
    }
    return ds;
}

std::map<std::string, int> known_truth(const std::vector<GeoImage>& images) {
    std::map<std::string, int> truth;
    for (const auto& img : images)
        if (img.true_group) truth[img.id] = *img.true_group;
    return truth;
}

TrainState initialize(const Dataset& dataset, const TrainConfig& cfg) {
    validate(cfg);
    if (dataset.images.empty()) throw ParamError("initialize: dataset is empty");
    const int input_dim = static_cast<int>(dataset.images.front().tokens.cols());
    for (const auto& img : dataset.images)
        if (img.tokens.cols() != input_dim)
            throw ContractError("initialize: inconsistent token width for id '" + img.id + "'");

    TrainState state;
    state.cfg = cfg;

    EncoderConfig ecfg;
    ecfg.input_dim = input_dim;
    ecfg.width = cfg.block_width;
    ecfg.mlp_hidden = cfg.mlp_hidden;
    ecfg.descriptor_dim = cfg.descriptor_dim;
    ecfg.train_full_block = cfg.train_full_block;
    state.encoder = make_encoder(ecfg, cfg.seed);

    const std::map<std::string, Vec> descriptors = encode_all(dataset, state.encoder);

    if (cfg.supervision == Supervision::kAdaptive) {
        std::map<CellId, std::vector<std::pair<std::string, Vec>>> groups;
        for (const auto& [cell, indices] : dataset.cells) {
            auto& members = groups[cell];
            for (std::size_t i : indices)
                members.emplace_back(dataset.images[i].id, descriptors.at(dataset.images[i].id));
        }
        LabelingResult lr = assign_place_labels(groups, cfg.K, cfg.kmeans_restarts,
                                                cfg.kmeans_max_iter,
                                                derive_seed(cfg.seed, "init-cluster"));
        state.labels = std::move(lr.labels);
        state.clusters.cells = std::move(lr.cells);
        state.warnings = std::move(lr.warnings);
    } else {
        const int bins = cfg.heading_bins > 0 ? cfg.heading_bins : cfg.K;
        state.labels = densify_bins(heading_bin_labels(dataset.images, bins, cfg.cell_size_m));
        state.clusters.cells = cells_from_labels(state.labels, descriptors, cfg.descriptor_dim);
    }
    if (state.clusters.cells.empty()) throw ParamError("initialize: no populated cells");

    state.classifier = make_classifier(state.clusters.cells, descriptors, cfg);

    // Seeded random split of cells into group_count near-equal parts.
    std::vector<CellId> cells;
    for (const auto& [cell, cc] : state.clusters.cells) cells.push_back(cell);
    Rng rng(derive_seed(cfg.seed, "groups"));
    rng.shuffle(cells);
    for (std::size_t i = 0; i < cells.size(); ++i)
        state.cell_group[cells[i]] = static_cast<int>(i % static_cast<std::size_t>(cfg.group_count));
    return state;
}

double cosine_lr(int step, int total_steps, double lr_max) {
    if (total_steps < 1) throw ParamError("cosine_lr: total_steps must be >= 1");
    if (step < 0) throw ParamError("cosine_lr: step must be >= 0");
    if (step > total_steps) step = total_steps;
    return lr_max * (1.0 + std::cos(kPi * static_cast<double>(step) / total_steps)) / 2.0;
}

BatchSampler::BatchSampler(std::vector<std::pair<PlaceLabel, std::vector<std::string>>> classes,
                           int batch_size, std::uint64_t seed)
    : classes_(std::move(classes)), batch_size_(batch_size), rng_(seed) {
    if (classes_.empty()) throw ParamError("BatchSampler: no active classes");
    if (batch_size_ > static_cast<int>(classes_.size())) {
        batch_size_ = static_cast<int>(classes_.size());
        shrunk_ = true;
    }
}

std::vector<BatchItem> BatchSampler::next() {
    const std::size_t n = classes_.size();
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::vector<BatchItem> batch;
    batch.reserve(static_cast<std::size_t>(batch_size_));
    for (int b = 0; b < batch_size_; ++b) {
        const std::size_t j =
            static_cast<std::size_t>(b) + rng_.uniform_index(n - static_cast<std::size_t>(b));
        std::swap(idx[static_cast<std::size_t>(b)], idx[j]);
        const auto& [label, members] = classes_[idx[static_cast<std::size_t>(b)]];
        const std::string& id = members[rng_.uniform_index(members.size())];
        batch.push_back({id, label});
    }
    return batch;
}

void train_epoch(TrainState& state, const Dataset& dataset) {
    const TrainConfig& cfg = state.cfg;
    const int epoch = state.epoch;  // 0-based here, 1-based in metrics
    const int group = epoch % cfg.group_count;
    const int total_steps = cfg.epochs * cfg.iterations_per_epoch;
    const double epoch_lr = cosine_lr(epoch * cfg.iterations_per_epoch, total_steps, cfg.lr_encoder);

    // classes of this epoch's cell group, members sorted by id
    std::vector<std::pair<PlaceLabel, std::vector<std::string>>> classes;
    {
        std::map<PlaceLabel, std::vector<std::string>> by_label;
        for (const auto& [id, label] : state.labels) {
            auto git = state.cell_group.find(label.cell);
            if (git != state.cell_group.end() && git->second == group)
                by_label[label].push_back(id);
        }
        classes.assign(by_label.begin(), by_label.end());
    }

    double mean_loss = std::numeric_limits<double>::quiet_NaN();
    if (!classes.empty()) {
        BatchSampler sampler(classes, cfg.batch_size,
                             derive_seed(cfg.seed, "batch", static_cast<std::uint64_t>(epoch)));
        if (sampler.shrunk())
            state.warnings.push_back("epoch " + std::to_string(epoch + 1) + ": batch shrunk to " +
                                     std::to_string(sampler.effective_batch_size()) + " classes");
        double loss_sum = 0.0;
        std::vector<EncodeCache> caches(static_cast<std::size_t>(sampler.effective_batch_size()));
        for (int it = 0; it < cfg.iterations_per_epoch; ++it) {
            const std::vector<BatchItem> batch = sampler.next();
            const int B = static_cast<int>(batch.size());
            Mat features(B, cfg.descriptor_dim);
            std::vector<int> targets(static_cast<std::size_t>(B));
            for (int b = 0; b < B; ++b) {
                const auto& img = dataset.images[dataset.by_id.at(batch[static_cast<std::size_t>(b)].id)];
                features.row(b) =
                    encode_tokens(img.tokens, state.encoder, &caches[static_cast<std::size_t>(b)])
                        .transpose();
                const int t = state.classifier.index_of(batch[static_cast<std::size_t>(b)].label);
                if (t < 0) throw ContractError("train_epoch: batch label has no classifier row");
                targets[static_cast<std::size_t>(b)] = t;
            }
            LmclGrads grads = lmcl_backward(features, targets, state.classifier);
            if (!std::isfinite(grads.loss))
                throw NumericError("train_epoch: non-finite loss at epoch " +
                                   std::to_string(epoch + 1) + " iteration " + std::to_string(it));
            loss_sum += grads.loss;

            state.encoder.store.zero_grads();
            for (int b = 0; b < B; ++b)
                encode_backward(caches[static_cast<std::size_t>(b)], state.encoder,
                                grads.dfeatures.row(b).transpose());
            const int step = epoch * cfg.iterations_per_epoch + it;
            diff::adam_step(state.encoder.store, cosine_lr(step, total_steps, cfg.lr_encoder));
            // GeM exponent stays in its valid range
            auto& p = state.encoder.store.entry("gem.p");
            if (p.value(0, 0) < 1.0) p.value(0, 0) = 1.0;

            state.classifier.apply_gradient(grads.dweights, cfg.lr_classifier);
        }
        mean_loss = loss_sum / cfg.iterations_per_epoch;
    }

    // stage 2: feature-aware re-clustering of a random subset of the group
    double reassign_fraction = 0.0;
    if (cfg.supervision == Supervision::kAdaptive && cfg.recluster_fraction > 0.0) {
        std::vector<CellId> group_cells;
        for (const auto& [cell, g] : state.cell_group)
            if (g == group) group_cells.push_back(cell);
        if (!group_cells.empty()) {
            const std::size_t n = group_cells.size();
            std::size_t n_sel = static_cast<std::size_t>(
                std::lround(cfg.recluster_fraction * static_cast<double>(n)));
            n_sel = std::clamp<std::size_t>(n_sel, 1, n);
            Rng rng(derive_seed(cfg.seed, "recluster-select", static_cast<std::uint64_t>(epoch)));
            std::vector<std::size_t> idx(n);
            for (std::size_t i = 0; i < n; ++i) idx[i] = i;
            std::vector<CellId> selected;
            for (std::size_t i = 0; i < n_sel; ++i) {
                const std::size_t j = i + rng.uniform_index(n - i);
                std::swap(idx[i], idx[j]);
                selected.push_back(group_cells[idx[i]]);
            }
            std::sort(selected.begin(), selected.end());

            std::map<CellId, std::vector<std::pair<std::string, Vec>>> groups;
            for (const CellId& cell : selected) {
                auto& members = groups[cell];
                for (const auto& [id, h] : state.clusters.cells.at(cell).assignments) {
                    const auto& img = dataset.images[dataset.by_id.at(id)];
                    members.emplace_back(id, encode_tokens(img.tokens, state.encoder));
                }
            }
            LabelingResult lr =
                assign_place_labels(groups, cfg.K, cfg.kmeans_restarts, cfg.kmeans_max_iter,
                                    derive_seed(cfg.seed, "recluster",
                                                static_cast<std::uint64_t>(epoch)));
            for (auto& [cell, cc] : lr.cells) cc.epoch = epoch + 1;

            std::size_t moved_total = 0, member_total = 0;
            const auto diffs = reassignment_diff(state.clusters.cells, lr.cells);
            for (const auto& [cell, diff] : diffs) {
                ReassignEvent event;
                event.epoch = epoch + 1;
                event.cell = cell;
                event.moved = diff.moved;
                event.cell_size = lr.cells.at(cell).assignments.size();
                moved_total += diff.moved.size();
                member_total += event.cell_size;
                state.clusters.history.push_back(std::move(event));
            }
            for (const auto& [cell, cc] : lr.cells) state.clusters.cells[cell] = cc;
            for (const auto& [id, label] : lr.labels) state.labels[id] = label;
            state.classifier = remap_after_recluster(state.classifier, lr.cells);
            if (member_total > 0)
                reassign_fraction =
                    static_cast<double>(moved_total) / static_cast<double>(member_total);
        }
    }

    // purity of the current labels against whatever ground truth is known
    double epoch_purity = std::numeric_limits<double>::quiet_NaN();
    {
        const std::map<std::string, int> truth = known_truth(dataset.images);
        if (!truth.empty()) {
            std::map<std::string, PlaceLabel> labeled;
            std::map<std::string, int> matched;
            for (const auto& [id, g] : truth) {
                auto it = state.labels.find(id);
                if (it != state.labels.end()) {
                    labeled[id] = it->second;
                    matched[id] = g;
                }
            }
            if (!labeled.empty()) epoch_purity = purity(labeled, matched);
        }
    }

    state.metrics.push_back({epoch + 1, mean_loss, epoch_purity, reassign_fraction, epoch_lr});
    state.epoch += 1;
}

DescriptorDB embed_images(const std::vector<GeoImage>& images, const EncoderParams& encoder) {
    std::vector<DbRecord> records;
    records.reserve(images.size());
    for (const auto& img : images)
        records.push_back({img.id, img.position, encode_tokens(img.tokens, encoder)});
    return make_db(encoder.cfg.descriptor_dim, std::move(records));
}

}  // namespace mvpr
