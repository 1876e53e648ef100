#include "mvpr/io.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <sstream>

#include "mvpr/errors.hpp"

namespace mvpr::io {

static_assert(std::endian::native == std::endian::little,
              "checkpoint serialization assumes a little-endian host");

// ---------------------------------------------------------------------------
// config
// ---------------------------------------------------------------------------

std::string format_double(double v) {
    char buf[64];
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) return buf;
    }
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

double to_double(const std::string& v, const std::string& key) {
    char* end = nullptr;
    const double x = std::strtod(v.c_str(), &end);
    if (end == v.c_str() || *end != '\0')
        throw ParseError("config: bad numeric value '" + v + "' for key '" + key + "'");
    return x;
}

int to_int(const std::string& v, const std::string& key) {
    const double x = to_double(v, key);
    if (x != std::floor(x)) throw ParseError("config: key '" + key + "' wants an integer");
    return static_cast<int>(x);
}

std::uint64_t to_u64(const std::string& v, const std::string& key) {
    char* end = nullptr;
    const std::uint64_t x = std::strtoull(v.c_str(), &end, 10);
    if (end == v.c_str() || *end != '\0')
        throw ParseError("config: bad unsigned value '" + v + "' for key '" + key + "'");
    return x;
}

bool to_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ParseError("config: bad boolean value '" + v + "' for key '" + key + "'");
}

}  // namespace

void set_config_key(RunConfig& c, const std::string& key, const std::string& value) {
    if (key == "M") c.M = to_double(value, key);
    else if (key == "K") c.K = to_int(value, key);
    else if (key == "group_count") c.group_count = to_int(value, key);
    else if (key == "recluster_fraction") c.recluster_fraction = to_double(value, key);
    else if (key == "epochs") c.epochs = to_int(value, key);
    else if (key == "iterations_per_epoch") c.iterations_per_epoch = to_int(value, key);
    else if (key == "batch_size") c.batch_size = to_int(value, key);
    else if (key == "lr_encoder") c.lr_encoder = to_double(value, key);
    else if (key == "lr_classifier") c.lr_classifier = to_double(value, key);
    else if (key == "gamma") c.gamma = to_double(value, key);
    else if (key == "margin") c.margin = to_double(value, key);
    else if (key == "seed") c.seed = to_u64(value, key);
    else if (key == "d") c.d = to_int(value, key);
    else if (key == "block_width") c.block_width = to_int(value, key);
    else if (key == "mlp_hidden") c.mlp_hidden = to_int(value, key);
    else if (key == "train_full_block") c.train_full_block = to_bool(value, key);
    else if (key == "supervision") {
        if (value != "adaptive" && value != "heading_bin")
            throw ParseError("config: supervision must be 'adaptive' or 'heading_bin'");
        c.supervision = value;
    } else if (key == "heading_bins") c.heading_bins = to_int(value, key);
    else if (key == "kmeans_restarts") c.kmeans_restarts = to_int(value, key);
    else if (key == "kmeans_max_iter") c.kmeans_max_iter = to_int(value, key);
    else if (key == "num_cells") c.num_cells = to_int(value, key);
    else if (key == "places_per_cell") c.places_per_cell = to_int(value, key);
    else if (key == "A") c.A = to_int(value, key);
    else if (key == "D_in") c.D_in = to_int(value, key);
    else if (key == "T") c.T = to_int(value, key);
    else if (key == "cell_stride") c.cell_stride = to_int(value, key);
    else if (key == "texture_scale") c.texture_scale = to_double(value, key);
    else if (key == "fov") c.fov = to_double(value, key);
    else if (key == "noise_sigma") c.noise_sigma = to_double(value, key);
    else if (key == "occlusion_prob") c.occlusion_prob = to_double(value, key);
    else if (key == "occlusion_rho") c.occlusion_rho = to_double(value, key);
    else if (key == "start_angles") c.start_angles = value;
    else if (key == "crop_step") c.crop_step = to_double(value, key);
    else if (key == "queries_per_place") c.queries_per_place = to_int(value, key);
    else if (key == "query_rho") c.query_rho = to_double(value, key);
    else if (key == "dataset") c.dataset = value;
    else if (key == "out") c.out = value;
    else if (key == "ks") c.ks = value;
    else if (key == "radius") c.radius = to_double(value, key);
    else throw ParseError("config: unknown key '" + key + "'");
}

RunConfig parse_config_text(const std::string& text) {
    RunConfig cfg;
    std::istringstream is(text);
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ParseError("config line " + std::to_string(line_no) + ": expected key = value");
        set_config_key(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
}

RunConfig load_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config file " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_config_text(ss.str());
}

std::string write_config(const RunConfig& c) {
    std::ostringstream os;
    const auto d = [&](const char* k, double v) { os << k << " = " << format_double(v) << '\n'; };
    const auto i = [&](const char* k, long long v) { os << k << " = " << v << '\n'; };
    const auto s = [&](const char* k, const std::string& v) { os << k << " = " << v << '\n'; };
    d("M", c.M);
    i("K", c.K);
    i("group_count", c.group_count);
    d("recluster_fraction", c.recluster_fraction);
    i("epochs", c.epochs);
    i("iterations_per_epoch", c.iterations_per_epoch);
    i("batch_size", c.batch_size);
    d("lr_encoder", c.lr_encoder);
    d("lr_classifier", c.lr_classifier);
    d("gamma", c.gamma);
    d("margin", c.margin);
    os << "seed = " << c.seed << '\n';
    i("d", c.d);
    i("block_width", c.block_width);
    i("mlp_hidden", c.mlp_hidden);
    s("train_full_block", c.train_full_block ? "true" : "false");
    s("supervision", c.supervision);
    i("heading_bins", c.heading_bins);
    i("kmeans_restarts", c.kmeans_restarts);
    i("kmeans_max_iter", c.kmeans_max_iter);
    i("num_cells", c.num_cells);
    i("places_per_cell", c.places_per_cell);
    i("A", c.A);
    i("D_in", c.D_in);
    i("T", c.T);
    i("cell_stride", c.cell_stride);
    d("texture_scale", c.texture_scale);
    d("fov", c.fov);
    d("noise_sigma", c.noise_sigma);
    d("occlusion_prob", c.occlusion_prob);
    d("occlusion_rho", c.occlusion_rho);
    s("start_angles", c.start_angles);
    d("crop_step", c.crop_step);
    i("queries_per_place", c.queries_per_place);
    d("query_rho", c.query_rho);
    s("dataset", c.dataset);
    s("out", c.out);
    s("ks", c.ks);
    d("radius", c.radius);
    return os.str();
}

TrainConfig to_train_config(const RunConfig& c) {
    TrainConfig t;
    t.cell_size_m = c.M;
    t.K = c.K;
    t.group_count = c.group_count;
    t.recluster_fraction = c.recluster_fraction;
    t.epochs = c.epochs;
    t.iterations_per_epoch = c.iterations_per_epoch;
    t.batch_size = c.batch_size;
    t.lr_encoder = c.lr_encoder;
    t.lr_classifier = c.lr_classifier;
    t.gamma = c.gamma;
    t.margin = c.margin;
    t.seed = c.seed;
    t.descriptor_dim = c.d;
    t.block_width = c.block_width;
    t.mlp_hidden = c.mlp_hidden;
    t.train_full_block = c.train_full_block;
    t.supervision = c.supervision == "heading_bin" ? Supervision::kHeadingBin
                                                   : Supervision::kAdaptive;
    t.heading_bins = c.heading_bins;
    t.kmeans_restarts = c.kmeans_restarts;
    t.kmeans_max_iter = c.kmeans_max_iter;
    return t;
}

WorldConfig to_world_config(const RunConfig& c) {
    WorldConfig w;
    w.num_cells = c.num_cells;
    w.places_per_cell = c.places_per_cell;
    w.anchors_per_place = c.A;
    w.input_dim = c.D_in;
    w.tokens_per_view = c.T;
    w.cell_size_m = c.M;
    w.cell_stride = c.cell_stride;
    w.texture_scale = c.texture_scale;
    w.seed = c.seed;
    return w;
}

std::vector<double> parse_double_list(const std::string& csv) {
    std::vector<double> out;
    std::istringstream is(csv);
    std::string item;
    while (std::getline(is, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        out.push_back(to_double(item, "list"));
    }
    return out;
}

std::vector<int> parse_int_list(const std::string& csv) {
    std::vector<int> out;
    for (double v : parse_double_list(csv)) out.push_back(static_cast<int>(v));
    return out;
}

// ---------------------------------------------------------------------------
// binary helpers
// ---------------------------------------------------------------------------

namespace {

void w_bytes(std::string& out, const void* p, std::size_t n) {
    out.append(static_cast<const char*>(p), n);
}
void w_u8(std::string& out, std::uint8_t v) { w_bytes(out, &v, 1); }
void w_u32(std::string& out, std::uint32_t v) { w_bytes(out, &v, 4); }
void w_u64(std::string& out, std::uint64_t v) { w_bytes(out, &v, 8); }
void w_i64(std::string& out, std::int64_t v) { w_bytes(out, &v, 8); }
void w_f64(std::string& out, double v) { w_bytes(out, &v, 8); }
void w_str(std::string& out, const std::string& s) {
    w_u32(out, static_cast<std::uint32_t>(s.size()));
    w_bytes(out, s.data(), s.size());
}
void w_mat(std::string& out, const Mat& m) {
    w_u32(out, static_cast<std::uint32_t>(m.rows()));
    w_u32(out, static_cast<std::uint32_t>(m.cols()));
    w_bytes(out, m.data(), static_cast<std::size_t>(m.size()) * sizeof(double));
}

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > buf.size()) throw ParseError("checkpoint: truncated payload");
    }
    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(buf[pos++]);
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v;
        std::memcpy(&v, buf.data() + pos, 4);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v;
        std::memcpy(&v, buf.data() + pos, 8);
        pos += 8;
        return v;
    }
    std::int64_t i64() {
        need(8);
        std::int64_t v;
        std::memcpy(&v, buf.data() + pos, 8);
        pos += 8;
        return v;
    }
    double f64() {
        need(8);
        double v;
        std::memcpy(&v, buf.data() + pos, 8);
        pos += 8;
        return v;
    }
    std::string str() {
        const std::uint32_t n = u32();
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
    Mat mat() {
        const std::uint32_t r = u32();
        const std::uint32_t c = u32();
        const std::size_t n = static_cast<std::size_t>(r) * c;
        need(n * sizeof(double));
        Mat m(r, c);
        std::memcpy(m.data(), buf.data() + pos, n * sizeof(double));
        pos += n * sizeof(double);
        return m;
    }
};

constexpr char kCkptMagic[9] = "MVPRCKPT";
constexpr char kDbMagic[9] = "MVPRDB01";

}  // namespace

// ---------------------------------------------------------------------------
// checkpoint
// ---------------------------------------------------------------------------

void save_checkpoint(const std::string& path, const TrainState& state) {
    std::map<std::string, std::string> sections;

    {
        RunConfig rc;  // embed the train config via its canonical text form
        rc.M = state.cfg.cell_size_m;
        rc.K = state.cfg.K;
        rc.group_count = state.cfg.group_count;
        rc.recluster_fraction = state.cfg.recluster_fraction;
        rc.epochs = state.cfg.epochs;
        rc.iterations_per_epoch = state.cfg.iterations_per_epoch;
        rc.batch_size = state.cfg.batch_size;
        rc.lr_encoder = state.cfg.lr_encoder;
        rc.lr_classifier = state.cfg.lr_classifier;
        rc.gamma = state.cfg.gamma;
        rc.margin = state.cfg.margin;
        rc.seed = state.cfg.seed;
        rc.d = state.cfg.descriptor_dim;
        rc.block_width = state.cfg.block_width;
        rc.mlp_hidden = state.cfg.mlp_hidden;
        rc.train_full_block = state.cfg.train_full_block;
        rc.supervision =
            state.cfg.supervision == Supervision::kHeadingBin ? "heading_bin" : "adaptive";
        rc.heading_bins = state.cfg.heading_bins;
        rc.kmeans_restarts = state.cfg.kmeans_restarts;
        rc.kmeans_max_iter = state.cfg.kmeans_max_iter;
        sections["config"] = write_config(rc);
    }

    {
        std::string& s = sections["encoder"];
        const EncoderConfig& e = state.encoder.cfg;
        w_u32(s, static_cast<std::uint32_t>(e.input_dim));
        w_u32(s, static_cast<std::uint32_t>(e.width));
        w_u32(s, static_cast<std::uint32_t>(e.mlp_hidden));
        w_u32(s, static_cast<std::uint32_t>(e.adapter_hidden));
        w_u32(s, static_cast<std::uint32_t>(e.descriptor_dim));
        w_f64(s, e.ln_eps);
        w_u8(s, e.train_full_block ? 1 : 0);
        w_u64(s, state.encoder.store.step_count);
        w_u32(s, static_cast<std::uint32_t>(state.encoder.store.entries().size()));
        for (const auto& entry : state.encoder.store.entries()) {
            w_str(s, entry.name);
            w_u8(s, entry.trainable ? 1 : 0);
            w_mat(s, entry.value);
            w_mat(s, entry.m);
            w_mat(s, entry.v);
        }
    }

    {
        std::string& s = sections["classifier"];
        const ClassifierWeights& cw = state.classifier;
        w_f64(s, cw.gamma());
        w_f64(s, cw.margin());
        w_u32(s, static_cast<std::uint32_t>(cw.dim()));
        w_u64(s, cw.step_count);
        w_u32(s, static_cast<std::uint32_t>(cw.class_count()));
        for (int i = 0; i < cw.class_count(); ++i) {
            const PlaceLabel& label = cw.label_of(i);
            w_i64(s, label.cell.e_i);
            w_i64(s, label.cell.n_j);
            w_u32(s, static_cast<std::uint32_t>(label.h));
        }
        w_mat(s, cw.rows());
        w_mat(s, cw.raw_m());
        w_mat(s, cw.raw_v());
    }

    {
        std::string& s = sections["clusters"];
        w_u32(s, static_cast<std::uint32_t>(state.clusters.cells.size()));
        for (const auto& [cell, cc] : state.clusters.cells) {
            w_i64(s, cell.e_i);
            w_i64(s, cell.n_j);
            w_u32(s, static_cast<std::uint32_t>(cc.epoch));
            w_f64(s, cc.objective);
            w_mat(s, cc.centroids);
            w_u32(s, static_cast<std::uint32_t>(cc.assignments.size()));
            for (const auto& [id, h] : cc.assignments) {
                w_str(s, id);
                w_u32(s, static_cast<std::uint32_t>(h));
            }
        }
        w_u32(s, static_cast<std::uint32_t>(state.clusters.history.size()));
        for (const auto& event : state.clusters.history) {
            w_u32(s, static_cast<std::uint32_t>(event.epoch));
            w_i64(s, event.cell.e_i);
            w_i64(s, event.cell.n_j);
            w_u64(s, event.cell_size);
            w_u32(s, static_cast<std::uint32_t>(event.moved.size()));
            for (const auto& m : event.moved) {
                w_str(s, m.id);
                w_u32(s, static_cast<std::uint32_t>(m.old_h));
                w_u32(s, static_cast<std::uint32_t>(m.new_h));
            }
        }
    }

    {
        std::string& s = sections["trainer"];
        w_u32(s, static_cast<std::uint32_t>(state.epoch));
        w_u32(s, static_cast<std::uint32_t>(state.metrics.size()));
        for (const auto& m : state.metrics) {
            w_u32(s, static_cast<std::uint32_t>(m.epoch));
            w_f64(s, m.mean_loss);
            w_f64(s, m.mean_purity);
            w_f64(s, m.reassign_fraction);
            w_f64(s, m.lr);
        }
        w_u32(s, static_cast<std::uint32_t>(state.cell_group.size()));
        for (const auto& [cell, group] : state.cell_group) {
            w_i64(s, cell.e_i);
            w_i64(s, cell.n_j);
            w_u32(s, static_cast<std::uint32_t>(group));
        }
    }

    std::string out;
    out.append(kCkptMagic, 8);
    w_u8(out, 1);  // format version
    for (const auto& [name, payload] : sections) {
        w_str(out, name);
        w_u64(out, payload.size());
        out += payload;
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open checkpoint for writing: " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("short write on checkpoint: " + path);
}

TrainState load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    const std::string buf = ss.str();
    if (buf.size() < 9 || std::memcmp(buf.data(), kCkptMagic, 8) != 0)
        throw ParseError("checkpoint: bad magic");
    if (static_cast<std::uint8_t>(buf[8]) != 1) throw ParseError("checkpoint: unknown version");

    std::map<std::string, std::string> sections;
    {
        Reader r{buf, 9};
        while (r.pos < buf.size()) {
            const std::string name = r.str();
            const std::uint64_t len = r.u64();
            r.need(len);
            sections[name] = buf.substr(r.pos, len);
            r.pos += len;
        }
    }
    for (const char* required : {"config", "encoder", "classifier", "clusters", "trainer"})
        if (!sections.count(required))
            throw ParseError(std::string("checkpoint: missing section '") + required + "'");

    TrainState state;
    state.cfg = to_train_config(parse_config_text(sections["config"]));

    {
        Reader r{sections["encoder"]};
        EncoderConfig e;
        e.input_dim = static_cast<int>(r.u32());
        e.width = static_cast<int>(r.u32());
        e.mlp_hidden = static_cast<int>(r.u32());
        e.adapter_hidden = static_cast<int>(r.u32());
        e.descriptor_dim = static_cast<int>(r.u32());
        e.ln_eps = r.f64();
        e.train_full_block = r.u8() != 0;
        state.encoder.cfg = e;
        const std::uint64_t step = r.u64();
        const std::uint32_t n = r.u32();
        for (std::uint32_t i = 0; i < n; ++i) {
            const std::string name = r.str();
            const bool trainable = r.u8() != 0;
            Mat value = r.mat();
            Mat m = r.mat();
            Mat v = r.mat();
            state.encoder.store.add(name, value, trainable);
            state.encoder.store.entry(name).m = std::move(m);
            state.encoder.store.entry(name).v = std::move(v);
        }
        state.encoder.store.step_count = step;
    }

    {
        Reader r{sections["classifier"]};
        const double gamma = r.f64();
        const double margin = r.f64();
        const int dim = static_cast<int>(r.u32());
        const std::uint64_t step = r.u64();
        const std::uint32_t C = r.u32();
        std::vector<PlaceLabel> labels;
        labels.reserve(C);
        for (std::uint32_t i = 0; i < C; ++i) {
            PlaceLabel label;
            label.cell.e_i = r.i64();
            label.cell.n_j = r.i64();
            label.h = static_cast<int>(r.u32());
            labels.push_back(label);
        }
        ClassifierWeights cw(dim, gamma, margin);
        cw.raw_rows() = r.mat();
        cw.raw_m() = r.mat();
        cw.raw_v() = r.mat();
        cw.rebuild_index(std::move(labels));
        cw.step_count = step;
        if (cw.rows().rows() != static_cast<Eigen::Index>(C))
            throw ParseError("checkpoint: classifier row count mismatch");
        state.classifier = std::move(cw);
    }

    {
        Reader r{sections["clusters"]};
        const std::uint32_t n_cells = r.u32();
        for (std::uint32_t i = 0; i < n_cells; ++i) {
            CellId cell;
            cell.e_i = r.i64();
            cell.n_j = r.i64();
            CellClusters cc;
            cc.epoch = static_cast<int>(r.u32());
            cc.objective = r.f64();
            cc.centroids = r.mat();
            const std::uint32_t n_members = r.u32();
            for (std::uint32_t m = 0; m < n_members; ++m) {
                const std::string id = r.str();
                const int h = static_cast<int>(r.u32());
                cc.assignments[id] = h;
                state.labels[id] = PlaceLabel{cell, h};
            }
            state.clusters.cells[cell] = std::move(cc);
        }
        const std::uint32_t n_events = r.u32();
        for (std::uint32_t i = 0; i < n_events; ++i) {
            ReassignEvent event;
            event.epoch = static_cast<int>(r.u32());
            event.cell.e_i = r.i64();
            event.cell.n_j = r.i64();
            event.cell_size = r.u64();
            const std::uint32_t n_moved = r.u32();
            for (std::uint32_t m = 0; m < n_moved; ++m) {
                ReassignedImage ri;
                ri.id = r.str();
                ri.old_h = static_cast<int>(r.u32());
                ri.new_h = static_cast<int>(r.u32());
                event.moved.push_back(std::move(ri));
            }
            state.clusters.history.push_back(std::move(event));
        }
    }

    {
        Reader r{sections["trainer"]};
        state.epoch = static_cast<int>(r.u32());
        const std::uint32_t n_metrics = r.u32();
        for (std::uint32_t i = 0; i < n_metrics; ++i) {
            MetricRow m;
            m.epoch = static_cast<int>(r.u32());
            m.mean_loss = r.f64();
            m.mean_purity = r.f64();
            m.reassign_fraction = r.f64();
            m.lr = r.f64();
            state.metrics.push_back(m);
        }
        const std::uint32_t n_groups = r.u32();
        for (std::uint32_t i = 0; i < n_groups; ++i) {
            CellId cell;
            cell.e_i = r.i64();
            cell.n_j = r.i64();
            state.cell_group[cell] = static_cast<int>(r.u32());
        }
    }
    return state;
}

// ---------------------------------------------------------------------------
// descriptor database
// ---------------------------------------------------------------------------

void save_db(const std::string& path, const DescriptorDB& db) {
    constexpr std::size_t kIdWidth = 64;
    std::string out;
    out.append(kDbMagic, 8);
    w_u64(out, db.records.size());
    w_u32(out, static_cast<std::uint32_t>(db.dim));
    for (const auto& rec : db.records) {
        if (rec.id.size() >= kIdWidth)
            throw ContractError("save_db: id '" + rec.id + "' exceeds 63 bytes");
        char idbuf[kIdWidth] = {};
        std::memcpy(idbuf, rec.id.data(), rec.id.size());
        w_bytes(out, idbuf, kIdWidth);
        w_f64(out, rec.position.east);
        w_f64(out, rec.position.north);
        w_bytes(out, rec.descriptor.data(),
                static_cast<std::size_t>(rec.descriptor.size()) * sizeof(double));
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open db for writing: " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("short write on db: " + path);
}

DescriptorDB load_db(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open db: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    const std::string buf = ss.str();
    if (buf.size() < 20 || std::memcmp(buf.data(), kDbMagic, 8) != 0)
        throw ParseError("db: bad magic");
    Reader r{buf, 8};
    const std::uint64_t count = r.u64();
    const std::uint32_t dim = r.u32();
    std::vector<DbRecord> records;
    records.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        r.need(64);
        std::string id(buf.data() + r.pos, strnlen(buf.data() + r.pos, 64));
        r.pos += 64;
        DbRecord rec;
        rec.id = std::move(id);
        rec.position.east = r.f64();
        rec.position.north = r.f64();
        rec.descriptor.resize(dim);
        r.need(static_cast<std::size_t>(dim) * sizeof(double));
        std::memcpy(rec.descriptor.data(), buf.data() + r.pos,
                    static_cast<std::size_t>(dim) * sizeof(double));
        r.pos += static_cast<std::size_t>(dim) * sizeof(double);
        records.push_back(std::move(rec));
    }
    return make_db(static_cast<int>(dim), std::move(records));
}

// ---------------------------------------------------------------------------
// text artifacts
// ---------------------------------------------------------------------------

std::string format_metrics(const std::vector<MetricRow>& metrics) {
    std::string out;
    char line[256];
    for (const auto& m : metrics) {
        std::snprintf(line, sizeof(line), "%d\t%.17g\t%.17g\t%.17g\t%.17g\n", m.epoch, m.mean_loss,
                      m.mean_purity, m.reassign_fraction, m.lr);
        out += line;
    }
    return out;
}

void write_metrics(const std::string& path, const std::vector<MetricRow>& metrics) {
    write_text(path, format_metrics(metrics));
}

std::string format_eval_report(const EvalReport& report) {
    std::ostringstream os;
    os << "# retrieval-eval\t" << report.tag << '\n';
    os << "# radius_m\t" << format_double(report.radius) << '\n';
    os << "# queries\t" << report.query_count << '\n';
    os << "# no_positive\t" << report.no_positive_count << '\n';
    os << "# columns\tk\trecall\tcorrect\ttotal\n";
    char line[128];
    for (int k : report.ks) {
        std::snprintf(line, sizeof(line), "%d\t%.6f\t%d\t%d\n", k, report.recall.at(k),
                      report.correct.at(k), report.query_count);
        os << line;
    }
    return os.str();
}

void write_eval_report(const std::string& path, const EvalReport& report) {
    write_text(path, format_eval_report(report));
}

std::string format_interclass_report(const InterclassReport& report) {
    std::ostringstream os;
    os << "# interclass-distances\n";
    os << "# mean_adjacent_distance\t" << format_double(report.mean_adjacent_distance) << '\n';
    os << "# min_adjacent_distance\t" << format_double(report.min_adjacent_distance) << '\n';
    os << "# skipped_single_cluster_cells\t" << report.skipped_single_cluster_cells << '\n';
    os << "# close_pair_count (< " << format_double(InterclassReport::kHistogramMax) << ")\t"
       << report.close_pair_count << '\n';
    os << "# close_histogram";
    for (std::size_t c : report.close_histogram) os << '\t' << c;
    os << '\n';
    os << "# columns\te_i\tn_j\th_a\th_b\tmin\tmean\tpairs\n";
    char line[256];
    for (const auto& p : report.pairs) {
        std::snprintf(line, sizeof(line), "%lld\t%lld\t%d\t%d\t%.9f\t%.9f\t%zu\n",
                      static_cast<long long>(p.cell.e_i), static_cast<long long>(p.cell.n_j),
                      p.h_a, p.h_b, p.min_distance, p.mean_distance, p.pair_count);
        os << line;
    }
    return os.str();
}

std::string format_reassignment_report(const std::map<CellId, CellDiff>& diffs) {
    std::ostringstream os;
    os << "# reassignment-diff\n";
    os << "# columns\te_i\tn_j\tfraction\tmoved\n";
    for (const auto& [cell, diff] : diffs) {
        os << cell.e_i << '\t' << cell.n_j << '\t' << format_double(diff.fraction) << '\t'
           << diff.moved.size() << '\n';
        for (const auto& m : diff.moved)
            os << "#   " << m.id << ": " << m.old_h << " -> " << m.new_h << '\n';
    }
    return os.str();
}

std::string format_history_report(const std::vector<ReassignEvent>& history) {
    std::ostringstream os;
    os << "# reassignment-history\n";
    os << "# columns\tepoch\te_i\tn_j\tcell_size\tmoved\n";
    for (const auto& e : history) {
        os << e.epoch << '\t' << e.cell.e_i << '\t' << e.cell.n_j << '\t' << e.cell_size << '\t'
           << e.moved.size() << '\n';
        for (const auto& m : e.moved)
            os << "#   " << m.id << ": " << m.old_h << " -> " << m.new_h << '\n';
    }
    return os.str();
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!f) throw IoError("short write: " + path);
}

}  // namespace mvpr::io
