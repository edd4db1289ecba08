#include "embed_router/data/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "embed_router/bytes.hpp"
#include "embed_router/data/preprocess.hpp"
#include "embed_router/errors.hpp"
#include "embed_router/nn/autoencoder.hpp"
#include "embed_router/nn/rng.hpp"

namespace embed_router::data {
namespace {

constexpr std::uint32_t kImagesMagic = 0x00000803;
constexpr std::uint32_t kLabelsMagic = 0x00000801;

std::uint32_t read_be32(std::span<const std::uint8_t> b, std::size_t at) {
    if (b.size() < at + 4) throw FormatError("IDX header truncated");
    return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) |
           (std::uint32_t{b[at + 2]} << 8) | std::uint32_t{b[at + 3]};
}

void append_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<std::uint8_t>(v >> shift));
}

std::string trim(std::string s) {
    const auto ws = " \t\r\n";
    s.erase(0, s.find_first_not_of(ws));
    const auto last = s.find_last_not_of(ws);
    s.erase(last == std::string::npos ? 0 : last + 1);
    return s;
}

std::size_t parse_count(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const unsigned long long n = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return static_cast<std::size_t>(n);
    } catch (const std::exception&) {
        throw ConfigError("dataset spec: '" + key + "' expects a non-negative integer, got '" + v + "'");
    }
}

double parse_real(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("dataset spec: '" + key + "' expects a number, got '" + v + "'");
    }
}

// Distributes each class's leftover units (after flooring its shares) over the
// parts whose exact share is fractional so that part totals hit their targets.
// This is a small bipartite b-matching solved with augmenting paths.
class LeftoverAllocator {
public:
    LeftoverAllocator(std::vector<std::array<bool, 3>> eligible, std::array<std::size_t, 3> capacity)
        : eligible_(std::move(eligible)), capacity_(capacity),
          taken_(eligible_.size(), std::array<bool, 3>{false, false, false}) {}

    bool place_unit(std::size_t cls) {
        std::vector<bool> seen_part(3, false);
        return augment(cls, seen_part);
    }

    bool taken(std::size_t cls, std::size_t part) const { return taken_[cls][part]; }

private:
    bool augment(std::size_t cls, std::vector<bool>& seen_part) {
        for (std::size_t p = 0; p < 3; ++p) {
            if (!eligible_[cls][p] || taken_[cls][p] || seen_part[p]) continue;
            seen_part[p] = true;
            if (used_[p] < capacity_[p]) {
                taken_[cls][p] = true;
                ++used_[p];
                return true;
            }
            // Part p is full: try to move one of its units elsewhere.
            for (std::size_t other = 0; other < taken_.size(); ++other) {
                if (!taken_[other][p]) continue;
                taken_[other][p] = false;
                --used_[p];
                if (augment_excluding(other, p, seen_part)) {
                    taken_[cls][p] = true;
                    ++used_[p];
                    return true;
                }
                taken_[other][p] = true;
                ++used_[p];
            }
        }
        return false;
    }

    bool augment_excluding(std::size_t cls, std::size_t banned, std::vector<bool>& seen_part) {
        const bool was = eligible_[cls][banned];
        eligible_[cls][banned] = false;
        const bool ok = augment(cls, seen_part);
        eligible_[cls][banned] = was;
        return ok;
    }

    std::vector<std::array<bool, 3>> eligible_;
    std::array<std::size_t, 3> capacity_;
    std::array<std::size_t, 3> used_{0, 0, 0};
    std::vector<std::array<bool, 3>> taken_;
};

}  // namespace

void LabeledDataset::validate() const {
    if (x.rows() != y.size()) {
        throw FormatError("dataset has " + std::to_string(x.rows()) + " rows but " +
                          std::to_string(y.size()) + " labels");
    }
    if (x.cols() != nn::kInputDim) throw FormatError("dataset rows must be 784-dim");
    for (double v : x.values()) {
        if (!(v >= 0.0 && v <= 1.0)) throw FormatError("dataset value outside [0, 1]");
    }
    for (auto label : y) {
        if (label >= spec.num_classes) {
            throw FormatError("label " + std::to_string(label) + " >= num_classes " +
                              std::to_string(spec.num_classes));
        }
    }
}

std::vector<std::size_t> LabeledDataset::class_histogram() const {
    std::vector<std::size_t> h(spec.num_classes, 0);
    for (auto label : y) {
        if (label >= h.size()) h.resize(label + 1, 0);
        ++h[label];
    }
    return h;
}

LabeledDataset subset(const LabeledDataset& ds, std::span<const std::size_t> rows) {
    LabeledDataset out;
    out.spec = ds.spec;
    out.x = nn::gather_rows(ds.x, rows);
    out.y.reserve(rows.size());
    for (auto r : rows) out.y.push_back(ds.y.at(r));
    return out;
}

LabeledDataset parse_idx(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels) {
    if (read_be32(images, 0) != kImagesMagic) throw FormatError("IDX images: bad magic");
    if (read_be32(labels, 0) != kLabelsMagic) throw FormatError("IDX labels: bad magic");
    const std::size_t n = read_be32(images, 4);
    const std::size_t h = read_be32(images, 8);
    const std::size_t w = read_be32(images, 12);
    const std::size_t n_labels = read_be32(labels, 4);
    if (n != n_labels) {
        throw FormatError("IDX count mismatch: " + std::to_string(n) + " images, " +
                          std::to_string(n_labels) + " labels");
    }
    if (h == 0 || w == 0) throw FormatError("IDX images: zero-sized image");
    if (images.size() != 16 + n * h * w) throw FormatError("IDX images: payload size mismatch");
    if (labels.size() != 8 + n) throw FormatError("IDX labels: payload size mismatch");

    LabeledDataset ds;
    ds.spec.name = "idx";
    ds.spec.source = DatasetSource::idx;
    ds.spec.dims = h * w;
    ds.x = nn::Matrix(n, nn::kInputDim);
    ds.y.resize(n);
    std::uint32_t max_label = 0;
    for (std::size_t s = 0; s < n; ++s) {
        ds.y[s] = labels[8 + s];
        max_label = std::max(max_label, ds.y[s]);
        const std::uint8_t* px = images.data() + 16 + s * h * w;
        auto row = ds.x.row(s);
        if (h == 28 && w == 28) {
            for (std::size_t k = 0; k < nn::kInputDim; ++k) row[k] = px[k] / 255.0;
        } else {
            Image img{h, w, std::vector<double>(h * w)};
            for (std::size_t k = 0; k < h * w; ++k) img.pixels[k] = px[k] / 255.0;
            auto resized = resize_to_28(img);
            std::copy(resized.begin(), resized.end(), row.begin());
        }
    }
    ds.spec.num_classes = std::max<std::size_t>(max_label + 1, 2);
    return ds;
}

LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path) {
    return parse_idx(read_file_bytes(images_path), read_file_bytes(labels_path));
}

void write_idx(const LabeledDataset& ds, const std::string& images_path, const std::string& labels_path) {
    std::vector<std::uint8_t> img, lab;
    append_be32(img, kImagesMagic);
    append_be32(img, static_cast<std::uint32_t>(ds.size()));
    append_be32(img, 28);
    append_be32(img, 28);
    for (double v : ds.x.values()) {
        img.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
    }
    append_be32(lab, kLabelsMagic);
    append_be32(lab, static_cast<std::uint32_t>(ds.size()));
    for (auto label : ds.y) lab.push_back(static_cast<std::uint8_t>(label));
    write_file_bytes(images_path, img);
    write_file_bytes(labels_path, lab);
}

LabeledDataset synth_dataset(const DatasetSpec& spec, std::uint64_t seed) {
    const auto& p = spec.synthetic;
    if (!(p.noise_sigma >= 0.0)) throw ParamError("synthetic noise sigma must be >= 0");
    if (!(p.proto_low >= 0.0 && p.proto_high <= 1.0 && p.proto_low <= p.proto_high)) {
        throw ParamError("synthetic prototype range must satisfy 0 <= low <= high <= 1");
    }
    if (spec.num_classes == 0 || p.samples_per_class == 0 || spec.dims == 0) {
        throw ParamError("synthetic dataset needs classes, samples and dims > 0");
    }

    nn::Rng rng(seed);
    std::vector<std::vector<double>> prototypes(spec.num_classes, std::vector<double>(spec.dims));
    for (auto& proto : prototypes) {
        for (double& v : proto) v = rng.uniform(p.proto_low, p.proto_high);
    }

    LabeledDataset ds;
    ds.spec = spec;
    ds.x = nn::Matrix(spec.num_classes * p.samples_per_class, nn::kInputDim);
    ds.y.reserve(spec.num_classes * p.samples_per_class);
    std::vector<double> sample(spec.dims);
    std::size_t r = 0;
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
        for (std::size_t s = 0; s < p.samples_per_class; ++s, ++r) {
            for (std::size_t k = 0; k < spec.dims; ++k) {
                sample[k] = std::clamp(prototypes[c][k] + p.noise_sigma * rng.normal(), 0.0, 1.0);
            }
            auto row = ds.x.row(r);
            if (spec.dims == nn::kInputDim) {
                std::copy(sample.begin(), sample.end(), row.begin());
            } else {
                auto pooled = adaptive_avg_pool_1d(sample, nn::kInputDim);
                std::copy(pooled.begin(), pooled.end(), row.begin());
            }
            ds.y.push_back(static_cast<std::uint32_t>(c));
        }
    }
    return ds;
}

SplitAssignment split(const LabeledDataset& ds, std::uint64_t seed) {
    const std::size_t n = ds.size();
    if (n < 4) throw StratificationError("split needs at least 4 samples");

    std::vector<std::vector<std::size_t>> by_class(std::max<std::size_t>(ds.spec.num_classes, 1));
    for (std::size_t i = 0; i < n; ++i) {
        if (ds.y[i] >= by_class.size()) by_class.resize(ds.y[i] + 1);
        by_class[ds.y[i]].push_back(i);
    }
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        if (by_class[c].size() < 4) {
            throw StratificationError("class " + std::to_string(c) + " has " +
                                      std::to_string(by_class[c].size()) + " samples (< 4)");
        }
    }

    // Shares are 2/4, 1/4, 1/4; targets round half up.
    const std::array<std::size_t, 3> quarters{2, 1, 1};
    const std::size_t t_server = (n + 1) / 2;
    const std::size_t t_a = (n - t_server + 1) / 2;
    const std::array<std::size_t, 3> targets{t_server, t_a, n - t_server - t_a};

    const std::size_t classes = by_class.size();
    std::vector<std::array<std::size_t, 3>> counts(classes);
    std::vector<std::array<bool, 3>> fractional(classes);
    std::vector<std::size_t> leftover(classes);
    std::array<std::size_t, 3> floor_sum{0, 0, 0};
    for (std::size_t c = 0; c < classes; ++c) {
        const std::size_t nc = by_class[c].size();
        std::size_t used = 0;
        for (std::size_t p = 0; p < 3; ++p) {
            counts[c][p] = nc * quarters[p] / 4;
            fractional[c][p] = (nc * quarters[p]) % 4 != 0;
            used += counts[c][p];
            floor_sum[p] += counts[c][p];
        }
        leftover[c] = nc - used;
    }
    std::array<std::size_t, 3> deficit{};
    for (std::size_t p = 0; p < 3; ++p) deficit[p] = targets[p] - floor_sum[p];

    LeftoverAllocator alloc(fractional, deficit);
    for (std::size_t c = 0; c < classes; ++c) {
        for (std::size_t u = 0; u < leftover[c]; ++u) {
            if (!alloc.place_unit(c)) throw StratificationError("no stratified rounding satisfies the targets");
        }
    }

    nn::Rng rng(seed);
    SplitAssignment out;
    for (std::size_t c = 0; c < classes; ++c) {
        auto& idx = by_class[c];
        rng.shuffle(std::span<std::size_t>(idx));
        std::array<std::size_t, 3> take = counts[c];
        for (std::size_t p = 0; p < 3; ++p) take[p] += alloc.taken(c, p) ? 1 : 0;
        auto it = idx.begin();
        out.server.insert(out.server.end(), it, it + static_cast<std::ptrdiff_t>(take[0]));
        it += static_cast<std::ptrdiff_t>(take[0]);
        out.client_a.insert(out.client_a.end(), it, it + static_cast<std::ptrdiff_t>(take[1]));
        it += static_cast<std::ptrdiff_t>(take[1]);
        out.client_b.insert(out.client_b.end(), it, idx.end());
    }
    std::sort(out.server.begin(), out.server.end());
    std::sort(out.client_a.begin(), out.client_a.end());
    std::sort(out.client_b.begin(), out.client_b.end());
    return out;
}

DatasetSpec parse_dataset_spec(const std::string& text, const std::string& base_dir) {
    DatasetSpec spec;
    bool have_name = false, have_source = false;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    auto resolve = [&](const std::string& p) {
        if (p.empty() || base_dir.empty() || std::filesystem::path(p).is_absolute()) return p;
        return (std::filesystem::path(base_dir) / p).string();
    };
    while (std::getline(in, line)) {
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("dataset spec line " + std::to_string(line_no) + ": expected key=value");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key == "name") {
            spec.name = value;
            have_name = true;
        } else if (key == "source") {
            if (value == "idx") spec.source = DatasetSource::idx;
            else if (value == "synthetic") spec.source = DatasetSource::synthetic;
            else throw ConfigError("dataset spec: unknown source '" + value + "'");
            have_source = true;
        } else if (key == "num_classes") {
            spec.num_classes = parse_count(key, value);
        } else if (key == "dims") {
            spec.dims = parse_count(key, value);
        } else if (key == "images") {
            spec.images_path = resolve(value);
        } else if (key == "labels") {
            spec.labels_path = resolve(value);
        } else if (key == "samples_per_class") {
            spec.synthetic.samples_per_class = parse_count(key, value);
        } else if (key == "noise_sigma") {
            spec.synthetic.noise_sigma = parse_real(key, value);
        } else if (key == "proto_low") {
            spec.synthetic.proto_low = parse_real(key, value);
        } else if (key == "proto_high") {
            spec.synthetic.proto_high = parse_real(key, value);
        } else if (key == "seed") {
            spec.synthetic.seed = parse_count(key, value);
        } else {
            throw ConfigError("dataset spec: unknown key '" + key + "'");
        }
    }
    if (!have_name || spec.name.empty()) throw ConfigError("dataset spec: missing name");
    if (!have_source) throw ConfigError("dataset spec: missing source");
    if (spec.num_classes < 2) throw ConfigError("dataset spec: num_classes must be >= 2");
    if (spec.source == DatasetSource::idx && (spec.images_path.empty() || spec.labels_path.empty())) {
        throw ConfigError("dataset spec: idx source needs images= and labels=");
    }
    return spec;
}

DatasetSpec resolve_dataset(const std::string& ref, const std::string& data_dir) {
    if (ref == "mnist") {
        DatasetSpec spec;
        spec.name = "mnist";
        spec.source = DatasetSource::idx;
        spec.num_classes = 10;
        spec.dims = 784;
        spec.images_path = (std::filesystem::path(data_dir) / kMnistImages).string();
        spec.labels_path = (std::filesystem::path(data_dir) / kMnistLabels).string();
        return spec;
    }
    std::ifstream in(ref);
    if (!in) throw ConfigError("cannot open dataset spec '" + ref + "'");
    std::stringstream text;
    text << in.rdbuf();
    return parse_dataset_spec(text.str(), std::filesystem::path(ref).parent_path().string());
}

LabeledDataset load_dataset(const DatasetSpec& spec) {
    if (spec.source == DatasetSource::synthetic) return synth_dataset(spec, spec.synthetic.seed);
    LabeledDataset ds = load_idx(spec.images_path, spec.labels_path);
    const std::size_t found = ds.spec.num_classes;
    const std::size_t native = ds.spec.dims;
    ds.spec = spec;
    ds.spec.dims = native;
    ds.spec.num_classes = std::max(spec.num_classes, found);
    ds.validate();
    return ds;
}

std::string default_data_dir() {
    if (const char* env = std::getenv("EMBED_ROUTER_DATA_DIR"); env != nullptr && *env != '\0') return env;
    return "data";
}

}  // namespace embed_router::data
