#include "embed_router/matcher/matcher.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "embed_router/bytes.hpp"
#include "embed_router/errors.hpp"

namespace embed_router::matcher {
namespace {

constexpr char kIndexMagic[4] = {'E', 'M', 'C', 'I'};
constexpr std::uint16_t kIndexVersion = 1;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void require_query(std::span<const double> q) {
    if (q.size() != nn::kHiddenDim) {
        throw InputShapeError("query embedding must have 128 values, got " + std::to_string(q.size()));
    }
}

// Index of the best score; ties resolve to the lowest id.
std::size_t best_of(const std::vector<Score>& scores) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < scores.size(); ++i) {
        const auto& s = scores[i];
        const auto& b = scores[best];
        if (s.value > b.value || (s.value == b.value && s.id < b.id)) best = i;
    }
    return best;
}

Centroid mean_of(const Centroid& sum, std::size_t count) {
    Centroid out;
    const double n = static_cast<double>(count);
    for (std::size_t d = 0; d < out.size(); ++d) out[d] = sum[d] / n;
    return out;
}

}  // namespace

CentroidIndex::CentroidIndex(std::vector<CentroidEntry> entries) : entries_(std::move(entries)) {
    std::set<std::uint32_t> ids;
    for (const auto& e : entries_) {
        if (!ids.insert(e.expert_id).second) {
            throw ParamError("duplicate expert id " + std::to_string(e.expert_id));
        }
        if (e.class_centroids.empty()) {
            throw ParamError("expert " + std::to_string(e.expert_id) + " has no class centroids");
        }
    }
}

bool CentroidIndex::upsert(CentroidEntry entry) {
    if (entry.class_centroids.empty()) {
        throw ParamError("expert " + std::to_string(entry.expert_id) + " has no class centroids");
    }
    for (auto& e : entries_) {
        if (e.expert_id == entry.expert_id) {
            e = std::move(entry);
            return true;
        }
    }
    entries_.push_back(std::move(entry));
    return false;
}

const CentroidEntry* CentroidIndex::find(std::uint32_t expert_id) const {
    for (const auto& e : entries_) {
        if (e.expert_id == expert_id) return &e;
    }
    return nullptr;
}

double Assignment::top_coarse_score() const noexcept {
    double best = kNegInf;
    for (const auto& s : coarse_scores) best = std::max(best, s.value);
    return best;
}

double cosine(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw InputShapeError("cosine: lengths differ (" + std::to_string(a.size()) + " vs " +
                              std::to_string(b.size()) + ")");
    }
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) throw ZeroVectorError("cosine of a zero-norm vector is undefined");
    return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

double ranking_score(std::span<const double> a, std::span<const double> b) {
    try {
        return cosine(a, b);
    } catch (const ZeroVectorError&) {
        return kNegInf;
    }
}

CentroidEntry centroids_from_embeddings(std::span<const nn::Embedding> embeddings,
                                        std::span<const std::uint32_t> labels, std::size_t num_classes,
                                        std::uint32_t expert_id) {
    if (embeddings.empty()) throw EmptyDatasetError("cannot build centroids from an empty dataset");
    if (embeddings.size() != labels.size()) throw InputShapeError("embeddings and labels differ in length");
    if (num_classes == 0) throw ParamError("num_classes must be >= 1");

    Centroid total{};
    std::vector<Centroid> class_sum(num_classes, Centroid{});
    std::vector<std::size_t> class_n(num_classes, 0);
    for (std::size_t i = 0; i < embeddings.size(); ++i) {
        const auto label = labels[i];
        if (label >= num_classes) {
            throw InputShapeError("label " + std::to_string(label) + " >= num_classes");
        }
        const auto& v = embeddings[i].values;
        for (std::size_t d = 0; d < v.size(); ++d) {
            total[d] += v[d];
            class_sum[label][d] += v[d];
        }
        ++class_n[label];
    }
    CentroidEntry entry;
    entry.expert_id = expert_id;
    entry.dataset_centroid = mean_of(total, embeddings.size());
    entry.class_centroids.reserve(num_classes);
    for (std::size_t c = 0; c < num_classes; ++c) {
        if (class_n[c] == 0) throw MissingClassError("class " + std::to_string(c) + " has no samples");
        entry.class_centroids.push_back(mean_of(class_sum[c], class_n[c]));
    }
    return entry;
}

CentroidEntry build_centroids(const nn::Autoencoder& ae, const data::LabeledDataset& ds,
                              std::uint32_t expert_id) {
    if (ds.size() == 0) throw EmptyDatasetError("cannot build centroids from an empty dataset");
    const auto embeddings = nn::encode_rows(ae, ds.x);
    return centroids_from_embeddings(embeddings, ds.y, ds.spec.num_classes, expert_id);
}

Assignment coarse_assign(std::span<const double> query, const CentroidIndex& index) {
    require_query(query);
    if (index.empty()) throw EmptyIndexError("no experts registered");
    Assignment a;
    a.coarse_scores.reserve(index.size());
    for (const auto& e : index.entries()) {
        a.coarse_scores.push_back({e.expert_id, ranking_score(query, e.dataset_centroid)});
    }
    a.expert_id = a.coarse_scores[best_of(a.coarse_scores)].id;
    return a;
}

Assignment fine_assign(std::span<const double> query, const CentroidEntry& entry) {
    require_query(query);
    if (entry.class_centroids.empty()) throw ParamError("expert has no class centroids");
    Assignment a;
    a.expert_id = entry.expert_id;
    a.fine_scores.reserve(entry.class_count());
    for (std::size_t c = 0; c < entry.class_count(); ++c) {
        a.fine_scores.push_back({static_cast<std::uint32_t>(c), ranking_score(query, entry.class_centroids[c])});
    }
    a.class_id = a.fine_scores[best_of(a.fine_scores)].id;
    return a;
}

Assignment assign_hierarchical(std::span<const double> query, const CentroidIndex& index) {
    Assignment a = coarse_assign(query, index);
    Assignment fine = fine_assign(query, *index.find(*a.expert_id));
    a.class_id = fine.class_id;
    a.fine_scores = std::move(fine.fine_scores);
    return a;
}

Assignment assign_with_rejection(std::span<const double> query, const CentroidIndex& index, double tau) {
    if (!(tau >= -1.0 && tau <= 1.0)) throw ParamError("rejection threshold must lie in [-1, 1]");
    Assignment a = assign_hierarchical(query, index);
    if (tau > -1.0 && a.top_coarse_score() < tau) {
        a.rejected = true;
        a.expert_id.reset();
        a.class_id.reset();
        a.fine_scores.clear();
    }
    return a;
}

std::size_t mse_baseline_assign(std::span<const double> x_raw, std::span<const nn::Autoencoder> experts) {
    if (experts.empty()) throw EmptyIndexError("no autoencoders to compare against");
    std::size_t best = 0;
    double best_err = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < experts.size(); ++k) {
        const auto h = nn::encode(experts[k], x_raw);
        const double err = nn::mse_loss(x_raw, nn::decode(experts[k], h.values));
        if (err < best_err) {
            best_err = err;
            best = k;
        }
    }
    return best;
}

double evaluate_accuracy(std::span<const std::int64_t> predicted, std::span<const std::int64_t> truth) {
    if (predicted.size() != truth.size()) throw InputShapeError("prediction and truth lengths differ");
    if (predicted.empty()) throw EmptyInputError("accuracy of zero predictions");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) hits += predicted[i] == truth[i] ? 1 : 0;
    return 100.0 * static_cast<double>(hits) / static_cast<double>(predicted.size());
}

std::shared_ptr<const CentroidIndex> SharedIndex::snapshot() const {
    std::lock_guard lock(mu_);
    return current_;
}

bool SharedIndex::upsert(CentroidEntry entry) {
    std::lock_guard lock(mu_);
    auto next = std::make_shared<CentroidIndex>(*current_);
    const bool replaced = next->upsert(std::move(entry));
    current_ = std::move(next);
    return replaced;
}

std::vector<std::uint8_t> serialize_index(const CentroidIndex& index) {
    ByteWriter w;
    w.raw(std::string_view(kIndexMagic, 4));
    w.u16(kIndexVersion);
    w.u32(static_cast<std::uint32_t>(index.size()));
    for (const auto& e : index.entries()) {
        w.u32(e.expert_id);
        w.u32(static_cast<std::uint32_t>(e.class_count()));
        for (double v : e.dataset_centroid) w.f64(v);
        for (const auto& c : e.class_centroids) {
            for (double v : c) w.f64(v);
        }
    }
    return std::move(w).take();
}

CentroidIndex deserialize_index(std::span<const std::uint8_t> bytes) {
    try {
        ByteReader r(bytes);
        auto magic = r.raw(4);
        if (!std::equal(magic.begin(), magic.end(), kIndexMagic)) throw FormatError("index file: bad magic");
        const auto version = r.u16();
        if (version != kIndexVersion) {
            throw FormatError("index file: unsupported version " + std::to_string(version));
        }
        const std::uint32_t k = r.u32();
        std::vector<CentroidEntry> entries;
        for (std::uint32_t i = 0; i < k; ++i) {
            CentroidEntry e;
            e.expert_id = r.u32();
            const std::uint32_t n = r.u32();
            // Each class centroid needs 1 KiB; reject counts the file cannot hold.
            if (std::size_t{n} * nn::kHiddenDim * 8 > r.remaining()) throw FormatError("index file truncated");
            for (double& v : e.dataset_centroid) v = r.f64();
            e.class_centroids.resize(n);
            for (auto& c : e.class_centroids) {
                for (double& v : c) v = r.f64();
            }
            entries.push_back(std::move(e));
        }
        if (r.remaining() != 0) throw FormatError("index file: trailing bytes");
        return CentroidIndex(std::move(entries));
    } catch (const TruncationError& e) {
        throw FormatError(std::string("index file truncated: ") + e.what());
    } catch (const ParamError& e) {
        throw FormatError(std::string("index file: ") + e.what());
    }
}

void save_index(const CentroidIndex& index, const std::string& path) {
    write_file_bytes(path, serialize_index(index));
}

CentroidIndex load_index(const std::string& path) { return deserialize_index(read_file_bytes(path)); }

}  // namespace embed_router::matcher
