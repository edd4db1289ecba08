#pragma once

// Centroid construction and the coarse (dataset) / fine (class) assignment
// rules. All rankings use cosine similarity against unnormalized centroids.

#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "embed_router/data/dataset.hpp"
#include "embed_router/nn/autoencoder.hpp"

namespace embed_router::matcher {

using Centroid = std::array<double, nn::kHiddenDim>;

struct CentroidEntry {
    std::uint32_t expert_id = 0;
    Centroid dataset_centroid{};
    std::vector<Centroid> class_centroids;

    std::size_t class_count() const noexcept { return class_centroids.size(); }
    friend bool operator==(const CentroidEntry&, const CentroidEntry&) = default;
};

// Centroids of the registered experts. Entry order carries no meaning; every
// decision is keyed by expert id.
class CentroidIndex {
public:
    CentroidIndex() = default;
    // Throws ParamError on duplicate ids or entries without class centroids.
    explicit CentroidIndex(std::vector<CentroidEntry> entries);

    // Inserts or replaces by expert_id; returns true when an entry was replaced.
    bool upsert(CentroidEntry entry);
    const CentroidEntry* find(std::uint32_t expert_id) const;

    const std::vector<CentroidEntry>& entries() const noexcept { return entries_; }
    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }

    friend bool operator==(const CentroidIndex&, const CentroidIndex&) = default;

private:
    std::vector<CentroidEntry> entries_;
};

struct Score {
    std::uint32_t id = 0;
    double value = 0.0;  // cosine in [-1, 1], or -inf for a zero-norm vector
};

struct Assignment {
    std::optional<std::uint32_t> expert_id;
    std::optional<std::uint32_t> class_id;
    std::vector<Score> coarse_scores;  // one per index entry, in index order
    std::vector<Score> fine_scores;    // one per class of the chosen expert
    bool rejected = false;

    // Highest coarse score (-inf when there are none).
    double top_coarse_score() const noexcept;
};

// dot(a, b) / (|a| |b|), clamped to [-1, 1]. Throws InputShapeError on a length
// mismatch and ZeroVectorError when either norm is zero.
double cosine(std::span<const double> a, std::span<const double> b);

// Like cosine but maps zero-norm vectors to -inf instead of throwing.
double ranking_score(std::span<const double> a, std::span<const double> b);

// Mean embedding of the whole dataset and of each class. Throws
// EmptyDatasetError for an empty dataset and MissingClassError when a class
// in [0, num_classes) has no samples.
CentroidEntry build_centroids(const nn::Autoencoder& ae, const data::LabeledDataset& ds,
                              std::uint32_t expert_id);
CentroidEntry centroids_from_embeddings(std::span<const nn::Embedding> embeddings,
                                        std::span<const std::uint32_t> labels, std::size_t num_classes,
                                        std::uint32_t expert_id);

// Argmax over dataset centroids; ties go to the lowest expert id. Throws
// EmptyIndexError on an empty index.
Assignment coarse_assign(std::span<const double> query, const CentroidIndex& index);

// Argmax over the entry's class centroids; ties go to the lowest class id.
Assignment fine_assign(std::span<const double> query, const CentroidEntry& entry);

// Coarse then fine within the chosen expert.
Assignment assign_hierarchical(std::span<const double> query, const CentroidIndex& index);

// Rejects (no expert, no class) when the best coarse score is below tau.
// tau = -1 disables rejection. Throws ParamError when tau is NaN or outside [-1, 1].
Assignment assign_with_rejection(std::span<const double> query, const CentroidIndex& index, double tau);

// Position of the autoencoder with the smallest reconstruction MSE of the raw
// 784-dim sample; ties go to the lowest position. Throws EmptyIndexError when
// the list is empty.
std::size_t mse_baseline_assign(std::span<const double> x_raw, std::span<const nn::Autoencoder> experts);

// 100 * matches / total. Throws EmptyInputError on empty input and
// InputShapeError when the lengths differ.
double evaluate_accuracy(std::span<const std::int64_t> predicted, std::span<const std::int64_t> truth);

// Copy-on-write holder: readers take an immutable snapshot, writers swap in a
// modified copy under a lock.
class SharedIndex {
public:
    SharedIndex() : current_(std::make_shared<const CentroidIndex>()) {}
    explicit SharedIndex(CentroidIndex initial)
        : current_(std::make_shared<const CentroidIndex>(std::move(initial))) {}

    std::shared_ptr<const CentroidIndex> snapshot() const;
    // Returns true when an existing expert was replaced.
    bool upsert(CentroidEntry entry);
    std::size_t size() const { return snapshot()->size(); }

private:
    mutable std::mutex mu_;
    std::shared_ptr<const CentroidIndex> current_;
};

// "EMCI", u16 version, u32 K, then per entry: u32 expert_id, u32 N, dataset
// centroid as 128 f64, N x 128 f64 class centroids. Little-endian.
std::vector<std::uint8_t> serialize_index(const CentroidIndex& index);
CentroidIndex deserialize_index(std::span<const std::uint8_t> bytes);
void save_index(const CentroidIndex& index, const std::string& path);
CentroidIndex load_index(const std::string& path);

}  // namespace embed_router::matcher
