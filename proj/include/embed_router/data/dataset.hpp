#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "embed_router/nn/matrix.hpp"

namespace embed_router::data {

enum class DatasetSource { idx, synthetic };

// Generator parameters for synthetic datasets. Each class gets one prototype
// drawn U(proto_low, proto_high) per native coordinate; samples are the
// prototype plus N(0, noise_sigma) noise, clamped to [0, 1].
struct SyntheticParams {
    std::size_t samples_per_class = 200;
    double noise_sigma = 0.1;
    double proto_low = 0.0;
    double proto_high = 1.0;
    std::uint64_t seed = 0;
};

struct DatasetSpec {
    std::string name;
    DatasetSource source = DatasetSource::synthetic;
    std::size_t num_classes = 2;
    // Native dimensionality; synthetic vectors of any other length are
    // adaptive-average-pooled to 784.
    std::size_t dims = 784;
    std::string images_path;  // idx only
    std::string labels_path;  // idx only
    SyntheticParams synthetic{};
};

// Rows of x are 784-dim samples with entries in [0, 1]; y holds class labels.
struct LabeledDataset {
    nn::Matrix x;
    std::vector<std::uint32_t> y;
    DatasetSpec spec;

    std::size_t size() const noexcept { return y.size(); }
    // Throws FormatError when row count, label range or value range is off.
    void validate() const;
    std::vector<std::size_t> class_histogram() const;
};

LabeledDataset subset(const LabeledDataset& ds, std::span<const std::size_t> rows);

// IDX images (magic 0x00000803) and labels (magic 0x00000801). Pixels are
// scaled by 1/255; images that are not 28x28 are area-resized to 28x28.
LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path);
LabeledDataset parse_idx(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels);

// Writes 28x28 IDX files from a dataset (values re-quantized to bytes).
void write_idx(const LabeledDataset& ds, const std::string& images_path, const std::string& labels_path);

// Throws ParamError when sigma < 0, the prototype range is outside [0, 1],
// or the class/sample counts are zero.
LabeledDataset synth_dataset(const DatasetSpec& spec, std::uint64_t seed);

struct SplitAssignment {
    std::vector<std::size_t> server;
    std::vector<std::size_t> client_a;
    std::vector<std::size_t> client_b;
};

// Stratified 50/25/25 split. Every class part is the floor or ceiling of its
// exact share and the totals equal round-half-up targets. Indices in each
// part are ascending. Throws StratificationError if any class has < 4 samples.
SplitAssignment split(const LabeledDataset& ds, std::uint64_t seed);

// Dataset spec files are key=value lines ('#' starts a comment):
//   name, source (idx|synthetic), num_classes, dims, images, labels,
//   samples_per_class, noise_sigma, proto_low, proto_high, seed
// Relative image/label paths resolve against `base_dir`.
DatasetSpec parse_dataset_spec(const std::string& text, const std::string& base_dir = "");

// "mnist" names the built-in 10k IDX corpus under `data_dir`; anything else is
// a path to a dataset spec file.
DatasetSpec resolve_dataset(const std::string& ref, const std::string& data_dir);

LabeledDataset load_dataset(const DatasetSpec& spec);

// $EMBED_ROUTER_DATA_DIR, or "data" when unset.
std::string default_data_dir();

inline constexpr const char* kMnistImages = "t10k-images-idx3-ubyte";
inline constexpr const char* kMnistLabels = "t10k-labels-idx1-ubyte";

}  // namespace embed_router::data
