#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "embed_router/nn/matrix.hpp"

namespace embed_router::nn {

inline constexpr std::size_t kInputDim = 784;
inline constexpr std::size_t kHiddenDim = 128;

// A hidden representation x' of one sample.
struct Embedding {
    std::array<double, kHiddenDim> values{};

    std::span<const double> span() const noexcept { return values; }
    bool is_zero() const noexcept;
    friend bool operator==(const Embedding&, const Embedding&) = default;
};

// Single-hidden-layer MLP autoencoder, 784 -> 128 (relu) -> 784 (sigmoid).
struct Autoencoder {
    Matrix w_enc{kHiddenDim, kInputDim};
    std::vector<double> b_enc = std::vector<double>(kHiddenDim, 0.0);
    Matrix w_dec{kInputDim, kHiddenDim};
    std::vector<double> b_dec = std::vector<double>(kInputDim, 0.0);
    std::uint64_t seed = 0;

    std::size_t parameter_count() const noexcept {
        return w_enc.size() + b_enc.size() + w_dec.size() + b_dec.size();
    }
    bool all_finite() const noexcept;

    friend bool operator==(const Autoencoder&, const Autoencoder&) = default;
};

// Weights and biases drawn U(-1/sqrt(fan_in), 1/sqrt(fan_in)) in the order
// w_enc, b_enc, w_dec, b_dec from Rng(seed).
Autoencoder init_autoencoder(std::uint64_t seed);

// relu(w_enc * x + b_enc). Throws InputShapeError unless x has 784 entries.
Embedding encode(const Autoencoder& ae, std::span<const double> x);

// Same as encode, but throws DeadEmbeddingError when a nonzero input maps to
// the all-zero embedding (every hidden unit inactive).
Embedding encode_checked(const Autoencoder& ae, std::span<const double> x);

// Encodes every row of `x` (N x 784). Bit-identical to calling encode per row.
std::vector<Embedding> encode_rows(const Autoencoder& ae, const Matrix& x);

// sigmoid(w_dec * h + b_dec); outputs are kept strictly inside (0, 1).
std::vector<double> decode(const Autoencoder& ae, std::span<const double> h);

// Mean squared error over coordinates.
double mse_loss(std::span<const double> x, std::span<const double> x_hat);

double sigmoid(double z) noexcept;

// Binary model file: "EMAE", u16 version, u64 seed, then w_enc, b_enc,
// w_dec, b_dec as little-endian f64.
std::vector<std::uint8_t> serialize_model(const Autoencoder& ae);
Autoencoder deserialize_model(std::span<const std::uint8_t> bytes);
void save_model(const Autoencoder& ae, const std::string& path);
Autoencoder load_model(const std::string& path);

}  // namespace embed_router::nn
