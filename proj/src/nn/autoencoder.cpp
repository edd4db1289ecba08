#include "embed_router/nn/autoencoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "embed_router/bytes.hpp"
#include "embed_router/errors.hpp"
#include "embed_router/nn/rng.hpp"

namespace embed_router::nn {
namespace {

constexpr char kModelMagic[4] = {'E', 'M', 'A', 'E'};
constexpr std::uint16_t kModelVersion = 1;

constexpr double kSigmoidFloor = std::numeric_limits<double>::min();
const double kSigmoidCeil = std::nextafter(1.0, 0.0);

void require_size(std::span<const double> v, std::size_t n, const char* what) {
    if (v.size() != n) {
        throw InputShapeError(std::string(what) + ": expected " + std::to_string(n) +
                              " values, got " + std::to_string(v.size()));
    }
}

void draw_uniform(Rng& rng, std::span<double> out, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : out) v = rng.uniform(-bound, bound);
}

}  // namespace

bool Embedding::is_zero() const noexcept {
    return std::all_of(values.begin(), values.end(), [](double v) { return v == 0.0; });
}

bool Autoencoder::all_finite() const noexcept {
    auto finite = [](double v) { return std::isfinite(v); };
    return w_enc.all_finite() && w_dec.all_finite() &&
           std::all_of(b_enc.begin(), b_enc.end(), finite) &&
           std::all_of(b_dec.begin(), b_dec.end(), finite);
}

Autoencoder init_autoencoder(std::uint64_t seed) {
    Autoencoder ae;
    ae.seed = seed;
    Rng rng(seed);
    draw_uniform(rng, ae.w_enc.values(), kInputDim);
    draw_uniform(rng, ae.b_enc, kInputDim);
    draw_uniform(rng, ae.w_dec.values(), kHiddenDim);
    draw_uniform(rng, ae.b_dec, kHiddenDim);
    return ae;
}

double sigmoid(double z) noexcept {
    double s;
    if (z >= 0.0) {
        s = 1.0 / (1.0 + std::exp(-z));
    } else {
        const double e = std::exp(z);
        s = e / (1.0 + e);
    }
    return std::clamp(s, kSigmoidFloor, kSigmoidCeil);
}

Embedding encode(const Autoencoder& ae, std::span<const double> x) {
    require_size(x, kInputDim, "encode input");
    Embedding h;
    for (std::size_t j = 0; j < kHiddenDim; ++j) {
        auto w = ae.w_enc.row(j);
        double acc = ae.b_enc[j];
        for (std::size_t k = 0; k < kInputDim; ++k) acc += w[k] * x[k];
        h.values[j] = acc > 0.0 ? acc : 0.0;
    }
    return h;
}

Embedding encode_checked(const Autoencoder& ae, std::span<const double> x) {
    Embedding h = encode(ae, x);
    const bool nonzero_input = std::any_of(x.begin(), x.end(), [](double v) { return v != 0.0; });
    if (nonzero_input && h.is_zero()) {
        throw DeadEmbeddingError("every hidden unit is inactive for a nonzero input");
    }
    return h;
}

std::vector<Embedding> encode_rows(const Autoencoder& ae, const Matrix& x) {
    if (x.cols() != kInputDim) {
        throw InputShapeError("encode_rows: expected 784 columns, got " + std::to_string(x.cols()));
    }
    // Accumulates in the same k order as encode() so results match bit for bit.
    const Matrix w_t = ae.w_enc.transposed();
    std::vector<Embedding> out(x.rows());
    std::array<double, kHiddenDim> acc;
    for (std::size_t r = 0; r < x.rows(); ++r) {
        std::copy(ae.b_enc.begin(), ae.b_enc.end(), acc.begin());
        auto xr = x.row(r);
        for (std::size_t k = 0; k < kInputDim; ++k) {
            const double xv = xr[k];
            if (xv == 0.0) continue;
            auto w = w_t.row(k);
            for (std::size_t j = 0; j < kHiddenDim; ++j) acc[j] += w[j] * xv;
        }
        for (std::size_t j = 0; j < kHiddenDim; ++j) out[r].values[j] = acc[j] > 0.0 ? acc[j] : 0.0;
    }
    return out;
}

std::vector<double> decode(const Autoencoder& ae, std::span<const double> h) {
    require_size(h, kHiddenDim, "decode input");
    std::vector<double> out(kInputDim);
    for (std::size_t i = 0; i < kInputDim; ++i) {
        auto w = ae.w_dec.row(i);
        double acc = ae.b_dec[i];
        for (std::size_t j = 0; j < kHiddenDim; ++j) acc += w[j] * h[j];
        out[i] = sigmoid(acc);
    }
    return out;
}

double mse_loss(std::span<const double> x, std::span<const double> x_hat) {
    if (x.size() != x_hat.size()) {
        throw InputShapeError("mse_loss: lengths differ (" + std::to_string(x.size()) + " vs " +
                              std::to_string(x_hat.size()) + ")");
    }
    if (x.empty()) throw InputShapeError("mse_loss: empty vectors");
    double sum = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - x_hat[i];
        sum += d * d;
    }
    return sum / static_cast<double>(x.size());
}

std::vector<std::uint8_t> serialize_model(const Autoencoder& ae) {
    ByteWriter w;
    w.raw(std::string_view(kModelMagic, 4));
    w.u16(kModelVersion);
    w.u64(ae.seed);
    for (double v : ae.w_enc.values()) w.f64(v);
    for (double v : ae.b_enc) w.f64(v);
    for (double v : ae.w_dec.values()) w.f64(v);
    for (double v : ae.b_dec) w.f64(v);
    return std::move(w).take();
}

Autoencoder deserialize_model(std::span<const std::uint8_t> bytes) {
    try {
        ByteReader r(bytes);
        auto magic = r.raw(4);
        if (!std::equal(magic.begin(), magic.end(), kModelMagic)) {
            throw FormatError("model file: bad magic");
        }
        const auto version = r.u16();
        if (version != kModelVersion) {
            throw FormatError("model file: unsupported version " + std::to_string(version));
        }
        Autoencoder ae;
        ae.seed = r.u64();
        for (double& v : ae.w_enc.values()) v = r.f64();
        for (double& v : ae.b_enc) v = r.f64();
        for (double& v : ae.w_dec.values()) v = r.f64();
        for (double& v : ae.b_dec) v = r.f64();
        if (r.remaining() != 0) throw FormatError("model file: trailing bytes");
        if (!ae.all_finite()) throw FormatError("model file: non-finite parameter");
        return ae;
    } catch (const TruncationError& e) {
        throw FormatError(std::string("model file truncated: ") + e.what());
    }
}

void save_model(const Autoencoder& ae, const std::string& path) {
    write_file_bytes(path, serialize_model(ae));
}

Autoencoder load_model(const std::string& path) { return deserialize_model(read_file_bytes(path)); }

}  // namespace embed_router::nn
