#include "embed_router/data/preprocess.hpp"

#include <algorithm>
#include <string>

#include "embed_router/errors.hpp"

namespace embed_router::data {
namespace {

constexpr std::size_t kSide = 28;

// weights[i * src + s]: share of destination cell i covered by source pixel s.
// Overlaps are computed in units of 1/(dst*src) so they are exact integers.
std::vector<double> area_weights(std::size_t src, std::size_t dst) {
    std::vector<double> w(dst * src, 0.0);
    for (std::size_t i = 0; i < dst; ++i) {
        const std::size_t cell_lo = i * src, cell_hi = (i + 1) * src;
        for (std::size_t s = 0; s < src; ++s) {
            const std::size_t px_lo = s * dst, px_hi = (s + 1) * dst;
            const std::size_t lo = std::max(cell_lo, px_lo), hi = std::min(cell_hi, px_hi);
            if (hi > lo) w[i * src + s] = static_cast<double>(hi - lo) / static_cast<double>(src);
        }
    }
    return w;
}

}  // namespace

std::vector<double> adaptive_avg_pool_1d(std::span<const double> x, std::size_t out_len) {
    if (x.empty()) throw EmptyInputError("adaptive_avg_pool_1d: empty input");
    if (out_len == 0) throw ParamError("adaptive_avg_pool_1d: output length must be positive");
    const std::size_t len = x.size();
    std::vector<double> out(out_len);
    for (std::size_t i = 0; i < out_len; ++i) {
        const std::size_t start = (i * len) / out_len;
        const std::size_t end = ((i + 1) * len + out_len - 1) / out_len;
        double sum = 0.0;
        for (std::size_t k = start; k < end; ++k) sum += x[k];
        out[i] = sum / static_cast<double>(end - start);
    }
    return out;
}

std::vector<double> resize_to_28(const Image& image) {
    if (image.height == 0 || image.width == 0) throw InputShapeError("resize_to_28: empty image");
    if (image.pixels.size() != image.height * image.width) {
        throw InputShapeError("resize_to_28: pixel count " + std::to_string(image.pixels.size()) +
                              " does not match " + std::to_string(image.height) + "x" +
                              std::to_string(image.width));
    }
    const auto wy = area_weights(image.height, kSide);
    const auto wx = area_weights(image.width, kSide);

    // Rows first: tmp is 28 x width.
    std::vector<double> tmp(kSide * image.width, 0.0);
    for (std::size_t r = 0; r < kSide; ++r) {
        for (std::size_t s = 0; s < image.height; ++s) {
            const double w = wy[r * image.height + s];
            if (w == 0.0) continue;
            for (std::size_t c = 0; c < image.width; ++c) {
                tmp[r * image.width + c] += w * image.pixels[s * image.width + c];
            }
        }
    }
    std::vector<double> out(kSide * kSide, 0.0);
    for (std::size_t r = 0; r < kSide; ++r) {
        for (std::size_t c = 0; c < kSide; ++c) {
            double acc = 0.0;
            for (std::size_t t = 0; t < image.width; ++t) {
                const double w = wx[c * image.width + t];
                if (w != 0.0) acc += w * tmp[r * image.width + t];
            }
            out[r * kSide + c] = std::clamp(acc, 0.0, 1.0);
        }
    }
    return out;
}

}  // namespace embed_router::data
