#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace embed_router::data {

// Grayscale image, row-major, values in [0, 1].
struct Image {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> pixels;
};

// Bin i averages x[floor(i*L/n), ceil((i+1)*L/n)). Throws EmptyInputError on
// empty input.
std::vector<double> adaptive_avg_pool_1d(std::span<const double> x, std::size_t out_len = 784);

// Area-average resampling to 28x28 followed by a row-major flatten. Each output
// cell is the overlap-weighted mean of the source pixels it covers.
std::vector<double> resize_to_28(const Image& image);

}  // namespace embed_router::data
