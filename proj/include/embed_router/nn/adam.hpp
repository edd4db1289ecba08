#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace embed_router::nn {

struct AdamHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// First and second moment estimates plus the step counter.
struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    std::uint64_t step = 0;

    AdamState() = default;
    explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
};

// One bias-corrected Adam update applied in place. Throws InputShapeError
// when params, grads and the moment vectors differ in length.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               double lr, const AdamHyper& hyper = {});

}  // namespace embed_router::nn
