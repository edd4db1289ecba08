#include "embed_router/nn/adam.hpp"

#include <cmath>
#include <string>

#include "embed_router/errors.hpp"

namespace embed_router::nn {

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               double lr, const AdamHyper& hyper) {
    const std::size_t n = params.size();
    if (grads.size() != n || state.m.size() != n || state.v.size() != n) {
        throw InputShapeError("adam_step: params " + std::to_string(n) + ", grads " +
                              std::to_string(grads.size()) + ", moments " +
                              std::to_string(state.m.size()) + "/" + std::to_string(state.v.size()));
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(hyper.beta1, t);
    const double bc2 = 1.0 - std::pow(hyper.beta2, t);
    for (std::size_t i = 0; i < n; ++i) {
        const double g = grads[i];
        state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * g;
        state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * g * g;
        const double m_hat = state.m[i] / bc1;
        const double v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (std::sqrt(v_hat) + hyper.eps);
    }
}

}  // namespace embed_router::nn
