#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "embed_router/nn/adam.hpp"
#include "embed_router/nn/autoencoder.hpp"
#include "embed_router/nn/matrix.hpp"
#include "embed_router/nn/rng.hpp"

namespace embed_router::nn {

struct TrainConfig {
    std::size_t epochs = 45;
    double lr0 = 1e-2;
    std::size_t lr_decay_every = 15;
    double lr_decay_factor = 10.0;
    std::size_t batch_size = 128;
    AdamHyper adam{};

    // Throws ParamError on epochs == 0, batch_size == 0, lr0 <= 0,
    // decay factor <= 1 or lr_decay_every == 0.
    void validate() const;
};

// lr0 / factor^floor(epoch / decay_every), epoch 0-based.
double learning_rate_at(const TrainConfig& cfg, std::size_t epoch);

struct TrainResult {
    Autoencoder model;
    std::vector<double> loss_history;  // mean per-sample MSE of each epoch
};

// Mini-batch Adam on the MSE reconstruction loss. Rows of `data` are samples
// with entries in [0, 1]. The per-epoch shuffle is drawn from `rng`; the last
// partial batch is kept.
TrainResult train(Autoencoder ae, const Matrix& data, const TrainConfig& cfg, Rng& rng);

// Gradients of the per-sample MSE loss, laid out like the Autoencoder.
struct Gradients {
    Matrix w_enc{kHiddenDim, kInputDim};
    std::vector<double> b_enc = std::vector<double>(kHiddenDim, 0.0);
    Matrix w_dec{kInputDim, kHiddenDim};
    std::vector<double> b_dec = std::vector<double>(kInputDim, 0.0);
};

// Loss and backpropagated gradients of mse_loss(x, decode(encode(x))).
double loss_and_gradients(const Autoencoder& ae, std::span<const double> x, Gradients& out);

struct GradientCheckOptions {
    // Parameter step. w_enc(j, k) is stepped by step / |x_k| instead, so that
    // every perturbation moves the hidden pre-activation by the same amount.
    double step = 1e-5;
    // Only every n-th w_enc coordinate is perturbed; the other groups are
    // checked exhaustively.
    std::size_t w_enc_stride = 3;
    // Hidden units whose pre-activation is closer than this to the relu kink
    // are skipped (the finite difference would straddle it).
    double kink_margin = 1e-5;
    // Relative errors are taken against max(|analytic|, |numeric|, floor).
    double floor = 1e-10;
};

// Max relative error between backprop and central finite differences.
double gradient_check(const Autoencoder& ae, std::span<const double> x,
                      const GradientCheckOptions& opts = {});

}  // namespace embed_router::nn
