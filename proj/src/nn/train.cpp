#include "embed_router/nn/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "embed_router/errors.hpp"

namespace embed_router::nn {

void TrainConfig::validate() const {
    if (epochs == 0) throw ParamError("epochs must be >= 1");
    if (batch_size == 0) throw ParamError("batch_size must be >= 1");
    if (!(lr0 > 0.0)) throw ParamError("lr0 must be > 0");
    if (lr_decay_every == 0) throw ParamError("lr_decay_every must be >= 1");
    if (!(lr_decay_factor > 1.0)) throw ParamError("lr_decay_factor must be > 1");
}

double learning_rate_at(const TrainConfig& cfg, std::size_t epoch) {
    const auto drops = static_cast<double>(epoch / cfg.lr_decay_every);
    return cfg.lr0 / std::pow(cfg.lr_decay_factor, drops);
}

namespace {

// Scratch buffers for one mini-batch; rows are samples.
struct BatchBuffers {
    Matrix pre;  // B x 128 encoder pre-activation
    Matrix hid;  // B x 128 relu output
    Matrix out;  // B x 784 sigmoid output
    Matrix d_out;  // B x 784 dLoss/dz at the decoder pre-activation
    Matrix d_hid;  // B x 128 dLoss/dpre at the encoder pre-activation

    explicit BatchBuffers(std::size_t b)
        : pre(b, kHiddenDim), hid(b, kHiddenDim), out(b, kInputDim), d_out(b, kInputDim),
          d_hid(b, kHiddenDim) {}
};

void check_training_data(const Matrix& data) {
    if (data.rows() == 0) throw EmptyDatasetError("training data has no rows");
    if (data.cols() != kInputDim) {
        throw InputShapeError("training data must have 784 columns, got " + std::to_string(data.cols()));
    }
    for (double v : data.values()) {
        if (!(v >= 0.0 && v <= 1.0)) throw ParamError("training data entries must lie in [0, 1]");
    }
}

// Forward + backward over `rows` of `data`, accumulating parameter gradients
// (already scaled by 1/batch) and returning the summed per-sample loss.
double run_batch(const Autoencoder& ae, const Matrix& w_enc_t, const Matrix& w_dec_t, const Matrix& data,
                 std::span<const std::size_t> rows, BatchBuffers& buf, Gradients& g, Matrix& g_w_dec_t) {
    const std::size_t bs = rows.size();
    double loss_sum = 0.0;

    for (std::size_t b = 0; b < bs; ++b) {
        auto x = data.row(rows[b]);
        auto pre = buf.pre.row(b);
        std::copy(ae.b_enc.begin(), ae.b_enc.end(), pre.begin());
        for (std::size_t k = 0; k < kInputDim; ++k) {
            const double xv = x[k];
            if (xv == 0.0) continue;
            auto w = w_enc_t.row(k);
            for (std::size_t j = 0; j < kHiddenDim; ++j) pre[j] += w[j] * xv;
        }
        auto hid = buf.hid.row(b);
        for (std::size_t j = 0; j < kHiddenDim; ++j) hid[j] = pre[j] > 0.0 ? pre[j] : 0.0;

        auto z = buf.out.row(b);
        std::copy(ae.b_dec.begin(), ae.b_dec.end(), z.begin());
        for (std::size_t j = 0; j < kHiddenDim; ++j) {
            const double hv = hid[j];
            if (hv == 0.0) continue;
            auto w = w_dec_t.row(j);
            for (std::size_t i = 0; i < kInputDim; ++i) z[i] += w[i] * hv;
        }
        double sq = 0.0;
        for (std::size_t i = 0; i < kInputDim; ++i) {
            z[i] = sigmoid(z[i]);
            const double d = z[i] - x[i];
            sq += d * d;
        }
        loss_sum += sq / static_cast<double>(kInputDim);
    }

    const double scale = 2.0 / (static_cast<double>(kInputDim) * static_cast<double>(bs));
    for (std::size_t b = 0; b < bs; ++b) {
        auto x = data.row(rows[b]);
        auto o = buf.out.row(b);
        auto dz = buf.d_out.row(b);
        for (std::size_t i = 0; i < kInputDim; ++i) dz[i] = scale * (o[i] - x[i]) * o[i] * (1.0 - o[i]);
        for (std::size_t i = 0; i < kInputDim; ++i) g.b_dec[i] += dz[i];

        auto hid = buf.hid.row(b);
        for (std::size_t j = 0; j < kHiddenDim; ++j) {
            const double hv = hid[j];
            if (hv == 0.0) continue;
            auto gw = g_w_dec_t.row(j);
            for (std::size_t i = 0; i < kInputDim; ++i) gw[i] += hv * dz[i];
        }

        auto dh = buf.d_hid.row(b);
        std::fill(dh.begin(), dh.end(), 0.0);
        for (std::size_t i = 0; i < kInputDim; ++i) {
            const double d = dz[i];
            auto w = ae.w_dec.row(i);
            for (std::size_t j = 0; j < kHiddenDim; ++j) dh[j] += d * w[j];
        }
        auto pre = buf.pre.row(b);
        for (std::size_t j = 0; j < kHiddenDim; ++j) {
            if (!(pre[j] > 0.0)) dh[j] = 0.0;
            g.b_enc[j] += dh[j];
        }
        for (std::size_t j = 0; j < kHiddenDim; ++j) {
            const double d = dh[j];
            if (d == 0.0) continue;
            auto gw = g.w_enc.row(j);
            for (std::size_t k = 0; k < kInputDim; ++k) gw[k] += d * x[k];
        }
    }
    return loss_sum;
}

void transpose_into(const Matrix& src, Matrix& dst) {
    for (std::size_t r = 0; r < src.rows(); ++r) {
        for (std::size_t c = 0; c < src.cols(); ++c) dst(c, r) = src(r, c);
    }
}

}  // namespace

TrainResult train(Autoencoder ae, const Matrix& data, const TrainConfig& cfg, Rng& rng) {
    cfg.validate();
    check_training_data(data);

    const std::size_t n = data.rows();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});

    AdamState s_w_enc(ae.w_enc.size()), s_b_enc(ae.b_enc.size());
    AdamState s_w_dec(ae.w_dec.size()), s_b_dec(ae.b_dec.size());

    BatchBuffers buf(std::min(cfg.batch_size, n));
    Gradients g;
    Matrix g_w_dec_t(kHiddenDim, kInputDim);
    Matrix w_enc_t(kInputDim, kHiddenDim), w_dec_t(kHiddenDim, kInputDim);

    TrainResult result;
    result.loss_history.reserve(cfg.epochs);
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = learning_rate_at(cfg, epoch);
        rng.shuffle(std::span<std::size_t>(order));

        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t bs = std::min(cfg.batch_size, n - start);
            transpose_into(ae.w_enc, w_enc_t);
            transpose_into(ae.w_dec, w_dec_t);
            g.w_enc.fill(0.0);
            g_w_dec_t.fill(0.0);
            std::fill(g.b_enc.begin(), g.b_enc.end(), 0.0);
            std::fill(g.b_dec.begin(), g.b_dec.end(), 0.0);

            const double batch_loss = run_batch(ae, w_enc_t, w_dec_t, data,
                                                std::span<const std::size_t>(order).subspan(start, bs),
                                                buf, g, g_w_dec_t);
            if (!std::isfinite(batch_loss)) {
                throw DivergenceError(epoch, "loss became non-finite in epoch " + std::to_string(epoch));
            }
            epoch_loss += batch_loss;
            transpose_into(g_w_dec_t, g.w_dec);

            adam_step(ae.w_enc.values(), g.w_enc.values(), s_w_enc, lr, cfg.adam);
            adam_step(ae.b_enc, g.b_enc, s_b_enc, lr, cfg.adam);
            adam_step(ae.w_dec.values(), g.w_dec.values(), s_w_dec, lr, cfg.adam);
            adam_step(ae.b_dec, g.b_dec, s_b_dec, lr, cfg.adam);
        }
        epoch_loss /= static_cast<double>(n);
        if (!std::isfinite(epoch_loss) || !ae.all_finite()) {
            throw DivergenceError(epoch, "training diverged in epoch " + std::to_string(epoch));
        }
        result.loss_history.push_back(epoch_loss);
    }
    result.model = std::move(ae);
    return result;
}

double loss_and_gradients(const Autoencoder& ae, std::span<const double> x, Gradients& out) {
    if (x.size() != kInputDim) throw InputShapeError("loss_and_gradients: expected 784 inputs");
    std::array<double, kHiddenDim> pre{}, hid{};
    for (std::size_t j = 0; j < kHiddenDim; ++j) {
        double acc = ae.b_enc[j];
        for (std::size_t k = 0; k < kInputDim; ++k) acc += ae.w_enc(j, k) * x[k];
        pre[j] = acc;
        hid[j] = acc > 0.0 ? acc : 0.0;
    }
    std::vector<double> o(kInputDim), dz(kInputDim);
    double loss = 0.0;
    for (std::size_t i = 0; i < kInputDim; ++i) {
        double acc = ae.b_dec[i];
        for (std::size_t j = 0; j < kHiddenDim; ++j) acc += ae.w_dec(i, j) * hid[j];
        o[i] = sigmoid(acc);
        const double d = o[i] - x[i];
        loss += d * d;
    }
    loss /= static_cast<double>(kInputDim);

    const double scale = 2.0 / static_cast<double>(kInputDim);
    for (std::size_t i = 0; i < kInputDim; ++i) {
        dz[i] = scale * (o[i] - x[i]) * o[i] * (1.0 - o[i]);
        out.b_dec[i] = dz[i];
        for (std::size_t j = 0; j < kHiddenDim; ++j) out.w_dec(i, j) = dz[i] * hid[j];
    }
    for (std::size_t j = 0; j < kHiddenDim; ++j) {
        double d = 0.0;
        if (pre[j] > 0.0) {
            for (std::size_t i = 0; i < kInputDim; ++i) d += dz[i] * ae.w_dec(i, j);
        }
        out.b_enc[j] = d;
        for (std::size_t k = 0; k < kInputDim; ++k) out.w_enc(j, k) = d * x[k];
    }
    return loss;
}

double gradient_check(const Autoencoder& ae, std::span<const double> x, const GradientCheckOptions& opts) {
    if (x.size() != kInputDim) throw InputShapeError("gradient_check: expected 784 inputs");
    Gradients analytic;
    loss_and_gradients(ae, x, analytic);

    // Cached forward pass. Perturbing one parameter only changes a single
    // output or a single hidden unit, so the loss change is recomputed from
    // those pieces as a sum of per-coordinate differences (avoids cancellation
    // between two full losses).
    std::array<double, kHiddenDim> pre{}, hid{};
    for (std::size_t j = 0; j < kHiddenDim; ++j) {
        double acc = ae.b_enc[j];
        for (std::size_t k = 0; k < kInputDim; ++k) acc += ae.w_enc(j, k) * x[k];
        pre[j] = acc;
        hid[j] = std::max(acc, 0.0);
    }
    std::vector<double> z(kInputDim), o(kInputDim);
    for (std::size_t i = 0; i < kInputDim; ++i) {
        double acc = ae.b_dec[i];
        for (std::size_t j = 0; j < kHiddenDim; ++j) acc += ae.w_dec(i, j) * hid[j];
        z[i] = acc;
        o[i] = sigmoid(acc);
    }
    const double inv_n = 1.0 / static_cast<double>(kInputDim);
    auto coord_delta = [&](std::size_t i, double z_new) {
        const double s = sigmoid(z_new);
        return (s - o[i]) * (s + o[i] - 2.0 * x[i]) * inv_n;
    };
    auto hidden_delta = [&](std::size_t j, double pre_new) {
        const double dh = std::max(pre_new, 0.0) - hid[j];
        double total = 0.0;
        for (std::size_t i = 0; i < kInputDim; ++i) total += coord_delta(i, z[i] + ae.w_dec(i, j) * dh);
        return total;
    };

    const double h = opts.step;
    double worst = 0.0;
    auto compare = [&](double analytic_value, double numeric) {
        const double denom = std::max({std::abs(analytic_value), std::abs(numeric), opts.floor});
        worst = std::max(worst, std::abs(analytic_value - numeric) / denom);
    };

    for (std::size_t i = 0; i < kInputDim; ++i) {
        compare(analytic.b_dec[i], (coord_delta(i, z[i] + h) - coord_delta(i, z[i] - h)) / (2.0 * h));
        for (std::size_t j = 0; j < kHiddenDim; ++j) {
            compare(analytic.w_dec(i, j),
                    (coord_delta(i, z[i] + h * hid[j]) - coord_delta(i, z[i] - h * hid[j])) / (2.0 * h));
        }
    }
    for (std::size_t j = 0; j < kHiddenDim; ++j) {
        if (std::abs(pre[j]) < std::max(opts.kink_margin, h)) continue;
        compare(analytic.b_enc[j], (hidden_delta(j, pre[j] + h) - hidden_delta(j, pre[j] - h)) / (2.0 * h));
    }
    const std::size_t stride = std::max<std::size_t>(opts.w_enc_stride, 1);
    for (std::size_t flat = 0; flat < ae.w_enc.size(); flat += stride) {
        const std::size_t j = flat / kInputDim, k = flat % kInputDim;
        if (std::abs(pre[j]) < std::max(opts.kink_margin, h)) continue;
        if (x[k] == 0.0) {
            compare(analytic.w_enc(j, k), 0.0);
            continue;
        }
        // A weight step of h / |x_k| moves the pre-activation by exactly h.
        const double shift = std::copysign(h, x[k]);
        const double wstep = h / std::abs(x[k]);
        compare(analytic.w_enc(j, k),
                (hidden_delta(j, pre[j] + shift) - hidden_delta(j, pre[j] - shift)) / (2.0 * wstep));
    }
    return worst;
}

}  // namespace embed_router::nn
