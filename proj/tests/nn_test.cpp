#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "embed_router/errors.hpp"
#include "embed_router/nn/adam.hpp"
#include "embed_router/nn/autoencoder.hpp"
#include "embed_router/nn/rng.hpp"
#include "embed_router/nn/train.hpp"
#include "oracles.hpp"

using namespace embed_router;
using namespace embed_router::nn;

namespace {

std::vector<double> random_input(std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> x(kInputDim);
    for (double& v : x) v = rng.uniform();
    return x;
}

bool bit_equal(std::span<const double> a, std::span<const double> b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

Matrix blob_data(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> proto_a(kInputDim), proto_b(kInputDim);
    for (auto& v : proto_a) v = rng.uniform();
    for (auto& v : proto_b) v = rng.uniform();
    Matrix m(n, kInputDim);
    for (std::size_t r = 0; r < n; ++r) {
        const auto& p = r % 2 == 0 ? proto_a : proto_b;
        for (std::size_t k = 0; k < kInputDim; ++k) m(r, k) = std::clamp(p[k] + 0.1 * rng.normal(), 0.0, 1.0);
    }
    return m;
}

}  // namespace

TEST_CASE("rng streams are reproducible and seed dependent") {
    Rng a(42), b(42), c(43);
    bool differs = false;
    for (int i = 0; i < 1000; ++i) {
        const auto va = a.next();
        CHECK(va == b.next());
        differs |= va != c.next();
    }
    CHECK(differs);
    // First xoshiro256** output for SplitMix64(0) expansion.
    Rng zero(0);
    CHECK(zero.next() == 0x99ec5f36cb75f2b4ULL);

    Rng u(7);
    for (int i = 0; i < 10000; ++i) {
        const double v = u.uniform();
        REQUIRE(v >= 0.0);
        REQUIRE(v < 1.0);
        REQUIRE(u.below(10) < 10);
    }
}

TEST_CASE("init_autoencoder") {
    const auto a = init_autoencoder(0);
    const auto b = init_autoencoder(0);
    CHECK(a == b);
    CHECK(bit_equal(a.w_enc.values(), b.w_enc.values()));

    const double bound_enc = 1.0 / std::sqrt(784.0);
    const double bound_dec = 1.0 / std::sqrt(128.0);
    for (double v : a.w_enc.values()) REQUIRE(std::abs(v) <= bound_enc);
    for (double v : a.b_enc) REQUIRE(std::abs(v) <= bound_enc);
    for (double v : a.w_dec.values()) REQUIRE(std::abs(v) <= bound_dec);
    for (double v : a.b_dec) REQUIRE(std::abs(v) <= bound_dec);

    CHECK_FALSE(init_autoencoder(1) == init_autoencoder(2));
    CHECK(a.seed == 0);
    CHECK(a.all_finite());
}

TEST_CASE("init draws parameters in declaration order") {
    const auto ae = init_autoencoder(9);
    Rng rng(9);
    const double be = 1.0 / std::sqrt(784.0), bd = 1.0 / std::sqrt(128.0);
    for (double v : ae.w_enc.values()) REQUIRE(v == rng.uniform(-be, be));
    for (double v : ae.b_enc) REQUIRE(v == rng.uniform(-be, be));
    for (double v : ae.w_dec.values()) REQUIRE(v == rng.uniform(-bd, bd));
    for (double v : ae.b_dec) REQUIRE(v == rng.uniform(-bd, bd));
}

TEST_CASE("encode") {
    SUBCASE("zero input and zero bias give zero embedding") {
        auto ae = init_autoencoder(3);
        std::fill(ae.b_enc.begin(), ae.b_enc.end(), 0.0);
        const auto h = encode(ae, std::vector<double>(kInputDim, 0.0));
        CHECK(h.is_zero());
    }
    SUBCASE("unit selector rows pass a one-hot through") {
        Autoencoder ae;
        for (std::size_t j = 0; j < kHiddenDim; ++j) ae.w_enc(j, j) = 1.0;
        std::vector<double> x(kInputDim, 0.0);
        x[5] = 1.0;
        const auto h = encode(ae, x);
        for (std::size_t j = 0; j < kHiddenDim; ++j) CHECK(h.values[j] == (j == 5 ? 1.0 : 0.0));
    }
    SUBCASE("matches the naive oracle") {
        const auto ae = init_autoencoder(11);
        const auto x = random_input(5);
        const auto h = encode(ae, x);
        const auto ref = oracle::encode(ae, x);
        for (std::size_t j = 0; j < kHiddenDim; ++j) CHECK(h.values[j] == doctest::Approx(ref[j]).epsilon(1e-12));
    }
    SUBCASE("batched encode equals per-row encode bit for bit") {
        const auto ae = init_autoencoder(12);
        Matrix x(5, kInputDim);
        for (std::size_t r = 0; r < 5; ++r) {
            auto row = random_input(100 + r);
            for (std::size_t k = 0; k < kInputDim; k += 3) row[k] = 0.0;  // sparse columns
            std::copy(row.begin(), row.end(), x.row(r).begin());
        }
        const auto batch = encode_rows(ae, x);
        for (std::size_t r = 0; r < 5; ++r) CHECK(batch[r] == encode(ae, x.row(r)));
    }
    SUBCASE("shape errors") {
        const auto ae = init_autoencoder(0);
        CHECK_THROWS_AS(encode(ae, std::vector<double>(783)), InputShapeError);
        CHECK_THROWS_AS(decode(ae, std::vector<double>(129)), InputShapeError);
    }
}

TEST_CASE("encode_checked flags a dead hidden layer") {
    Autoencoder ae;  // all-zero weights, bias zero: every unit sits at the kink
    std::vector<double> x(kInputDim, 0.5);
    CHECK_THROWS_AS(encode_checked(ae, x), DeadEmbeddingError);
    CHECK(encode_checked(ae, std::vector<double>(kInputDim, 0.0)).is_zero());
    CHECK_NOTHROW(encode_checked(init_autoencoder(1), random_input(1)));
}

TEST_CASE("decode") {
    Autoencoder ae = init_autoencoder(4);
    SUBCASE("zero input with zero bias is one half everywhere") {
        std::fill(ae.b_dec.begin(), ae.b_dec.end(), 0.0);
        for (double v : decode(ae, std::vector<double>(kHiddenDim, 0.0))) CHECK(v == 0.5);
    }
    SUBCASE("outputs stay strictly inside (0, 1) even for huge activations") {
        std::vector<double> h(kHiddenDim, 1e6);
        for (double v : decode(ae, h)) {
            CHECK(v > 0.0);
            CHECK(v < 1.0);
        }
    }
    SUBCASE("matches the naive oracle") {
        const auto x = random_input(8);
        const auto h = encode(ae, x);
        const auto out = decode(ae, h.values);
        const auto ref = oracle::decode(ae, std::vector<double>(h.values.begin(), h.values.end()));
        for (std::size_t i = 0; i < kInputDim; ++i) CHECK(out[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    }
}

TEST_CASE("mse_loss") {
    std::vector<double> ones(kInputDim, 1.0), zeros(kInputDim, 0.0);
    CHECK(mse_loss(ones, ones) == 0.0);
    CHECK(mse_loss(ones, zeros) == 1.0);
    std::vector<double> e0(kInputDim, 0.0);
    e0[0] = 1.0;
    CHECK(mse_loss(e0, zeros) == doctest::Approx(0.0012755102040816).epsilon(1e-12));
    CHECK_THROWS_AS(mse_loss(ones, std::vector<double>(3)), InputShapeError);
}

TEST_CASE("adam_step") {
    SUBCASE("zero gradient is a fixed point") {
        std::vector<double> p{1.0, -2.0, 3.5};
        const auto before = p;
        AdamState s(3);
        for (int i = 0; i < 5; ++i) adam_step(p, std::vector<double>(3, 0.0), s, 0.1);
        CHECK(p == before);
    }
    SUBCASE("first step with unit gradient moves by lr/(1+eps)") {
        std::vector<double> p{0.0};
        AdamState s(1);
        adam_step(p, std::vector<double>{1.0}, s, 0.01);
        CHECK(p[0] == doctest::Approx(-0.01 / (1.0 + 1e-8)).epsilon(1e-14));
    }
    SUBCASE("ten steps on a scalar quadratic match the scalar oracle") {
        std::vector<double> p{2.5};
        AdamState s(1);
        oracle::ScalarAdam ref;
        double q = 2.5;
        for (int i = 0; i < 10; ++i) {
            const double lr = 0.05 * (1 + i % 3);
            adam_step(p, std::vector<double>{2.0 * p[0]}, s, lr);
            q = ref.step(q, 2.0 * q, lr);
            CHECK(std::abs(p[0] - q) < 1e-12);
        }
    }
    SUBCASE("shape mismatch") {
        std::vector<double> p(3);
        AdamState s(2);
        CHECK_THROWS_AS(adam_step(p, std::vector<double>(3), s, 0.1), InputShapeError);
        AdamState ok(3);
        CHECK_THROWS_AS(adam_step(p, std::vector<double>(4), ok, 0.1), InputShapeError);
    }
}

TEST_CASE("learning-rate schedule") {
    TrainConfig cfg;
    for (std::size_t e = 0; e < 45; ++e) {
        const double expected = e < 15 ? 1e-2 : e < 30 ? 1e-3 : 1e-4;
        CHECK(learning_rate_at(cfg, e) == doctest::Approx(expected).epsilon(1e-15));
    }
    std::size_t drops = 0;
    for (std::size_t e = 1; e < cfg.epochs; ++e) drops += learning_rate_at(cfg, e) != learning_rate_at(cfg, e - 1);
    CHECK(drops == cfg.epochs / cfg.lr_decay_every - (cfg.epochs % cfg.lr_decay_every == 0 ? 1 : 0));
}

TEST_CASE("train config validation") {
    TrainConfig cfg;
    cfg.epochs = 0;
    CHECK_THROWS_AS(cfg.validate(), ParamError);
    cfg = {};
    cfg.batch_size = 0;
    CHECK_THROWS_AS(cfg.validate(), ParamError);
    cfg = {};
    cfg.lr0 = 0;
    CHECK_THROWS_AS(cfg.validate(), ParamError);
    cfg = {};
    cfg.lr_decay_factor = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ParamError);
}

TEST_CASE("train") {
    const Matrix data = blob_data(200, 77);
    TrainConfig cfg;
    cfg.epochs = 45;
    cfg.batch_size = 64;  // 200 rows: three full batches and one partial

    Rng r1(5), r2(5);
    const auto a = train(init_autoencoder(1), data, cfg, r1);
    const auto b = train(init_autoencoder(1), data, cfg, r2);
    CHECK(a.loss_history.size() == 45);
    CHECK(a.model == b.model);
    CHECK(bit_equal(a.loss_history, b.loss_history));
    CHECK(a.loss_history.back() < a.loss_history.front());
    CHECK(a.model.all_finite());

    SUBCASE("errors") {
        Rng r(1);
        CHECK_THROWS_AS(train(init_autoencoder(1), Matrix(0, kInputDim), cfg, r), EmptyDatasetError);
        CHECK_THROWS_AS(train(init_autoencoder(1), Matrix(3, 10), cfg, r), InputShapeError);
        Matrix bad(2, kInputDim, 0.5);
        bad(1, 3) = 2.0;
        CHECK_THROWS_AS(train(init_autoencoder(1), bad, cfg, r), ParamError);
    }
    SUBCASE("divergence reports the epoch") {
        Rng r(1);
        TrainConfig wild = cfg;
        wild.epochs = 2;
        auto ae = init_autoencoder(1);
        ae.b_dec[0] = std::numeric_limits<double>::quiet_NaN();
        try {
            train(ae, data, wild, r);
            FAIL("expected DivergenceError");
        } catch (const DivergenceError& e) {
            CHECK(e.epoch() == 0);
        }
    }
}

TEST_CASE("backprop agrees with finite differences") {
    Rng pick(2024);
    for (int trial = 0; trial < 3; ++trial) {
        const auto ae = init_autoencoder(pick.next());
        const auto x = random_input(pick.next());
        const double err = gradient_check(ae, x);
        CHECK(err < 1e-4);
        CHECK(gradient_check(ae, x) == err);
    }
}

TEST_CASE("backprop agrees with a long-double full-loss difference") {
    using LD = long double;
    auto full_loss = [](const Autoencoder& ae, const std::vector<double>& x) {
        std::vector<LD> hid(kHiddenDim);
        for (std::size_t j = 0; j < kHiddenDim; ++j) {
            LD acc = ae.b_enc[j];
            for (std::size_t k = 0; k < kInputDim; ++k) acc += static_cast<LD>(ae.w_enc(j, k)) * x[k];
            hid[j] = acc > 0 ? acc : 0;
        }
        LD total = 0;
        for (std::size_t i = 0; i < kInputDim; ++i) {
            LD acc = ae.b_dec[i];
            for (std::size_t j = 0; j < kHiddenDim; ++j) acc += static_cast<LD>(ae.w_dec(i, j)) * hid[j];
            const LD o = 1.0L / (1.0L + std::exp(-acc));
            total += (o - x[i]) * (o - x[i]);
        }
        return total / kInputDim;
    };
    auto ae = init_autoencoder(404);
    const auto x = random_input(405);
    Gradients g;
    loss_and_gradients(ae, x, g);
    Rng pick(406);
    const double h = 1e-6;
    for (int trial = 0; trial < 40; ++trial) {
        double* param = nullptr;
        double analytic = 0;
        switch (trial % 4) {
            case 0: {
                const auto j = pick.below(kHiddenDim), k = pick.below(kInputDim);
                param = &ae.w_enc(j, k);
                analytic = g.w_enc(j, k);
                break;
            }
            case 1: {
                const auto j = pick.below(kHiddenDim);
                param = &ae.b_enc[j];
                analytic = g.b_enc[j];
                break;
            }
            case 2: {
                const auto i = pick.below(kInputDim), j = pick.below(kHiddenDim);
                param = &ae.w_dec(i, j);
                analytic = g.w_dec(i, j);
                break;
            }
            default: {
                const auto i = pick.below(kInputDim);
                param = &ae.b_dec[i];
                analytic = g.b_dec[i];
            }
        }
        const double saved = *param;
        *param = saved + h;
        const LD plus = full_loss(ae, x);
        *param = saved - h;
        const LD minus = full_loss(ae, x);
        *param = saved;
        const double numeric = static_cast<double>((plus - minus) / (2 * static_cast<LD>(h)));
        CHECK(std::abs(analytic - numeric) <= 1e-4 * std::max({std::abs(analytic), std::abs(numeric), 1e-10}));
    }
}

TEST_CASE("zero input with zero encoder bias has a zero w_enc gradient") {
    auto ae = init_autoencoder(6);
    std::fill(ae.b_enc.begin(), ae.b_enc.end(), 0.0);
    std::vector<double> x(kInputDim, 0.0);
    Gradients g;
    loss_and_gradients(ae, x, g);
    for (double v : g.w_enc.values()) REQUIRE(v == 0.0);
    for (double v : g.b_enc) REQUIRE(v == 0.0);
    CHECK(gradient_check(ae, x) < 1e-4);
}

TEST_CASE("model files") {
    const auto ae = init_autoencoder(31);
    const auto bytes = serialize_model(ae);
    CHECK(bytes.size() == 4 + 2 + 8 + 8 * ae.parameter_count());
    CHECK(std::memcmp(bytes.data(), "EMAE", 4) == 0);
    CHECK(deserialize_model(bytes) == ae);

    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(deserialize_model(bad_magic), FormatError);
    auto bad_version = bytes;
    bad_version[4] = 9;
    CHECK_THROWS_AS(deserialize_model(bad_version), FormatError);
    CHECK_THROWS_AS(deserialize_model(std::span(bytes).first(100)), FormatError);
}
