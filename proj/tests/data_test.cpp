#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <set>

#include "embed_router/bytes.hpp"
#include "embed_router/data/dataset.hpp"
#include "embed_router/data/preprocess.hpp"
#include "embed_router/errors.hpp"
#include "embed_router/nn/rng.hpp"

using namespace embed_router;
using namespace embed_router::data;
using embed_router::nn::Rng;

namespace {

std::vector<std::uint8_t> idx_images(std::uint32_t n, std::uint32_t rows, std::uint32_t cols,
                                     const std::vector<std::uint8_t>& pixels) {
    ByteWriter w;
    // IDX headers are big-endian.
    auto be32 = [&](std::uint32_t v) {
        w.u8(static_cast<std::uint8_t>(v >> 24));
        w.u8(static_cast<std::uint8_t>(v >> 16));
        w.u8(static_cast<std::uint8_t>(v >> 8));
        w.u8(static_cast<std::uint8_t>(v));
    };
    be32(0x00000803);
    be32(n);
    be32(rows);
    be32(cols);
    for (auto p : pixels) w.u8(p);
    return std::move(w).take();
}

std::vector<std::uint8_t> idx_labels(const std::vector<std::uint8_t>& labels) {
    std::vector<std::uint8_t> out{0, 0, 8, 1};
    const auto n = static_cast<std::uint32_t>(labels.size());
    for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(n >> s));
    out.insert(out.end(), labels.begin(), labels.end());
    return out;
}

DatasetSpec synth_spec(std::size_t classes, std::size_t per_class, std::size_t dims = 784) {
    DatasetSpec s;
    s.name = "toy";
    s.num_classes = classes;
    s.dims = dims;
    s.synthetic.samples_per_class = per_class;
    s.synthetic.noise_sigma = 0.1;
    return s;
}

LabeledDataset labeled(const std::vector<std::uint32_t>& y, std::size_t classes) {
    LabeledDataset ds;
    ds.x = nn::Matrix(y.size(), 784, 0.5);
    ds.y = y;
    ds.spec.num_classes = classes;
    return ds;
}

}  // namespace

TEST_CASE("parse_idx") {
    SUBCASE("pixel scaling") {
        std::vector<std::uint8_t> px(2 * 784, 0);
        px[0] = 255;
        px[1] = 51;
        px[784 + 783] = 128;
        const auto ds = parse_idx(idx_images(2, 28, 28, px), idx_labels({3, 7}));
        CHECK(ds.size() == 2);
        CHECK(ds.x.cols() == 784);
        CHECK(ds.x(0, 0) == 1.0);
        CHECK(ds.x(0, 1) == doctest::Approx(0.2).epsilon(1e-15));
        CHECK(ds.x(1, 783) == doctest::Approx(128.0 / 255.0).epsilon(1e-15));
        CHECK(ds.y == std::vector<std::uint32_t>{3, 7});
    }
    SUBCASE("bad magic") {
        auto img = idx_images(1, 28, 28, std::vector<std::uint8_t>(784));
        img[3] = 0x04;
        CHECK_THROWS_AS(parse_idx(img, idx_labels({0})), FormatError);
        auto lab = idx_labels({0});
        lab[3] = 0x03;
        CHECK_THROWS_AS(parse_idx(idx_images(1, 28, 28, std::vector<std::uint8_t>(784)), lab), FormatError);
    }
    SUBCASE("count mismatch") {
        CHECK_THROWS_AS(parse_idx(idx_images(2, 28, 28, std::vector<std::uint8_t>(2 * 784)), idx_labels({1})),
                        FormatError);
    }
    SUBCASE("truncated pixel block") {
        CHECK_THROWS_AS(parse_idx(idx_images(2, 28, 28, std::vector<std::uint8_t>(784)), idx_labels({1, 2})),
                        FormatError);
    }
    SUBCASE("non 28x28 images are resized") {
        std::vector<std::uint8_t> px(56 * 56, 0);
        for (std::size_t r = 0; r < 56; ++r)
            for (std::size_t c = 0; c < 56; ++c) px[r * 56 + c] = (r / 2 + c / 2) % 2 ? 255 : 0;
        const auto ds = parse_idx(idx_images(1, 56, 56, px), idx_labels({0}));
        CHECK(ds.x(0, 0) == 0.0);
        CHECK(ds.x(0, 1) == 1.0);
        CHECK(ds.x(0, 28) == 1.0);
    }
}

TEST_CASE("write_idx round trip") {
    const auto dir = std::filesystem::temp_directory_path() / "embed_router_data_test";
    std::filesystem::create_directories(dir);
    auto ds = synth_dataset(synth_spec(3, 5), 1);
    // Quantize first so the round trip is exact.
    for (double& v : ds.x.values()) v = std::round(v * 255.0) / 255.0;
    write_idx(ds, (dir / "img").string(), (dir / "lab").string());
    const auto back = load_idx((dir / "img").string(), (dir / "lab").string());
    CHECK(back.y == ds.y);
    for (std::size_t i = 0; i < ds.x.size(); ++i) REQUIRE(back.x.values()[i] == ds.x.values()[i]);
    std::filesystem::remove_all(dir);
    CHECK_THROWS_AS(load_idx((dir / "missing").string(), (dir / "lab").string()), FormatError);
}

TEST_CASE("adaptive_avg_pool_1d") {
    const std::vector<double> x{1, 2, 3, 4};
    const auto two = adaptive_avg_pool_1d(x, 2);
    CHECK(two == std::vector<double>{1.5, 3.5});
    CHECK(adaptive_avg_pool_1d(x, 4) == x);
    CHECK(adaptive_avg_pool_1d(x, 1) == std::vector<double>{2.5});
    // Overlapping bins when the length does not divide: [1,2], [2,3], [3,4] for 3 of 4.
    CHECK(adaptive_avg_pool_1d(x, 3) == std::vector<double>{1.5, 2.5, 3.5});
    // Upsampling repeats values.
    CHECK(adaptive_avg_pool_1d(std::vector<double>{7.0}, 784) == std::vector<double>(784, 7.0));
    CHECK_THROWS_AS(adaptive_avg_pool_1d(std::vector<double>{}, 4), EmptyInputError);
    for (std::size_t len : {1u, 5u, 561u, 784u, 2000u}) {
        for (double v : adaptive_avg_pool_1d(std::vector<double>(len, 0.3))) REQUIRE(v == doctest::Approx(0.3).epsilon(1e-15));
    }
    std::vector<double> same(784);
    for (std::size_t i = 0; i < 784; ++i) same[i] = static_cast<double>(i) / 783.0;
    CHECK(adaptive_avg_pool_1d(same) == same);

    std::vector<double> ramp(561);
    std::iota(ramp.begin(), ramp.end(), 0.0);
    const auto pooled = adaptive_avg_pool_1d(ramp);
    REQUIRE(pooled.size() == 784);
    CHECK(std::is_sorted(pooled.begin(), pooled.end()));
    CHECK(pooled.front() == 0.0);
    CHECK(pooled.back() == 560.0);
}

TEST_CASE("resize_to_28") {
    Image checker{56, 56, std::vector<double>(56 * 56)};
    for (std::size_t r = 0; r < 56; ++r)
        for (std::size_t c = 0; c < 56; ++c) checker.pixels[r * 56 + c] = (r + c) % 2;
    for (double v : resize_to_28(checker)) REQUIRE(v == 0.5);

    Image same{28, 28, std::vector<double>(784)};
    for (std::size_t i = 0; i < 784; ++i) same.pixels[i] = static_cast<double>(i % 17) / 16.0;
    CHECK(resize_to_28(same) == same.pixels);

    Image constant{37, 19, std::vector<double>(37 * 19, 0.25)};
    for (double v : resize_to_28(constant)) REQUIRE(v == doctest::Approx(0.25).epsilon(1e-12));

    Image flat{56, 56, std::vector<double>(56 * 56, 0.7)};
    for (double v : resize_to_28(flat)) REQUIRE(v == doctest::Approx(0.7).epsilon(1e-15));

    Image tiny{1, 1, {0.75}};
    for (double v : resize_to_28(tiny)) REQUIRE(v == 0.75);

    CHECK_THROWS_AS(resize_to_28(Image{0, 0, {}}), InputShapeError);
}

TEST_CASE("synth_dataset") {
    const auto spec = synth_spec(4, 25, 561);
    const auto a = synth_dataset(spec, 3);
    const auto b = synth_dataset(spec, 3);
    CHECK(a.x == b.x);
    CHECK(a.y == b.y);
    CHECK(a.size() == 100);
    CHECK(a.x.cols() == 784);
    CHECK(a.class_histogram() == std::vector<std::size_t>{25, 25, 25, 25});
    for (double v : a.x.values()) REQUIRE((v >= 0.0 && v <= 1.0));
    CHECK_FALSE(synth_dataset(spec, 4).x == a.x);
    CHECK_NOTHROW(a.validate());

    auto bad = spec;
    bad.synthetic.noise_sigma = -1;
    CHECK_THROWS_AS(synth_dataset(bad, 1), ParamError);
    bad = spec;
    bad.synthetic.proto_high = 1.5;
    CHECK_THROWS_AS(synth_dataset(bad, 1), ParamError);
    bad = spec;
    bad.synthetic.samples_per_class = 0;
    CHECK_THROWS_AS(synth_dataset(bad, 1), ParamError);

    SUBCASE("three classes of one hundred") {
        const auto ds = synth_dataset(synth_spec(3, 100), 8);
        CHECK(ds.size() == 300);
        CHECK(ds.class_histogram() == std::vector<std::size_t>{100, 100, 100});
    }
    SUBCASE("zero noise reproduces the prototype exactly") {
        auto s = synth_spec(2, 3);
        s.synthetic.noise_sigma = 0.0;
        const auto ds = synth_dataset(s, 5);
        for (std::size_t i = 1; i < ds.size(); ++i) {
            if (ds.y[i] != ds.y[0]) continue;
            for (std::size_t k = 0; k < 784; ++k) REQUIRE(ds.x(i, k) == ds.x(0, k));
        }
    }
}

namespace {

void check_split(const LabeledDataset& ds, const SplitAssignment& s) {
    const std::size_t n = ds.size();
    const std::size_t server_target = (n + 1) / 2;
    const std::size_t a_target = (n - server_target + 1) / 2;
    CHECK(s.server.size() == server_target);
    CHECK(s.client_a.size() == a_target);
    CHECK(s.client_b.size() == n - server_target - a_target);

    std::vector<int> seen(n, 0);
    for (const auto* part : {&s.server, &s.client_a, &s.client_b}) {
        CHECK(std::is_sorted(part->begin(), part->end()));
        for (auto i : *part) ++seen[i];
    }
    CHECK(std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; }));

    const auto hist = ds.class_histogram();
    const double shares[3] = {0.5, 0.25, 0.25};
    const std::vector<std::size_t>* parts[3] = {&s.server, &s.client_a, &s.client_b};
    for (std::size_t p = 0; p < 3; ++p) {
        std::vector<std::size_t> counts(hist.size(), 0);
        for (auto i : *parts[p]) ++counts[ds.y[i]];
        for (std::size_t c = 0; c < hist.size(); ++c) {
            const double exact = shares[p] * static_cast<double>(hist[c]);
            CHECK(static_cast<double>(counts[c]) >= std::floor(exact));
            CHECK(static_cast<double>(counts[c]) <= std::ceil(exact));
        }
    }
}

}  // namespace

TEST_CASE("split") {
    SUBCASE("ten samples in each of two classes") {
        std::vector<std::uint32_t> y;
        for (int i = 0; i < 20; ++i) y.push_back(i % 2);
        const auto ds = labeled(y, 2);
        const auto s = split(ds, 9);
        CHECK(s.server.size() == 10);
        CHECK(s.client_a.size() == 5);
        CHECK(s.client_b.size() == 5);
        check_split(ds, s);
    }
    SUBCASE("odd class sizes") {
        Rng rng(4);
        for (int trial = 0; trial < 50; ++trial) {
            const std::size_t classes = 2 + rng.below(9);
            std::vector<std::uint32_t> y;
            for (std::uint32_t c = 0; c < classes; ++c) {
                const std::size_t count = 4 + rng.below(30);
                for (std::size_t i = 0; i < count; ++i) y.push_back(c);
            }
            rng.shuffle(std::span(y));
            const auto ds = labeled(y, classes);
            check_split(ds, split(ds, trial));
        }
    }
    SUBCASE("deterministic and seed dependent") {
        std::vector<std::uint32_t> y;
        for (int i = 0; i < 200; ++i) y.push_back(i % 5);
        const auto ds = labeled(y, 5);
        const auto a = split(ds, 1), b = split(ds, 1), c = split(ds, 2);
        CHECK(a.server == b.server);
        CHECK(a.client_a == b.client_a);
        CHECK(a.server != c.server);
    }
    SUBCASE("too few samples in a class") {
        const auto ds = labeled({0, 0, 0, 0, 1, 1, 1}, 2);
        CHECK_THROWS_AS(split(ds, 0), StratificationError);
    }
}

TEST_CASE("MNIST corpus split sizes") {
    const std::string dir = default_data_dir();
    if (!std::filesystem::exists(std::filesystem::path(dir) / kMnistImages)) {
        MESSAGE("MNIST files not found under " << dir << "; skipped");
        return;
    }
    const auto ds = load_dataset(resolve_dataset("mnist", dir));
    CHECK(ds.size() == 10000);
    CHECK(ds.spec.num_classes == 10);
    const auto s = split(ds, 0);
    CHECK(s.server.size() == 5000);
    CHECK(s.client_a.size() == 2500);
    CHECK(s.client_b.size() == 2500);
    check_split(ds, s);
}

TEST_CASE("dataset spec files") {
    const auto spec = parse_dataset_spec(
        "# toy\n"
        "name = blobs\n"
        "source = synthetic\n"
        "num_classes = 3\n"
        "dims = 100   # native\n"
        "samples_per_class = 7\n"
        "noise_sigma = 0.05\n"
        "proto_low = 0.2\n"
        "proto_high = 0.8\n"
        "seed = 12\n");
    CHECK(spec.name == "blobs");
    CHECK(spec.source == DatasetSource::synthetic);
    CHECK(spec.num_classes == 3);
    CHECK(spec.dims == 100);
    CHECK(spec.synthetic.samples_per_class == 7);
    CHECK(spec.synthetic.noise_sigma == 0.05);
    CHECK(spec.synthetic.proto_low == 0.2);
    CHECK(spec.synthetic.proto_high == 0.8);
    CHECK(spec.synthetic.seed == 12);
    CHECK(load_dataset(spec).size() == 21);

    const auto idx = parse_dataset_spec("name=x\nsource=idx\nnum_classes=10\nimages=i.idx\nlabels=l.idx\n", "/d");
    CHECK(idx.source == DatasetSource::idx);
    CHECK(idx.images_path == "/d/i.idx");

    CHECK_THROWS_AS(parse_dataset_spec("name=x\nnum_classes=1\n"), ConfigError);
    CHECK_THROWS_AS(parse_dataset_spec("name=x\nbogus=1\n"), ConfigError);
    CHECK_THROWS_AS(parse_dataset_spec("no equals sign\n"), ConfigError);
    CHECK_THROWS_AS(parse_dataset_spec("name=x\nnum_classes=three\n"), ConfigError);
}
