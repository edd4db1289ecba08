#pragma once

// Frame fuzzing and the concurrent match storm.

#include <cstdint>
#include <string>
#include <thread>
#include <vector>

#include "embed_router/errors.hpp"
#include "embed_router/wire/frame.hpp"
#include "embed_router/wire/net.hpp"
#include "brute_force.hpp"

namespace harness {

using namespace embed_router;
using nn::Rng;

inline wire::Message random_message(Rng& rng) {
    switch (rng.below(6)) {
        case 0: {
            auto inst = brute::random_instance(rng);
            return wire::RegisterMsg{inst.index.entries().front()};
        }
        case 1: {
            wire::MatchRequest m;
            m.request_id = rng.next();
            for (auto& v : m.embedding) v = static_cast<float>(rng.uniform(-2, 2));
            m.threshold = static_cast<float>(rng.uniform(-1, 1));
            m.want_fine = rng.below(2) == 1;
            return m;
        }
        case 2: {
            wire::MatchResult r;
            r.request_id = rng.next();
            r.rejected = rng.below(4) == 0;
            if (!r.rejected) {
                r.expert_id = static_cast<std::uint32_t>(rng.below(100));
                r.class_id = rng.below(2) ? static_cast<std::uint32_t>(rng.below(10)) : wire::kNone;
            }
            r.top_score = static_cast<float>(rng.uniform(-1, 1));
            return r;
        }
        case 3: {
            wire::ErrorMsg e;
            e.code = static_cast<wire::ErrorCode>(1 + rng.below(5));
            e.message.assign(rng.below(40), 'x');
            return e;
        }
        case 4:
            return wire::Ping{};
        default:
            return wire::Pong{static_cast<std::uint32_t>(rng.below(1000)), rng.below(2) == 1};
    }
}

struct FuzzReport {
    std::size_t inputs = 0;
    std::size_t accepted = 0;
    std::size_t rejected = 0;       // ProtocolError and subclasses
    std::size_t foreign_errors = 0;  // any other exception
    std::size_t not_canonical = 0;   // accepted but re-encoding differs
    std::string first_foreign;
};

// Random byte strings, mutated valid frames, truncations and header splices.
inline std::vector<std::uint8_t> fuzz_input(Rng& rng) {
    const auto mode = rng.below(5);
    if (mode == 0) {
        std::vector<std::uint8_t> b(rng.below(64));
        for (auto& x : b) x = static_cast<std::uint8_t>(rng.below(256));
        return b;
    }
    auto frame = wire::encode_frame(random_message(rng));
    if (mode == 1) {
        const auto flips = 1 + rng.below(8);
        for (std::uint64_t i = 0; i < flips; ++i) frame[rng.below(frame.size())] ^= static_cast<std::uint8_t>(1 + rng.below(255));
    } else if (mode == 2) {
        frame.resize(rng.below(frame.size() + 1));
    } else if (mode == 3) {
        // Keep the header honest but corrupt the length field.
        const auto len = static_cast<std::uint32_t>(rng.below(2) ? rng.next() : rng.below(frame.size() * 2 + 1));
        for (int i = 0; i < 4; ++i) frame[7 + i] = static_cast<std::uint8_t>(len >> (8 * i));
    } else {
        const auto extra = 1 + rng.below(16);
        for (std::uint64_t i = 0; i < extra; ++i) frame.push_back(static_cast<std::uint8_t>(rng.below(256)));
        if (rng.below(2)) frame[6] = static_cast<std::uint8_t>(rng.below(256));
    }
    return frame;
}

inline FuzzReport fuzz_decode(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    FuzzReport rep;
    for (std::size_t i = 0; i < n; ++i) {
        const auto input = fuzz_input(rng);
        ++rep.inputs;
        try {
            const auto msg = wire::decode_frame(input);
            ++rep.accepted;
            if (wire::encode_frame(msg) != input) ++rep.not_canonical;
        } catch (const ProtocolError&) {
            ++rep.rejected;
        } catch (const std::exception& e) {
            if (rep.foreign_errors++ == 0) rep.first_foreign = e.what();
        }
    }
    return rep;
}

struct StormReport {
    std::size_t queries = 0;
    std::size_t mismatches = 0;
    std::size_t failures = 0;
    std::string first_failure;
};

// `clients` threads each send `per_client` MATCH requests over their own
// connection; every reply is compared with the serial in-process answer.
inline StormReport match_storm(const std::string& address, const matcher::CentroidIndex& index, std::size_t clients,
                               std::size_t per_client, std::uint64_t seed) {
    std::vector<std::vector<wire::MatchRequest>> requests(clients);
    Rng rng(seed);
    for (std::size_t c = 0; c < clients; ++c) {
        for (std::size_t q = 0; q < per_client; ++q) {
            std::vector<double> e(nn::kHiddenDim);
            const auto& pick = index.entries()[rng.below(index.size())];
            for (std::size_t j = 0; j < e.size(); ++j) e[j] = pick.dataset_centroid[j] + rng.uniform(-0.5, 0.5);
            const float tau = rng.below(3) == 0 ? static_cast<float>(rng.uniform(0.5, 1.0)) : -1.0f;
            requests[c].push_back(wire::make_match_request(c * 1000000 + q, e, tau, rng.below(2) == 1));
        }
    }
    std::vector<std::vector<wire::MatchResult>> replies(clients);
    std::vector<std::string> errors(clients);
    std::vector<std::thread> threads;
    for (std::size_t c = 0; c < clients; ++c) {
        threads.emplace_back([&, c] {
            try {
                wire::RegistryClient client(address, std::chrono::seconds(20));
                for (const auto& r : requests[c]) replies[c].push_back(client.match(r));
            } catch (const std::exception& e) {
                errors[c] = e.what();
            }
        });
    }
    for (auto& t : threads) t.join();

    StormReport rep;
    for (std::size_t c = 0; c < clients; ++c) {
        if (!errors[c].empty()) {
            if (rep.failures++ == 0) rep.first_failure = errors[c];
            continue;
        }
        for (std::size_t q = 0; q < requests[c].size(); ++q) {
            ++rep.queries;
            if (q >= replies[c].size() || !(replies[c][q] == wire::answer_match(requests[c][q], index))) ++rep.mismatches;
        }
    }
    return rep;
}

}  // namespace harness
