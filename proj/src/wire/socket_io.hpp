#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <span>

namespace embed_router::wire::detail {

using Deadline = std::optional<std::chrono::steady_clock::time_point>;

// Fills `buf` completely. Returns false on a clean EOF before the first byte;
// throws NetworkError on a mid-buffer EOF or socket error and TimeoutError
// when the deadline passes.
bool recv_exact(int fd, std::span<std::uint8_t> buf, Deadline deadline);

void send_all(int fd, std::span<const std::uint8_t> buf, Deadline deadline);

}  // namespace embed_router::wire::detail
