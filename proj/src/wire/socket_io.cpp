#include "socket_io.hpp"

#include <poll.h>
#include <sys/socket.h>

#include <cerrno>
#include <cstring>
#include <string>

#include "embed_router/errors.hpp"

namespace embed_router::wire::detail {
namespace {

// Waits for `events` on fd until the deadline; no deadline waits forever.
void wait_for(int fd, short events, Deadline deadline) {
    while (true) {
        int timeout_ms = -1;
        if (deadline) {
            const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
                *deadline - std::chrono::steady_clock::now());
            if (left.count() <= 0) throw TimeoutError("network operation timed out");
            timeout_ms = static_cast<int>(left.count());
        }
        pollfd p{fd, events, 0};
        const int rc = ::poll(&p, 1, timeout_ms);
        if (rc > 0) return;
        if (rc == 0) throw TimeoutError("network operation timed out");
        if (errno != EINTR) throw NetworkError(std::string("poll: ") + std::strerror(errno));
    }
}

}  // namespace

bool recv_exact(int fd, std::span<std::uint8_t> buf, Deadline deadline) {
    std::size_t got = 0;
    while (got < buf.size()) {
        if (deadline) wait_for(fd, POLLIN, deadline);
        const ssize_t n = ::recv(fd, buf.data() + got, buf.size() - got, 0);
        if (n > 0) {
            got += static_cast<std::size_t>(n);
        } else if (n == 0) {
            if (got == 0) return false;
            throw NetworkError("connection closed mid-frame");
        } else if (errno != EINTR && errno != EAGAIN) {
            throw NetworkError(std::string("recv: ") + std::strerror(errno));
        }
    }
    return true;
}

void send_all(int fd, std::span<const std::uint8_t> buf, Deadline deadline) {
    std::size_t sent = 0;
    while (sent < buf.size()) {
        if (deadline) wait_for(fd, POLLOUT, deadline);
        const ssize_t n = ::send(fd, buf.data() + sent, buf.size() - sent, MSG_NOSIGNAL);
        if (n > 0) {
            sent += static_cast<std::size_t>(n);
        } else if (n < 0 && errno != EINTR && errno != EAGAIN) {
            throw NetworkError(std::string("send: ") + std::strerror(errno));
        }
    }
}

}  // namespace embed_router::wire::detail
