#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>

#include "embed_router/wire/net.hpp"
#include "socket_io.hpp"

namespace embed_router::wire {
namespace {

// Non-blocking connect bounded by `timeout`. Any failure to establish the
// connection in time surfaces as TimeoutError.
int connect_with_timeout(const Address& addr, std::chrono::milliseconds timeout) {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    const std::string port = std::to_string(addr.port);
    if (int rc = ::getaddrinfo(addr.host.c_str(), port.c_str(), &hints, &res); rc != 0) {
        throw TimeoutError("cannot resolve '" + addr.host + "': " + ::gai_strerror(rc));
    }
    const int fd = ::socket(res->ai_family, res->ai_socktype | SOCK_NONBLOCK | SOCK_CLOEXEC, res->ai_protocol);
    if (fd < 0) {
        ::freeaddrinfo(res);
        throw NetworkError(std::string("socket: ") + std::strerror(errno));
    }
    const int rc = ::connect(fd, res->ai_addr, res->ai_addrlen);
    ::freeaddrinfo(res);
    const std::string where = addr.host + ":" + port;
    if (rc != 0 && errno != EINPROGRESS) {
        const int err = errno;
        ::close(fd);
        throw TimeoutError("cannot reach " + where + ": " + std::strerror(err));
    }
    if (rc != 0) {
        const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
            deadline - std::chrono::steady_clock::now());
        pollfd p{fd, POLLOUT, 0};
        const int ready = ::poll(&p, 1, static_cast<int>(std::max<long long>(left.count(), 0)));
        int err = 0;
        socklen_t len = sizeof(err);
        if (ready <= 0) {
            ::close(fd);
            throw TimeoutError("connect to " + where + " timed out");
        }
        ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len);
        if (err != 0) {
            ::close(fd);
            throw TimeoutError("cannot reach " + where + ": " + std::strerror(err));
        }
    }
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    return fd;
}

}  // namespace

RegistryClient::RegistryClient(const std::string& address, std::chrono::milliseconds timeout)
    : fd_(connect_with_timeout(parse_address(address), timeout)), timeout_(timeout) {}

RegistryClient::~RegistryClient() {
    if (fd_ >= 0) ::close(fd_);
}

Message RegistryClient::exchange(const Message& request) {
    const auto deadline = std::chrono::steady_clock::now() + timeout_;
    detail::send_all(fd_, encode_frame(request), deadline);

    std::vector<std::uint8_t> header(kHeaderSize);
    if (!detail::recv_exact(fd_, header, deadline)) throw NetworkError("server closed the connection");
    const FrameHeader h = parse_header(header);
    std::vector<std::uint8_t> payload(h.payload_len);
    if (!detail::recv_exact(fd_, payload, deadline)) throw NetworkError("server closed the connection");
    Message reply = decode_payload(h.type, payload);
    if (const auto* err = std::get_if<ErrorMsg>(&reply)) throw RemoteError(err->code, err->message);
    return reply;
}

MatchResult RegistryClient::match(const MatchRequest& request) {
    Message reply = exchange(request);
    const auto* result = std::get_if<MatchResult>(&reply);
    if (result == nullptr) throw ProtocolError("expected MATCH_RESULT");
    if (result->request_id != request.request_id) throw ProtocolError("MATCH_RESULT for a different request id");
    return *result;
}

MatchResult RegistryClient::match(std::span<const double> embedding, float threshold, bool want_fine) {
    return match(make_match_request(next_id_++, embedding, threshold, want_fine));
}

Pong RegistryClient::register_expert(const matcher::CentroidEntry& entry) {
    Message reply = exchange(RegisterMsg{entry});
    const auto* pong = std::get_if<Pong>(&reply);
    if (pong == nullptr) throw ProtocolError("expected PONG after REGISTER");
    return *pong;
}

Pong RegistryClient::ping() {
    Message reply = exchange(Ping{});
    const auto* pong = std::get_if<Pong>(&reply);
    if (pong == nullptr) throw ProtocolError("expected PONG");
    return *pong;
}

MatchResult client_match(const std::string& address, std::span<const double> embedding, float threshold,
                         bool want_fine, std::chrono::milliseconds timeout) {
    RegistryClient client(address, timeout);
    return client.match(embedding, threshold, want_fine);
}

}  // namespace embed_router::wire
