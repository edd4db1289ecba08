#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <limits>

#include "embed_router/wire/net.hpp"
#include "socket_io.hpp"

namespace embed_router::wire {

Address parse_address(const std::string& text) {
    Address a;
    const auto colon = text.rfind(':');
    std::string host = colon == std::string::npos ? text : text.substr(0, colon);
    if (!host.empty()) a.host = host;
    if (colon != std::string::npos) {
        const std::string port = text.substr(colon + 1);
        char* end = nullptr;
        errno = 0;
        const long v = std::strtol(port.c_str(), &end, 10);
        if (port.empty() || *end != '\0' || errno != 0 || v < 0 || v > 65535) {
            throw ConfigError("invalid port in address '" + text + "'");
        }
        a.port = static_cast<std::uint16_t>(v);
    }
    return a;
}

std::string default_address() {
    if (const char* env = std::getenv("EMBED_ROUTER_ADDR"); env != nullptr && *env != '\0') return env;
    return "127.0.0.1:" + std::to_string(kDefaultPort);
}

MatchRequest make_match_request(std::uint64_t request_id, std::span<const double> embedding, float threshold,
                                bool want_fine) {
    if (embedding.size() != kEmbeddingDim) {
        throw InputShapeError("match embedding must have 128 values, got " + std::to_string(embedding.size()));
    }
    MatchRequest req;
    req.request_id = request_id;
    for (std::size_t i = 0; i < kEmbeddingDim; ++i) req.embedding[i] = static_cast<float>(embedding[i]);
    req.threshold = threshold;
    req.want_fine = want_fine;
    return req;
}

MatchResult answer_match(const MatchRequest& request, const matcher::CentroidIndex& index) {
    std::array<double, kEmbeddingDim> query;
    for (std::size_t i = 0; i < kEmbeddingDim; ++i) query[i] = request.embedding[i];

    MatchResult out;
    out.request_id = request.request_id;
    matcher::Assignment a = request.want_fine
                                ? matcher::assign_with_rejection(query, index, request.threshold)
                                : matcher::coarse_assign(query, index);
    if (!request.want_fine && request.threshold > -1.0f && a.top_coarse_score() < request.threshold) {
        a.rejected = true;
        a.expert_id.reset();
    }
    out.rejected = a.rejected;
    out.top_score = static_cast<float>(a.top_coarse_score());
    if (a.expert_id) out.expert_id = *a.expert_id;
    if (a.class_id && request.want_fine) out.class_id = *a.class_id;
    return out;
}

Message handle_request(const Message& request, matcher::SharedIndex& index, bool& close_after) {
    close_after = false;
    return std::visit(
        [&](const auto& m) -> Message {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, RegisterMsg>) {
                const bool replaced = index.upsert(m.entry);
                return Pong{static_cast<std::uint32_t>(index.size()), replaced};
            } else if constexpr (std::is_same_v<T, MatchRequest>) {
                auto snap = index.snapshot();
                if (snap->empty()) return ErrorMsg{ErrorCode::kEmptyIndex, "no experts registered"};
                return answer_match(m, *snap);
            } else if constexpr (std::is_same_v<T, Ping>) {
                return Pong{static_cast<std::uint32_t>(index.size()), false};
            } else {
                close_after = true;
                return ErrorMsg{ErrorCode::kUnexpectedType, "clients may send REGISTER, MATCH or PING only"};
            }
        },
        request);
}

RegistryServer::RegistryServer(matcher::CentroidIndex initial) : index_(std::move(initial)) {}

RegistryServer::~RegistryServer() { stop(); }

void RegistryServer::start(const std::string& address) {
    if (running_) throw NetworkError("server already running");
    const Address addr = parse_address(address);

    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    hints.ai_flags = AI_PASSIVE;
    addrinfo* res = nullptr;
    const std::string port = std::to_string(addr.port);
    if (int rc = ::getaddrinfo(addr.host.c_str(), port.c_str(), &hints, &res); rc != 0) {
        throw NetworkError("cannot resolve '" + addr.host + "': " + ::gai_strerror(rc));
    }
    const int fd = ::socket(res->ai_family, res->ai_socktype | SOCK_CLOEXEC, res->ai_protocol);
    if (fd < 0) {
        ::freeaddrinfo(res);
        throw NetworkError(std::string("socket: ") + std::strerror(errno));
    }
    int one = 1;
    ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    if (::bind(fd, res->ai_addr, res->ai_addrlen) != 0 || ::listen(fd, 64) != 0) {
        const int err = errno;
        ::freeaddrinfo(res);
        ::close(fd);
        throw NetworkError("cannot bind " + address + ": " + std::strerror(err));
    }
    ::freeaddrinfo(res);

    sockaddr_in bound{};
    socklen_t len = sizeof(bound);
    ::getsockname(fd, reinterpret_cast<sockaddr*>(&bound), &len);
    port_ = ntohs(bound.sin_port);
    listen_fd_ = fd;
    running_ = true;
    acceptor_ = std::thread([this] { accept_loop(); });
}

void RegistryServer::stop() {
    if (!running_.exchange(false)) return;
    ::shutdown(listen_fd_, SHUT_RDWR);
    if (acceptor_.joinable()) acceptor_.join();
    ::close(listen_fd_);
    listen_fd_ = -1;
    {
        std::lock_guard lock(conns_mu_);
        for (auto& c : conns_) ::shutdown(c->fd, SHUT_RDWR);
    }
    reap(true);
    running_.notify_all();
}

void RegistryServer::wait() {
    while (running_) running_.wait(true);
}

void RegistryServer::reap(bool all) {
    std::lock_guard lock(conns_mu_);
    for (auto it = conns_.begin(); it != conns_.end();) {
        auto& c = **it;
        if (all || c.done) {
            if (c.worker.joinable()) c.worker.join();
            ::close(c.fd);
            it = conns_.erase(it);
        } else {
            ++it;
        }
    }
}

void RegistryServer::accept_loop() {
    while (running_) {
        const int fd = ::accept4(listen_fd_, nullptr, nullptr, SOCK_CLOEXEC);
        if (fd < 0) {
            if (errno == EINTR || errno == ECONNABORTED) continue;
            break;
        }
        int one = 1;
        ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
        reap(false);
        std::lock_guard lock(conns_mu_);
        auto conn = std::make_unique<Connection>();
        conn->fd = fd;
        Connection& ref = *conn;
        conns_.push_back(std::move(conn));
        ref.worker = std::thread([this, &ref] { serve_connection(ref); });
    }
}

void RegistryServer::serve_connection(Connection& conn) {
    const int fd = conn.fd;
    std::vector<std::uint8_t> header(kHeaderSize), payload;
    try {
        while (running_) {
            if (!detail::recv_exact(fd, header, std::nullopt)) break;
            Message reply;
            bool close_after = false;
            try {
                const FrameHeader h = parse_header(header);
                payload.resize(h.payload_len);
                if (!detail::recv_exact(fd, payload, std::nullopt)) break;
                reply = handle_request(decode_payload(h.type, payload), index_, close_after);
            } catch (const ProtocolError& e) {
                reply = ErrorMsg{ErrorCode::kMalformed, std::string(e.what()).substr(0, kMaxErrorMessage)};
                close_after = true;
            } catch (const Error& e) {
                reply = ErrorMsg{ErrorCode::kBadRequest, std::string(e.what()).substr(0, kMaxErrorMessage)};
            }
            detail::send_all(fd, encode_frame(reply), std::nullopt);
            if (close_after) break;
        }
    } catch (const std::exception&) {
        // Connection-level failure; the server keeps running.
    }
    ::shutdown(fd, SHUT_RDWR);
    conn.done = true;
}

}  // namespace embed_router::wire
