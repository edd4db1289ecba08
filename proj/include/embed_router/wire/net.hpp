#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <list>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <thread>

#include "embed_router/errors.hpp"
#include "embed_router/matcher/matcher.hpp"
#include "embed_router/wire/frame.hpp"

namespace embed_router::wire {

inline constexpr std::uint16_t kDefaultPort = 7431;

struct Address {
    std::string host = "127.0.0.1";
    std::uint16_t port = kDefaultPort;
};

// "host:port", "host" or ":port". Throws ConfigError on a malformed port.
Address parse_address(const std::string& text);
// $EMBED_ROUTER_ADDR, or 127.0.0.1:7431.
std::string default_address();

// ERROR frame received from the server.
class RemoteError : public NetworkError {
public:
    RemoteError(ErrorCode code, const std::string& message)
        : NetworkError(std::string(to_string(code)) + ": " + message), code_(code) {}
    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

// Request handling shared by the TCP server and in-process tests. Sets
// `close_after` when the connection must be dropped after replying.
Message handle_request(const Message& request, matcher::SharedIndex& index, bool& close_after);

// Builds the MATCH_RESULT the server sends for `request` against `index`.
MatchResult answer_match(const MatchRequest& request, const matcher::CentroidIndex& index);

// Registry server: one thread accepts, one thread per connection serves
// frames synchronously. A connection that sends a malformed frame gets an
// ERROR reply and is closed; other connections are unaffected.
class RegistryServer {
public:
    explicit RegistryServer(matcher::CentroidIndex initial = {});
    ~RegistryServer();

    RegistryServer(const RegistryServer&) = delete;
    RegistryServer& operator=(const RegistryServer&) = delete;

    // Binds and starts accepting. Port 0 picks an ephemeral port. Throws
    // NetworkError when the address cannot be bound.
    void start(const std::string& address);
    void stop();
    // Blocks until stop() is called from another thread.
    void wait();

    std::uint16_t port() const noexcept { return port_; }
    matcher::SharedIndex& index() noexcept { return index_; }

private:
    struct Connection {
        int fd = -1;
        std::thread worker;
        std::atomic<bool> done{false};
    };

    void accept_loop();
    void serve_connection(Connection& conn);
    void reap(bool all);

    matcher::SharedIndex index_;
    int listen_fd_ = -1;
    std::uint16_t port_ = 0;
    std::atomic<bool> running_{false};
    std::thread acceptor_;
    std::mutex conns_mu_;
    std::list<std::unique_ptr<Connection>> conns_;
};

// Synchronous single-connection client. Every call waits at most `timeout`
// for each network step and throws TimeoutError when it elapses or the server
// cannot be reached.
class RegistryClient {
public:
    RegistryClient(const std::string& address, std::chrono::milliseconds timeout);
    ~RegistryClient();

    RegistryClient(const RegistryClient&) = delete;
    RegistryClient& operator=(const RegistryClient&) = delete;

    // Quantizes the embedding to f32 and assigns the next request id.
    MatchResult match(std::span<const double> embedding, float threshold, bool want_fine);
    MatchResult match(const MatchRequest& request);
    Pong register_expert(const matcher::CentroidEntry& entry);
    Pong ping();

    // Sends one frame and returns the reply; ERROR replies throw RemoteError.
    Message exchange(const Message& request);

private:
    int fd_ = -1;
    std::chrono::milliseconds timeout_;
    std::uint64_t next_id_ = 1;
};

MatchResult client_match(const std::string& address, std::span<const double> embedding, float threshold,
                         bool want_fine, std::chrono::milliseconds timeout = std::chrono::seconds(5));

// Converts an f64 embedding to the f32 wire request.
MatchRequest make_match_request(std::uint64_t request_id, std::span<const double> embedding, float threshold,
                                bool want_fine);

}  // namespace embed_router::wire
