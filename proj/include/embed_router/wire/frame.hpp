#pragma once

// Length-prefixed binary frames between clients and the registry server.
//
//   offset  size  field
//   0       4     magic "EMRT"
//   4       2     version (u16, little-endian)
//   6       1     message type
//   7       4     payload length (u32, little-endian, <= 16 MiB)
//   11      n     payload
//
// Only 128-dim vectors appear in any payload; raw 784-dim samples have no
// encoding in this protocol.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "embed_router/matcher/matcher.hpp"

namespace embed_router::wire {

inline constexpr std::array<std::uint8_t, 4> kMagic{'E', 'M', 'R', 'T'};
inline constexpr std::uint16_t kVersion = 1;
inline constexpr std::size_t kHeaderSize = 11;
inline constexpr std::size_t kMaxPayload = 16u << 20;
inline constexpr std::size_t kEmbeddingDim = nn::kHiddenDim;
inline constexpr std::uint32_t kNone = 0xFFFFFFFFu;
inline constexpr std::size_t kMaxErrorMessage = 255;

enum class MsgType : std::uint8_t {
    kRegister = 1,
    kMatch = 2,
    kMatchResult = 3,
    kError = 4,
    kPing = 5,
    kPong = 6,
};

enum class ErrorCode : std::uint16_t {
    kEmptyIndex = 1,
    kMalformed = 2,
    kBadRequest = 3,
    kUnexpectedType = 4,
    kInternal = 5,
};

std::string_view to_string(ErrorCode code);

// Adds or replaces one expert's centroids (f64, as computed).
struct RegisterMsg {
    matcher::CentroidEntry entry;
    friend bool operator==(const RegisterMsg&, const RegisterMsg&) = default;
};

struct MatchRequest {
    std::uint64_t request_id = 0;
    std::array<float, kEmbeddingDim> embedding{};
    float threshold = -1.0f;  // -1 disables rejection
    bool want_fine = true;
    friend bool operator==(const MatchRequest&, const MatchRequest&) = default;
};

struct MatchResult {
    std::uint64_t request_id = 0;
    std::uint32_t expert_id = kNone;  // kNone when rejected
    std::uint32_t class_id = kNone;   // kNone when rejected or not requested
    bool rejected = false;
    float top_score = 0.0f;
    friend bool operator==(const MatchResult&, const MatchResult&) = default;
};

struct ErrorMsg {
    ErrorCode code = ErrorCode::kInternal;
    std::string message;  // at most 255 bytes
    friend bool operator==(const ErrorMsg&, const ErrorMsg&) = default;
};

struct Ping {
    friend bool operator==(const Ping&, const Ping&) = default;
};

// Reply to PING and REGISTER: number of registered experts, and whether the
// REGISTER replaced an existing expert id.
struct Pong {
    std::uint32_t entry_count = 0;
    bool replaced = false;
    friend bool operator==(const Pong&, const Pong&) = default;
};

using Message = std::variant<RegisterMsg, MatchRequest, MatchResult, ErrorMsg, Ping, Pong>;

MsgType type_of(const Message& msg) noexcept;

struct FrameHeader {
    MsgType type;
    std::uint32_t payload_len;
};

// Validates magic, version, type and size of the first 11 bytes. Throws
// TruncationError (short input), ProtocolError (magic/version/type) or
// SizeError (payload over 16 MiB).
FrameHeader parse_header(std::span<const std::uint8_t> bytes);

// Throws ProtocolError when the payload does not match the message grammar.
Message decode_payload(MsgType type, std::span<const std::uint8_t> payload);

// Throws ProtocolError for messages that cannot be encoded (non-finite
// values, oversize error text) and SizeError past 16 MiB.
std::vector<std::uint8_t> encode_frame(const Message& msg);

// Decodes one frame from the front of `bytes`. Without `consumed`, trailing
// bytes are a ProtocolError; with it, the frame length is reported.
Message decode_frame(std::span<const std::uint8_t> bytes, std::size_t* consumed = nullptr);

// Field-level description of every payload, used by the decoder's size checks.
enum class FieldKind { kU8, kU16, kU32, kU64, kF32, kF64, kBytes };

struct FieldSpec {
    std::string_view name;
    FieldKind kind;
    std::size_t count;      // elements per occurrence (vector length for kF32/kF64)
    bool repeated = false;  // occurs a variable number of times
    std::size_t max_occurrences = 1;
};

struct MessageGrammar {
    MsgType type;
    std::vector<FieldSpec> fields;
};

const std::vector<MessageGrammar>& message_grammar();
const MessageGrammar& grammar_for(MsgType type);
std::size_t element_size(FieldKind kind) noexcept;

// Payload size of a message with no repeated fields, or of the fixed part.
std::size_t fixed_payload_size(const MessageGrammar& g);

}  // namespace embed_router::wire
