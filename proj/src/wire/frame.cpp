#include "embed_router/wire/frame.hpp"

#include <algorithm>
#include <cmath>

#include "embed_router/bytes.hpp"
#include "embed_router/errors.hpp"

namespace embed_router::wire {
namespace {

constexpr std::size_t kCentroidBytes = kEmbeddingDim * 8;

bool known_type(std::uint8_t t) { return t >= 1 && t <= 6; }

bool known_code(std::uint16_t c) { return c >= 1 && c <= 5; }

bool read_flag(ByteReader& r, const char* what) {
    const auto v = r.u8();
    if (v > 1) throw ProtocolError(std::string(what) + " flag must be 0 or 1");
    return v == 1;
}

void require_finite(double v, const char* what) {
    if (!std::isfinite(v)) throw ProtocolError(std::string(what) + " contains a non-finite value");
}

template <class Fn>
std::vector<MessageGrammar> build_grammar(Fn max_classes) {
    using K = FieldKind;
    return {
        {MsgType::kRegister,
         {{"expert_id", K::kU32, 1},
          {"class_count", K::kU32, 1},
          {"dataset_centroid", K::kF64, kEmbeddingDim},
          {"class_centroid", K::kF64, kEmbeddingDim, true, max_classes()}}},
        {MsgType::kMatch,
         {{"request_id", K::kU64, 1},
          {"embedding", K::kF32, kEmbeddingDim},
          {"threshold", K::kF32, 1},
          {"want_fine", K::kU8, 1}}},
        {MsgType::kMatchResult,
         {{"request_id", K::kU64, 1},
          {"expert_id", K::kU32, 1},
          {"class_id", K::kU32, 1},
          {"rejected", K::kU8, 1},
          {"top_score", K::kF32, 1}}},
        {MsgType::kError,
         {{"code", K::kU16, 1},
          {"message_len", K::kU8, 1},
          {"message", K::kBytes, 1, true, kMaxErrorMessage}}},
        {MsgType::kPing, {}},
        {MsgType::kPong, {{"entry_count", K::kU32, 1}, {"replaced", K::kU8, 1}}},
    };
}

void encode_payload(ByteWriter& w, const RegisterMsg& m) {
    const auto& e = m.entry;
    if (e.class_centroids.empty()) throw ProtocolError("REGISTER needs at least one class centroid");
    w.u32(e.expert_id);
    w.u32(static_cast<std::uint32_t>(e.class_count()));
    for (double v : e.dataset_centroid) {
        require_finite(v, "dataset centroid");
        w.f64(v);
    }
    for (const auto& c : e.class_centroids) {
        for (double v : c) {
            require_finite(v, "class centroid");
            w.f64(v);
        }
    }
}

void encode_payload(ByteWriter& w, const MatchRequest& m) {
    w.u64(m.request_id);
    for (float v : m.embedding) {
        require_finite(v, "embedding");
        w.f32(v);
    }
    if (!(m.threshold >= -1.0f && m.threshold <= 1.0f)) throw ProtocolError("threshold outside [-1, 1]");
    w.f32(m.threshold);
    w.u8(m.want_fine ? 1 : 0);
}

void encode_payload(ByteWriter& w, const MatchResult& m) {
    if (m.rejected && (m.class_id != kNone || m.expert_id != kNone)) {
        throw ProtocolError("rejected results carry no expert or class");
    }
    if (std::isnan(m.top_score)) throw ProtocolError("top score is NaN");
    w.u64(m.request_id);
    w.u32(m.expert_id);
    w.u32(m.class_id);
    w.u8(m.rejected ? 1 : 0);
    w.f32(m.top_score);
}

void encode_payload(ByteWriter& w, const ErrorMsg& m) {
    if (m.message.size() > kMaxErrorMessage) throw ProtocolError("error message longer than 255 bytes");
    w.u16(static_cast<std::uint16_t>(m.code));
    w.u8(static_cast<std::uint8_t>(m.message.size()));
    w.raw(m.message);
}

void encode_payload(ByteWriter&, const Ping&) {}

void encode_payload(ByteWriter& w, const Pong& m) {
    w.u32(m.entry_count);
    w.u8(m.replaced ? 1 : 0);
}

void require_size(MsgType type, std::size_t got, std::size_t want) {
    if (got != want) {
        throw ProtocolError("payload of type " + std::to_string(static_cast<int>(type)) + " has " +
                            std::to_string(got) + " bytes, expected " + std::to_string(want));
    }
}

}  // namespace

std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::kEmptyIndex: return "EmptyIndex";
        case ErrorCode::kMalformed: return "Malformed";
        case ErrorCode::kBadRequest: return "BadRequest";
        case ErrorCode::kUnexpectedType: return "UnexpectedType";
        case ErrorCode::kInternal: return "Internal";
    }
    return "Unknown";
}

MsgType type_of(const Message& msg) noexcept {
    return static_cast<MsgType>(msg.index() + 1);
}

std::size_t element_size(FieldKind kind) noexcept {
    switch (kind) {
        case FieldKind::kU8: return 1;
        case FieldKind::kU16: return 2;
        case FieldKind::kU32: return 4;
        case FieldKind::kU64: return 8;
        case FieldKind::kF32: return 4;
        case FieldKind::kF64: return 8;
        case FieldKind::kBytes: return 1;
    }
    return 0;
}

const std::vector<MessageGrammar>& message_grammar() {
    static const std::vector<MessageGrammar> grammar = build_grammar([] {
        const std::size_t fixed = 4 + 4 + kCentroidBytes;
        return (kMaxPayload - fixed) / kCentroidBytes;
    });
    return grammar;
}

const MessageGrammar& grammar_for(MsgType type) {
    for (const auto& g : message_grammar()) {
        if (g.type == type) return g;
    }
    throw ProtocolError("unknown message type " + std::to_string(static_cast<int>(type)));
}

std::size_t fixed_payload_size(const MessageGrammar& g) {
    std::size_t n = 0;
    for (const auto& f : g.fields) {
        if (!f.repeated) n += element_size(f.kind) * f.count;
    }
    return n;
}

FrameHeader parse_header(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kHeaderSize) {
        throw TruncationError("frame header needs 11 bytes, have " + std::to_string(bytes.size()));
    }
    if (!std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) throw ProtocolError("bad frame magic");
    ByteReader r(bytes.subspan(4, kHeaderSize - 4));
    const auto version = r.u16();
    if (version != kVersion) throw ProtocolError("unsupported protocol version " + std::to_string(version));
    const auto type = r.u8();
    if (!known_type(type)) throw ProtocolError("unknown message type " + std::to_string(type));
    const auto len = r.u32();
    if (len > kMaxPayload) throw SizeError("payload of " + std::to_string(len) + " bytes exceeds 16 MiB");
    return {static_cast<MsgType>(type), len};
}

Message decode_payload(MsgType type, std::span<const std::uint8_t> payload) {
    const auto& g = grammar_for(type);
    const std::size_t fixed = fixed_payload_size(g);
    ByteReader r(payload);
    switch (type) {
        case MsgType::kRegister: {
            if (payload.size() < fixed || (payload.size() - fixed) % kCentroidBytes != 0) {
                throw ProtocolError("REGISTER payload is not a whole number of centroids");
            }
            RegisterMsg m;
            m.entry.expert_id = r.u32();
            const std::uint32_t n = r.u32();
            if (n == 0) throw ProtocolError("REGISTER needs at least one class centroid");
            require_size(type, payload.size(), fixed + std::size_t{n} * kCentroidBytes);
            for (double& v : m.entry.dataset_centroid) {
                v = r.f64();
                require_finite(v, "dataset centroid");
            }
            m.entry.class_centroids.resize(n);
            for (auto& c : m.entry.class_centroids) {
                for (double& v : c) {
                    v = r.f64();
                    require_finite(v, "class centroid");
                }
            }
            return m;
        }
        case MsgType::kMatch: {
            require_size(type, payload.size(), fixed);
            MatchRequest m;
            m.request_id = r.u64();
            for (float& v : m.embedding) {
                v = r.f32();
                require_finite(v, "embedding");
            }
            m.threshold = r.f32();
            if (!(m.threshold >= -1.0f && m.threshold <= 1.0f)) throw ProtocolError("threshold outside [-1, 1]");
            m.want_fine = read_flag(r, "want_fine");
            return m;
        }
        case MsgType::kMatchResult: {
            require_size(type, payload.size(), fixed);
            MatchResult m;
            m.request_id = r.u64();
            m.expert_id = r.u32();
            m.class_id = r.u32();
            m.rejected = read_flag(r, "rejected");
            m.top_score = r.f32();
            if (std::isnan(m.top_score)) throw ProtocolError("top score is NaN");
            if (m.rejected && (m.class_id != kNone || m.expert_id != kNone)) {
                throw ProtocolError("rejected results carry no expert or class");
            }
            return m;
        }
        case MsgType::kError: {
            if (payload.size() < fixed) throw ProtocolError("ERROR payload too short");
            ErrorMsg m;
            const auto code = r.u16();
            if (!known_code(code)) throw ProtocolError("unknown error code " + std::to_string(code));
            m.code = static_cast<ErrorCode>(code);
            const auto len = r.u8();
            require_size(type, payload.size(), fixed + len);
            auto text = r.raw(len);
            m.message.assign(text.begin(), text.end());
            return m;
        }
        case MsgType::kPing:
            require_size(type, payload.size(), 0);
            return Ping{};
        case MsgType::kPong: {
            require_size(type, payload.size(), fixed);
            Pong m;
            m.entry_count = r.u32();
            m.replaced = read_flag(r, "replaced");
            return m;
        }
    }
    throw ProtocolError("unknown message type");
}

std::vector<std::uint8_t> encode_frame(const Message& msg) {
    ByteWriter payload;
    std::visit([&](const auto& m) { encode_payload(payload, m); }, msg);
    const auto& body = payload.bytes();
    if (body.size() > kMaxPayload) throw SizeError("payload exceeds 16 MiB");

    ByteWriter w;
    w.raw(kMagic);
    w.u16(kVersion);
    w.u8(static_cast<std::uint8_t>(type_of(msg)));
    w.u32(static_cast<std::uint32_t>(body.size()));
    w.raw(body);
    return std::move(w).take();
}

Message decode_frame(std::span<const std::uint8_t> bytes, std::size_t* consumed) {
    const FrameHeader h = parse_header(bytes);
    const std::size_t total = kHeaderSize + h.payload_len;
    if (bytes.size() < total) {
        throw TruncationError("frame needs " + std::to_string(total) + " bytes, have " +
                              std::to_string(bytes.size()));
    }
    if (consumed == nullptr && bytes.size() != total) throw ProtocolError("trailing bytes after frame");
    Message msg = decode_payload(h.type, bytes.subspan(kHeaderSize, h.payload_len));
    if (consumed != nullptr) *consumed = total;
    return msg;
}

}  // namespace embed_router::wire
