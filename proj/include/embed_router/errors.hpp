#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace embed_router {

// Every library failure derives from Error so callers can catch the family
// or a specific condition.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InputShapeError : public Error { using Error::Error; };
class ParamError : public Error { using Error::Error; };
class EmptyDatasetError : public Error { using Error::Error; };
class EmptyInputError : public Error { using Error::Error; };
class FormatError : public Error { using Error::Error; };
class StratificationError : public Error { using Error::Error; };
class ZeroVectorError : public Error { using Error::Error; };
class MissingClassError : public Error { using Error::Error; };
class EmptyIndexError : public Error { using Error::Error; };
class DeadEmbeddingError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };

class DivergenceError : public Error {
public:
    DivergenceError(std::size_t epoch, const std::string& what)
        : Error(what), epoch_(epoch) {}
    std::size_t epoch() const noexcept { return epoch_; }

private:
    std::size_t epoch_;
};

// wire
class ProtocolError : public Error { using Error::Error; };
class TruncationError : public ProtocolError { using ProtocolError::ProtocolError; };
class SizeError : public ProtocolError { using ProtocolError::ProtocolError; };
class NetworkError : public Error { using Error::Error; };
class TimeoutError : public NetworkError { using NetworkError::NetworkError; };

}  // namespace embed_router
