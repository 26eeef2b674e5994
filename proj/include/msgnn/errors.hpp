#pragma once

#include <stdexcept>
#include <string>

namespace msgnn {

// Error kinds double as the machine-parseable prefix in CLI output
// ("error:<kind>: message") and as C-API status codes.
enum class ErrorKind {
    io,
    png_format,
    png_depth,
    dimension,
    contract,
    config,
    checkpoint,
    dataset,
    unsupported,
};

inline const char* error_kind_name(ErrorKind k) {
    switch (k) {
        case ErrorKind::io: return "io";
        case ErrorKind::png_format: return "png-format";
        case ErrorKind::png_depth: return "png-depth";
        case ErrorKind::dimension: return "dimension";
        case ErrorKind::contract: return "contract";
        case ErrorKind::config: return "config";
        case ErrorKind::checkpoint: return "checkpoint";
        case ErrorKind::dataset: return "dataset";
        case ErrorKind::unsupported: return "unsupported";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const { return kind_; }
    const char* kind_name() const { return error_kind_name(kind_); }

private:
    ErrorKind kind_;
};

struct IoError : Error {
    explicit IoError(const std::string& m) : Error(ErrorKind::io, m) {}
};
struct PngFormatError : Error {
    explicit PngFormatError(const std::string& m) : Error(ErrorKind::png_format, m) {}
};
struct PngDepthError : Error {
    explicit PngDepthError(const std::string& m) : Error(ErrorKind::png_depth, m) {}
};
struct DimensionError : Error {
    explicit DimensionError(const std::string& m) : Error(ErrorKind::dimension, m) {}
};
struct ContractError : Error {
    explicit ContractError(const std::string& m) : Error(ErrorKind::contract, m) {}
};
struct ConfigError : Error {
    explicit ConfigError(const std::string& m) : Error(ErrorKind::config, m) {}
};
struct CheckpointError : Error {
    explicit CheckpointError(const std::string& m) : Error(ErrorKind::checkpoint, m) {}
};
struct DatasetError : Error {
    explicit DatasetError(const std::string& m) : Error(ErrorKind::dataset, m) {}
};
struct UnsupportedError : Error {
    explicit UnsupportedError(const std::string& m) : Error(ErrorKind::unsupported, m) {}
};

}  // namespace msgnn
