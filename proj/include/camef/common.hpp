#pragma once

#include <stdexcept>
#include <string>

namespace camef {

// Error taxonomy used across the pipeline. Every CLI command maps these to a
// single-line "<class>: <message>" on stderr and a nonzero exit code.
struct Error : std::runtime_error {
    Error(std::string cls, const std::string& msg)
        : std::runtime_error(cls + ": " + msg), error_class(std::move(cls)) {}
    std::string error_class;
};

struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error("shape-error", msg) {}
};
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error("config-error", msg) {}
};
struct NumericError : Error {
    explicit NumericError(const std::string& msg) : Error("numeric-error", msg) {}
};
struct ContractError : Error {
    explicit ContractError(const std::string& msg) : Error("contract-error", msg) {}
};
struct IngestError : Error {
    explicit IngestError(const std::string& msg) : Error("ingest-error", msg) {}
};
struct FormatError : Error {
    explicit FormatError(const std::string& msg) : Error("format-error", msg) {}
};
struct AlignmentError : Error {
    explicit AlignmentError(const std::string& msg) : Error("alignment-error", msg) {}
};
struct DatasetError : Error {
    explicit DatasetError(const std::string& msg) : Error("dataset-error", msg) {}
};
struct GenerationError : Error {
    explicit GenerationError(const std::string& msg) : Error("generation-error", msg) {}
};
struct ParseError : Error {
    explicit ParseError(const std::string& msg) : Error("parse-error", msg) {}
};
struct RangeError : Error {
    explicit RangeError(const std::string& msg) : Error("range-error", msg) {}
};
struct SamplingError : Error {
    explicit SamplingError(const std::string& msg) : Error("sampling-error", msg) {}
};
struct TrainingError : Error {
    explicit TrainingError(const std::string& msg) : Error("training-error", msg) {}
};
struct DataError : Error {
    explicit DataError(const std::string& msg) : Error("data-error", msg) {}
};
struct InputError : Error {
    explicit InputError(const std::string& msg) : Error("input-error", msg) {}
};
struct SpecError : Error {
    explicit SpecError(const std::string& msg) : Error("spec-error", msg) {}
};

}  // namespace camef
