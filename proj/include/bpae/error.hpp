#pragma once

#include <stdexcept>
#include <string>

namespace bpae {

// Error taxonomy shared by the C++ core and mapped onto C API status codes.
enum class ErrorKind {
    InvalidArgument,
    Format,
    Incompatible,
    Numeric,
    Io,
    Internal,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& msg)
        : std::runtime_error(msg), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

struct InvalidArgument : Error {
    explicit InvalidArgument(const std::string& msg) : Error(ErrorKind::InvalidArgument, msg) {}
};

// Flat or otherwise unusable signal (max == min); callers route these to
// quality screening as rejects instead of producing NaN.
struct DegenerateSignal : Error {
    explicit DegenerateSignal(const std::string& msg) : Error(ErrorKind::Numeric, msg) {}
};

// Rank-deficient least-squares system.
struct SingularFit : Error {
    explicit SingularFit(const std::string& msg) : Error(ErrorKind::Numeric, msg) {}
};

// Not enough context samples for an operation that consumes edges.
struct LengthError : Error {
    explicit LengthError(const std::string& msg) : Error(ErrorKind::InvalidArgument, msg) {}
};

// ABP segment with too few detectable peaks/troughs to label.
struct UnlabelableSegment : Error {
    explicit UnlabelableSegment(const std::string& msg) : Error(ErrorKind::Numeric, msg) {}
};

// Malformed or truncated file contents.
struct FormatError : Error {
    explicit FormatError(const std::string& msg) : Error(ErrorKind::Format, msg) {}
};

// Artifacts that do not fit together (feature width vs regressor, channels vs model, ...).
struct IncompatibleError : Error {
    explicit IncompatibleError(const std::string& msg) : Error(ErrorKind::Incompatible, msg) {}
};

struct IoError : Error {
    explicit IoError(const std::string& msg) : Error(ErrorKind::Io, msg) {}
};

// Constant (r == +-1 degenerate) or otherwise undefined correlation input.
struct UndefinedCorrelation : Error {
    explicit UndefinedCorrelation(const std::string& msg) : Error(ErrorKind::Numeric, msg) {}
};

} // namespace bpae
