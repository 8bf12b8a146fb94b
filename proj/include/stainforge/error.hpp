#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace stainforge {

enum class Errc {
    InvalidArgument,
    // icc
    Truncated,
    BadSignature,
    UnsupportedProfile,
    SingularMatrix,
    // stain
    MaxIterationsExceeded,
    InsufficientTissue,
    DegenerateDistribution,
    AmbiguousOrdering,
    // sva / stainlib
    EmptyLibrary,
    DuplicateSlide,
    Io,
    SchemaViolation,
    // pipeline
    CropLargerThanPatch,
    StAdapterFailure,
    // eval
    EmptyInput,
    InsufficientPairs,
    ZeroVariance,
};

std::string_view errc_name(Errc code) noexcept;

/// Every failure raised by the library carries one of the codes above so the
/// CLI can map it to an exit status without string matching.
class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& message)
        : std::runtime_error(std::string(errc_name(code)) + ": " + message), code_(code), message_(message)
    {
    }

    Errc code() const noexcept { return code_; }
    /// The message without the code prefix.
    const std::string& message() const noexcept { return message_; }

private:
    Errc code_;
    std::string message_;
};

} // namespace stainforge
