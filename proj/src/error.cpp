#include "stainforge/error.hpp"

namespace stainforge {

std::string_view errc_name(Errc code) noexcept
{
    switch (code) {
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::Truncated: return "Truncated";
    case Errc::BadSignature: return "BadSignature";
    case Errc::UnsupportedProfile: return "UnsupportedProfile";
    case Errc::SingularMatrix: return "SingularMatrix";
    case Errc::MaxIterationsExceeded: return "MaxIterationsExceeded";
    case Errc::InsufficientTissue: return "InsufficientTissue";
    case Errc::DegenerateDistribution: return "DegenerateDistribution";
    case Errc::AmbiguousOrdering: return "AmbiguousOrdering";
    case Errc::EmptyLibrary: return "EmptyLibrary";
    case Errc::DuplicateSlide: return "DuplicateSlide";
    case Errc::Io: return "Io";
    case Errc::SchemaViolation: return "SchemaViolation";
    case Errc::CropLargerThanPatch: return "CropLargerThanPatch";
    case Errc::StAdapterFailure: return "StAdapterFailure";
    case Errc::EmptyInput: return "EmptyInput";
    case Errc::InsufficientPairs: return "InsufficientPairs";
    case Errc::ZeroVariance: return "ZeroVariance";
    }
    return "Unknown";
}

} // namespace stainforge
