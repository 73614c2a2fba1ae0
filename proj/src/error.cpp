#include "vdistill/error.hpp"

namespace vdistill {

std::string_view error_code_name(ErrorCode code) {
    switch (code) {
        case ErrorCode::BadMagic:               return "BadMagic";
        case ErrorCode::VersionUnsupported:     return "VersionUnsupported";
        case ErrorCode::SizeMismatch:           return "SizeMismatch";
        case ErrorCode::NormViolation:          return "NormViolation";
        case ErrorCode::IoFailure:              return "IoFailure";
        case ErrorCode::DimensionMismatch:      return "DimensionMismatch";
        case ErrorCode::PatchCountMismatch:     return "PatchCountMismatch";
        case ErrorCode::NonPositiveAlpha:       return "NonPositiveAlpha";
        case ErrorCode::InvalidConfig:          return "InvalidConfig";
        case ErrorCode::KExceedsN:              return "KExceedsN";
        case ErrorCode::StreamExhausted:        return "StreamExhausted";
        case ErrorCode::EmptyGrid:              return "EmptyGrid";
        case ErrorCode::NormalizationViolation: return "NormalizationViolation";
        case ErrorCode::AllZero:                return "AllZero";
        case ErrorCode::TooFewFrames:           return "TooFewFrames";
        case ErrorCode::KTopExceedsN:           return "KTopExceedsN";
        case ErrorCode::CatalogTooSmall:        return "CatalogTooSmall";
        case ErrorCode::SourceTooShort:         return "SourceTooShort";
        case ErrorCode::UnknownCaseId:          return "UnknownCaseId";
        case ErrorCode::InvalidFractions:       return "InvalidFractions";
        case ErrorCode::InvalidArgument:        return "InvalidArgument";
    }
    return "Unknown";
}

} // namespace vdistill
