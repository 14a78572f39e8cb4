#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace abdmri {

// Typed failure categories surfaced by the library. CLI maps any of these to
// exit code 2; everything else is a usage or internal error.
enum class ErrorCode {
    malformed_header,
    unsupported_datatype,
    truncated_data,
    io_failure,
    invalid_volume,
    singular_affine,
    geometry_mismatch,
    empty_mask,
    empty_body,
    missing_series,
    missing_channel,
    non_standard_acquisition,
    no_overlap,
    degenerate_profile,
    empty_bank,
    crop_out_of_bounds,
    insufficient_echoes,
    non_axial_acquisition,
    corrupt_echo,
    negative_r2star,
    degenerate_design,
    invalid_config,
    no_recognized_input,
};

[[nodiscard]] constexpr std::string_view to_string(ErrorCode c) noexcept {
    switch (c) {
        case ErrorCode::malformed_header:         return "MalformedHeader";
        case ErrorCode::unsupported_datatype:     return "UnsupportedDatatype";
        case ErrorCode::truncated_data:           return "TruncatedData";
        case ErrorCode::io_failure:               return "IoFailure";
        case ErrorCode::invalid_volume:           return "InvalidVolume";
        case ErrorCode::singular_affine:          return "SingularAffine";
        case ErrorCode::geometry_mismatch:        return "GeometryMismatch";
        case ErrorCode::empty_mask:               return "EmptyMask";
        case ErrorCode::empty_body:               return "EmptyBody";
        case ErrorCode::missing_series:           return "MissingSeries";
        case ErrorCode::missing_channel:          return "MissingChannel";
        case ErrorCode::non_standard_acquisition: return "NonStandardAcquisition";
        case ErrorCode::no_overlap:               return "NoOverlap";
        case ErrorCode::degenerate_profile:       return "DegenerateProfile";
        case ErrorCode::empty_bank:               return "EmptyBank";
        case ErrorCode::crop_out_of_bounds:       return "CropOutOfBounds";
        case ErrorCode::insufficient_echoes:      return "InsufficientEchoes";
        case ErrorCode::non_axial_acquisition:    return "NonAxialAcquisition";
        case ErrorCode::corrupt_echo:             return "CorruptEcho";
        case ErrorCode::negative_r2star:          return "NegativeR2star";
        case ErrorCode::degenerate_design:        return "DegenerateDesign";
        case ErrorCode::invalid_config:           return "InvalidConfig";
        case ErrorCode::no_recognized_input:      return "NoRecognizedInput";
    }
    return "Unknown";
}

class Error : public std::runtime_error {
  public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    [[nodiscard]] ErrorCode code() const noexcept { return code_; }

  private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
    throw Error(code, what);
}

inline void require(bool ok, ErrorCode code, const std::string& what) {
    if (!ok) fail(code, what);
}

}  // namespace abdmri
