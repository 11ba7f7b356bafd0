#pragma once

#include <stdexcept>
#include <string>

namespace mmlens {

// Base class for all library errors. Each named condition gets its own type
// so callers can catch exactly what they expect.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InvalidConfig : Error { using Error::Error; };
struct PromptTooLong : Error { using Error::Error; };
struct ShapeMismatch : Error { using Error::Error; };
struct FullyMaskedRow : Error { using Error::Error; };
struct UnknownLayer : Error { using Error::Error; };
struct MissingTraceEntry : Error { using Error::Error; };
struct FingerprintMismatch : Error { using Error::Error; };
struct SegmentAbsent : Error { using Error::Error; };
struct ConfigMismatch : Error { using Error::Error; };
struct EmptyParameterList : Error { using Error::Error; };
struct InsufficientVariety : Error { using Error::Error; };
struct EndpointError : Error { using Error::Error; };
struct MalformedInstructionJson : Error { using Error::Error; };
struct DenylistViolation : Error { using Error::Error; };
struct UnknownExperimentFamilyCombo : Error { using Error::Error; };
struct TransportError : Error { using Error::Error; };
struct EmptyPool : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };

} // namespace mmlens
