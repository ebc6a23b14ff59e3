#pragma once

#include <stdexcept>
#include <string>

namespace cmcm {

// Error taxonomy shared across the library. Each condition named in a module
// contract gets its own type so callers can catch precisely.
#define CMCM_DEFINE_ERROR(Name)                                   \
  struct Name : std::runtime_error {                              \
    explicit Name(const std::string& what)                        \
        : std::runtime_error(std::string(#Name) + ": " + what) {} \
  }

CMCM_DEFINE_ERROR(ShapeMismatch);
CMCM_DEFINE_ERROR(DomainError);
CMCM_DEFINE_ERROR(NonScalarRoot);
CMCM_DEFINE_ERROR(DimMismatch);
CMCM_DEFINE_ERROR(ArityMismatch);
CMCM_DEFINE_ERROR(UnsupportedDim);
CMCM_DEFINE_ERROR(UnsupportedFamily);
CMCM_DEFINE_ERROR(BoundaryError);
CMCM_DEFINE_ERROR(NotPositiveDefinite);
CMCM_DEFINE_ERROR(LengthMismatch);
CMCM_DEFINE_ERROR(ZeroVector);
CMCM_DEFINE_ERROR(DegenerateBatch);
CMCM_DEFINE_ERROR(MissingGmm);
CMCM_DEFINE_ERROR(DataFormatError);
CMCM_DEFINE_ERROR(DivergenceError);
CMCM_DEFINE_ERROR(SingleClass);
CMCM_DEFINE_ERROR(AllModalitiesAtRisk);
CMCM_DEFINE_ERROR(IOError);

#undef CMCM_DEFINE_ERROR

}  // namespace cmcm
