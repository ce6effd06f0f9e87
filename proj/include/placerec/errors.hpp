#ifndef PLACEREC_ERRORS_HPP
#define PLACEREC_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace placerec {

// Base class for every error thrown by the toolkit.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

#define PLACEREC_DEFINE_ERROR(Name)                                  \
    class Name : public Error {                                      \
    public:                                                          \
        explicit Name(const std::string& msg) : Error(msg) {}        \
    }

// File format / IO
PLACEREC_DEFINE_ERROR(BadMagic);
PLACEREC_DEFINE_ERROR(VersionMismatch);
PLACEREC_DEFINE_ERROR(CorruptPayload);
PLACEREC_DEFINE_ERROR(InvariantViolation);
PLACEREC_DEFINE_ERROR(IoFailure);

// Dimensions / inputs
PLACEREC_DEFINE_ERROR(DimensionMismatch);
PLACEREC_DEFINE_ERROR(EmptySequence);
PLACEREC_DEFINE_ERROR(NoWords);
PLACEREC_DEFINE_ERROR(EmptyVocabulary);
PLACEREC_DEFINE_ERROR(EmptyDatabase);
PLACEREC_DEFINE_ERROR(NoDepthPoints);
PLACEREC_DEFINE_ERROR(MissingGroundTruth);

// Geometry
PLACEREC_DEFINE_ERROR(BehindCamera);
PLACEREC_DEFINE_ERROR(DegenerateGeometry);
PLACEREC_DEFINE_ERROR(TooFewCorrespondences);
PLACEREC_DEFINE_ERROR(SingularNormalEquations);
PLACEREC_DEFINE_ERROR(NoConsensus);

#undef PLACEREC_DEFINE_ERROR

}  // namespace placerec

#endif
