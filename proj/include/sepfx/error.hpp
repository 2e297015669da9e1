#ifndef SEPFX_ERROR_HPP
#define SEPFX_ERROR_HPP

#include <stdexcept>
#include <string>

namespace sepfx {

/// Broad failure class, used by the CLI to choose an exit code.
enum class ErrorCategory { Data, Numeric };

class Error : public std::runtime_error {
public:
    Error(ErrorCategory category, const std::string& what)
        : std::runtime_error(what), category_(category) {}
    ErrorCategory category() const noexcept { return category_; }

private:
    ErrorCategory category_;
};

#define SEPFX_DEFINE_ERROR(Name, Category)                                      \
    class Name : public Error {                                                 \
    public:                                                                     \
        explicit Name(const std::string& what)                                  \
            : Error(ErrorCategory::Category, std::string(#Name ": ") + what) {} \
    };

// data / contract errors
SEPFX_DEFINE_ERROR(ConfigError, Data)
SEPFX_DEFINE_ERROR(ParseError, Data)
SEPFX_DEFINE_ERROR(EmptySubset, Data)
SEPFX_DEFINE_ERROR(InvalidLaw, Data)
SEPFX_DEFINE_ERROR(NoRiskSet, Data)
SEPFX_DEFINE_ERROR(MissingPredictor, Data)
SEPFX_DEFINE_ERROR(MissingNuisance, Data)
SEPFX_DEFINE_ERROR(NoSurvivors, Data)
SEPFX_DEFINE_ERROR(MismatchedAD, Data)
SEPFX_DEFINE_ERROR(InsufficientData, Data)
SEPFX_DEFINE_ERROR(TooLarge, Data)

// numeric failures
SEPFX_DEFINE_ERROR(RankDeficient, Numeric)
SEPFX_DEFINE_ERROR(Separation, Numeric)
SEPFX_DEFINE_ERROR(PositivityViolation, Numeric)
SEPFX_DEFINE_ERROR(ExtremePositivity, Numeric)
SEPFX_DEFINE_ERROR(DegenerateOracle, Numeric)
SEPFX_DEFINE_ERROR(TooManyFailures, Numeric)

#undef SEPFX_DEFINE_ERROR

}  // namespace sepfx

#endif  // SEPFX_ERROR_HPP
