#pragma once

#include <stdexcept>
#include <string>

namespace ckn {

// Base of every error the library throws. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error { using Error::Error; };
class NumericalError : public Error { using Error::Error; };
class NotPositiveDefiniteError : public NumericalError { using NumericalError::NumericalError; };
class IllConditionedError : public NumericalError { using NumericalError::NumericalError; };
class UnsupportedKernelError : public Error { using Error::Error; };
class GeometryError : public ShapeError { using ShapeError::ShapeError; };

// Architecture problems: bad configs, failed translation, inconsistent shapes.
class ConfigError : public Error { using Error::Error; };
class TranslationError : public ConfigError { using ConfigError::ConfigError; };
class ValidationError : public ConfigError { using ConfigError::ConfigError; };

class CheckpointError : public Error { using Error::Error; };
class FormatError : public Error { using Error::Error; };
class InsufficientDataError : public Error { using Error::Error; };
class DegenerateDataError : public Error { using Error::Error; };
class SearchError : public Error { using Error::Error; };

}  // namespace ckn
