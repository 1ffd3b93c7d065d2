#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace metafunc {

enum class ErrorCode {
  // embeddings
  EmptyClass,
  UnsupportedShape,
  DimensionShrink,
  FormatError,
  DataError,
  OverlappingSplit,
  UnknownClass,
  EmptySplit,
  // classifiers
  DegenerateLabels,
  DimensionError,
  // episodes
  InsufficientSamples,
  InsufficientClasses,
  EmptyBase,
  // neural
  BatchTooSmall,
  CacheError,
  // functional
  EmptyFunctionalSet,
  InvalidWay,
  MissingPrototypes,
  EmptyEnsemble,
  // eval / cli
  ConfigError,
  IoError,
  NumericalError,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Single exception type for the library; callers dispatch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::EmptyClass: return "EmptyClass";
    case ErrorCode::UnsupportedShape: return "UnsupportedShape";
    case ErrorCode::DimensionShrink: return "DimensionShrink";
    case ErrorCode::FormatError: return "FormatError";
    case ErrorCode::DataError: return "DataError";
    case ErrorCode::OverlappingSplit: return "OverlappingSplit";
    case ErrorCode::UnknownClass: return "UnknownClass";
    case ErrorCode::EmptySplit: return "EmptySplit";
    case ErrorCode::DegenerateLabels: return "DegenerateLabels";
    case ErrorCode::DimensionError: return "DimensionError";
    case ErrorCode::InsufficientSamples: return "InsufficientSamples";
    case ErrorCode::InsufficientClasses: return "InsufficientClasses";
    case ErrorCode::EmptyBase: return "EmptyBase";
    case ErrorCode::BatchTooSmall: return "BatchTooSmall";
    case ErrorCode::CacheError: return "CacheError";
    case ErrorCode::EmptyFunctionalSet: return "EmptyFunctionalSet";
    case ErrorCode::InvalidWay: return "InvalidWay";
    case ErrorCode::MissingPrototypes: return "MissingPrototypes";
    case ErrorCode::EmptyEnsemble: return "EmptyEnsemble";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::NumericalError: return "NumericalError";
  }
  return "Unknown";
}

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace metafunc
