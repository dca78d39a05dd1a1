#pragma once

#include <functional>
#include <iostream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace foviq {

/// Bad input: malformed shapes, out-of-range parameters, unusable files.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Input that parses but is inconsistent (missing fields, mismatched grids).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A computation that cannot produce a finite answer.
class NumericalFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Zero variance, zero denominators, all-zero curves.
class DegenerateError : public NumericalFailure {
 public:
  using NumericalFailure::NumericalFailure;
};

/// Raised when every Gabor channel falls below the frequency cutoff.
class EmptyBankError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

using WarningSink = std::function<void(std::string_view)>;

/// Process-wide sink for warning-level diagnostics. Defaults to stderr.
inline WarningSink& warning_sink() {
  static WarningSink sink = [](std::string_view msg) {
    std::cerr << "warning: " << msg << '\n';
  };
  return sink;
}

inline void warn(const std::string& msg) {
  if (auto& sink = warning_sink()) sink(msg);
}

}  // namespace foviq
