#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace evgs {

enum class ErrorKind {
  BehindCamera,
  InvalidDepth,
  InvalidInterval,
  InsufficientInput,
  Ordering,
  InvalidBins,
  Size,
  Config,
  Shape,
  State,
  Extrapolation,
  TrainingFailure,
  Io,
  Format,
};

/// Short machine-readable tag for an error kind ("behind_camera", "config", ...).
std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace evgs
