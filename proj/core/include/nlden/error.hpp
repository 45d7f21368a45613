#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace nlden {

enum class ErrorKind {
  Format,
  Io,
  Geometry,
  Coverage,
  Parameter,
  ConstantInput,
  EmptyMask,
  EmptyBackground,
  Spec,
  Domain,
  Shape,
  State,
  Training,
  Sampling,
  Checkpoint,
  Metric,
  DegenerateDifferences,
  Config,
};

std::string_view to_string(ErrorKind kind) noexcept;

/// All library failures are reported as this exception; `kind()` lets callers
/// (the CLI in particular) map failures to exit codes without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Format: return "FormatError";
    case ErrorKind::Io: return "IoError";
    case ErrorKind::Geometry: return "GeometryError";
    case ErrorKind::Coverage: return "CoverageError";
    case ErrorKind::Parameter: return "ParameterError";
    case ErrorKind::ConstantInput: return "ConstantInput";
    case ErrorKind::EmptyMask: return "EmptyMask";
    case ErrorKind::EmptyBackground: return "EmptyBackground";
    case ErrorKind::Spec: return "SpecError";
    case ErrorKind::Domain: return "DomainError";
    case ErrorKind::Shape: return "ShapeError";
    case ErrorKind::State: return "StateError";
    case ErrorKind::Training: return "TrainingError";
    case ErrorKind::Sampling: return "SamplingError";
    case ErrorKind::Checkpoint: return "CheckpointError";
    case ErrorKind::Metric: return "MetricError";
    case ErrorKind::DegenerateDifferences: return "DegenerateDifferences";
    case ErrorKind::Config: return "ConfigError";
  }
  return "Error";
}

}  // namespace nlden
