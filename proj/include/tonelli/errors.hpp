#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tonelli {

enum class ErrorKind {
  InvalidArgument,
  NonConvergence,
  ClampTooTight,
  StepFailure,
  EnergyDriftExceeded,
  NotCritical,
  Degenerate,
  BelowE0,
  ScaleNotFound,
  SegmentFailure,
  PeriodCollapse,
  NotFound,
  PathBudgetExceeded,
  LeavesPolydisk,
  ConfigError,
  UsageError,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::NonConvergence: return "NonConvergence";
    case ErrorKind::ClampTooTight: return "ClampTooTight";
    case ErrorKind::StepFailure: return "StepFailure";
    case ErrorKind::EnergyDriftExceeded: return "EnergyDriftExceeded";
    case ErrorKind::NotCritical: return "NotCritical";
    case ErrorKind::Degenerate: return "Degenerate";
    case ErrorKind::BelowE0: return "BelowE0";
    case ErrorKind::ScaleNotFound: return "ScaleNotFound";
    case ErrorKind::SegmentFailure: return "SegmentFailure";
    case ErrorKind::PeriodCollapse: return "PeriodCollapse";
    case ErrorKind::NotFound: return "NotFound";
    case ErrorKind::PathBudgetExceeded: return "PathBudgetExceeded";
    case ErrorKind::LeavesPolydisk: return "LeavesPolydisk";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::UsageError: return "UsageError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries a machine-readable kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace tonelli
