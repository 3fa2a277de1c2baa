#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mjnn {

enum class ErrorKind {
  DimensionMismatch,
  RowSumViolation,
  DelayOrderViolation,
  InvalidProbability,
  IndexOutOfRange,
  GridMismatch,
  RequiresFullTP,
  MalformedProblem,
  Unbounded,
  CertificateMismatch,
  NumericOverflow,
  NoFeasibleLevel,
  InvalidConfig,
  Io,
};

constexpr std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::RowSumViolation: return "RowSumViolation";
    case ErrorKind::DelayOrderViolation: return "DelayOrderViolation";
    case ErrorKind::InvalidProbability: return "InvalidProbability";
    case ErrorKind::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorKind::GridMismatch: return "GridMismatch";
    case ErrorKind::RequiresFullTP: return "RequiresFullTP";
    case ErrorKind::MalformedProblem: return "MalformedProblem";
    case ErrorKind::Unbounded: return "Unbounded";
    case ErrorKind::CertificateMismatch: return "CertificateMismatch";
    case ErrorKind::NumericOverflow: return "NumericOverflow";
    case ErrorKind::NoFeasibleLevel: return "NoFeasibleLevel";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::Io: return "Io";
  }
  return "Unknown";
}

/// Exception carrying a machine-readable kind; the message is prefixed with the kind name.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace mjnn
