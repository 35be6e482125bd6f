// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace lrc {

enum class ErrorCode {
  InvalidArgument,
  DimensionMismatch,
  ConvergenceFailure,
  NotSymmetric,
  NotPositiveDefinite,
  RankDeficient,
  SingularMatrix,
  IllConditioned,
  NonFiniteGradient,
  InfeasibleBudget,
  SearchSpaceTooLarge,
  Io,
  Parse,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Every failure raised by the library carries one of the codes above so
/// callers (the CLI in particular) can map it without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace lrc
