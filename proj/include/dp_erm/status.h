// Copyright 2024 Google LLC
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef DP_ERM_STATUS_H_
#define DP_ERM_STATUS_H_

#include <optional>
#include <string>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "absl/strings/cord.h"
#include "absl/strings/str_cat.h"
#include "absl/strings/string_view.h"

namespace dp_erm {

// Library-specific error kinds. Each maps onto a canonical absl code and is
// also attached as a payload so callers can distinguish kinds sharing a code.
enum class ErrorKind {
  kInvalidArgument,
  kInvalidBody,
  kEmptyBody,
  kInvalidWeight,
  kPreconditionViolation,
  kCalibrationBug,
  kNumericalFailure,
  kOracleTooLarge,
  kUseEfficientVariant,
  kBudgetExceeded,
  kPackingFailure,
};

inline constexpr absl::string_view kErrorKindPayloadUrl = "dp_erm/error-kind";

inline absl::string_view ErrorKindName(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument:
      return "invalid-argument";
    case ErrorKind::kInvalidBody:
      return "invalid-body";
    case ErrorKind::kEmptyBody:
      return "empty-body";
    case ErrorKind::kInvalidWeight:
      return "invalid-weight";
    case ErrorKind::kPreconditionViolation:
      return "precondition-violation";
    case ErrorKind::kCalibrationBug:
      return "calibration-bug";
    case ErrorKind::kNumericalFailure:
      return "numerical-failure";
    case ErrorKind::kOracleTooLarge:
      return "oracle-too-large";
    case ErrorKind::kUseEfficientVariant:
      return "use-efficient-variant";
    case ErrorKind::kBudgetExceeded:
      return "budget-exceeded";
    case ErrorKind::kPackingFailure:
      return "packing-failure";
  }
  return "unknown";
}

inline absl::StatusCode CanonicalCode(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument:
    case ErrorKind::kInvalidBody:
    case ErrorKind::kInvalidWeight:
      return absl::StatusCode::kInvalidArgument;
    case ErrorKind::kEmptyBody:
    case ErrorKind::kPreconditionViolation:
    case ErrorKind::kUseEfficientVariant:
      return absl::StatusCode::kFailedPrecondition;
    case ErrorKind::kCalibrationBug:
    case ErrorKind::kNumericalFailure:
      return absl::StatusCode::kInternal;
    case ErrorKind::kOracleTooLarge:
    case ErrorKind::kBudgetExceeded:
    case ErrorKind::kPackingFailure:
      return absl::StatusCode::kResourceExhausted;
  }
  return absl::StatusCode::kUnknown;
}

inline absl::Status MakeError(ErrorKind kind, absl::string_view message) {
  absl::Status status(CanonicalCode(kind),
                      absl::StrCat(ErrorKindName(kind), ": ", message));
  status.SetPayload(kErrorKindPayloadUrl,
                    absl::Cord(std::string(ErrorKindName(kind))));
  return status;
}

// Returns the kind attached by MakeError, if any.
inline std::optional<std::string> ErrorKindOf(const absl::Status& status) {
  auto payload = status.GetPayload(kErrorKindPayloadUrl);
  if (!payload.has_value()) return std::nullopt;
  return std::string(*payload);
}

inline bool HasErrorKind(const absl::Status& status, ErrorKind kind) {
  std::optional<std::string> got = ErrorKindOf(status);
  return got.has_value() && *got == ErrorKindName(kind);
}

}  // namespace dp_erm

#define DP_ERM_RETURN_IF_ERROR(expr)         \
  do {                                       \
    const absl::Status _dp_erm_st = (expr);  \
    if (!_dp_erm_st.ok()) return _dp_erm_st; \
  } while (0)

#define DP_ERM_CONCAT_INNER(a, b) a##b
#define DP_ERM_CONCAT(a, b) DP_ERM_CONCAT_INNER(a, b)

#define DP_ERM_ASSIGN_OR_RETURN(lhs, rexpr) \
  DP_ERM_ASSIGN_OR_RETURN_IMPL(DP_ERM_CONCAT(_dp_erm_or_, __LINE__), lhs, rexpr)

#define DP_ERM_ASSIGN_OR_RETURN_IMPL(tmp, lhs, rexpr) \
  auto tmp = (rexpr);                                 \
  if (!tmp.ok()) return tmp.status();                 \
  lhs = std::move(tmp).value()

#endif  // DP_ERM_STATUS_H_
