// SPDX-License-Identifier: Apache-2.0
#include "uacal/error.hpp"

namespace uacal {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "E_INVALID_ARGUMENT";
    case ErrorCode::non_finite: return "E_NON_FINITE";
    case ErrorCode::shape_mismatch: return "E_SHAPE_MISMATCH";
    case ErrorCode::parse_error: return "E_PARSE";
    case ErrorCode::io_error: return "E_IO";
    case ErrorCode::state_error: return "E_STATE";
    case ErrorCode::config_error: return "E_CONFIG";
  }
  return "E_UNKNOWN";
}

}  // namespace uacal
