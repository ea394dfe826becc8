// SPDX-License-Identifier: Apache-2.0
//
// Text normalization and ROUGE-L.
#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace uacal {

/// Lowercase, ASCII punctuation removed, whitespace collapsed and trimmed.
std::string normalize_text(std::string_view text);

/// Words of normalize_text(text).
std::vector<std::string> text_tokens(std::string_view text);

struct RougeScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b);

/// LCS-based precision/recall/F1 (beta = 1). Both sides empty scores 1.
RougeScore rouge_l(std::string_view candidate, std::string_view reference);
/// Best F1 over the references (0 when there are none).
double rouge_l_best(std::string_view candidate, std::span<const std::string> references);

}  // namespace uacal
