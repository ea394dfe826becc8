// SPDX-License-Identifier: Apache-2.0
#include "uacal/text.hpp"

#include <algorithm>
#include <cctype>

namespace uacal {

std::string normalize_text(std::string_view text) {
  std::string out;
  bool pending_space = false;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::ispunct(c)) continue;
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out += ' ';
    pending_space = false;
    out += static_cast<char>(std::tolower(c));
  }
  return out;
}

std::vector<std::string> text_tokens(std::string_view text) {
  std::vector<std::string> words;
  const std::string norm = normalize_text(text);
  std::size_t start = 0;
  while (start < norm.size()) {
    const std::size_t end = std::min(norm.find(' ', start), norm.size());
    words.push_back(norm.substr(start, end - start));
    start = end + 1;
  }
  return words;
}

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

RougeScore rouge_l(std::string_view candidate, std::string_view reference) {
  const auto cand = text_tokens(candidate);
  const auto ref = text_tokens(reference);
  if (cand.empty() && ref.empty()) return {1.0, 1.0, 1.0};
  if (cand.empty() || ref.empty()) return {};
  const double lcs = static_cast<double>(lcs_length(cand, ref));
  RougeScore s;
  s.precision = lcs / static_cast<double>(cand.size());
  s.recall = lcs / static_cast<double>(ref.size());
  // Harmonic mean written as 2·LCS / (m + n) so that boundary values are exact.
  s.f1 = 2.0 * lcs / static_cast<double>(cand.size() + ref.size());
  return s;
}

double rouge_l_best(std::string_view candidate, std::span<const std::string> references) {
  double best = 0.0;
  for (const auto& ref : references) best = std::max(best, rouge_l(candidate, ref).f1);
  return best;
}

}  // namespace uacal
