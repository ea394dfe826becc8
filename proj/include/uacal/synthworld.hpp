// SPDX-License-Identifier: Apache-2.0
//
// Seeded synthetic question-answering world. Entities carry attribute values;
// questions are rendered through fixed templates. A fraction of facts is
// ambiguous (two conflicting values appear in the pretraining corpus) and a
// disjoint set of out-of-domain entities is used only for the ood split.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "uacal/model.hpp"

namespace uacal {

struct WorldConfig {
  int n_entities = 200;
  int n_attributes = 6;
  int n_pretrain_pairs = 2400;
  int n_finetune_pairs = 600;
  int n_eval_pairs = 600;
  int n_ood_pairs = 200;
  double ambiguity_rate = 0.15;
  // > 0: entity names are "first last" pairs drawn from name_pool first and
  // name_pool last names, so entities share name parts. 0: one-word names.
  int name_pool = 25;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const WorldConfig&) const = default;
};

enum class Split { pretrain, finetune, eval, ood };

std::string_view split_name(Split split);
Split parse_split(std::string_view name);

struct QAItem {
  std::string id;
  std::string prompt;
  std::vector<std::string> answers;  // first entry is the canonical answer
  Split split = Split::pretrain;
  bool ambiguous = false;
  bool ood = false;

  bool operator==(const QAItem&) const = default;
};

/// Number of attributes the built-in catalogue provides.
int attribute_catalogue_size();

std::vector<QAItem> generate_world(const WorldConfig& cfg);

/// Recovers (entity, attribute) from a prompt rendered by any template.
struct QuestionKey {
  std::string entity;
  std::string attribute;
  bool operator==(const QuestionKey&) const = default;
};
std::optional<QuestionKey> parse_question(std::string_view prompt);

// --------------------------------------------------------------------------
// Vocabulary and word-level tokenizer.

inline constexpr int kPadId = 0;
inline constexpr int kBosId = 1;
inline constexpr int kEosId = 2;
inline constexpr int kUnkId = 3;
inline constexpr int kReservedTokens = 4;

class Vocab {
 public:
  Vocab();  // reserved tokens only

  /// Reserved tokens followed by every distinct whitespace-separated word of
  /// prompts and answers, sorted.
  static Vocab build(const std::vector<QAItem>& items);

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::string& token(int id) const;
  int id(std::string_view word) const;  // kUnkId when absent

  std::vector<int> encode(std::string_view text) const;
  /// Joins tokens with single spaces; reserved tokens other than UNK are dropped.
  std::string decode(std::span<const int> ids) const;

  std::string to_text() const;  // one token per line
  static Vocab from_text(const std::string& text);

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  void add(const std::string& word);
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

std::vector<std::string> split_words(std::string_view text);

/// BOS + prompt + canonical answer + EOS, supervising answer tokens and EOS
/// (full_sequence supervises every next-token prediction instead).
struct EncodedItem {
  TokenSequence ids;
  int answer_start = 0;  // index of the first answer token in ids
};
EncodedItem encode_item(const Vocab& vocab, const QAItem& item);

/// BOS + prompt tokens, the decoding prefix for an item.
TokenSequence encode_prompt(const Vocab& vocab, std::string_view prompt);

// --------------------------------------------------------------------------
// JSONL persistence: {"id","prompt","answer","split","ambiguous","ood"}.

std::string items_to_jsonl(const std::vector<QAItem>& items);
std::vector<QAItem> items_from_jsonl(const std::string& text);

void save_jsonl(const std::vector<QAItem>& items, const std::filesystem::path& path);
std::vector<QAItem> load_jsonl(const std::filesystem::path& path);

}  // namespace uacal
