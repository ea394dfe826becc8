// SPDX-License-Identifier: Apache-2.0
#include "uacal/synthworld.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"
#include "uacal/error.hpp"
#include "uacal/numeric.hpp"

namespace uacal {
namespace {

using ojson = nlohmann::ordered_json;

struct Attribute {
  const char* name;
  std::vector<const char*> values;
};

const std::vector<Attribute>& catalogue() {
  static const std::vector<Attribute> attrs = {
      {"color", {"red", "blue", "green", "yellow", "purple", "orange", "black", "white", "silver",
                 "brown"}},
      {"city", {"paris", "london", "tokyo", "cairo", "oslo", "new york", "hong kong",
                "rio de janeiro", "buenos aires", "cape town"}},
      {"animal", {"cat", "dog", "horse", "eagle", "shark", "tiger", "wolf", "snow leopard",
                  "polar bear", "sea turtle"}},
      {"food", {"bread", "rice", "cheese", "soup", "pasta", "apple pie", "fried chicken",
                "ice cream", "sushi", "salad"}},
      {"sport", {"tennis", "soccer", "chess", "rugby", "golf", "ice hockey", "table tennis",
                 "boxing", "cricket", "water polo"}},
      {"instrument", {"piano", "violin", "drum", "flute", "guitar", "cello", "harp",
                      "french horn", "bass guitar", "trumpet"}},
      {"metal", {"gold", "iron", "copper", "zinc", "tin", "nickel", "lead", "platinum", "bronze",
                 "stainless steel"}},
      {"job", {"doctor", "pilot", "farmer", "baker", "lawyer", "teacher", "nurse", "sea captain",
               "fire fighter", "chef"}},
      {"planet", {"mercury", "venus", "mars", "jupiter", "saturn", "uranus", "neptune", "pluto",
                  "earth", "alpha centauri"}},
      {"language", {"spanish", "german", "latin", "greek", "arabic", "hindi", "old norse",
                    "swahili", "dutch", "welsh"}},
  };
  return attrs;
}

// Question templates; ENTITY / ATTR are substituted.
constexpr std::array<const char*, 3> kTemplates = {
    "what is the ATTR of ENTITY ?",
    "which ATTR does ENTITY have ?",
    "tell me the ATTR of ENTITY .",
};

std::string render(std::string_view tmpl, const std::string& attr, const std::string& entity) {
  std::string out(tmpl);
  out.replace(out.find("ATTR"), 4, attr);
  out.replace(out.find("ENTITY"), 6, entity);
  return out;
}

// Two-syllable names. In-domain and out-of-domain consonant sets are disjoint,
// so no name can occur in both namespaces.
std::vector<std::string> name_space(std::string_view consonants, std::string_view vowels) {
  std::vector<std::string> syllables;
  for (char c : consonants) {
    for (char v : vowels) syllables.push_back(std::string{c, v});
  }
  std::set<std::string> reserved;
  for (const auto& a : catalogue()) {
    reserved.insert(a.name);
    for (const char* v : a.values) {
      for (const auto& w : split_words(v)) reserved.insert(w);
    }
  }
  for (const char* t : kTemplates) {
    for (const auto& w : split_words(t)) reserved.insert(w);
  }
  std::vector<std::string> names;
  for (const auto& a : syllables) {
    for (const auto& b : syllables) {
      std::string name = a + b;
      if (!reserved.contains(name)) names.push_back(std::move(name));
    }
  }
  return names;
}

constexpr std::string_view kDomainConsonants = "klmnprstvd";
constexpr std::string_view kDomainVowels = "aeio";
constexpr std::string_view kOodConsonants = "bghjwzf";
constexpr std::string_view kOodVowels = "aeiou";

template <class T>
void shuffle_in_place(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng() % i]);
}

std::size_t pick(std::size_t n, std::mt19937_64& rng) { return rng() % n; }

// "first last" names: the first pool entries are first names, the next pool
// entries last names; all pool^2 combinations in shuffled order.
std::vector<std::string> two_part_names(const std::vector<std::string>& syllables, int pool,
                                        std::mt19937_64& rng) {
  std::vector<std::string> names;
  for (int i = 0; i < pool; ++i) {
    for (int j = 0; j < pool; ++j) names.push_back(syllables[i] + " " + syllables[pool + j]);
  }
  shuffle_in_place(names, rng);
  return names;
}

struct Fact {
  int entity;
  int attribute;
  int value;
  int alt_value = -1;  // conflicting value for ambiguous facts
};

std::string pad_id(std::string_view prefix, std::size_t n) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%05zu", n);
  return std::string(prefix) + "-" + buf;
}

}  // namespace

int attribute_catalogue_size() { return static_cast<int>(catalogue().size()); }

std::string_view split_name(Split split) {
  switch (split) {
    case Split::pretrain: return "pretrain";
    case Split::finetune: return "finetune";
    case Split::eval: return "eval";
    case Split::ood: return "ood";
  }
  return "?";
}

Split parse_split(std::string_view name) {
  for (Split s : {Split::pretrain, Split::finetune, Split::eval, Split::ood}) {
    if (split_name(s) == name) return s;
  }
  fail(ErrorCode::parse_error, "unknown split '" + std::string(name) + "'");
}

void WorldConfig::validate() const {
  require(n_entities > 0 && n_attributes > 0 && n_pretrain_pairs > 0 && n_finetune_pairs > 0 &&
              n_eval_pairs > 0 && n_ood_pairs > 0,
          ErrorCode::config_error, "world config: counts must be positive");
  require(ambiguity_rate >= 0.0 && ambiguity_rate < 1.0, ErrorCode::config_error,
          "world config: ambiguity_rate must lie in [0, 1)");
  require(n_attributes <= attribute_catalogue_size(), ErrorCode::config_error,
          "world config: at most " + std::to_string(attribute_catalogue_size()) + " attributes");
  require(name_pool >= 0, ErrorCode::config_error, "world config: name_pool must be >= 0");
  const auto domain_syllables = name_space(kDomainConsonants, kDomainVowels).size();
  const auto ood_syllables = name_space(kOodConsonants, kOodVowels).size();
  if (name_pool > 0) {
    require(2 * static_cast<std::size_t>(name_pool) <= std::min(domain_syllables, ood_syllables),
            ErrorCode::config_error, "world config: name_pool too large for the name spaces");
  }
  const auto n_names = [&](std::size_t syllables) {
    return name_pool > 0 ? static_cast<std::size_t>(name_pool) * name_pool : syllables;
  };
  const auto domain_names = n_names(domain_syllables);
  require(static_cast<std::size_t>(n_entities) <= domain_names, ErrorCode::config_error,
          "world config: n_entities exceeds the " + std::to_string(domain_names) +
              " available names");
  const long triples = static_cast<long>(n_entities) * n_attributes;
  require(n_finetune_pairs + n_eval_pairs <= triples, ErrorCode::config_error,
          "world config: finetune + eval pairs (" + std::to_string(n_finetune_pairs + n_eval_pairs) +
              ") exceed the " + std::to_string(triples) + " unique facts");
  const auto ood_names = n_names(ood_syllables);
  const long ood_entities = (n_ood_pairs + n_attributes - 1) / n_attributes;
  require(static_cast<std::size_t>(ood_entities) <= ood_names, ErrorCode::config_error,
          "world config: n_ood_pairs exceeds the out-of-domain namespace");
}

std::vector<QAItem> generate_world(const WorldConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  const auto& attrs = catalogue();

  auto domain = name_space(kDomainConsonants, kDomainVowels);
  shuffle_in_place(domain, rng);
  if (cfg.name_pool > 0) domain = two_part_names(domain, cfg.name_pool, rng);
  domain.resize(cfg.n_entities);

  std::vector<Fact> facts;
  for (int e = 0; e < cfg.n_entities; ++e) {
    for (int a = 0; a < cfg.n_attributes; ++a) {
      const std::size_t n_values = attrs[a].values.size();
      Fact f{e, a, static_cast<int>(pick(n_values, rng))};
      const double u = unit_uniform(rng());
      if (u < cfg.ambiguity_rate) {
        f.alt_value = static_cast<int>((f.value + 1 + pick(n_values - 1, rng)) % n_values);
      }
      facts.push_back(f);
    }
  }
  std::vector<int> order(facts.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  shuffle_in_place(order, rng);

  const std::vector<int> finetune_facts(order.begin(), order.begin() + cfg.n_finetune_pairs);
  const std::vector<int> eval_facts(order.begin() + cfg.n_finetune_pairs,
                                    order.begin() + cfg.n_finetune_pairs + cfg.n_eval_pairs);

  // Pretraining exposure counts: every finetune/eval fact at least once
  // (twice when ambiguous, once per conflicting value), then a skewed
  // allocation of the remaining budget over all facts.
  std::vector<int> counts(facts.size(), 0);
  long mandatory = 0;
  for (int f = 0; f < static_cast<int>(facts.size()); ++f) {
    const bool needed =
        std::find(order.begin(), order.begin() + cfg.n_finetune_pairs + cfg.n_eval_pairs, f) !=
        order.begin() + cfg.n_finetune_pairs + cfg.n_eval_pairs;
    if (!needed) continue;
    counts[f] = facts[f].alt_value >= 0 ? 2 : 1;
    mandatory += counts[f];
  }
  require(cfg.n_pretrain_pairs >= mandatory, ErrorCode::config_error,
          "world config: n_pretrain_pairs must be at least " + std::to_string(mandatory) +
              " to cover every finetune and eval fact");
  // Entity popularity is Zipf-like, so rarely mentioned entities are a
  // learnable familiarity signal; extra mentions pick an attribute uniformly.
  std::vector<double> cumulative(static_cast<std::size_t>(cfg.n_entities));
  {
    std::vector<int> rank(cumulative.size());
    for (std::size_t i = 0; i < rank.size(); ++i) rank[i] = static_cast<int>(i);
    shuffle_in_place(rank, rng);
    const double scale = std::max(1.0, cfg.n_entities / 10.0);
    double acc = 0.0;
    for (std::size_t e = 0; e < cumulative.size(); ++e) {
      acc += 1.0 / (1.0 + rank[e] / scale);
      cumulative[e] = acc;
    }
  }
  for (long extra = cfg.n_pretrain_pairs - mandatory; extra > 0; --extra) {
    const double u = unit_uniform(rng()) * cumulative.back();
    const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
    const auto entity = std::min<std::size_t>(it - cumulative.begin(), cumulative.size() - 1);
    const auto attribute = pick(static_cast<std::size_t>(cfg.n_attributes), rng);
    counts[entity * cfg.n_attributes + attribute] += 1;
  }

  struct Occurrence {
    int fact;
    int value;
  };
  std::vector<Occurrence> pretrain;
  for (int f = 0; f < static_cast<int>(facts.size()); ++f) {
    for (int k = 0; k < counts[f]; ++k) {
      const bool alt = facts[f].alt_value >= 0 && k % 2 == 1;
      pretrain.push_back({f, alt ? facts[f].alt_value : facts[f].value});
    }
  }
  shuffle_in_place(pretrain, rng);

  auto prompt_of = [&](const Fact& f, std::size_t tmpl) {
    return render(kTemplates[tmpl], attrs[f.attribute].name, domain[f.entity]);
  };
  auto value_of = [&](const Fact& f, int value) {
    return std::string(attrs[f.attribute].values[value]);
  };

  std::vector<QAItem> items;
  for (std::size_t i = 0; i < pretrain.size(); ++i) {
    const Fact& f = facts[pretrain[i].fact];
    QAItem item;
    item.id = pad_id("pretrain", i);
    item.prompt = prompt_of(f, pick(kTemplates.size(), rng));
    item.answers = {value_of(f, pretrain[i].value)};
    item.split = Split::pretrain;
    item.ambiguous = f.alt_value >= 0;
    items.push_back(std::move(item));
  }
  auto add_qa = [&](const std::vector<int>& which, Split split) {
    for (std::size_t i = 0; i < which.size(); ++i) {
      const Fact& f = facts[which[i]];
      QAItem item;
      item.id = pad_id(split_name(split), i);
      item.prompt = prompt_of(f, 0);
      item.answers = {value_of(f, f.value)};
      item.split = split;
      item.ambiguous = f.alt_value >= 0;
      items.push_back(std::move(item));
    }
  };
  add_qa(finetune_facts, Split::finetune);
  add_qa(eval_facts, Split::eval);

  auto ood_names = name_space(kOodConsonants, kOodVowels);
  shuffle_in_place(ood_names, rng);
  if (cfg.name_pool > 0) ood_names = two_part_names(ood_names, cfg.name_pool, rng);
  const int n_ood_entities = (cfg.n_ood_pairs + cfg.n_attributes - 1) / cfg.n_attributes;
  std::vector<std::pair<int, int>> ood_pairs;
  for (int e = 0; e < n_ood_entities; ++e) {
    for (int a = 0; a < cfg.n_attributes; ++a) ood_pairs.emplace_back(e, a);
  }
  shuffle_in_place(ood_pairs, rng);
  ood_pairs.resize(cfg.n_ood_pairs);
  for (std::size_t i = 0; i < ood_pairs.size(); ++i) {
    const auto [e, a] = ood_pairs[i];
    QAItem item;
    item.id = pad_id("ood", i);
    item.prompt = render(kTemplates[0], attrs[a].name, ood_names[e]);
    item.answers = {std::string(attrs[a].values[pick(attrs[a].values.size(), rng)])};
    item.split = Split::ood;
    item.ood = true;
    items.push_back(std::move(item));
  }
  return items;
}

std::optional<QuestionKey> parse_question(std::string_view prompt) {
  const auto words = split_words(prompt);
  for (const char* tmpl : kTemplates) {
    const auto pattern = split_words(tmpl);
    if (words.size() < pattern.size()) continue;
    // ENTITY absorbs whatever the fixed words leave over.
    const std::size_t entity_len = words.size() - pattern.size() + 1;
    QuestionKey key;
    bool ok = true;
    std::size_t w = 0;
    for (std::size_t i = 0; i < pattern.size() && ok; ++i) {
      if (pattern[i] == "ATTR") {
        key.attribute = words[w++];
      } else if (pattern[i] == "ENTITY") {
        for (std::size_t k = 0; k < entity_len; ++k) {
          if (k > 0) key.entity += ' ';
          key.entity += words[w++];
        }
      } else {
        ok = pattern[i] == words[w++];
      }
    }
    if (ok) return key;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

Vocab::Vocab() {
  for (const char* t : {"<pad>", "<bos>", "<eos>", "<unk>"}) add(t);
}

void Vocab::add(const std::string& word) {
  if (index_.contains(word)) return;
  index_.emplace(word, static_cast<int>(tokens_.size()));
  tokens_.push_back(word);
}

Vocab Vocab::build(const std::vector<QAItem>& items) {
  std::set<std::string> words;
  for (const auto& item : items) {
    for (auto& w : split_words(item.prompt)) words.insert(std::move(w));
    for (const auto& a : item.answers) {
      for (auto& w : split_words(a)) words.insert(std::move(w));
    }
  }
  Vocab v;
  for (const auto& w : words) v.add(w);
  return v;
}

const std::string& Vocab::token(int id) const {
  require(id >= 0 && id < size(), ErrorCode::invalid_argument,
          "vocab: token id " + std::to_string(id) + " out of range");
  return tokens_[id];
}

int Vocab::id(std::string_view word) const {
  const auto it = index_.find(std::string(word));
  return it == index_.end() ? kUnkId : it->second;
}

std::vector<int> Vocab::encode(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& w : split_words(text)) ids.push_back(id(w));
  return ids;
}

std::string Vocab::decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) {
    if (id < kReservedTokens && id != kUnkId) continue;
    if (!out.empty()) out += ' ';
    out += token(id);
  }
  return out;
}

std::string Vocab::to_text() const {
  std::string out;
  for (const auto& t : tokens_) out += t + "\n";
  return out;
}

Vocab Vocab::from_text(const std::string& text) {
  Vocab v;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    if (line_no < kReservedTokens) {
      require(line == v.tokens_[line_no], ErrorCode::parse_error,
              "vocab: reserved token mismatch at line " + std::to_string(line_no + 1));
    } else {
      require(!line.empty() && !v.index_.contains(line), ErrorCode::parse_error,
              "vocab: empty or duplicate token at line " + std::to_string(line_no + 1));
      v.add(line);
    }
    ++line_no;
  }
  require(line_no >= kReservedTokens, ErrorCode::parse_error, "vocab: missing reserved tokens");
  return v;
}

TokenSequence encode_prompt(const Vocab& vocab, std::string_view prompt) {
  TokenSequence ids{kBosId};
  for (int id : vocab.encode(prompt)) ids.push_back(id);
  return ids;
}

EncodedItem encode_item(const Vocab& vocab, const QAItem& item) {
  require(!item.answers.empty(), ErrorCode::invalid_argument, "encode_item: item has no answer");
  EncodedItem out;
  out.ids = encode_prompt(vocab, item.prompt);
  out.answer_start = static_cast<int>(out.ids.size());
  for (int id : vocab.encode(item.answers.front())) out.ids.push_back(id);
  out.ids.push_back(kEosId);
  return out;
}

// ---------------------------------------------------------------------------

std::string items_to_jsonl(const std::vector<QAItem>& items) {
  std::string out;
  for (const auto& item : items) {
    ojson j;
    j["id"] = item.id;
    j["prompt"] = item.prompt;
    if (item.answers.size() == 1) {
      j["answer"] = item.answers.front();
    } else {
      j["answer"] = item.answers;
    }
    j["split"] = split_name(item.split);
    j["ambiguous"] = item.ambiguous;
    j["ood"] = item.ood;
    out += j.dump() + "\n";
  }
  return out;
}

std::vector<QAItem> items_from_jsonl(const std::string& text) {
  std::vector<QAItem> items;
  std::set<std::string> ids;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = "dataset line " + std::to_string(line_no) + ": ";
    ojson j;
    try {
      j = ojson::parse(line);
    } catch (const ojson::exception& e) {
      fail(ErrorCode::parse_error, where + "malformed JSON (" + e.what() + ")");
    }
    require(j.is_object(), ErrorCode::parse_error, where + "expected an object");
    for (const char* key : {"id", "prompt", "answer", "split", "ambiguous", "ood"}) {
      require(j.contains(key), ErrorCode::parse_error,
              where + "missing required field '" + key + "'");
    }
    QAItem item;
    try {
      item.id = j.at("id").get<std::string>();
      item.prompt = j.at("prompt").get<std::string>();
      const auto& ans = j.at("answer");
      if (ans.is_string()) {
        item.answers = {ans.get<std::string>()};
      } else {
        item.answers = ans.get<std::vector<std::string>>();
      }
      item.split = parse_split(j.at("split").get<std::string>());
      item.ambiguous = j.at("ambiguous").get<bool>();
      item.ood = j.at("ood").get<bool>();
    } catch (const ojson::exception& e) {
      fail(ErrorCode::parse_error, where + "bad field type (" + e.what() + ")");
    } catch (const Error& e) {
      fail(ErrorCode::parse_error, where + e.what());
    }
    require(!item.answers.empty(), ErrorCode::parse_error, where + "empty answer list");
    require(ids.insert(item.id).second, ErrorCode::parse_error,
            where + "duplicate id '" + item.id + "'");
    items.push_back(std::move(item));
  }
  return items;
}

void save_jsonl(const std::vector<QAItem>& items, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorCode::io_error, "cannot write " + path.string());
  out << items_to_jsonl(items);
}

std::vector<QAItem> load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCode::io_error, "cannot open dataset " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return items_from_jsonl(buf.str());
}

}  // namespace uacal
