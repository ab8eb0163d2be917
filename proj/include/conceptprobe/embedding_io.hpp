#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "conceptprobe/adapters.hpp"
#include "conceptprobe/detail/parallel.hpp"
#include "conceptprobe/detail/text.hpp"
#include "conceptprobe/embedding.hpp"

namespace conceptprobe {

namespace detail {

struct JsonLine {
  std::size_t line_number;
  nlohmann::json value;
};

inline std::vector<JsonLine> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::vector<JsonLine> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (trim(line).empty()) continue;
    try {
      out.push_back({number, nlohmann::json::parse(line)});
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorCode::ParseError, path.string() + ":" + std::to_string(number) + ": " + e.what());
    }
  }
  return out;
}

inline const nlohmann::json& require_field(const JsonLine& rec, const char* key, const std::filesystem::path& path) {
  if (!rec.value.is_object() || !rec.value.contains(key))
    throw Error(ErrorCode::ParseError,
                path.string() + ":" + std::to_string(rec.line_number) + ": missing field '" + key + "'");
  return rec.value.at(key);
}

inline std::string require_string(const JsonLine& rec, const char* key, const std::filesystem::path& path) {
  const auto& v = require_field(rec, key, path);
  if (!v.is_string())
    throw Error(ErrorCode::ParseError,
                path.string() + ":" + std::to_string(rec.line_number) + ": field '" + key + "' must be a string");
  return v.get<std::string>();
}

}  // namespace detail

/// Reads one word per line; blank lines and '#' comments are ignored, duplicates dropped.
inline std::vector<std::string> load_word_list(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open word list " + path.string());
  std::vector<std::string> words;
  std::unordered_set<std::string> seen;
  std::string line;
  while (std::getline(in, line)) {
    const auto w = detail::trim(line);
    if (w.empty() || w.front() == '#') continue;
    if (seen.emplace(w).second) words.emplace_back(w);
  }
  return words;
}

/// Embedding table file: header {"encoder_id","dim"} then {"word","vec"} records.
/// An empty `words` list loads every word in file order.
inline VocabularyTable load_embedding_table(const std::filesystem::path& path, const std::vector<std::string>& words = {}) {
  const auto records = detail::read_jsonl(path);
  if (records.empty()) throw Error(ErrorCode::ParseError, path.string() + ": empty embedding table");

  const auto& header = records.front();
  VocabularyTable table;
  table.encoder_id = detail::require_string(header, "encoder_id", path);
  const auto& dim_field = detail::require_field(header, "dim", path);
  if (!dim_field.is_number_integer() || dim_field.get<long long>() < 1)
    throw Error(ErrorCode::ParseError, path.string() + ":" + std::to_string(header.line_number) + ": dim must be a positive integer");
  const auto dim = dim_field.get<std::size_t>();

  std::vector<VocabularyEntry> all;
  all.reserve(records.size() - 1);
  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& rec = records[r];
    const auto where = path.string() + ":" + std::to_string(rec.line_number);
    std::string word = detail::require_string(rec, "word", path);
    const auto& vec = detail::require_field(rec, "vec", path);
    if (!vec.is_array()) throw Error(ErrorCode::ParseError, where + ": 'vec' must be an array");
    std::vector<double> values;
    values.reserve(vec.size());
    for (const auto& x : vec) {
      if (!x.is_number()) throw Error(ErrorCode::ParseError, where + ": 'vec' must contain numbers");
      values.push_back(x.get<double>());
    }
    if (values.size() != dim)
      throw Error(ErrorCode::ParseError, where + ": vector has " + std::to_string(values.size()) +
                                             " components, header declares " + std::to_string(dim));
    try {
      all.push_back({std::move(word), EmbeddingVector(std::move(values))});
    } catch (const Error& e) {
      throw Error(ErrorCode::ParseError, where + ": " + e.what());
    }
  }

  if (words.empty()) {
    table.entries = std::move(all);
  } else {
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < all.size(); ++i) index.emplace(all[i].word, i);
    std::vector<std::string> missing;
    for (const auto& w : words) {
      auto it = index.find(w);
      if (it == index.end()) {
        missing.push_back(w);
      } else {
        table.entries.push_back(all[it->second]);
      }
    }
    if (!missing.empty()) {
      std::string list;
      for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
      throw Error(ErrorCode::MissingEntry, "no embedding for: " + list);
    }
  }
  table.validate();
  return table;
}

/// Provider mode: batches of `batch_size` words, up to `parallel` batches in flight.
/// Entries follow the order of `words` regardless of completion order.
inline VocabularyTable load_embedding_table(EmbeddingProvider& provider, const std::vector<std::string>& words,
                                            std::size_t batch_size = 64, std::size_t parallel = 1) {
  if (words.empty()) throw Error(ErrorCode::InvalidInput, "no words to embed");
  batch_size = std::max<std::size_t>(batch_size, 1);
  const std::size_t batches = (words.size() + batch_size - 1) / batch_size;
  std::vector<std::vector<EmbeddingVector>> results(batches);
  detail::parallel_for(batches, parallel, [&](std::size_t b) {
    const auto first = words.begin() + static_cast<std::ptrdiff_t>(b * batch_size);
    const auto last = words.begin() + static_cast<std::ptrdiff_t>(std::min(words.size(), (b + 1) * batch_size));
    results[b] = embed_checked(provider, std::vector<std::string>(first, last));
  });
  VocabularyTable table;
  table.encoder_id = provider.encoder_id();
  table.entries.reserve(words.size());
  std::size_t w = 0;
  for (auto& batch : results) {
    for (auto& v : batch) table.entries.push_back({words[w++], std::move(v)});
  }
  table.validate();
  return table;
}

inline void write_embedding_table(const std::filesystem::path& path, const VocabularyTable& table) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << nlohmann::json{{"encoder_id", table.encoder_id}, {"dim", table.dim()}}.dump() << '\n';
  for (const auto& e : table.entries) {
    nlohmann::json vec = nlohmann::json::array();
    for (double v : e.embedding.values()) vec.push_back(v);
    out << nlohmann::json{{"word", e.word}, {"vec", vec}}.dump() << '\n';
  }
}

/// Prompt-pair dataset: {"concept","neutral"} per line.
inline std::vector<PromptPair> load_prompt_pairs(const std::filesystem::path& path) {
  std::vector<PromptPair> pairs;
  for (const auto& rec : detail::read_jsonl(path)) {
    PromptPair p{detail::require_string(rec, "concept", path), detail::require_string(rec, "neutral", path)};
    try {
      p.validate();
    } catch (const Error& e) {
      throw Error(ErrorCode::ParseError, path.string() + ":" + std::to_string(rec.line_number) + ": " + e.what());
    }
    pairs.push_back(std::move(p));
  }
  if (pairs.empty()) throw Error(ErrorCode::InvalidInput, path.string() + ": no prompt pairs");
  return pairs;
}

inline std::vector<EmbeddedPair> embed_pairs(EmbeddingProvider& provider, const std::vector<PromptPair>& pairs) {
  std::vector<std::string> texts;
  texts.reserve(pairs.size() * 2);
  for (const auto& p : pairs) {
    p.validate();
    texts.push_back(p.concept_prompt);
    texts.push_back(p.neutral_prompt);
  }
  auto vectors = embed_checked(provider, texts);
  std::vector<EmbeddedPair> out;
  out.reserve(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i)
    out.push_back({std::move(vectors[2 * i]), std::move(vectors[2 * i + 1])});
  return out;
}

/// Ranked vocabulary file: header {"encoder_id","k","pair_count"} then {"word","similarity"} records.
inline void write_ranked_vocabulary(std::ostream& out, const RankedVocabulary& vocab) {
  out << nlohmann::json{{"encoder_id", vocab.encoder_id}, {"k", vocab.k}, {"pair_count", vocab.pair_count}}.dump()
      << '\n';
  for (const auto& e : vocab.entries) out << nlohmann::json{{"word", e.word}, {"similarity", e.similarity}}.dump() << '\n';
}

inline void write_ranked_vocabulary(const std::filesystem::path& path, const RankedVocabulary& vocab) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  write_ranked_vocabulary(out, vocab);
}

inline RankedVocabulary load_ranked_vocabulary(const std::filesystem::path& path) {
  const auto records = detail::read_jsonl(path);
  if (records.empty()) throw Error(ErrorCode::ParseError, path.string() + ": empty vocabulary file");
  RankedVocabulary vocab;
  const auto& header = records.front();
  vocab.encoder_id = detail::require_string(header, "encoder_id", path);
  vocab.k = detail::require_field(header, "k", path).get<std::size_t>();
  vocab.pair_count = header.value.value("pair_count", std::size_t{0});
  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& sim = detail::require_field(records[r], "similarity", path);
    if (!sim.is_number())
      throw Error(ErrorCode::ParseError, path.string() + ":" + std::to_string(records[r].line_number) +
                                             ": similarity must be a number");
    vocab.entries.push_back({detail::require_string(records[r], "word", path), sim.get<double>()});
  }
  return vocab;
}

}  // namespace conceptprobe
