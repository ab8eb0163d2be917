#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "conceptprobe/error.hpp"

namespace conceptprobe {

/// Dense, finite, non-empty real vector produced by a text encoder.
class EmbeddingVector {
 public:
  EmbeddingVector() = default;

  explicit EmbeddingVector(std::vector<double> values) : values_(std::move(values)) {
    if (values_.empty()) throw Error(ErrorCode::InvalidInput, "embedding must have dim >= 1");
    for (double v : values_) {
      if (!std::isfinite(v)) throw Error(ErrorCode::InvalidInput, "embedding contains a non-finite value");
    }
  }

  EmbeddingVector(std::initializer_list<double> values)
      : EmbeddingVector(std::vector<double>(values)) {}

  std::size_t dim() const noexcept { return values_.size(); }
  std::span<const double> values() const noexcept { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }

  double squared_norm() const noexcept {
    double s = 0.0;
    for (double v : values_) s += v * v;
    return s;
  }
  double norm() const noexcept { return std::sqrt(squared_norm()); }

  friend bool operator==(const EmbeddingVector&, const EmbeddingVector&) = default;

 private:
  std::vector<double> values_;
};

struct PromptPair {
  std::string concept_prompt;
  std::string neutral_prompt;

  void validate() const {
    if (concept_prompt.empty() || neutral_prompt.empty())
      throw Error(ErrorCode::InvalidInput, "prompt pair texts must be non-empty");
    if (concept_prompt == neutral_prompt)
      throw Error(ErrorCode::InvalidInput, "prompt pair texts must differ: '" + concept_prompt + "'");
  }
};

struct EmbeddedPair {
  EmbeddingVector concept_embedding;
  EmbeddingVector neutral_embedding;
};

/// Mean difference between concept-bearing and neutralized prompt embeddings.
struct ConceptDirection {
  EmbeddingVector vector;
  std::size_t pair_count = 0;
  std::string encoder_id;
};

struct VocabularyEntry {
  std::string word;
  EmbeddingVector embedding;
};

struct VocabularyTable {
  std::vector<VocabularyEntry> entries;
  std::string encoder_id;

  std::size_t dim() const noexcept { return entries.empty() ? 0 : entries.front().embedding.dim(); }

  void validate() const {
    std::unordered_set<std::string> seen;
    for (const auto& e : entries) {
      if (e.embedding.dim() != dim())
        throw Error(ErrorCode::DimensionMismatch, "vocabulary entry '" + e.word + "' has dim " +
                                                      std::to_string(e.embedding.dim()) + ", expected " +
                                                      std::to_string(dim()));
      if (!seen.insert(e.word).second)
        throw Error(ErrorCode::InvalidInput, "duplicate vocabulary word '" + e.word + "'");
    }
  }
};

struct RankedWord {
  std::string word;
  double similarity = 0.0;

  friend bool operator==(const RankedWord&, const RankedWord&) = default;
};

struct RankedVocabulary {
  std::vector<RankedWord> entries;
  std::size_t k = 0;
  std::string encoder_id;
  std::size_t pair_count = 0;

  std::vector<std::string> words() const {
    std::vector<std::string> out;
    out.reserve(entries.size());
    for (const auto& e : entries) out.push_back(e.word);
    return out;
  }

  friend bool operator==(const RankedVocabulary&, const RankedVocabulary&) = default;
};

/// Receives non-fatal diagnostics such as skipped zero-norm words.
using WarningSink = std::function<void(const std::string&)>;

inline ConceptDirection concept_direction(std::span<const EmbeddedPair> pairs, std::string encoder_id = {}) {
  if (pairs.empty()) throw Error(ErrorCode::InvalidInput, "concept direction needs at least one prompt pair");
  const std::size_t dim = pairs.front().concept_embedding.dim();
  if (dim == 0) throw Error(ErrorCode::InvalidInput, "empty embedding in prompt pair");
  std::vector<double> sum(dim, 0.0);
  for (const auto& p : pairs) {
    if (p.concept_embedding.dim() != dim || p.neutral_embedding.dim() != dim)
      throw Error(ErrorCode::DimensionMismatch, "prompt pair embeddings must all have dim " + std::to_string(dim));
    for (std::size_t i = 0; i < dim; ++i) sum[i] += p.concept_embedding[i] - p.neutral_embedding[i];
  }
  const double n = static_cast<double>(pairs.size());
  for (double& v : sum) v /= n;
  return ConceptDirection{EmbeddingVector(std::move(sum)), pairs.size(), std::move(encoder_id)};
}

inline double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
  if (a.dim() != b.dim())
    throw Error(ErrorCode::DimensionMismatch,
                "cosine of dim " + std::to_string(a.dim()) + " vs " + std::to_string(b.dim()));
  double dot = 0.0;
  double aa = 0.0;
  double bb = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) {
    dot += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) throw Error(ErrorCode::DegenerateVector, "cosine of a zero-norm vector");
  return std::clamp(dot / (std::sqrt(aa) * std::sqrt(bb)), -1.0, 1.0);
}

/// Top-k vocabulary words by cosine similarity to the concept direction.
/// Ordering is similarity descending, then word ascending, so equal scores rank deterministically.
/// Zero-norm word embeddings are skipped and reported through `warn`.
inline RankedVocabulary rank_vocabulary(const ConceptDirection& direction, const VocabularyTable& vocab,
                                        std::size_t k, const WarningSink& warn = {}) {
  if (k == 0) throw Error(ErrorCode::InvalidInput, "k must be >= 1");
  if (direction.encoder_id != vocab.encoder_id)
    throw Error(ErrorCode::EncoderMismatch,
                "direction encoder '" + direction.encoder_id + "' vs vocabulary encoder '" + vocab.encoder_id + "'");
  if (vocab.entries.empty()) throw Error(ErrorCode::InvalidInput, "vocabulary is empty");
  if (direction.vector.squared_norm() == 0.0)
    throw Error(ErrorCode::DegenerateVector, "concept direction has zero norm");

  std::vector<RankedWord> scored;
  scored.reserve(vocab.entries.size());
  for (const auto& entry : vocab.entries) {
    if (entry.embedding.dim() != direction.vector.dim())
      throw Error(ErrorCode::DimensionMismatch, "vocabulary word '" + entry.word + "' has dim " +
                                                    std::to_string(entry.embedding.dim()) + ", direction has " +
                                                    std::to_string(direction.vector.dim()));
    if (entry.embedding.squared_norm() == 0.0) {
      if (warn) warn("skipping zero-norm embedding for word '" + entry.word + "'");
      continue;
    }
    scored.push_back({entry.word, cosine_similarity(direction.vector, entry.embedding)});
  }

  const auto better = [](const RankedWord& a, const RankedWord& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    return a.word < b.word;
  };
  const std::size_t take = std::min(k, scored.size());
  if (take < k && warn)
    warn("k=" + std::to_string(k) + " exceeds the " + std::to_string(scored.size()) +
         " usable vocabulary words; returning all of them");
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take), scored.end(), better);
  scored.resize(take);
  return RankedVocabulary{std::move(scored), k, direction.encoder_id, direction.pair_count};
}

}  // namespace conceptprobe
