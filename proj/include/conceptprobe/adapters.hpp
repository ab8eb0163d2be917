#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "conceptprobe/embedding.hpp"
#include "conceptprobe/error.hpp"

// Boundary contracts for every external model the engine talks to.
// Implementations must be safe to call from several threads at once.

namespace conceptprobe {

struct ImageProvenance {
  std::string prompt;
  long long seed = 0;
  double guidance_scale = 0.0;
};

struct ImageHandle {
  std::string id;
  std::optional<std::string> bytes_ref;
  ImageProvenance provenance;
};

struct ChatMessage {
  std::string role;
  std::string content;

  friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

class TargetModel {
 public:
  virtual ~TargetModel() = default;
  /// Throws TransportError (retryable) or ProviderRefusal (final for this prompt).
  virtual ImageHandle generate(const std::string& prompt, long long seed, double guidance_scale) = 0;
};

class ConceptDetector {
 public:
  virtual ~ConceptDetector() = default;
  /// Concept-presence confidence in [0, 1].
  virtual double score(const ImageHandle& image) = 0;
};

class AlignmentScorer {
 public:
  virtual ~AlignmentScorer() = default;
  /// Alignment of the image with `reference_prompt`, which is always the original prompt.
  virtual double score(const std::string& reference_prompt, const ImageHandle& image) = 0;
};

class AestheticScorer {
 public:
  virtual ~AestheticScorer() = default;
  virtual double score(const ImageHandle& image) = 0;
};

class PromptGenerator {
 public:
  virtual ~PromptGenerator() = default;
  virtual std::string complete(const std::vector<ChatMessage>& messages) = 0;
};

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::string encoder_id() const = 0;
  virtual std::size_t dim() const = 0;
  /// One vector per input text, all of dim().
  virtual std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) = 0;
};

class PerplexityLM {
 public:
  virtual ~PerplexityLM() = default;
  virtual double mean_perplexity(const std::string& prompt) = 0;
  virtual std::string model_name() const = 0;
};

class GibberishDetector {
 public:
  virtual ~GibberishDetector() = default;
  virtual bool is_gibberish(const std::string& prompt) = 0;
};

struct ScorerBundle {
  std::shared_ptr<ConceptDetector> detector;
  std::shared_ptr<AlignmentScorer> alignment;
  std::shared_ptr<AestheticScorer> aesthetic;

  void validate() const {
    if (!detector || !alignment || !aesthetic)
      throw Error(ErrorCode::InvalidInput, "scorer bundle needs detector, alignment and aesthetic scorers");
  }
};

/// Everything a batch needs; perplexity/gibberish/embedding are optional extras.
struct AdapterSet {
  std::shared_ptr<TargetModel> target;
  std::shared_ptr<PromptGenerator> generator;
  ScorerBundle scorers;
  std::shared_ptr<EmbeddingProvider> embedding;
  std::shared_ptr<PerplexityLM> perplexity;
  std::shared_ptr<GibberishDetector> gibberish;
};

/// Calls provider.embed and enforces the dimension contract.
inline std::vector<EmbeddingVector> embed_checked(EmbeddingProvider& provider, const std::vector<std::string>& texts) {
  auto out = provider.embed(texts);
  if (out.size() != texts.size())
    throw Error(ErrorCode::ProviderContractViolation, "embedding provider returned " + std::to_string(out.size()) +
                                                          " vectors for " + std::to_string(texts.size()) + " texts");
  for (const auto& v : out) {
    if (v.dim() != provider.dim())
      throw Error(ErrorCode::ProviderContractViolation, "embedding dim drifted to " + std::to_string(v.dim()) +
                                                            ", declared " + std::to_string(provider.dim()));
  }
  return out;
}

}  // namespace conceptprobe
