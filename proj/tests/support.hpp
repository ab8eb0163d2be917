#pragma once

// Independent oracles and scripted adapters shared by the unit and acceptance suites.
// Oracles are written the slow, obvious way on purpose and never call the library code they check.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "conceptprobe/conceptprobe.hpp"

namespace cptest {

namespace cp = conceptprobe;

// --- oracles ------------------------------------------------------------------

/// Sum the differences component by component, then divide by N.
inline std::vector<double> mean_difference_oracle(const std::vector<std::vector<double>>& concept_vecs,
                                                  const std::vector<std::vector<double>>& neutral_vecs) {
  std::vector<double> sum(concept_vecs.front().size(), 0.0);
  for (std::size_t p = 0; p < concept_vecs.size(); ++p)
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += concept_vecs[p][i] - neutral_vecs[p][i];
  for (double& v : sum) v /= static_cast<double>(concept_vecs.size());
  return sum;
}

inline double cosine_oracle(const std::vector<double>& a, const std::vector<double>& b) {
  long double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<long double>(a[i]) * b[i];
    na += static_cast<long double>(a[i]) * a[i];
    nb += static_cast<long double>(b[i]) * b[i];
  }
  return static_cast<double>(dot / (std::sqrt(na) * std::sqrt(nb)));
}

/// Score every word, fully sort with the same tie rule, truncate.
inline std::vector<cp::RankedWord> topk_oracle(const cp::ConceptDirection& dir, const cp::VocabularyTable& vocab, std::size_t k) {
  std::vector<cp::RankedWord> all;
  for (const auto& e : vocab.entries) {
    if (e.embedding.squared_norm() == 0.0) continue;
    all.push_back({e.word, cp::cosine_similarity(dir.vector, e.embedding)});
  }
  std::sort(all.begin(), all.end(), [](const cp::RankedWord& a, const cp::RankedWord& b) {
    return a.similarity > b.similarity || (a.similarity == b.similarity && a.word < b.word);
  });
  if (all.size() > k) all.resize(k);
  return all;
}

/// Brute force: rank every scored candidate by a full key and take the minimum.
inline cp::Candidate final_selection_oracle(const std::vector<cp::Candidate>& final_iteration,
                                            const std::vector<cp::Candidate>& history) {
  std::vector<cp::Candidate> passers;
  for (const auto& c : final_iteration)
    if (c.passed_all()) passers.push_back(c);
  if (!passers.empty()) {
    std::sort(passers.begin(), passers.end(), [](const cp::Candidate& a, const cp::Candidate& b) {
      const double sa = a.signals->detection + a.signals->alignment + a.signals->aesthetic;
      const double sb = b.signals->detection + b.signals->alignment + b.signals->aesthetic;
      if (sa != sb) return sa > sb;
      return std::tie(a.iteration, a.position) < std::tie(b.iteration, b.position);
    });
    return passers.front();
  }
  std::vector<cp::Candidate> pool;
  for (const auto& c : history)
    if (c.scored()) pool.push_back(c);
  std::sort(pool.begin(), pool.end(), [](const cp::Candidate& a, const cp::Candidate& b) {
    const auto ka = std::make_tuple(-a.signals->detection, -a.signals->alignment, -a.signals->aesthetic, a.iteration, a.position);
    const auto kb = std::make_tuple(-b.signals->detection, -b.signals->alignment, -b.signals->aesthetic, b.iteration, b.position);
    return ka < kb;
  });
  return pool.front();
}

// --- builders -----------------------------------------------------------------

inline cp::Candidate scored(const std::string& prompt, double det, double align, double aes, std::size_t iteration = 1,
                            std::size_t position = 0, const cp::Thresholds& t = {}) {
  cp::Candidate c;
  c.prompt = prompt;
  c.iteration = iteration;
  c.position = position;
  c.set_signals({det, align, aes}, t);
  return c;
}

inline std::vector<double> random_vector(std::mt19937_64& rng, std::size_t dim) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(dim);
  for (double& x : v) x = n(rng);
  return v;
}

/// Hand-built run for metric tests. `detector_iteration` marks the first iteration whose
/// candidate passed detection; `success_iteration` ends the run with an all-gates pass.
inline cp::RunRecord make_run(const std::string& id, std::size_t max_iterations, std::optional<std::size_t> detector_iteration,
                              std::optional<std::size_t> success_iteration, double aesthetic = 0.5, double alignment = 0.5,
                              const std::string& final_text = "a prompt") {
  cp::RunRecord r;
  r.meta.prompt_id = id;
  r.meta.config_hash = "h";
  r.config.initial_prompt = "p";
  r.config.max_iterations = max_iterations;
  const std::size_t used = success_iteration ? *success_iteration : max_iterations;
  for (std::size_t t = 1; t <= used; ++t) {
    cp::IterationRecord rec;
    rec.iteration = t;
    const bool all = success_iteration && t == *success_iteration;
    const bool det = all || (detector_iteration && t >= *detector_iteration);
    rec.candidates.push_back(scored(t == used ? final_text : "c", det ? 0.9 : 0.1, all ? alignment : 0.1, all ? aesthetic : 0.1, t, 0));
    r.result.trace.push_back(rec);
  }
  r.result.iterations_used = used;
  r.result.success = success_iteration.has_value();
  r.result.stop_reason = r.result.success ? cp::StopReason::AllThresholdsMet : cp::StopReason::MaxIterations;
  auto history = r.result.history();
  r.result.final_prompt = cp::final_selection(r.result.trace.back().candidates, history);
  if (!r.result.success) {
    // keep the requested final scores for score-mean tests
    r.result.final_prompt->signals->aesthetic = aesthetic;
    r.result.final_prompt->signals->alignment = alignment;
  }
  return r;
}

// --- scripted adapters ----------------------------------------------------------

/// Returns prompts "t<call>-<i>" in the requested count, optionally emitting garbage first.
class CountingGenerator final : public cp::PromptGenerator {
 public:
  explicit CountingGenerator(std::size_t q, std::size_t garbage_first = 0) : q_(q), garbage_(garbage_first) {}

  std::string complete(const std::vector<cp::ChatMessage>& messages) override {
    std::lock_guard lock(mu_);
    requests.push_back(messages);
    if (garbage_ > 0) {
      --garbage_;
      return "I am not able to help with JSON today.";
    }
    ++calls_;
    nlohmann::json j;
    for (std::size_t i = 0; i < q_; ++i) j["prompts"].push_back("t" + std::to_string(calls_) + "-" + std::to_string(i));
    return j.dump();
  }

  std::vector<std::vector<cp::ChatMessage>> requests;

 private:
  std::mutex mu_;
  std::size_t q_;
  std::size_t garbage_;
  std::size_t calls_ = 0;
};

/// The "image" is the prompt itself.
class EchoTarget final : public cp::TargetModel {
 public:
  std::function<bool(const std::string&)> refuse;

  cp::ImageHandle generate(const std::string& prompt, long long seed, double gs) override {
    if (refuse && refuse(prompt)) throw cp::Error(cp::ErrorCode::ProviderRefusal, "refused: " + prompt);
    return {prompt, std::nullopt, {prompt, seed, gs}};
  }
};

using ScoreFn = std::function<cp::RewardSignals(const std::string&)>;

class FnDetector final : public cp::ConceptDetector {
 public:
  explicit FnDetector(ScoreFn f) : f_(std::move(f)) {}
  double score(const cp::ImageHandle& h) override { return f_(h.id).detection; }

 private:
  ScoreFn f_;
};

class FnAlignment final : public cp::AlignmentScorer {
 public:
  explicit FnAlignment(ScoreFn f) : f_(std::move(f)) {}
  double score(const std::string&, const cp::ImageHandle& h) override { return f_(h.id).alignment; }

 private:
  ScoreFn f_;
};

class FnAesthetic final : public cp::AestheticScorer {
 public:
  explicit FnAesthetic(ScoreFn f) : f_(std::move(f)) {}
  double score(const cp::ImageHandle& h) override { return f_(h.id).aesthetic; }

 private:
  ScoreFn f_;
};

inline cp::ScorerBundle scorers_from(const ScoreFn& f) {
  return {std::make_shared<FnDetector>(f), std::make_shared<FnAlignment>(f), std::make_shared<FnAesthetic>(f)};
}

/// Deterministic pseudo-random scores from the prompt text; passes all gates only for prompts
/// that start with `pass_prefix`.
inline ScoreFn prefix_scores(const std::string& pass_prefix) {
  return [pass_prefix](const std::string& p) {
    const auto h = cp::detail::mix64(cp::detail::fnv1a64(p));
    const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
    if (!pass_prefix.empty() && p.rfind(pass_prefix, 0) == 0) return cp::RewardSignals{0.9, 0.5 + 0.1 * u, 0.5};
    return cp::RewardSignals{0.3 * u, 0.2 + 0.6 * u, 0.35 + 0.1 * u};
  };
}

// --- filesystem -----------------------------------------------------------------

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("conceptprobe-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace cptest
