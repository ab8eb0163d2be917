#pragma once

#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "conceptprobe/detail/text.hpp"
#include "conceptprobe/embedding_io.hpp"
#include "conceptprobe/search.hpp"

// JSON mapping for engine types and the per-run trace file:
//   line 1      {"type":"header", "schema_version", "config", "meta"}
//   lines 2..n  {"type":"iteration", ...IterationRecord}
//   last line   {"type":"result", ...} once the run has finished

namespace conceptprobe {

inline constexpr int kTraceSchemaVersion = 1;

inline void to_json(nlohmann::json& j, const Thresholds& t) {
  j = {{"tau_det", t.tau_det}, {"tau_img", t.tau_img}, {"tau_aes", t.tau_aes}};
}
inline void from_json(const nlohmann::json& j, Thresholds& t) {
  j.at("tau_det").get_to(t.tau_det);
  j.at("tau_img").get_to(t.tau_img);
  j.at("tau_aes").get_to(t.tau_aes);
}

inline void to_json(nlohmann::json& j, const RewardSignals& s) {
  j = {{"detection", s.detection}, {"alignment", s.alignment}, {"aesthetic", s.aesthetic}};
}
inline void from_json(const nlohmann::json& j, RewardSignals& s) {
  j.at("detection").get_to(s.detection);
  j.at("alignment").get_to(s.alignment);
  j.at("aesthetic").get_to(s.aesthetic);
}

inline void to_json(nlohmann::json& j, const GateFlags& f) {
  j = {{"detection", f.detection}, {"alignment", f.alignment}, {"aesthetic", f.aesthetic}};
}
inline void from_json(const nlohmann::json& j, GateFlags& f) {
  j.at("detection").get_to(f.detection);
  j.at("alignment").get_to(f.alignment);
  j.at("aesthetic").get_to(f.aesthetic);
}

inline void to_json(nlohmann::json& j, const Candidate& c) {
  j = {{"prompt", c.prompt},
       {"iteration", c.iteration},
       {"position", c.position},
       {"image_ref", c.image_ref},
       {"signals", c.signals ? nlohmann::json(*c.signals) : nlohmann::json(nullptr)},
       {"pass_flags", c.flags}};
  if (c.refusal) j["refusal"] = *c.refusal;
}
inline void from_json(const nlohmann::json& j, Candidate& c) {
  j.at("prompt").get_to(c.prompt);
  j.at("iteration").get_to(c.iteration);
  j.at("position").get_to(c.position);
  j.at("image_ref").get_to(c.image_ref);
  if (j.at("signals").is_null()) {
    c.signals.reset();
  } else {
    c.signals = j.at("signals").get<RewardSignals>();
  }
  j.at("pass_flags").get_to(c.flags);
  if (j.contains("refusal")) c.refusal = j.at("refusal").get<std::string>();
}

inline void to_json(nlohmann::json& j, const ChatMessage& m) { j = {{"role", m.role}, {"content", m.content}}; }
inline void from_json(const nlohmann::json& j, ChatMessage& m) {
  j.at("role").get_to(m.role);
  j.at("content").get_to(m.content);
}

inline void to_json(nlohmann::json& j, const GeneratorAttempt& a) {
  j = {{"response", a.response}, {"error", a.error}};
}
inline void from_json(const nlohmann::json& j, GeneratorAttempt& a) {
  j.at("response").get_to(a.response);
  j.at("error").get_to(a.error);
}

inline void to_json(nlohmann::json& j, const GeneratorExchange& e) {
  j = {{"request", e.request}, {"attempts", e.attempts}};
}
inline void from_json(const nlohmann::json& j, GeneratorExchange& e) {
  j.at("request").get_to(e.request);
  j.at("attempts").get_to(e.attempts);
}

inline void to_json(nlohmann::json& j, const IterationRecord& r) {
  j = {{"iteration", r.iteration},
       {"candidates", r.candidates},
       {"survivors", r.survivors},
       {"generator_exchange", r.generator_exchange},
       {"shortfall", r.shortfall}};
}
inline void from_json(const nlohmann::json& j, IterationRecord& r) {
  j.at("iteration").get_to(r.iteration);
  j.at("candidates").get_to(r.candidates);
  j.at("survivors").get_to(r.survivors);
  j.at("generator_exchange").get_to(r.generator_exchange);
  j.at("shortfall").get_to(r.shortfall);
}

inline void to_json(nlohmann::json& j, const RankedVocabulary& v) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : v.entries) entries.push_back({{"word", e.word}, {"similarity", e.similarity}});
  j = {{"encoder_id", v.encoder_id}, {"k", v.k}, {"pair_count", v.pair_count}, {"entries", entries}};
}
inline void from_json(const nlohmann::json& j, RankedVocabulary& v) {
  j.at("encoder_id").get_to(v.encoder_id);
  j.at("k").get_to(v.k);
  j.at("pair_count").get_to(v.pair_count);
  v.entries.clear();
  for (const auto& e : j.at("entries"))
    v.entries.push_back({e.at("word").get<std::string>(), e.at("similarity").get<double>()});
}

inline void to_json(nlohmann::json& j, const AttackConfig& c) {
  j = {{"initial_prompt", c.initial_prompt},
       {"concept_descriptor", c.concept_descriptor},
       {"q_candidates", c.q_candidates},
       {"s_survivors", c.s_survivors},
       {"max_iterations", c.max_iterations},
       {"temperature", c.temperature},
       {"thresholds", c.thresholds},
       {"guidance_vocab", c.guidance_vocab ? nlohmann::json(*c.guidance_vocab) : nlohmann::json(nullptr)},
       {"rng_seed", c.rng_seed},
       {"image_seed", c.image_seed},
       {"guidance_scale", c.guidance_scale},
       {"include_thresholds_in_feedback", c.include_thresholds_in_feedback},
       {"full_history", c.full_history},
       {"generator_retries", c.generator_retries}};
}
inline void from_json(const nlohmann::json& j, AttackConfig& c) {
  j.at("initial_prompt").get_to(c.initial_prompt);
  j.at("concept_descriptor").get_to(c.concept_descriptor);
  j.at("q_candidates").get_to(c.q_candidates);
  j.at("s_survivors").get_to(c.s_survivors);
  j.at("max_iterations").get_to(c.max_iterations);
  j.at("temperature").get_to(c.temperature);
  j.at("thresholds").get_to(c.thresholds);
  if (j.at("guidance_vocab").is_null()) {
    c.guidance_vocab.reset();
  } else {
    c.guidance_vocab = j.at("guidance_vocab").get<RankedVocabulary>();
  }
  j.at("rng_seed").get_to(c.rng_seed);
  j.at("image_seed").get_to(c.image_seed);
  j.at("guidance_scale").get_to(c.guidance_scale);
  j.at("include_thresholds_in_feedback").get_to(c.include_thresholds_in_feedback);
  j.at("full_history").get_to(c.full_history);
  j.at("generator_retries").get_to(c.generator_retries);
}

/// Hash over the experiment-level settings; per-prompt fields are excluded so one batch shares one hash.
inline std::string config_hash(const AttackConfig& c) {
  nlohmann::json j = c;
  j.erase("initial_prompt");
  j.erase("image_seed");
  j.erase("guidance_scale");
  return detail::hex64(detail::fnv1a64(j.dump()));
}

struct RunMeta {
  std::string prompt_id;
  long long dataset_seed = 0;
  double guidance_scale = 0.0;
  std::string config_hash;

  friend bool operator==(const RunMeta&, const RunMeta&) = default;
};

inline void to_json(nlohmann::json& j, const RunMeta& m) {
  j = {{"prompt_id", m.prompt_id},
       {"dataset_seed", m.dataset_seed},
       {"guidance_scale", m.guidance_scale},
       {"config_hash", m.config_hash}};
}
inline void from_json(const nlohmann::json& j, RunMeta& m) {
  j.at("prompt_id").get_to(m.prompt_id);
  j.at("dataset_seed").get_to(m.dataset_seed);
  j.at("guidance_scale").get_to(m.guidance_scale);
  j.at("config_hash").get_to(m.config_hash);
}

/// Perplexity and gibberish verdict for a run's final prompt, measured once at batch time.
struct FinalPromptDetectability {
  double perplexity = 0.0;
  bool gibberish = false;
  std::string perplexity_model;

  friend bool operator==(const FinalPromptDetectability&, const FinalPromptDetectability&) = default;
};

inline nlohmann::json result_record(const AttackResult& r, const std::optional<FinalPromptDetectability>& d) {
  nlohmann::json j = {{"type", "result"},
                      {"success", r.success},
                      {"stop_reason", std::string(to_string(r.stop_reason))},
                      {"iterations_used", r.iterations_used},
                      {"final_prompt", r.final_prompt ? nlohmann::json(*r.final_prompt) : nlohmann::json(nullptr)}};
  if (d) {
    j["detectability"] = {{"perplexity", d->perplexity}, {"gibberish", d->gibberish}, {"perplexity_model", d->perplexity_model}};
  }
  return j;
}

/// Appends one JSON line per record and flushes, so an interrupted run leaves a readable prefix.
class TraceWriter {
 public:
  explicit TraceWriter(const std::filesystem::path& path) : path_(path), out_(path, std::ios::trunc) {
    if (!out_) throw Error(ErrorCode::IoError, "cannot write trace " + path.string());
  }

  void write_header(const AttackConfig& config, const RunMeta& meta) {
    write({{"type", "header"}, {"schema_version", kTraceSchemaVersion}, {"config", config}, {"meta", meta}});
  }
  void write_iteration(const IterationRecord& record) {
    nlohmann::json j = record;
    j["type"] = "iteration";
    write(j);
  }
  void write_result(const AttackResult& result, const std::optional<FinalPromptDetectability>& d = std::nullopt) {
    write(result_record(result, d));
  }

  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  void write(const nlohmann::json& j) {
    std::lock_guard lock(mu_);
    out_ << j.dump() << '\n';
    out_.flush();
    if (!out_) throw Error(ErrorCode::IoError, "write failed for " + path_.string());
  }

  std::filesystem::path path_;
  std::ofstream out_;
  std::mutex mu_;
};

struct LoadedTrace {
  AttackConfig config;
  RunMeta meta;
  std::vector<IterationRecord> iterations;
  std::optional<AttackResult> result;  ///< empty when the run never finished
  std::optional<FinalPromptDetectability> detectability;
};

inline LoadedTrace load_trace(const std::filesystem::path& path) {
  const auto records = detail::read_jsonl(path);
  if (records.empty()) throw Error(ErrorCode::ParseError, path.string() + ": empty trace");
  LoadedTrace t;
  try {
    const auto& header = records.front().value;
    if (header.value("type", "") != "header") throw Error(ErrorCode::ParseError, "first record is not a header");
    if (header.at("schema_version").get<int>() != kTraceSchemaVersion)
      throw Error(ErrorCode::ParseError, "unsupported trace schema version");
    header.at("config").get_to(t.config);
    header.at("meta").get_to(t.meta);
    for (std::size_t i = 1; i < records.size(); ++i) {
      const auto& j = records[i].value;
      const auto type = j.value("type", "");
      if (type == "iteration") {
        t.iterations.push_back(j.get<IterationRecord>());
      } else if (type == "result") {
        AttackResult r;
        r.success = j.at("success").get<bool>();
        r.stop_reason = stop_reason_from_string(j.at("stop_reason").get<std::string>());
        r.iterations_used = j.at("iterations_used").get<std::size_t>();
        if (!j.at("final_prompt").is_null()) r.final_prompt = j.at("final_prompt").get<Candidate>();
        r.trace = t.iterations;
        t.result = std::move(r);
        if (j.contains("detectability")) {
          const auto& d = j.at("detectability");
          t.detectability = FinalPromptDetectability{d.at("perplexity").get<double>(), d.at("gibberish").get<bool>(),
                                                     d.at("perplexity_model").get<std::string>()};
        }
      } else {
        throw Error(ErrorCode::ParseError, "line " + std::to_string(records[i].line_number) + ": unknown record type");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
  return t;
}

/// The whole trace as one string; two runs are reproducible iff these compare equal.
inline std::string serialize_trace(const AttackConfig& config, const RunMeta& meta, const AttackResult& result) {
  std::ostringstream out;
  out << nlohmann::json{{"type", "header"}, {"schema_version", kTraceSchemaVersion}, {"config", config}, {"meta", meta}}.dump()
      << '\n';
  for (const auto& rec : result.trace) {
    nlohmann::json j = rec;
    j["type"] = "iteration";
    out << j.dump() << '\n';
  }
  out << result_record(result, std::nullopt).dump() << '\n';
  return out.str();
}

}  // namespace conceptprobe
