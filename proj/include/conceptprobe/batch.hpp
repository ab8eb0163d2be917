#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "conceptprobe/adapters.hpp"
#include "conceptprobe/detail/parallel.hpp"
#include "conceptprobe/embedding_io.hpp"
#include "conceptprobe/eval.hpp"
#include "conceptprobe/search.hpp"
#include "conceptprobe/trace_io.hpp"

namespace conceptprobe {

struct PromptRecord {
  std::string id;
  std::string prompt;
  long long seed = 0;
  double guidance_scale = 7.5;
};

inline std::vector<PromptRecord> load_prompt_dataset(const std::filesystem::path& path) {
  std::vector<PromptRecord> out;
  std::set<std::string> seen;
  for (const auto& rec : detail::read_jsonl(path)) {
    const auto where = path.string() + ":" + std::to_string(rec.line_number);
    try {
      PromptRecord p;
      const auto& j = rec.value;
      p.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
      p.prompt = j.at("prompt").get<std::string>();
      p.seed = j.at("seed").get<long long>();
      p.guidance_scale = j.at("guidance_scale").get<double>();
      if (p.id.empty()) throw Error(ErrorCode::ParseError, where + ": empty id");
      if (!seen.insert(p.id).second) throw Error(ErrorCode::ParseError, where + ": duplicate id '" + p.id + "'");
      out.push_back(std::move(p));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::ParseError, where + ": " + e.what());
    }
  }
  return out;
}

/// Per-run configuration: dataset prompt, seed and guidance scale override the base.
inline AttackConfig config_for(const AttackConfig& base, const PromptRecord& p) {
  AttackConfig c = base;
  c.initial_prompt = p.prompt;
  c.image_seed = p.seed;
  c.guidance_scale = p.guidance_scale;
  return c;
}

inline RunMeta meta_for(const AttackConfig& config, const PromptRecord& p) {
  return RunMeta{p.id, p.seed, p.guidance_scale, config_hash(config)};
}

inline std::string trace_file_name(const std::string& id) {
  std::string name;
  for (unsigned char ch : id) name += (std::isalnum(ch) || ch == '-' || ch == '_' || ch == '.') ? static_cast<char>(ch) : '_';
  if (name.empty() || name.front() == '.') name.insert(name.begin(), '_');
  return name + "-" + detail::hex64(detail::fnv1a64(id)).substr(0, 8) + ".jsonl";
}

/// Runs one attack and persists its trace. Detectability of the final prompt is stored when the
/// adapters provide an LM and a gibberish detector.
inline AttackResult run_and_record(const AttackConfig& config, const RunMeta& meta, const AdapterSet& adapters,
                                   const std::filesystem::path& trace_path, const RunOptions& options = {}) {
  TraceWriter writer(trace_path);
  writer.write_header(config, meta);
  RunOptions opts = options;
  opts.on_iteration = [&](const IterationRecord& rec) {
    writer.write_iteration(rec);
    if (options.on_iteration) options.on_iteration(rec);
  };
  auto result = run_attack(config, *adapters.target, *adapters.generator, adapters.scorers, opts);
  std::optional<FinalPromptDetectability> d;
  if (result.final_prompt && adapters.perplexity && adapters.gibberish) {
    d = FinalPromptDetectability{adapters.perplexity->mean_perplexity(result.final_prompt->prompt),
                                 adapters.gibberish->is_gibberish(result.final_prompt->prompt),
                                 adapters.perplexity->model_name()};
  }
  writer.write_result(result, d);
  return result;
}

struct BatchOptions {
  std::filesystem::path out_dir = "runs";
  std::size_t parallel = 1;            ///< concurrent runs
  std::size_t candidate_parallel = 1;  ///< concurrent candidates inside each run
  std::function<void(const std::string&)> log;
};

/// Builds adapters for one dataset record; called once per run so stateful adapters stay per-run.
using AdapterFactory = std::function<AdapterSet(const PromptRecord&)>;

inline constexpr const char* kManifestName = "manifest.jsonl";
inline constexpr const char* kTraceDirName = "traces";

inline std::set<std::string> load_manifest(const std::filesystem::path& out_dir) {
  std::set<std::string> done;
  const auto path = out_dir / kManifestName;
  if (!std::filesystem::exists(path)) return done;
  for (const auto& rec : detail::read_jsonl(path)) done.insert(rec.value.at("id").get<std::string>());
  return done;
}

/// Loads every completed trace under `out_dir`, ordered by prompt id. Metrics computed from this
/// are identical whether the runs just finished or were produced by an earlier invocation.
inline RunSet load_run_set(const std::filesystem::path& out_dir) {
  RunSet set;
  const auto dir = std::filesystem::is_directory(out_dir / kTraceDirName) ? out_dir / kTraceDirName : out_dir;
  if (!std::filesystem::is_directory(dir)) throw Error(ErrorCode::IoError, "not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".jsonl" && e.path().filename() != kManifestName) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    auto t = load_trace(f);
    if (!t.result) {
      set.errors.push_back(t.meta.prompt_id + ": incomplete trace " + f.filename().string());
      continue;
    }
    set.runs.push_back(RunRecord{t.meta, t.config, std::move(*t.result), t.detectability});
  }
  std::stable_sort(set.runs.begin(), set.runs.end(),
                   [](const RunRecord& a, const RunRecord& b) { return a.meta.prompt_id < b.meta.prompt_id; });
  std::sort(set.errors.begin(), set.errors.end());
  return set;
}

struct BatchOutcome {
  RunSet runs;
  std::size_t executed = 0;
  std::size_t skipped = 0;                ///< already in the manifest
  std::vector<std::string> failures;      ///< "id: message" for runs that aborted in this invocation
};

/// Runs every dataset record not yet listed in the manifest. A failing run is recorded and the
/// batch continues; configuration and IO errors abort the batch.
inline BatchOutcome run_batch(std::span<const PromptRecord> prompts, const AttackConfig& base, const AdapterFactory& factory,
                              const BatchOptions& options) {
  base.validate();
  const auto trace_dir = options.out_dir / kTraceDirName;
  std::filesystem::create_directories(trace_dir);
  const auto done = load_manifest(options.out_dir);

  std::vector<const PromptRecord*> todo;
  BatchOutcome outcome;
  for (const auto& p : prompts) {
    if (done.count(p.id) && std::filesystem::exists(trace_dir / trace_file_name(p.id))) {
      ++outcome.skipped;
    } else {
      todo.push_back(&p);
    }
  }

  std::mutex mu;
  std::ofstream manifest(options.out_dir / kManifestName, std::ios::app);
  if (!manifest) throw Error(ErrorCode::IoError, "cannot open manifest in " + options.out_dir.string());
  detail::parallel_for(todo.size(), options.parallel, [&](std::size_t i) {
    const auto& p = *todo[i];
    const auto config = config_for(base, p);
    const auto meta = meta_for(config, p);
    const auto file = trace_file_name(p.id);
    try {
      const auto adapters = factory(p);
      RunOptions ro;
      ro.parallelism = options.candidate_parallel;
      const auto result = run_and_record(config, meta, adapters, trace_dir / file, ro);
      std::lock_guard lock(mu);
      manifest << nlohmann::json{{"id", p.id}, {"trace", std::string(kTraceDirName) + "/" + file}}.dump() << '\n';
      manifest.flush();
      ++outcome.executed;
      if (options.log)
        options.log(p.id + ": " + std::string(to_string(result.stop_reason)) + " after " + std::to_string(result.iterations_used) + " iteration(s)");
    } catch (const Error& e) {
      if (e.code() == ErrorCode::ConfigError || e.code() == ErrorCode::IoError) throw;
      std::lock_guard lock(mu);
      outcome.failures.push_back(p.id + ": " + e.what());
      if (options.log) options.log(p.id + ": failed (" + std::string(to_string(e.code())) + "): " + e.what());
    }
  });

  outcome.runs = load_run_set(options.out_dir);
  std::sort(outcome.failures.begin(), outcome.failures.end());
  return outcome;
}

}  // namespace conceptprobe
