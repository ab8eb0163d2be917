// conceptprobe: command-line front end for vocabulary building, attacks, batches and reports.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "conceptprobe/conceptprobe.hpp"

namespace cp = conceptprobe;
namespace fs = std::filesystem;

namespace {

enum Exit : int { kOk = 0, kFailed = 1, kConfig = 2, kTransport = 3, kGenerator = 4 };

int exit_code_for(cp::ErrorCode code) {
  switch (code) {
    case cp::ErrorCode::TransportError:
    case cp::ErrorCode::ProviderRefusal:
    case cp::ErrorCode::ProviderContractViolation:
      return kTransport;
    case cp::ErrorCode::GeneratorFailure:
    case cp::ErrorCode::ParseFailure:
      return kGenerator;
    case cp::ErrorCode::NoQualifyingRuns:
    case cp::ErrorCode::EmptySet:
    case cp::ErrorCode::InvalidState:
      return kFailed;
    default:
      return kConfig;
  }
}

struct CommonFlags {
  std::string config_file;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> k, q, s, max_iter, parallel;
  std::optional<double> temperature;
  std::string thresholds;
  bool no_guidance = false;
  bool simulator = false;
  std::string out;
  std::string format;
  std::string vocab;
  bool verbose = false;

  cp::config::Overrides overrides() const {
    cp::config::Overrides o;
    o.seed = seed;
    o.k = k;
    o.q = q;
    o.s = s;
    o.max_iter = max_iter;
    o.parallel = parallel;
    o.temperature = temperature;
    if (!thresholds.empty()) o.thresholds = cp::config::parse_thresholds(thresholds);
    if (no_guidance) o.no_guidance = true;
    if (simulator) o.simulator = true;
    if (!out.empty()) o.out = out;
    if (!format.empty()) o.format = cp::config::parse_format(format);
    if (!vocab.empty()) o.vocab = vocab;
    return o;
  }

  cp::config::ToolConfig resolve() const {
    std::optional<fs::path> file;
    if (!config_file.empty()) file = config_file;
    return cp::config::resolve(file, overrides());
  }
};

void add_common(CLI::App& app, CommonFlags& f) {
  app.add_option("--config", f.config_file, "TOML config file")->check(CLI::ExistingFile);
  app.add_option("--seed", f.seed, "RNG seed for survivor sampling and simulator adapters");
  app.add_option("--k", f.k, "guidance vocabulary size");
  app.add_option("--q", f.q, "candidates per iteration");
  app.add_option("--s", f.s, "survivors per iteration");
  app.add_option("--max-iter", f.max_iter, "iteration cap");
  app.add_option("--temperature", f.temperature, "softmax temperature");
  app.add_option("--thresholds", f.thresholds, "gate thresholds as det,img,aes");
  app.add_flag("--no-guidance", f.no_guidance, "omit the related-terms list from generator instructions");
  app.add_option("--parallel", f.parallel, "concurrent runs (batch) or candidates (attack)");
  app.add_option("--out", f.out, "output directory");
  app.add_option("--format", f.format, "report format")->check(CLI::IsMember({"table", "json"}));
  app.add_option("--vocab", f.vocab, "ranked vocabulary file used as guidance");
  app.add_flag("--simulator", f.simulator, "use the bundled simulator instead of HTTP endpoints");
  app.add_flag("-v,--verbose", f.verbose, "log progress to stderr");
}

std::function<void(const std::string&)> logger(bool verbose) {
  if (!verbose) return {};
  return [](const std::string& msg) { std::cerr << msg << '\n'; };
}

std::shared_ptr<const cp::sim::SimWorld> load_world(const cp::config::ToolConfig& tc) {
  return std::make_shared<const cp::sim::SimWorld>(
      tc.sim_word_list.empty() ? cp::sim::bundled_world() : cp::sim::bundled_world(tc.sim_word_list));
}

/// Guidance vocabulary per config: none when disabled, the given file, or (simulator only)
/// one built from the world's own prompt pairs.
std::optional<cp::RankedVocabulary> guidance_vocab(const cp::config::ToolConfig& tc,
                                                   const std::shared_ptr<const cp::sim::SimWorld>& world) {
  if (!tc.guidance) return std::nullopt;
  if (!tc.vocab_path.empty()) return cp::load_ranked_vocabulary(tc.vocab_path);
  if (world) {
    auto probe = cp::sim::make_adapters(world, 0);
    return cp::sim::build_world_vocabulary(*world, *probe.embedding, tc.k);
  }
  std::cerr << "note: no --vocab given; running without guidance\n";
  return std::nullopt;
}

void fill_sim_defaults(cp::AttackConfig& c, const cp::sim::SimWorld& world) {
  if (c.initial_prompt.empty()) c.initial_prompt = world.initial_prompt;
  if (c.concept_descriptor.empty()) c.concept_descriptor = world.concept_descriptor;
}

std::string default_label(const cp::RunSet& runs) {
  if (runs.runs.empty()) return "attack";
  return runs.runs.front().config.guidance_vocab ? "guided" : "unguided";
}

// --- build-vocab ------------------------------------------------------------

struct BuildVocabArgs {
  std::string pairs;
  std::string words;
  std::string embedding_table;
  std::string output = "vocab.jsonl";
};

int cmd_build_vocab(const CommonFlags& flags, const BuildVocabArgs& args) {
  const auto tc = flags.resolve();
  const auto warn = [](const std::string& msg) { std::cerr << "warning: " << msg << '\n'; };

  std::shared_ptr<cp::EmbeddingProvider> provider;
  std::shared_ptr<const cp::sim::SimWorld> world;
  if (tc.simulator) {
    world = load_world(tc);
    provider = std::make_shared<cp::sim::SimEmbeddingProvider>(world);
  } else {
    const auto it = tc.endpoints.find("embedding");
    if (it == tc.endpoints.end()) throw cp::Error(cp::ErrorCode::ConfigError, "build-vocab needs [endpoints.embedding] or --simulator");
    provider = std::make_shared<cp::http::HttpEmbeddingProvider>(it->second);
  }

  std::vector<cp::PromptPair> pairs;
  if (!args.pairs.empty()) pairs = cp::load_prompt_pairs(args.pairs);
  else if (world) pairs = world->concept_pairs;
  else throw cp::Error(cp::ErrorCode::ConfigError, "--pairs is required");

  cp::VocabularyTable table;
  if (!args.embedding_table.empty()) {
    table = cp::load_embedding_table(args.embedding_table);
  } else {
    const fs::path words = args.words.empty() ? fs::path(cp::sim::kDefaultWordList) : fs::path(args.words);
    table = cp::load_embedding_table(*provider, cp::load_word_list(words), 64, tc.parallel);
  }

  const auto embedded = cp::embed_pairs(*provider, pairs);
  const auto direction = cp::concept_direction(embedded, provider->encoder_id());
  const auto ranked = cp::rank_vocabulary(direction, table, tc.k, warn);
  const fs::path out = args.output;
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  cp::write_ranked_vocabulary(out, ranked);
  std::cout << "wrote " << ranked.entries.size() << " words (encoder " << ranked.encoder_id << ", " << ranked.pair_count
            << " pairs) to " << out.string() << '\n';
  for (const auto& e : ranked.entries) std::cout << "  " << e.word << "  " << cp::detail::format_number(e.similarity, 4) << '\n';
  return kOk;
}

// --- attack -------------------------------------------------------------------

struct AttackArgs {
  std::string prompt;
  std::string concept_text;
  std::string id = "attack";
};

nlohmann::ordered_json summary_json(const cp::AttackResult& r, const fs::path& trace) {
  nlohmann::ordered_json j;
  j["success"] = r.success;
  j["stop_reason"] = std::string(cp::to_string(r.stop_reason));
  j["iterations_used"] = r.iterations_used;
  if (r.final_prompt) {
    j["final_prompt"] = r.final_prompt->prompt;
    if (r.final_prompt->signals)
      j["scores"] = {{"detection", r.final_prompt->signals->detection},
                     {"alignment", r.final_prompt->signals->alignment},
                     {"aesthetic", r.final_prompt->signals->aesthetic}};
  } else {
    j["final_prompt"] = nullptr;
  }
  j["trace"] = trace.string();
  return j;
}

int cmd_attack(const CommonFlags& flags, const AttackArgs& args) {
  auto tc = flags.resolve();
  auto cfg = tc.attack;
  if (!args.prompt.empty()) cfg.initial_prompt = args.prompt;
  if (!args.concept_text.empty()) cfg.concept_descriptor = args.concept_text;

  std::shared_ptr<const cp::sim::SimWorld> world;
  cp::AdapterSet adapters;
  if (tc.simulator) {
    world = load_world(tc);
    fill_sim_defaults(cfg, *world);
    adapters = cp::sim::make_adapters(world, tc.sim_generator_seed ^ cfg.rng_seed);
  } else {
    adapters = cp::http::make_http_adapters(tc.endpoints);
  }
  cfg.guidance_vocab = guidance_vocab(tc, world);
  if (cfg.initial_prompt.empty()) throw cp::Error(cp::ErrorCode::ConfigError, "no initial prompt (use --prompt)");
  cfg.validate();

  const auto trace = tc.out_dir / cp::kTraceDirName / cp::trace_file_name(args.id);
  fs::create_directories(trace.parent_path());
  const cp::RunMeta meta{args.id, cfg.image_seed, cfg.guidance_scale, cp::config_hash(cfg)};
  cp::RunOptions ro;
  ro.parallelism = tc.parallel;
  ro.log = logger(flags.verbose);
  const auto result = cp::run_and_record(cfg, meta, adapters, trace, ro);

  if (tc.format == cp::ReportFormat::Json) {
    std::cout << summary_json(result, trace).dump(2) << '\n';
  } else {
    std::cout << "success:         " << (result.success ? "yes" : "no") << '\n'
              << "stop reason:     " << cp::to_string(result.stop_reason) << '\n'
              << "iterations used: " << result.iterations_used << '\n';
    if (result.final_prompt) {
      std::cout << "final prompt:    " << result.final_prompt->prompt << '\n';
      if (const auto& s = result.final_prompt->signals)
        std::cout << "scores:          detection " << cp::detail::format_number(s->detection, 4) << ", alignment "
                  << cp::detail::format_number(s->alignment, 4) << ", aesthetic " << cp::detail::format_number(s->aesthetic, 4)
                  << '\n';
    }
    std::cout << "trace:           " << trace.string() << '\n';
  }
  return result.stop_reason == cp::StopReason::GeneratorFailure ? kGenerator : kOk;
}

// --- batch / report -------------------------------------------------------------

fs::path report_path(const fs::path& out_dir, cp::ReportFormat f) {
  return out_dir / (f == cp::ReportFormat::Json ? "report.json" : "report.txt");
}

int cmd_batch(const CommonFlags& flags, const std::string& prompts_file) {
  const auto tc = flags.resolve();
  auto base = tc.attack;
  std::shared_ptr<const cp::sim::SimWorld> world;
  if (tc.simulator) {
    world = load_world(tc);
    fill_sim_defaults(base, *world);
  } else {
    cp::http::make_http_adapters(tc.endpoints);  // fail fast on a bad endpoint section
  }
  base.guidance_vocab = guidance_vocab(tc, world);
  const auto prompts = cp::load_prompt_dataset(prompts_file);
  if (prompts.empty()) throw cp::Error(cp::ErrorCode::ConfigError, prompts_file + " has no prompts");
  base.initial_prompt = prompts.front().prompt;
  base.validate();

  cp::AdapterFactory factory;
  if (world) {
    factory = [&](const cp::PromptRecord& p) {
      return cp::sim::make_adapters(world, tc.sim_generator_seed ^ base.rng_seed ^ cp::detail::fnv1a64(p.id));
    };
  } else {
    factory = [&](const cp::PromptRecord&) { return cp::http::make_http_adapters(tc.endpoints); };
  }

  cp::BatchOptions bo;
  bo.out_dir = tc.out_dir;
  bo.parallel = tc.parallel;
  bo.candidate_parallel = tc.candidate_parallel;
  bo.log = logger(flags.verbose);
  const auto outcome = cp::run_batch(prompts, base, factory, bo);
  for (const auto& f : outcome.failures) std::cerr << "run failed: " << f << '\n';

  cp::ReportOptions ro;
  ro.label = default_label(outcome.runs);
  ro.detector_scope = tc.detector_scope;
  const auto report = cp::render_report(cp::build_report(outcome.runs, ro), tc.format);
  std::ofstream(report_path(tc.out_dir, tc.format)) << report;
  std::cout << report;
  std::cerr << outcome.executed << " run(s) executed, " << outcome.skipped << " resumed from manifest, "
            << outcome.failures.size() << " failed\n";
  if (outcome.runs.runs.empty() && !outcome.failures.empty()) return kTransport;
  return kOk;
}

struct ReportArgs {
  std::vector<std::string> dirs;
  std::vector<std::string> labels;
  std::string scope = "any_candidate";
};

int cmd_report(const CommonFlags& flags, const ReportArgs& args) {
  cp::ReportFormat format = cp::ReportFormat::Table;
  const auto env = cp::config::overrides_from_env();
  if (env.format) format = *env.format;
  if (!flags.format.empty()) format = cp::config::parse_format(flags.format);
  if (!args.labels.empty() && args.labels.size() != args.dirs.size())
    throw cp::Error(cp::ErrorCode::ConfigError, "give one --label per trace directory");

  std::optional<cp::RankedVocabulary> vocab;
  if (!flags.vocab.empty()) vocab = cp::load_ranked_vocabulary(flags.vocab);
  std::vector<cp::MetricsReport> reports;
  for (std::size_t i = 0; i < args.dirs.size(); ++i) {
    const auto runs = cp::load_run_set(args.dirs[i]);
    cp::ReportOptions ro;
    ro.label = args.labels.empty() ? default_label(runs) : args.labels[i];
    ro.detector_scope = args.scope == "final_only" ? cp::DetectorScope::FinalOnly : cp::DetectorScope::AnyCandidate;
    ro.vocab = vocab;
    reports.push_back(cp::build_report(runs, ro));
  }
  std::cout << cp::render_report(reports, format);
  return kOk;
}

// --- sim ------------------------------------------------------------------------

int cmd_sim(const CommonFlags& flags, const std::string& scenario_file) {
  auto sc = scenario_file.empty() ? cp::sim::Scenario::bundled() : cp::sim::load_scenario(scenario_file);
  const auto ov = flags.overrides();
  if (ov.q) sc.q = *ov.q;
  if (ov.s) sc.s = *ov.s;
  if (ov.max_iter) sc.max_iterations = *ov.max_iter;
  if (ov.k) sc.k = *ov.k;
  if (ov.temperature) sc.temperature = *ov.temperature;
  if (ov.thresholds) sc.thresholds = *ov.thresholds;
  if (ov.seed) sc.seeds = {*ov.seed};
  const auto world = std::make_shared<const cp::sim::SimWorld>(
      sc.word_list.empty() ? cp::sim::bundled_world() : cp::sim::bundled_world(sc.word_list));
  const auto rep = cp::sim::run_scenario(world, sc);
  cp::sim::print_scenario(std::cout, rep);
  return rep.all_passed() ? kOk : kFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Embedding-guided prompt search against black-box image generators, with an evaluation harness"};
  app.require_subcommand(1);
  CommonFlags flags;

  auto* vocab_cmd = app.add_subcommand("build-vocab", "rank a word list by similarity to a concept direction");
  BuildVocabArgs bv;
  add_common(*vocab_cmd, flags);
  vocab_cmd->add_option("--pairs", bv.pairs, "JSONL of {\"concept\",\"neutral\"} prompt pairs")->check(CLI::ExistingFile);
  vocab_cmd->add_option("--words", bv.words, "word list, one per line (default: bundled benign list)")->check(CLI::ExistingFile);
  vocab_cmd->add_option("--embedding-table", bv.embedding_table, "precomputed JSONL embedding table")->check(CLI::ExistingFile);
  vocab_cmd->add_option("-o,--output", bv.output, "ranked vocabulary output file");

  auto* attack_cmd = app.add_subcommand("attack", "run one attack and write its trace");
  AttackArgs aa;
  add_common(*attack_cmd, flags);
  attack_cmd->add_option("--prompt", aa.prompt, "initial prompt");
  attack_cmd->add_option("--concept", aa.concept_text, "concept description for the generator");
  attack_cmd->add_option("--id", aa.id, "run id used for the trace file name");

  auto* batch_cmd = app.add_subcommand("batch", "run one attack per dataset record and report metrics");
  std::string prompts_file;
  add_common(*batch_cmd, flags);
  batch_cmd->add_option("prompts", prompts_file, "JSONL of {\"id\",\"prompt\",\"seed\",\"guidance_scale\"}")
      ->required()
      ->check(CLI::ExistingFile);

  auto* report_cmd = app.add_subcommand("report", "recompute metrics from persisted traces");
  ReportArgs ra;
  add_common(*report_cmd, flags);
  report_cmd->add_option("dirs", ra.dirs, "batch output or trace directories, one table row each")->required();
  report_cmd->add_option("--label", ra.labels, "row label per directory");
  report_cmd->add_option("--detector-scope", ra.scope, "count detector passes over any candidate or the final one")
      ->check(CLI::IsMember({"any_candidate", "final_only"}));

  auto* sim_cmd = app.add_subcommand("sim", "run the simulator end to end and check its properties");
  std::string scenario_file;
  add_common(*sim_cmd, flags);
  sim_cmd->add_option("scenario", scenario_file, "scenario TOML file (default: bundled scenario)")->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (*vocab_cmd) return cmd_build_vocab(flags, bv);
    if (*attack_cmd) return cmd_attack(flags, aa);
    if (*batch_cmd) return cmd_batch(flags, prompts_file);
    if (*report_cmd) return cmd_report(flags, ra);
    if (*sim_cmd) return cmd_sim(flags, scenario_file);
  } catch (const cp::Error& e) {
    const int rc = exit_code_for(e.code());
    std::cerr << (rc == kTransport ? "transport error: " : "error: ") << e.what() << '\n';
    return rc;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfig;
  }
  return kFailed;
}
