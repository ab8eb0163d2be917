#pragma once

#include <chrono>
#include <filesystem>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "conceptprobe/config.hpp"
#include "conceptprobe/embedding.hpp"
#include "conceptprobe/embedding_io.hpp"
#include "conceptprobe/search.hpp"
#include "conceptprobe/sim_world.hpp"

namespace conceptprobe::sim {

struct Scenario {
  std::vector<std::uint64_t> seeds;
  std::size_t q = 10;
  std::size_t s = 3;
  std::size_t max_iterations = 10;
  std::size_t k = 20;
  double temperature = 1.0;
  Thresholds thresholds;
  std::filesystem::path word_list;  ///< empty for the bundled list

  static Scenario bundled() {
    Scenario sc;
    for (std::uint64_t i = 1; i <= 20; ++i) sc.seeds.push_back(i);
    return sc;
  }
};

/// Reads a `[scenario]` table; missing keys keep the bundled values.
inline Scenario load_scenario(const std::filesystem::path& path) {
  const auto root = config::load_toml(path);
  config::detail::reject_unknown(root, "<root>", {"scenario"});
  const auto& t = config::detail::section(root, "scenario");
  config::detail::reject_unknown(t, "scenario", {"seeds", "q", "s", "max_iterations", "k", "temperature", "thresholds", "word_list"});
  using config::detail::get;
  Scenario sc = Scenario::bundled();
  if (t.contains("seeds")) sc.seeds = get<std::vector<std::uint64_t>>(t, "seeds", "scenario", {});
  sc.q = get<std::size_t>(t, "q", "scenario", sc.q);
  sc.s = get<std::size_t>(t, "s", "scenario", sc.s);
  sc.max_iterations = get<std::size_t>(t, "max_iterations", "scenario", sc.max_iterations);
  sc.k = get<std::size_t>(t, "k", "scenario", sc.k);
  sc.temperature = get<double>(t, "temperature", "scenario", sc.temperature);
  if (t.contains("thresholds")) sc.thresholds = config::parse_thresholds(get<std::string>(t, "thresholds", "scenario", ""));
  sc.word_list = get<std::string>(t, "word_list", "scenario", "");
  if (sc.seeds.empty()) throw Error(ErrorCode::ConfigError, "scenario.seeds is empty");
  return sc;
}

struct SeedOutcome {
  std::uint64_t seed = 0;
  bool guided_success = false;
  std::size_t guided_iterations = 0;
  bool unguided_success = false;
  std::size_t unguided_iterations = 0;
  std::string guided_prompt;
};

struct PropertyCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct ScenarioReport {
  RankedVocabulary vocab;
  std::vector<SeedOutcome> seeds;
  std::vector<PropertyCheck> checks;
  std::size_t closure_size = 0;
  double seconds = 0.0;

  bool all_passed() const {
    for (const auto& c : checks)
      if (!c.passed) return false;
    return true;
  }
};

inline AttackConfig scenario_attack_config(const SimWorld& world, const Scenario& sc, std::uint64_t seed) {
  AttackConfig c;
  c.initial_prompt = world.initial_prompt;
  c.concept_descriptor = world.concept_descriptor;
  c.q_candidates = sc.q;
  c.s_survivors = sc.s;
  c.max_iterations = sc.max_iterations;
  c.temperature = sc.temperature;
  c.thresholds = sc.thresholds;
  c.rng_seed = seed;
  c.image_seed = static_cast<long long>(seed);
  return c;
}

inline RankedVocabulary build_world_vocabulary(const SimWorld& world, EmbeddingProvider& embedding, std::size_t k,
                                               const WarningSink& warn = {}) {
  const auto pairs = embed_pairs(embedding, world.concept_pairs);
  const auto dir = concept_direction(pairs, embedding.encoder_id());
  return rank_vocabulary(dir, world.word_vectors, k, warn);
}

/// Runs the whole pipeline in the simulator and checks the end-to-end properties:
/// suppressed words are invisible to the detector, every trigger word alone activates it, the
/// triggers reach the top-k, no prompt reachable without guidance passes every gate, and per
/// seed the guided attack succeeds within the iteration cap using no more iterations than the
/// unguided one.
inline ScenarioReport run_scenario(std::shared_ptr<const SimWorld> world, const Scenario& sc) {
  const auto start = std::chrono::steady_clock::now();
  ScenarioReport rep;
  auto probe = make_adapters(world, 0);
  rep.vocab = build_world_vocabulary(*world, *probe.embedding, sc.k);

  const auto signals_of = [&](const std::string& prompt) {
    const auto h = probe.target->generate(prompt, 0, 7.5);
    return RewardSignals{probe.scorers.detector->score(h), probe.scorers.alignment->score(world->initial_prompt, h),
                         probe.scorers.aesthetic->score(h)};
  };

  {
    PropertyCheck c{"suppressed terms score 0", true, ""};
    for (const auto& t : world->suppressed_terms) {
      const double d = signals_of("a " + t + " " + world->filler_phrase).detection;
      if (d != 0.0) {
        c.passed = false;
        c.detail += t + "=" + detail::format_number(d, 4) + " ";
      }
    }
    if (c.passed) c.detail = std::to_string(world->suppressed_terms.size()) + " term(s)";
    rep.checks.push_back(c);
  }
  {
    PropertyCheck c{"trigger terms exceed tau_det", true, ""};
    double lowest = 1.0;
    for (const auto& t : world->trigger_terms) {
      const double d = signals_of("a " + t + " " + world->filler_phrase).detection;
      lowest = std::min(lowest, d);
      if (!(d > sc.thresholds.tau_det)) {
        c.passed = false;
        c.detail += t + " ";
      }
    }
    if (c.passed) c.detail = "lowest " + detail::format_number(lowest, 4);
    rep.checks.push_back(c);
  }
  {
    PropertyCheck c{"trigger terms in top-k", true, ""};
    const auto words = rep.vocab.words();
    for (const auto& t : world->trigger_terms) {
      if (std::find(words.begin(), words.end(), t) == words.end()) {
        c.passed = false;
        c.detail += t + " ";
      }
    }
    if (c.passed) c.detail = std::to_string(world->trigger_terms.size()) + " of " + std::to_string(words.size());
    rep.checks.push_back(c);
  }
  {
    ScriptedPromptGenerator gen(world->synonym_classes, 0);
    const auto closure = gen.synonym_closure(world->initial_prompt);
    rep.closure_size = closure.size();
    std::size_t passers = 0;
    for (const auto& p : closure) passers += gate(signals_of(p), sc.thresholds).passed_all ? 1 : 0;
    rep.checks.push_back({"no unguided prompt passes", passers == 0,
                          std::to_string(passers) + " of " + std::to_string(closure.size()) + " reachable prompts pass"});
  }

  for (const auto seed : sc.seeds) {
    SeedOutcome o;
    o.seed = seed;
    for (const bool guided : {true, false}) {
      auto adapters = make_adapters(world, seed);
      auto cfg = scenario_attack_config(*world, sc, seed);
      if (guided) cfg.guidance_vocab = rep.vocab;
      const auto r = run_attack(cfg, *adapters.target, *adapters.generator, adapters.scorers);
      if (guided) {
        o.guided_success = r.success;
        o.guided_iterations = r.iterations_used;
        if (r.final_prompt) o.guided_prompt = r.final_prompt->prompt;
      } else {
        o.unguided_success = r.success;
        o.unguided_iterations = r.iterations_used;
      }
    }
    rep.seeds.push_back(o);
  }

  std::size_t succeeded = 0;
  std::size_t not_worse = 0;
  for (const auto& o : rep.seeds) {
    succeeded += o.guided_success ? 1 : 0;
    not_worse += o.guided_success && o.guided_iterations <= o.unguided_iterations ? 1 : 0;
  }
  const auto n = std::to_string(rep.seeds.size());
  rep.checks.push_back({"guided attack succeeds within I", succeeded == rep.seeds.size(), std::to_string(succeeded) + " of " + n});
  rep.checks.push_back({"guidance <= no-guidance iterations", not_worse == rep.seeds.size(), std::to_string(not_worse) + " of " + n});
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rep;
}

inline void print_scenario(std::ostream& out, const ScenarioReport& rep) {
  out << "top-" << rep.vocab.k << " words:";
  for (const auto& e : rep.vocab.entries) out << ' ' << e.word;
  out << "\n\n";
  for (const auto& o : rep.seeds) {
    const bool ok = o.guided_success && o.guided_iterations <= o.unguided_iterations;
    out << "seed " << o.seed << ": guidance " << o.guided_iterations << (o.guided_success ? " (success)" : " (no success)")
        << " <= no-guidance " << o.unguided_iterations << (o.unguided_success ? " (success)" : " (no success)") << " iterations: "
        << (ok ? "PASS" : "FAIL") << "\n";
  }
  out << "\n";
  for (const auto& c : rep.checks) out << (c.passed ? "PASS " : "FAIL ") << c.name << " (" << c.detail << ")\n";
  out << (rep.all_passed() ? "all properties hold" : "some properties failed") << " in " << detail::format_number(rep.seconds, 2)
      << " s\n";
}

}  // namespace conceptprobe::sim
