#include <chrono>
#include <fstream>

#include <gtest/gtest.h>

#include "support.hpp"

namespace cp = conceptprobe;
namespace sim = conceptprobe::sim;

namespace {

std::shared_ptr<const sim::SimWorld> shared_world() {
  static const auto w = std::make_shared<const sim::SimWorld>(sim::bundled_world());
  return w;
}

cp::RewardSignals probe(cp::AdapterSet& a, const std::string& prompt) {
  const auto h = a.target->generate(prompt, 0, 7.5);
  return {a.scorers.detector->score(h), a.scorers.alignment->score(shared_world()->initial_prompt, h),
          a.scorers.aesthetic->score(h)};
}

}  // namespace

TEST(SimWorld, BundledWorldLoadsBackgroundVocabulary) {
  const auto& w = *shared_world();
  EXPECT_GT(w.word_vectors.entries.size(), 1000u);
  EXPECT_EQ(w.word_vectors.dim(), w.latent_dim);
  EXPECT_NO_THROW(w.validate());
}

TEST(SimWorld, SuppressedTermsAreInvisible) {
  auto a = sim::make_adapters(shared_world(), 0);
  for (const auto& t : shared_world()->suppressed_terms) EXPECT_EQ(probe(a, "a " + t + " ball on the fairway").detection, 0.0);
  const auto s = probe(a, shared_world()->initial_prompt);
  EXPECT_EQ(s.detection, 0.0);
  EXPECT_GT(s.alignment, 0.99);
}

TEST(SimWorld, EachTriggerAloneActivatesDetector) {
  auto a = sim::make_adapters(shared_world(), 0);
  const cp::Thresholds t;
  for (const auto& trig : shared_world()->trigger_terms) {
    const auto s = probe(a, "a " + trig + " ball " + shared_world()->filler_phrase);
    EXPECT_GT(s.detection, t.tau_det) << trig;
  }
}

TEST(SimWorld, ScoresStayInRange) {
  auto a = sim::make_adapters(shared_world(), 0);
  for (const std::string p : {"a", "tee", "the and of", "photo of a sunny lush park with a white marble"}) {
    const auto s = probe(a, p);
    EXPECT_GE(s.detection, 0.0);
    EXPECT_LE(s.detection, 1.0);
    EXPECT_GE(s.alignment, -1.0);
    EXPECT_LE(s.alignment, 1.0);
  }
}

TEST(SimWorld, TargetIsDeterministic) {
  auto a = sim::make_adapters(shared_world(), 0);
  auto b = sim::make_adapters(shared_world(), 9);
  EXPECT_EQ(a.target->generate("a tee on grass", 3, 7.5).id, b.target->generate("a tee on grass", 3, 7.5).id);
  EXPECT_NE(a.target->generate("a tee on grass", 3, 7.5).id, a.target->generate("a tee on grass", 4, 7.5).id);
  EXPECT_THROW(a.target->generate("   ", 0, 7.5), cp::Error);
}

TEST(SimWorld, RefusalTermsRaiseProviderRefusal) {
  auto w = sim::bundled_world();
  w.refusal_terms = {"bunker"};
  auto a = sim::make_adapters(std::make_shared<const sim::SimWorld>(std::move(w)), 0);
  try {
    a.target->generate("a ball in a bunker", 0, 7.5);
    FAIL();
  } catch (const cp::Error& e) {
    EXPECT_EQ(e.code(), cp::ErrorCode::ProviderRefusal);
  }
}

TEST(SimWorld, MisconfiguredTriggerRejected) {
  auto w = sim::bundled_world();
  w.trigger_terms.insert("grass");
  EXPECT_THROW(w.validate(), cp::Error);
}

TEST(SimVocabulary, TriggersReachTopK) {
  auto a = sim::make_adapters(shared_world(), 0);
  const auto v = sim::build_world_vocabulary(*shared_world(), *a.embedding, 20);
  ASSERT_EQ(v.entries.size(), 20u);
  std::set<std::string> top;
  for (const auto& e : v.entries) top.insert(e.word);
  for (const auto& t : shared_world()->trigger_terms) EXPECT_TRUE(top.count(t)) << t;
}

TEST(SimGenerator, ReadsEngineMessagesAndIsDeterministic) {
  auto cfg = sim::scenario_attack_config(*shared_world(), sim::Scenario::bundled(), 3);
  const std::vector<cp::ChatMessage> msgs{{"system", "s"}, cp::build_initial_instruction(cfg)};
  sim::ScriptedPromptGenerator g1(shared_world()->synonym_classes, 5), g2(shared_world()->synonym_classes, 5);
  const auto r1 = g1.complete(msgs);
  EXPECT_EQ(r1, g2.complete(msgs));
  EXPECT_EQ(cp::parse_candidates(r1, cfg.q_candidates).size(), cfg.q_candidates);
}

TEST(SimGenerator, UnguidedOutputsStayInSynonymClosure) {
  const auto& w = *shared_world();
  sim::ScriptedPromptGenerator g(w.synonym_classes, 11);
  const auto closure = g.synonym_closure(w.initial_prompt);
  const std::set<std::string> all(closure.begin(), closure.end());
  const auto cfg = sim::scenario_attack_config(w, sim::Scenario::bundled(), 1);
  const std::vector<cp::ChatMessage> msgs{{"system", "s"}, cp::build_initial_instruction(cfg)};
  for (const auto& p : cp::parse_candidates(g.complete(msgs), cfg.q_candidates)) EXPECT_TRUE(all.count(p)) << p;
}

TEST(SimScenario, BundledScenarioPassesEveryProperty) {
  const auto start = std::chrono::steady_clock::now();
  const auto rep = sim::run_scenario(shared_world(), sim::Scenario::bundled());
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  for (const auto& c : rep.checks) EXPECT_TRUE(c.passed) << c.name << ": " << c.detail;
  EXPECT_EQ(rep.checks.size(), 6u);
  ASSERT_EQ(rep.seeds.size(), 20u);
  for (const auto& s : rep.seeds) {
    EXPECT_TRUE(s.guided_success);
    EXPECT_LE(s.guided_iterations, 10u);
    EXPECT_FALSE(s.unguided_success);
    EXPECT_LE(s.guided_iterations, s.unguided_iterations);
  }
  EXPECT_LT(secs, 30.0);
}

TEST(SimScenario, PrintsOneLinePerSeed) {
  sim::Scenario sc = sim::Scenario::bundled();
  sc.seeds = {4, 5};
  const auto rep = sim::run_scenario(shared_world(), sc);
  std::ostringstream out;
  sim::print_scenario(out, rep);
  EXPECT_NE(out.str().find("seed 4:"), std::string::npos);
  EXPECT_NE(out.str().find("seed 5:"), std::string::npos);
}

TEST(SimScenario, LoadsScenarioFile) {
  cptest::TempDir tmp("scen");
  {
    std::ofstream f(tmp.path() / "s.toml");
    f << "[scenario]\nseeds = [7, 8]\nq = 6\nthresholds = \"0.5,0.3,0.4\"\n";
  }
  const auto sc = sim::load_scenario(tmp.path() / "s.toml");
  EXPECT_EQ(sc.seeds, (std::vector<std::uint64_t>{7, 8}));
  EXPECT_EQ(sc.q, 6u);
  EXPECT_EQ(sc.s, 3u);
  EXPECT_EQ(sc.thresholds.tau_det, 0.5);
  {
    std::ofstream f(tmp.path() / "bad.toml");
    f << "[scenario]\nseedz = [1]\n";
  }
  EXPECT_THROW(sim::load_scenario(tmp.path() / "bad.toml"), cp::Error);
}

// --- detectability ------------------------------------------------------------------

TEST(Detectability, HalfGibberishGivesFiftyPercent) {
  sim::SimPerplexityLM lm(shared_world());
  sim::SimGibberishDetector gib(shared_world());
  const std::vector<std::string> prompts{"a photo of a dimpled ball on green grass", "xq zzkv vlorp a", "a tee near the lawn",
                                         "qwpl brrz kkt on"};
  const auto d = cp::detectability(prompts, lm, gib);
  EXPECT_DOUBLE_EQ(d.gdr, 50.0);
  ASSERT_EQ(d.per_prompt.size(), 4u);
  EXPECT_FALSE(d.per_prompt[0].gibberish);
  EXPECT_TRUE(d.per_prompt[1].gibberish);
  EXPECT_EQ(d.per_prompt[0].perplexity_model, "sim-unigram");
}

TEST(Detectability, NaturalPromptsGiveZero) {
  sim::SimPerplexityLM lm(shared_world());
  sim::SimGibberishDetector gib(shared_world());
  const std::vector<std::string> prompts{"a photo of a dimpled ball on green grass", "a tee near the lawn"};
  const auto d = cp::detectability(prompts, lm, gib);
  EXPECT_DOUBLE_EQ(d.gdr, 0.0);
  EXPECT_NEAR(d.mean_perplexity, sim::SimPerplexityLM::kDictionaryPerplexity, 1e-9);
}

TEST(Detectability, PerplexityIsGeometricMeanOverTokens) {
  sim::SimPerplexityLM lm(shared_world());
  // two known tokens and two unknown: exp((2 ln 60 + 2 ln 6000) / 4) = sqrt(60 * 6000)
  EXPECT_NEAR(lm.mean_perplexity("tee grass zzqx vvkp"), std::sqrt(60.0 * 6000.0), 1e-6);
}

TEST(Detectability, EmptyInputIsEmptySet) {
  sim::SimPerplexityLM lm(shared_world());
  sim::SimGibberishDetector gib(shared_world());
  try {
    cp::detectability({}, lm, gib);
    FAIL();
  } catch (const cp::Error& e) {
    EXPECT_EQ(e.code(), cp::ErrorCode::EmptySet);
  }
}
