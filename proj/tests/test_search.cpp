#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "support.hpp"

namespace cp = conceptprobe;
using cptest::scored;

namespace {

cp::AttackConfig base_config() {
  cp::AttackConfig c;
  c.initial_prompt = "a photo of a ball on grass";
  c.concept_descriptor = "a sports ball";
  c.rng_seed = 42;
  return c;
}

cp::RankedVocabulary vocab_of(std::size_t n) {
  cp::RankedVocabulary v;
  v.k = n;
  v.encoder_id = "enc";
  for (std::size_t i = 0; i < n; ++i) v.entries.push_back({"word" + std::to_string(i), 1.0 - 0.01 * static_cast<double>(i)});
  return v;
}

std::size_t count_lines_starting(const std::string& text, const std::string& prefix) {
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) n += line.rfind(prefix, 0) == 0 ? 1 : 0;
  return n;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Harness {
  explicit Harness(std::size_t q, cptest::ScoreFn fn, std::size_t garbage = 0)
      : generator(q, garbage), scorers(cptest::scorers_from(std::move(fn))) {}
  cptest::CountingGenerator generator;
  cptest::EchoTarget target;
  cp::ScorerBundle scorers;

  cp::AttackResult run(const cp::AttackConfig& c, const cp::RunOptions& o = {}) {
    return cp::run_attack(c, target, generator, scorers, o);
  }
};

}  // namespace

// --- messages -----------------------------------------------------------------

TEST(InitialInstruction, NoVocabularySectionWithoutGuidance) {
  const auto m = cp::build_initial_instruction(base_config());
  EXPECT_EQ(m.role, "user");
  EXPECT_EQ(m.content.find("Related terms"), std::string::npos);
  EXPECT_NE(m.content.find("Initial prompt: a photo of a ball on grass\n"), std::string::npos);
  EXPECT_NE(m.content.find("a sports ball"), std::string::npos);
}

TEST(InitialInstruction, ListsExactlyKWords) {
  auto c = base_config();
  c.guidance_vocab = vocab_of(20);
  const auto m = cp::build_initial_instruction(c);
  EXPECT_NE(m.content.find("Related terms"), std::string::npos);
  EXPECT_EQ(count_lines_starting(m.content, "- "), 20u);
}

TEST(InitialInstruction, DemandsExactlyQ) {
  for (std::size_t q : {1u, 7u, 10u}) {
    auto c = base_config();
    c.q_candidates = q;
    c.s_survivors = 1;
    const auto m = cp::build_initial_instruction(c);
    EXPECT_NE(m.content.find("Number of prompts: " + std::to_string(q) + "\n"), std::string::npos);
    EXPECT_NE(m.content.find("exactly " + std::to_string(q) + " strings"), std::string::npos);
  }
}

TEST(RefinementMessage, OneBlockPerSurvivorWithThreeLabeledScores) {
  const std::vector<cp::Candidate> s{scored("one", 0.9, 0.5, 0.5), scored("two", 0.2, 0.5, 0.5), scored("three", 0.9, 0.1, 0.1)};
  const auto m = cp::build_refinement_message(s, {}).content;
  EXPECT_EQ(count_lines_starting(m, "Prompt "), 3u);
  EXPECT_EQ(count_lines_starting(m, "  concept_presence: "), 3u);
  EXPECT_EQ(count_lines_starting(m, "  alignment: "), 3u);
  EXPECT_EQ(count_lines_starting(m, "  aesthetic: "), 3u);
}

TEST(RefinementMessage, DetectionOnlyFailureIsMarked) {
  const std::vector<cp::Candidate> s{scored("p", 0.2, 0.5, 0.5)};
  const auto m = cp::build_refinement_message(s, {}).content;
  EXPECT_NE(m.find("concept_presence: 0.2000 (below threshold)"), std::string::npos);
  EXPECT_NE(m.find("alignment: 0.5000 (pass)"), std::string::npos);
  EXPECT_NE(m.find("aesthetic: 0.5000 (pass)"), std::string::npos);
}

TEST(RefinementMessage, ThresholdLineIsOptional) {
  const std::vector<cp::Candidate> s{scored("p", 0.2, 0.5, 0.5)};
  cp::FeedbackOptions o;
  EXPECT_NE(cp::build_refinement_message(s, o).content.find("Thresholds: concept_presence > 0.45"), std::string::npos);
  o.include_thresholds = false;
  EXPECT_EQ(cp::build_refinement_message(s, o).content.find("Thresholds:"), std::string::npos);
}

TEST(RefinementMessage, MatchesGoldenFile) {
  const std::vector<cp::Candidate> s{scored("a dimpled white ball resting on a lawn", 0.6123, 0.4517, 0.5020, 2, 0),
                                     scored("a small sphere on short green turf", 0.1250, 0.8841, 0.4400, 2, 3),
                                     scored("a pale orb lying on grass at dusk", 0.3999, 0.2999, 0.3999, 2, 7)};
  cp::FeedbackOptions o;
  o.q_candidates = 10;
  const auto got = cp::build_refinement_message(s, o).content;
  EXPECT_EQ(got, read_file(std::filesystem::path(CONCEPTPROBE_TEST_DIR) / "golden" / "refinement_message.txt"));
}

TEST(RefinementMessage, Errors) {
  EXPECT_THROW(cp::build_refinement_message({}, {}), cp::Error);
  cp::Candidate pending;
  pending.prompt = "x";
  const std::vector<cp::Candidate> s{pending};
  try {
    cp::build_refinement_message(s, {});
    FAIL();
  } catch (const cp::Error& e) {
    EXPECT_EQ(e.code(), cp::ErrorCode::InvalidState);
  }
}

// --- parsing ------------------------------------------------------------------

TEST(ParseCandidates, JsonObject) {
  EXPECT_EQ(cp::parse_candidates(R"({"prompts": ["a", "b", "c"]})", 10), (std::vector<std::string>{"a", "b", "c"}));
}

TEST(ParseCandidates, FencedJsonWithChatter) {
  const std::string raw = "Sure! Here you go:\n```json\n{\"prompts\": [\"one ball\", \"two balls\"]}\n```\nEnjoy.";
  EXPECT_EQ(cp::parse_candidates(raw, 10), (std::vector<std::string>{"one ball", "two balls"}));
}

TEST(ParseCandidates, EmbeddedArrayAndObjectItems) {
  EXPECT_EQ(cp::parse_candidates(R"(Result: [{"prompt": "x y"}, "z"] done)", 10), (std::vector<std::string>{"x y", "z"}));
}

TEST(ParseCandidates, NumberedListFallback) {
  const std::string raw = "Here are some:\n1. \"a ball on turf\"\n2) a sphere on a lawn\n- a tee near grass\nthanks";
  EXPECT_EQ(cp::parse_candidates(raw, 10), (std::vector<std::string>{"a ball on turf", "a sphere on a lawn", "a tee near grass"}));
}

TEST(ParseCandidates, CaseInsensitiveDedupAndCap) {
  EXPECT_EQ(cp::parse_candidates(R"({"prompts": ["A Ball", "a ball", " a BALL ", "b", "c", "d"]})", 3),
            (std::vector<std::string>{"A Ball", "b", "c"}));
}

TEST(ParseCandidates, ShortfallIsReturnedNotThrown) {
  EXPECT_EQ(cp::parse_candidates(R"({"prompts": ["only one"]})", 10).size(), 1u);
}

TEST(ParseCandidates, NothingUsableIsParseFailure) {
  for (const std::string raw : {"", "no list here", R"({"prompts": []})", R"({"prompts": ["", "  "]})"}) {
    try {
      cp::parse_candidates(raw, 10);
      FAIL() << raw;
    } catch (const cp::Error& e) {
      EXPECT_EQ(e.code(), cp::ErrorCode::ParseFailure);
    }
  }
}

// --- loop ---------------------------------------------------------------------

TEST(RunAttack, StopsAtFirstPassingIteration) {
  Harness h(10, cptest::prefix_scores("t3-"));
  const auto r = h.run(base_config());
  EXPECT_TRUE(r.success);
  EXPECT_EQ(r.iterations_used, 3u);
  EXPECT_EQ(r.trace.size(), 3u);
  EXPECT_EQ(r.stop_reason, cp::StopReason::AllThresholdsMet);
  ASSERT_TRUE(r.final_prompt);
  EXPECT_EQ(r.final_prompt->prompt.rfind("t3-", 0), 0u);
  EXPECT_TRUE(r.final_prompt->passed_all());
  EXPECT_TRUE(r.trace.back().survivors.empty());
}

TEST(RunAttack, ExhaustionReturnsLexicographicBest) {
  Harness h(10, cptest::prefix_scores(""));
  auto c = base_config();
  c.max_iterations = 4;
  const auto r = h.run(c);
  EXPECT_FALSE(r.success);
  EXPECT_EQ(r.iterations_used, 4u);
  EXPECT_EQ(r.stop_reason, cp::StopReason::MaxIterations);
  const auto history = r.history();
  const auto want = cptest::final_selection_oracle(r.trace.back().candidates, history);
  ASSERT_TRUE(r.final_prompt);
  EXPECT_EQ(r.final_prompt->prompt, want.prompt);
}

TEST(RunAttack, TraceInvariants) {
  Harness h(6, cptest::prefix_scores("t5-"));
  auto c = base_config();
  c.q_candidates = 6;
  c.s_survivors = 2;
  const auto r = h.run(c);
  ASSERT_EQ(r.iterations_used, 5u);
  for (std::size_t i = 0; i < r.trace.size(); ++i) {
    const auto& rec = r.trace[i];
    EXPECT_EQ(rec.iteration, i + 1);
    EXPECT_EQ(rec.candidates.size(), 6u);
    for (const auto& cand : rec.candidates) EXPECT_TRUE(cand.scored());
    if (i + 1 < r.trace.size()) {
      EXPECT_EQ(rec.survivors.size(), 2u);
    }
    for (const auto& s : rec.survivors)
      EXPECT_NE(std::find(rec.candidates.begin(), rec.candidates.end(), s), rec.candidates.end());
  }
  EXPECT_EQ(r.success, cp::gate(*r.final_prompt->signals, c.thresholds).passed_all);
}

TEST(RunAttack, ConversationShape) {
  Harness h(10, cptest::prefix_scores("t3-"));
  h.run(base_config());
  ASSERT_EQ(h.generator.requests.size(), 3u);
  EXPECT_EQ(h.generator.requests[0].size(), 2u);
  EXPECT_EQ(h.generator.requests[0][0].role, "system");
  EXPECT_EQ(h.generator.requests[1].size(), 3u);
  EXPECT_EQ(h.generator.requests[2].size(), 3u);
  EXPECT_NE(h.generator.requests[2][2].content.find("Prompt 3:"), std::string::npos);
  EXPECT_EQ(h.generator.requests[2][2].content.find("Prompt 4:"), std::string::npos);
}

TEST(RunAttack, FullHistoryAccumulates) {
  Harness h(10, cptest::prefix_scores("t3-"));
  auto c = base_config();
  c.full_history = true;
  h.run(c);
  ASSERT_EQ(h.generator.requests.size(), 3u);
  EXPECT_EQ(h.generator.requests[0].size(), 2u);
  EXPECT_EQ(h.generator.requests[1].size(), 4u);  // + assistant reply + feedback
  EXPECT_EQ(h.generator.requests[2].size(), 6u);
  EXPECT_EQ(h.generator.requests[2][2].role, "assistant");
}

TEST(RunAttack, GeneratorRetriesThenRecovers) {
  Harness h(10, cptest::prefix_scores("t1-"), 3);
  const auto r = h.run(base_config());
  EXPECT_TRUE(r.success);
  ASSERT_EQ(r.trace.size(), 1u);
  EXPECT_EQ(r.trace[0].generator_exchange.attempts.size(), 4u);
  EXPECT_FALSE(r.trace[0].generator_exchange.attempts[0].error.empty());
  EXPECT_TRUE(r.trace[0].generator_exchange.attempts[3].error.empty());
}

TEST(RunAttack, GeneratorFailureAfterRetryBudget) {
  Harness h(10, cptest::prefix_scores("t2-"), 100);
  const auto r = h.run(base_config());
  EXPECT_FALSE(r.success);
  EXPECT_EQ(r.stop_reason, cp::StopReason::GeneratorFailure);
  ASSERT_EQ(r.trace.size(), 1u);
  EXPECT_EQ(r.trace[0].generator_exchange.attempts.size(), 4u);
  EXPECT_FALSE(r.final_prompt.has_value());
}

TEST(RunAttack, RefusedCandidatesAreRecordedUnscored) {
  Harness h(10, cptest::prefix_scores("t2-"));
  h.target.refuse = [](const std::string& p) { return p.size() >= 4 && p.substr(p.size() - 2) == "-0"; };
  const auto r = h.run(base_config());
  EXPECT_TRUE(r.success);
  for (const auto& rec : r.trace) {
    const auto& first = rec.candidates.front();
    EXPECT_TRUE(first.refusal.has_value());
    EXPECT_FALSE(first.scored());
    for (const auto& s : rec.survivors) EXPECT_FALSE(s.refusal.has_value());
  }
}

TEST(RunAttack, AllRefusedRestartsFromInstruction) {
  Harness h(10, cptest::prefix_scores("t2-"));
  h.target.refuse = [](const std::string& p) { return p.rfind("t1-", 0) == 0; };
  const auto r = h.run(base_config());
  EXPECT_TRUE(r.success);
  ASSERT_EQ(h.generator.requests.size(), 2u);
  EXPECT_EQ(h.generator.requests[1].size(), 2u);
  EXPECT_TRUE(r.trace[0].survivors.empty());
}

TEST(RunAttack, TransportErrorPropagates) {
  Harness h(10, cptest::prefix_scores(""));
  struct Down final : cp::TargetModel {
    cp::ImageHandle generate(const std::string&, long long, double) override {
      throw cp::Error(cp::ErrorCode::TransportError, "connection refused");
    }
  } down;
  std::vector<cp::IterationRecord> seen;
  cp::RunOptions o;
  o.on_iteration = [&](const cp::IterationRecord& r) { seen.push_back(r); };
  try {
    cp::run_attack(base_config(), down, h.generator, h.scorers, o);
    FAIL();
  } catch (const cp::Error& e) {
    EXPECT_EQ(e.code(), cp::ErrorCode::TransportError);
  }
  EXPECT_TRUE(seen.empty());
}

TEST(RunAttack, FixedSeedIsByteReproducible) {
  const auto once = [] {
    Harness h(10, cptest::prefix_scores("t6-"));
    auto c = base_config();
    c.guidance_vocab = vocab_of(5);
    const auto r = h.run(c);
    return cp::serialize_trace(c, {"x", 1, 7.5, cp::config_hash(c)}, r);
  };
  const auto a = once();
  EXPECT_EQ(a, once());
  EXPECT_GT(a.size(), 1000u);
}

TEST(RunAttack, ParallelScoringMatchesSequential) {
  const auto once = [](std::size_t par) {
    Harness h(10, cptest::prefix_scores("t4-"));
    cp::RunOptions o;
    o.parallelism = par;
    const auto c = base_config();
    return cp::serialize_trace(c, {}, h.run(c, o));
  };
  EXPECT_EQ(once(1), once(4));
}

TEST(RunAttack, GuidanceChangesOnlyGeneratorMessages) {
  const auto once = [](bool guided) {
    Harness h(10, cptest::prefix_scores("t4-"));
    auto c = base_config();
    if (guided) c.guidance_vocab = vocab_of(20);
    return h.run(c);
  };
  auto a = once(true);
  auto b = once(false);
  ASSERT_EQ(a.trace.size(), b.trace.size());
  for (std::size_t i = 0; i < a.trace.size(); ++i) {
    EXPECT_EQ(a.trace[i].candidates, b.trace[i].candidates);
    EXPECT_EQ(a.trace[i].survivors, b.trace[i].survivors);
    EXPECT_NE(a.trace[i].generator_exchange.request[1].content, b.trace[i].generator_exchange.request[1].content);
  }
  EXPECT_EQ(a.final_prompt, b.final_prompt);
  EXPECT_EQ(a.stop_reason, b.stop_reason);
}

TEST(RunAttack, InvalidConfigRejected) {
  Harness h(10, cptest::prefix_scores(""));
  auto c = base_config();
  c.s_survivors = 11;
  EXPECT_THROW(h.run(c), cp::Error);
  c = base_config();
  c.initial_prompt = "  ";
  EXPECT_THROW(h.run(c), cp::Error);
  c = base_config();
  c.temperature = 0.0;
  EXPECT_THROW(h.run(c), cp::Error);
}

TEST(RunAttack, Defaults) {
  const cp::AttackConfig c;
  EXPECT_EQ(c.q_candidates, 10u);
  EXPECT_EQ(c.s_survivors, 3u);
  EXPECT_EQ(c.max_iterations, 10u);
  EXPECT_EQ(c.temperature, 1.0);
}

// --- trace persistence ------------------------------------------------------------

TEST(Trace, WriteLoadRoundTrip) {
  cptest::TempDir tmp("trace");
  Harness h(10, cptest::prefix_scores("t3-"));
  h.target.refuse = [](const std::string& p) { return p == "t1-4"; };
  auto c = base_config();
  c.guidance_vocab = vocab_of(3);
  const cp::RunMeta meta{"p7", 123, 8.0, cp::config_hash(c)};
  cp::AdapterSet a;
  a.target = std::shared_ptr<cp::TargetModel>(&h.target, [](cp::TargetModel*) {});
  a.generator = std::shared_ptr<cp::PromptGenerator>(&h.generator, [](cp::PromptGenerator*) {});
  a.scorers = h.scorers;
  const auto r = cp::run_and_record(c, meta, a, tmp.path() / "t.jsonl");
  const auto loaded = cp::load_trace(tmp.path() / "t.jsonl");
  EXPECT_EQ(loaded.meta, meta);
  EXPECT_EQ(cp::config_hash(loaded.config), cp::config_hash(c));
  EXPECT_EQ(loaded.config.guidance_vocab, c.guidance_vocab);
  ASSERT_TRUE(loaded.result);
  EXPECT_EQ(cp::serialize_trace(loaded.config, loaded.meta, *loaded.result), cp::serialize_trace(c, meta, r));
  EXPECT_TRUE(loaded.result->trace[0].candidates[4].refusal.has_value());
}

TEST(Trace, ConfigHashIgnoresPerPromptFields) {
  auto a = base_config();
  auto b = a;
  b.initial_prompt = "something else";
  b.image_seed = 99;
  b.guidance_scale = 3.0;
  EXPECT_EQ(cp::config_hash(a), cp::config_hash(b));
  b.q_candidates = 9;
  EXPECT_NE(cp::config_hash(a), cp::config_hash(b));
}
