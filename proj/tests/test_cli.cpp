#include <cstdio>
#include <fstream>
#include <sys/wait.h>

#include <gtest/gtest.h>

#include "support.hpp"

namespace {

namespace fs = std::filesystem;

struct Outcome {
  int exit_code = -1;
  std::string output;  ///< stdout and stderr interleaved
};

Outcome run(const std::string& args, const std::string& env = {}) {
  const std::string cmd = env + (env.empty() ? "" : " ") + "'" CONCEPTPROBE_CLI "' " + args + " 2>&1";
  Outcome o;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (pipe == nullptr) return o;
  char buf[4096];
  std::size_t n = 0;
  while ((n = std::fread(buf, 1, sizeof(buf), pipe)) > 0) o.output.append(buf, n);
  const int status = ::pclose(pipe);
  o.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return o;
}

std::string samples(const std::string& name) { return (fs::path(CONCEPTPROBE_TEST_DIR).parent_path() / "samples" / name).string(); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::size_t count(const std::string& hay, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = hay.find(needle); pos != std::string::npos; pos = hay.find(needle, pos + 1)) ++n;
  return n;
}

}  // namespace

TEST(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(run("--help").exit_code, 0);
  EXPECT_NE(run("attack --no-such-flag").exit_code, 0);
  EXPECT_NE(run("").exit_code, 0);
}

TEST(Cli, SimReportsEverySeedAndExitsZero) {
  const auto o = run("sim");
  EXPECT_EQ(o.exit_code, 0) << o.output;
  EXPECT_EQ(count(o.output, "\nseed "), 20u) << o.output;
  EXPECT_EQ(o.output.find("FAIL"), std::string::npos);
}

TEST(Cli, SimScenarioFile) {
  const auto o = run("sim " + samples("scenario.toml"));
  EXPECT_EQ(o.exit_code, 0) << o.output;
  EXPECT_EQ(count(o.output, "\nseed "), 5u) << o.output;
}

TEST(Cli, BuildVocabWarnsWhenKExceedsVocabulary) {
  cptest::TempDir tmp("cli-vocab");
  const auto out = tmp.path() / "v.jsonl";
  const auto o = run("build-vocab --simulator --pairs " + samples("pairs.jsonl") + " --k 100000 -o " + out.string());
  EXPECT_EQ(o.exit_code, 0) << o.output;
  EXPECT_NE(o.output.find("exceeds"), std::string::npos) << o.output;
  ASSERT_TRUE(fs::exists(out));
  const auto small = run("build-vocab --simulator --pairs " + samples("pairs.jsonl") + " --k 5 -o " + out.string());
  EXPECT_EQ(small.exit_code, 0) << small.output;
  EXPECT_EQ(small.output.find("exceeds"), std::string::npos);
}

TEST(Cli, AttackIsDeterministicUnderSeed) {
  cptest::TempDir a("cli-a"), b("cli-b");
  const std::string common = "attack --simulator --seed 11 --format json --id run1 --out ";
  const auto oa = run(common + a.path().string());
  const auto ob = run(common + b.path().string());
  ASSERT_EQ(oa.exit_code, 0) << oa.output;
  ASSERT_EQ(ob.exit_code, 0) << ob.output;
  const auto ta = a.path() / "traces" / conceptprobe::trace_file_name("run1");
  const auto tb = b.path() / "traces" / conceptprobe::trace_file_name("run1");
  ASSERT_TRUE(fs::exists(ta));
  EXPECT_EQ(slurp(ta), slurp(tb));
  EXPECT_TRUE(conceptprobe::load_trace(ta).result->success);
}

TEST(Cli, UnsuccessfulAttackStillCompletes) {
  cptest::TempDir tmp("cli-ng");
  const auto o = run("attack --simulator --no-guidance --seed 3 --id ng --out " + tmp.path().string());
  EXPECT_EQ(o.exit_code, 0) << o.output;
  const auto t = conceptprobe::load_trace(tmp.path() / "traces" / conceptprobe::trace_file_name("ng"));
  ASSERT_TRUE(t.result);
  EXPECT_FALSE(t.result->success);
  EXPECT_EQ(t.result->stop_reason, conceptprobe::StopReason::MaxIterations);
  EXPECT_EQ(t.result->iterations_used, 10u);
}

TEST(Cli, BatchThenReportRecomputesIdentically) {
  cptest::TempDir tmp("cli-batch");
  const auto b = run("batch " + samples("prompts.jsonl") + " --config " + samples("sim.toml") + " --format json --out " +
                     tmp.path().string());
  ASSERT_EQ(b.exit_code, 0) << b.output;
  const auto saved = slurp(tmp.path() / "report.json");
  ASSERT_FALSE(saved.empty());
  const auto r = run("report " + tmp.path().string() + " --format json --label guided");
  ASSERT_EQ(r.exit_code, 0) << r.output;
  EXPECT_EQ(r.output, saved);

  // a second batch invocation resumes and changes nothing
  const auto again = run("batch " + samples("prompts.jsonl") + " --config " + samples("sim.toml") + " --format json --out " +
                         tmp.path().string());
  ASSERT_EQ(again.exit_code, 0) << again.output;
  EXPECT_EQ(slurp(tmp.path() / "report.json"), saved);
}

TEST(Cli, ConfigErrorsExitTwo) {
  cptest::TempDir tmp("cli-cfg");
  const auto bad = tmp.path() / "bad.toml";
  std::ofstream(bad) << "[attack]\nbogus = 1\n";
  EXPECT_EQ(run("attack --config " + bad.string()).exit_code, 2);
  const auto o = run("attack --config " + samples("endpoints.toml") + " --prompt x --out " + tmp.path().string(),
                     "env -u CHAT_API_KEY");
  EXPECT_EQ(o.exit_code, 2) << o.output;
  EXPECT_NE(o.output.find("CHAT_API_KEY"), std::string::npos);
  EXPECT_EQ(run("attack --simulator --thresholds 1,2").exit_code, 2);
}

TEST(Cli, UnreachableEndpointExitsThree) {
  cptest::TempDir tmp("cli-net");
  const auto cfg = tmp.path() / "net.toml";
  std::ofstream f(cfg);
  f << "[attack]\nconcept = \"c\"\n[vocab]\nk = 3\n";
  for (const char* n : {"generator", "target", "detector", "alignment", "aesthetic"})
    f << "[endpoints." << n << "]\nurl = \"http://127.0.0.1:1/x\"\nretries = 0\ntimeout_s = 2\n";
  f.close();
  const auto o = run("attack --no-guidance --config " + cfg.string() + " --prompt hello --out " + tmp.path().string());
  EXPECT_EQ(o.exit_code, 3) << o.output;
}

TEST(Cli, SecretsNeverReachOutputs) {
  cptest::TempDir tmp("cli-secret");
  const auto cfg = tmp.path() / "auth.toml";
  {
    std::ofstream f(cfg);
    f << "[attack]\nconcept = \"c\"\n";
    for (const char* n : {"generator", "target", "detector", "alignment", "aesthetic"})
      f << "[endpoints." << n << "]\nurl = \"http://127.0.0.1:1/x\"\napi_key_env = \"CP_TEST_KEY\"\nretries = 0\n";
  }
  const auto o = run("attack --no-guidance --config " + cfg.string() + " --prompt hello --id s --out " + (tmp.path() / "o").string(),
                     "CP_TEST_KEY=sk-do-not-log");
  EXPECT_EQ(o.exit_code, 3) << o.output;
  EXPECT_EQ(o.output.find("sk-do-not-log"), std::string::npos);
  const auto trace = tmp.path() / "o" / "traces" / conceptprobe::trace_file_name("s");
  ASSERT_TRUE(fs::exists(trace));
  const auto text = slurp(trace);
  EXPECT_EQ(text.find("sk-do-not-log"), std::string::npos);
  EXPECT_EQ(text.find("CP_TEST_KEY"), std::string::npos);
}
