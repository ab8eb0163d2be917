#pragma once

#include <algorithm>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "conceptprobe/adapters.hpp"
#include "conceptprobe/detail/text.hpp"
#include "conceptprobe/search.hpp"
#include "conceptprobe/trace_io.hpp"

namespace conceptprobe {

struct RunRecord {
  RunMeta meta;
  AttackConfig config;
  AttackResult result;
  std::optional<FinalPromptDetectability> detectability;
};

struct RunSet {
  std::vector<RunRecord> runs;
  /// "prompt_id: message" for runs that aborted; they are not part of any metric.
  std::vector<std::string> errors;

  void validate() const {
    for (const auto& r : runs) {
      if (r.meta.config_hash != runs.front().meta.config_hash)
        throw Error(ErrorCode::InvalidInput, "run set mixes configurations (" + runs.front().meta.config_hash + " vs " +
                                                 r.meta.config_hash + " for '" + r.meta.prompt_id + "')");
    }
  }
};

enum class AsrMode { DetectorOnly, AllThresholds };
enum class DetectorScope { AnyCandidate, FinalOnly };
enum class Censoring { SuccessOnly, CensoredAtMax };
enum class ScoreSubset { All, Success };

/// Iteration at which a run first qualified under `mode`, if it ever did.
inline std::optional<std::size_t> qualifying_iteration(const RunRecord& run, AsrMode mode,
                                                       DetectorScope scope = DetectorScope::AnyCandidate) {
  const auto& r = run.result;
  if (mode == AsrMode::AllThresholds) {
    if (r.success) return r.iterations_used;
    return std::nullopt;
  }
  if (scope == DetectorScope::FinalOnly) {
    if (r.final_prompt && r.final_prompt->scored() && r.final_prompt->flags.detection) return r.iterations_used;
    return std::nullopt;
  }
  for (const auto& rec : r.trace) {
    for (const auto& c : rec.candidates) {
      if (c.scored() && c.flags.detection) return rec.iteration;
    }
  }
  return std::nullopt;
}

inline double compute_asr(const RunSet& runs, AsrMode mode, DetectorScope scope = DetectorScope::AnyCandidate) {
  if (runs.runs.empty()) throw Error(ErrorCode::EmptySet, "ASR over an empty run set");
  std::size_t hits = 0;
  for (const auto& r : runs.runs) hits += qualifying_iteration(r, mode, scope) ? 1 : 0;
  return 100.0 * static_cast<double>(hits) / static_cast<double>(runs.runs.size());
}

/// SuccessOnly averages over qualifying runs; CensoredAtMax also counts each other run at its iteration cap.
inline double avg_iterations(const RunSet& runs, AsrMode mode, Censoring censoring,
                             DetectorScope scope = DetectorScope::AnyCandidate) {
  if (runs.runs.empty()) throw Error(ErrorCode::EmptySet, "average iterations over an empty run set");
  double total = 0.0;
  std::size_t counted = 0;
  for (const auto& r : runs.runs) {
    if (const auto it = qualifying_iteration(r, mode, scope)) {
      total += static_cast<double>(*it);
      ++counted;
    } else if (censoring == Censoring::CensoredAtMax) {
      total += static_cast<double>(r.config.max_iterations);
      ++counted;
    }
  }
  if (counted == 0) throw Error(ErrorCode::NoQualifyingRuns, "no run qualifies for the success-only average");
  return total / static_cast<double>(counted);
}

struct ScoreMeans {
  double aesthetic = 0.0;
  double alignment = 0.0;
};

/// Means of the final candidate's aesthetic and alignment scores.
inline ScoreMeans mean_scores(const RunSet& runs, ScoreSubset subset) {
  double aes = 0.0;
  double align = 0.0;
  std::size_t n = 0;
  for (const auto& r : runs.runs) {
    if (subset == ScoreSubset::Success && !r.result.success) continue;
    if (!r.result.final_prompt || !r.result.final_prompt->scored()) continue;
    aes += r.result.final_prompt->signals->aesthetic;
    align += r.result.final_prompt->signals->alignment;
    ++n;
  }
  if (n == 0) throw Error(ErrorCode::NoQualifyingRuns, "no runs in the requested score subset");
  return {aes / static_cast<double>(n), align / static_cast<double>(n)};
}

struct DetectabilityResult {
  double gdr = 0.0;  ///< percent flagged as gibberish
  double mean_perplexity = 0.0;
  std::vector<FinalPromptDetectability> per_prompt;
};

inline DetectabilityResult detectability(std::span<const std::string> prompts, PerplexityLM& lm, GibberishDetector& gibberish) {
  if (prompts.empty()) throw Error(ErrorCode::EmptySet, "detectability over no prompts");
  DetectabilityResult out;
  std::size_t flagged = 0;
  double ppl = 0.0;
  for (const auto& p : prompts) {
    FinalPromptDetectability d{lm.mean_perplexity(p), gibberish.is_gibberish(p), lm.model_name()};
    flagged += d.gibberish ? 1 : 0;
    ppl += d.perplexity;
    out.per_prompt.push_back(std::move(d));
  }
  out.gdr = 100.0 * static_cast<double>(flagged) / static_cast<double>(prompts.size());
  out.mean_perplexity = ppl / static_cast<double>(prompts.size());
  return out;
}

/// Distinct guidance words present in `prompt` (case-insensitive, whole words).
inline std::size_t count_guidance_words(const std::string& prompt, std::span<const std::string> words) {
  std::vector<std::string> distinct;
  for (const auto& w : words) {
    const auto lw = detail::to_lower(w);
    if (std::find(distinct.begin(), distinct.end(), lw) != distinct.end()) continue;
    if (detail::contains_whole_word(prompt, lw)) distinct.push_back(lw);
  }
  return distinct.size();
}

inline double eg_word_usage(std::span<const std::string> final_prompts, const RankedVocabulary& vocab) {
  if (final_prompts.empty()) throw Error(ErrorCode::EmptySet, "word usage over no prompts");
  const auto words = vocab.words();
  double total = 0.0;
  for (const auto& p : final_prompts) total += static_cast<double>(count_guidance_words(p, words));
  return total / static_cast<double>(final_prompts.size());
}

inline std::vector<std::string> final_prompts(const RunSet& runs) {
  std::vector<std::string> out;
  for (const auto& r : runs.runs) {
    if (r.result.final_prompt) out.push_back(r.result.final_prompt->prompt);
  }
  return out;
}

inline double eg_word_usage(const RunSet& runs, const RankedVocabulary& vocab) {
  return eg_word_usage(final_prompts(runs), vocab);
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

inline constexpr int kReportSchemaVersion = 1;

struct IterationStats {
  std::optional<double> success_only;
  std::optional<double> censored_at_max;

  friend bool operator==(const IterationStats&, const IterationStats&) = default;
};

struct MetricsReport {
  std::string label;
  std::size_t runs = 0;
  std::size_t errored = 0;
  double asr_detector = 0.0;
  double asr_all = 0.0;
  IterationStats avg_iter_detector;
  IterationStats avg_iter_all;
  std::optional<double> mean_aesthetic_all;
  std::optional<double> mean_aesthetic_success;
  std::optional<double> mean_alignment_all;
  std::optional<double> mean_alignment_success;
  std::optional<double> gdr;
  std::optional<double> mean_perplexity;
  std::string perplexity_model;
  std::optional<double> eg_word_usage;

  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

struct ReportOptions {
  std::string label = "attack";
  DetectorScope detector_scope = DetectorScope::AnyCandidate;
  /// Vocabulary for word-usage counting; defaults to the runs' own guidance vocabulary.
  std::optional<RankedVocabulary> vocab;
};

namespace detail {

template <typename Fn>
std::optional<double> metric_or_empty(Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    if (e.code() == ErrorCode::NoQualifyingRuns || e.code() == ErrorCode::EmptySet) return std::nullopt;
    throw;
  }
}

}  // namespace detail

inline MetricsReport build_report(const RunSet& runs, const ReportOptions& opts = {}) {
  runs.validate();
  MetricsReport m;
  m.label = opts.label;
  m.runs = runs.runs.size();
  m.errored = runs.errors.size();
  if (runs.runs.empty()) return m;
  const auto scope = opts.detector_scope;
  m.asr_detector = compute_asr(runs, AsrMode::DetectorOnly, scope);
  m.asr_all = compute_asr(runs, AsrMode::AllThresholds);
  for (auto [mode, stats] : {std::pair{AsrMode::DetectorOnly, &m.avg_iter_detector}, std::pair{AsrMode::AllThresholds, &m.avg_iter_all}}) {
    stats->success_only = detail::metric_or_empty([&] { return avg_iterations(runs, mode, Censoring::SuccessOnly, scope); });
    stats->censored_at_max = detail::metric_or_empty([&] { return avg_iterations(runs, mode, Censoring::CensoredAtMax, scope); });
  }
  if (auto all = detail::metric_or_empty([&] { return mean_scores(runs, ScoreSubset::All).aesthetic; })) {
    m.mean_aesthetic_all = all;
    m.mean_alignment_all = mean_scores(runs, ScoreSubset::All).alignment;
  }
  if (auto ok = detail::metric_or_empty([&] { return mean_scores(runs, ScoreSubset::Success).aesthetic; })) {
    m.mean_aesthetic_success = ok;
    m.mean_alignment_success = mean_scores(runs, ScoreSubset::Success).alignment;
  }

  std::size_t measured = 0;
  std::size_t flagged = 0;
  double ppl = 0.0;
  for (const auto& r : runs.runs) {
    if (!r.detectability) continue;
    ++measured;
    flagged += r.detectability->gibberish ? 1 : 0;
    ppl += r.detectability->perplexity;
    m.perplexity_model = r.detectability->perplexity_model;
  }
  if (measured > 0) {
    m.gdr = 100.0 * static_cast<double>(flagged) / static_cast<double>(measured);
    m.mean_perplexity = ppl / static_cast<double>(measured);
  }

  const auto& vocab = opts.vocab ? opts.vocab : runs.runs.front().config.guidance_vocab;
  if (vocab) m.eg_word_usage = detail::metric_or_empty([&] { return eg_word_usage(runs, *vocab); });
  return m;
}

enum class ReportFormat { Table, Json };

namespace detail {

inline nlohmann::ordered_json opt_json(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

inline std::optional<double> opt_from(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

inline std::string cell(const std::optional<double>& v, int decimals = 2) {
  return v ? format_number(*v, decimals) : std::string("--");
}

inline std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s + " " : s + std::string(width - s.size(), ' ');
}

inline std::string table_row(const std::vector<std::string>& cells, const std::vector<std::size_t>& widths) {
  std::string line;
  for (std::size_t i = 0; i < cells.size(); ++i) line += pad(cells[i], widths[i]);
  while (!line.empty() && line.back() == ' ') line.pop_back();
  return line + "\n";
}

}  // namespace detail

inline nlohmann::ordered_json report_json(const MetricsReport& m) {
  using detail::opt_json;
  nlohmann::ordered_json j;
  j["schema_version"] = kReportSchemaVersion;
  j["label"] = m.label;
  j["runs"] = m.runs;
  j["errored"] = m.errored;
  j["asr"] = {{"detector", m.asr_detector}, {"all", m.asr_all}};
  j["avg_iter"] = {
      {"detector", {{"success_only", opt_json(m.avg_iter_detector.success_only)}, {"censored_at_max", opt_json(m.avg_iter_detector.censored_at_max)}}},
      {"all", {{"success_only", opt_json(m.avg_iter_all.success_only)}, {"censored_at_max", opt_json(m.avg_iter_all.censored_at_max)}}}};
  j["scores"] = {
      {"aesthetic", {{"all", opt_json(m.mean_aesthetic_all)}, {"success", opt_json(m.mean_aesthetic_success)}}},
      {"alignment", {{"all", opt_json(m.mean_alignment_all)}, {"success", opt_json(m.mean_alignment_success)}}}};
  j["detectability"] = {{"gdr", opt_json(m.gdr)}, {"mean_perplexity", opt_json(m.mean_perplexity)}, {"perplexity_model", m.perplexity_model}};
  j["eg_word_usage"] = opt_json(m.eg_word_usage);
  return j;
}

inline MetricsReport parse_report_json(const std::string& text) {
  using detail::opt_from;
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.at("schema_version").get<int>() != kReportSchemaVersion)
      throw Error(ErrorCode::ParseError, "unsupported report schema version");
    MetricsReport m;
    m.label = j.at("label").get<std::string>();
    m.runs = j.at("runs").get<std::size_t>();
    m.errored = j.at("errored").get<std::size_t>();
    m.asr_detector = j.at("asr").at("detector").get<double>();
    m.asr_all = j.at("asr").at("all").get<double>();
    const auto& it = j.at("avg_iter");
    m.avg_iter_detector = {opt_from(it.at("detector").at("success_only")), opt_from(it.at("detector").at("censored_at_max"))};
    m.avg_iter_all = {opt_from(it.at("all").at("success_only")), opt_from(it.at("all").at("censored_at_max"))};
    const auto& sc = j.at("scores");
    m.mean_aesthetic_all = opt_from(sc.at("aesthetic").at("all"));
    m.mean_aesthetic_success = opt_from(sc.at("aesthetic").at("success"));
    m.mean_alignment_all = opt_from(sc.at("alignment").at("all"));
    m.mean_alignment_success = opt_from(sc.at("alignment").at("success"));
    const auto& d = j.at("detectability");
    m.gdr = opt_from(d.at("gdr"));
    m.mean_perplexity = opt_from(d.at("mean_perplexity"));
    m.perplexity_model = d.at("perplexity_model").get<std::string>();
    m.eg_word_usage = opt_from(j.at("eg_word_usage"));
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("report: ") + e.what());
  }
}

/// Renders one or more reports; several rows share a table so ablations line up.
inline std::string render_report(std::span<const MetricsReport> reports, ReportFormat format) {
  if (format == ReportFormat::Json) {
    if (reports.size() == 1) return report_json(reports.front()).dump(2) + "\n";
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& m : reports) arr.push_back(report_json(m));
    return arr.dump(2) + "\n";
  }

  using detail::cell;
  using detail::table_row;
  std::size_t label_width = 8;
  for (const auto& m : reports) label_width = std::max(label_width, m.label.size() + 2);
  const std::size_t c = 11;

  std::ostringstream out;
  out << "conceptprobe report (schema " << kReportSchemaVersion << ")\n\n";

  const std::vector<std::size_t> w5{label_width, 6, 8, c, c, c, c};
  out << table_row({"", "Runs", "Errored", "ASR (%)", "", "Avg Iter", ""}, w5);
  out << table_row({"Method", "", "", "Detector", "All", "Detector", "All"}, w5);
  for (const auto& m : reports)
    out << table_row({m.label, std::to_string(m.runs), std::to_string(m.errored), detail::format_number(m.asr_detector),
                      detail::format_number(m.asr_all), cell(m.avg_iter_detector.censored_at_max),
                      cell(m.avg_iter_all.censored_at_max)},
                     w5);
  out << "(Avg Iter counts runs that never qualified at their iteration cap)\n\n";

  const std::vector<std::size_t> w4{label_width, c, c};
  out << table_row({"", "Avg Iter (successful runs only)", ""}, {label_width, 0, 0});
  out << table_row({"Method", "Detector", "All"}, w4);
  for (const auto& m : reports)
    out << table_row({m.label, cell(m.avg_iter_detector.success_only), cell(m.avg_iter_all.success_only)}, w4);
  out << "\n";

  const std::vector<std::size_t> ws{label_width, c, c, c, c};
  out << table_row({"", "Aesthetic", "", "Alignment", ""}, ws);
  out << table_row({"Method", "All", "Success", "All", "Success"}, ws);
  for (const auto& m : reports)
    out << table_row({m.label, cell(m.mean_aesthetic_all, 4), cell(m.mean_aesthetic_success, 4),
                      cell(m.mean_alignment_all, 4), cell(m.mean_alignment_success, 4)},
                     ws);
  out << "\n";

  const std::vector<std::size_t> wd{label_width, c, 18, c};
  out << table_row({"Method", "GDR (%)", "Mean Perplexity", "EG Words"}, wd);
  for (const auto& m : reports)
    out << table_row({m.label, cell(m.gdr), cell(m.mean_perplexity), cell(m.eg_word_usage)}, wd);
  for (const auto& m : reports) {
    if (!m.perplexity_model.empty()) {
      out << "(perplexity model: " << m.perplexity_model << ")\n";
      break;
    }
  }
  return out.str();
}

inline std::string render_report(const MetricsReport& report, ReportFormat format) {
  return render_report(std::span<const MetricsReport>(&report, 1), format);
}

}  // namespace conceptprobe
