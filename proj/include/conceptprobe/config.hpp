#pragma once

#include <cctype>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "conceptprobe/detail/text.hpp"
#include "conceptprobe/error.hpp"
#include "conceptprobe/eval.hpp"
#include "conceptprobe/http_adapters.hpp"
#include "conceptprobe/search.hpp"

namespace conceptprobe::config {

// ---------------------------------------------------------------------------
// TOML subset: [table] and [dotted.table] headers, key = value with bare or quoted keys,
// basic and literal strings, integers, floats, booleans and (multi-line) arrays of those.
// Parsed into a JSON object tree.
// ---------------------------------------------------------------------------

namespace detail {

class TomlParser {
 public:
  TomlParser(std::string text, std::string origin) : text_(std::move(text)), origin_(std::move(origin)) {}

  nlohmann::json parse() {
    nlohmann::json root = nlohmann::json::object();
    nlohmann::json* table = &root;
    while (true) {
      skip_ws_comments_newlines();
      if (eof()) break;
      if (peek() == '[') {
        ++pos_;
        if (!eof() && peek() == '[') fail("arrays of tables are not supported");
        std::vector<std::string> path;
        while (true) {
          skip_inline_ws();
          path.push_back(parse_key());
          skip_inline_ws();
          if (peek() == '.') {
            ++pos_;
            continue;
          }
          expect(']');
          break;
        }
        table = &root;
        for (const auto& k : path) {
          auto& next = (*table)[k];
          if (next.is_null()) next = nlohmann::json::object();
          if (!next.is_object()) fail("'" + k + "' is already a value");
          table = &next;
        }
        if (!defined_tables_.insert(join(path)).second) fail("table [" + join(path) + "] defined twice");
        end_of_line();
        continue;
      }
      const auto key = parse_key();
      skip_inline_ws();
      expect('=');
      skip_inline_ws();
      if (table->contains(key)) fail("duplicate key '" + key + "'");
      (*table)[key] = parse_value();
      end_of_line();
    }
    return root;
  }

 private:
  bool eof() const { return pos_ >= text_.size(); }
  char peek() const { return eof() ? '\0' : text_[pos_]; }

  [[noreturn]] void fail(const std::string& msg) const {
    std::size_t line = 1;
    for (std::size_t i = 0; i < pos_ && i < text_.size(); ++i) line += text_[i] == '\n' ? 1 : 0;
    throw Error(ErrorCode::ConfigError, origin_ + ":" + std::to_string(line) + ": " + msg);
  }

  void expect(char c) {
    if (peek() != c) fail(std::string("expected '") + c + "'");
    ++pos_;
  }

  static std::string join(const std::vector<std::string>& parts) {
    std::string s;
    for (const auto& p : parts) s += (s.empty() ? "" : ".") + p;
    return s;
  }

  void skip_inline_ws() {
    while (!eof() && (peek() == ' ' || peek() == '\t')) ++pos_;
  }

  void skip_comment() {
    if (peek() == '#')
      while (!eof() && peek() != '\n') ++pos_;
  }

  void skip_ws_comments_newlines() {
    while (!eof()) {
      skip_inline_ws();
      skip_comment();
      if (peek() == '\r' || peek() == '\n') {
        ++pos_;
        continue;
      }
      break;
    }
  }

  void end_of_line() {
    skip_inline_ws();
    skip_comment();
    if (peek() == '\r') ++pos_;
    if (!eof() && peek() != '\n') fail("unexpected trailing characters");
  }

  std::string parse_key() {
    if (peek() == '"' || peek() == '\'') return parse_string();
    std::string key;
    while (!eof() && (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '_' || peek() == '-')) key += text_[pos_++];
    if (key.empty()) fail("expected a key");
    return key;
  }

  std::string parse_string() {
    const char quote = text_[pos_++];
    std::string out;
    while (true) {
      if (eof() || peek() == '\n') fail("unterminated string");
      const char c = text_[pos_++];
      if (c == quote) break;
      if (c == '\\' && quote == '"') {
        if (eof()) fail("unterminated escape");
        const char e = text_[pos_++];
        switch (e) {
          case 'n': out += '\n'; break;
          case 't': out += '\t'; break;
          case 'r': out += '\r'; break;
          case '"': out += '"'; break;
          case '\\': out += '\\'; break;
          default: fail(std::string("unsupported escape \\") + e);
        }
        continue;
      }
      out += c;
    }
    return out;
  }

  nlohmann::json parse_value() {
    const char c = peek();
    if (c == '"' || c == '\'') return parse_string();
    if (c == '[') return parse_array();
    if (c == '{') fail("inline tables are not supported");
    std::string tok;
    while (!eof() && !std::isspace(static_cast<unsigned char>(peek())) && peek() != ',' && peek() != ']' && peek() != '#')
      tok += text_[pos_++];
    if (tok == "true") return true;
    if (tok == "false") return false;
    std::string digits;
    for (char ch : tok)
      if (ch != '_') digits += ch;
    if (digits.empty()) fail("expected a value");
    const bool is_float = digits.find_first_of(".eE") != std::string::npos || digits == "inf" || digits == "nan";
    try {
      std::size_t used = 0;
      if (is_float) {
        const double v = std::stod(digits, &used);
        if (used == digits.size()) return v;
      } else {
        const long long v = std::stoll(digits, &used);
        if (used == digits.size()) return v;
      }
    } catch (const std::exception&) {
    }
    fail("invalid value '" + tok + "'");
  }

  nlohmann::json parse_array() {
    expect('[');
    nlohmann::json arr = nlohmann::json::array();
    while (true) {
      skip_ws_comments_newlines();
      if (peek() == ']') {
        ++pos_;
        return arr;
      }
      arr.push_back(parse_value());
      skip_ws_comments_newlines();
      if (peek() == ',') {
        ++pos_;
        continue;
      }
      expect(']');
      return arr;
    }
  }

  std::string text_;
  std::string origin_;
  std::size_t pos_ = 0;
  std::set<std::string> defined_tables_;
};

}  // namespace detail

inline nlohmann::json parse_toml(const std::string& text, const std::string& origin = "<config>") {
  return detail::TomlParser(text, origin).parse();
}

inline nlohmann::json load_toml(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ConfigError, "cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_toml(ss.str(), path.string());
}

// ---------------------------------------------------------------------------
// Tool configuration
// ---------------------------------------------------------------------------

struct ToolConfig {
  AttackConfig attack;
  bool guidance = true;
  std::size_t k = 20;
  std::string vocab_path;  ///< ranked vocabulary used as guidance
  std::filesystem::path out_dir = "runs";
  std::size_t parallel = 1;
  std::size_t candidate_parallel = 1;
  ReportFormat format = ReportFormat::Table;
  DetectorScope detector_scope = DetectorScope::AnyCandidate;
  bool simulator = false;
  std::uint64_t sim_generator_seed = 0;
  std::string sim_word_list;  ///< empty for the bundled list
  std::map<std::string, http::EndpointConfig> endpoints;
};

/// Values that may come from the environment or from flags.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> k;
  std::optional<std::size_t> q;
  std::optional<std::size_t> s;
  std::optional<std::size_t> max_iter;
  std::optional<double> temperature;
  std::optional<Thresholds> thresholds;
  std::optional<bool> no_guidance;
  std::optional<std::size_t> parallel;
  std::optional<std::string> out;
  std::optional<ReportFormat> format;
  std::optional<bool> simulator;
  std::optional<std::string> vocab;
};

inline ReportFormat parse_format(const std::string& s) {
  if (s == "table") return ReportFormat::Table;
  if (s == "json") return ReportFormat::Json;
  throw Error(ErrorCode::ConfigError, "format must be 'table' or 'json', got '" + s + "'");
}

/// "det,img,aes" as three numbers.
inline Thresholds parse_thresholds(const std::string& s) {
  std::vector<double> v;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) {
    try {
      std::size_t used = 0;
      const auto t = std::string(conceptprobe::detail::trim(part));
      v.push_back(std::stod(t, &used));
      if (used != t.size()) throw std::invalid_argument(part);
    } catch (const std::exception&) {
      throw Error(ErrorCode::ConfigError, "thresholds must be three numbers det,img,aes; got '" + s + "'");
    }
  }
  if (v.size() != 3) throw Error(ErrorCode::ConfigError, "thresholds must be three numbers det,img,aes; got '" + s + "'");
  Thresholds t{v[0], v[1], v[2]};
  try {
    t.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::ConfigError, e.what());
  }
  return t;
}

namespace detail {

inline void reject_unknown(const nlohmann::json& table, const std::string& where, std::initializer_list<const char*> known) {
  for (const auto& [key, _] : table.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) {
      if (key == "api_key" || key == "token" || key == "password")
        throw Error(ErrorCode::ConfigError, where + "." + key + ": put secrets in an environment variable and name it in api_key_env");
      throw Error(ErrorCode::ConfigError, "unknown key " + where + "." + key);
    }
  }
}

template <typename T>
T get(const nlohmann::json& table, const char* key, const std::string& where, T fallback) {
  if (!table.contains(key)) return fallback;
  try {
    if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
      const auto v = table.at(key).get<long long>();
      if (v < 0) throw Error(ErrorCode::ConfigError, where + "." + key + " must be non-negative");
      return static_cast<T>(v);
    } else if constexpr (std::is_same_v<T, double>) {
      if (!table.at(key).is_number()) throw nlohmann::json::type_error::create(302, "number expected", nullptr);
      return table.at(key).get<double>();
    } else {
      return table.at(key).get<T>();
    }
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorCode::ConfigError, where + "." + key + " has the wrong type");
  }
}

inline const nlohmann::json& section(const nlohmann::json& root, const char* name) {
  static const nlohmann::json empty = nlohmann::json::object();
  if (!root.contains(name)) return empty;
  if (!root.at(name).is_object()) throw Error(ErrorCode::ConfigError, std::string("[") + name + "] must be a table");
  return root.at(name);
}

}  // namespace detail

inline ToolConfig tool_config_from_toml(const nlohmann::json& root) {
  using detail::get;
  ToolConfig c;
  detail::reject_unknown(root, "<root>", {"attack", "vocab", "run", "simulator", "endpoints"});

  const auto& a = detail::section(root, "attack");
  detail::reject_unknown(a, "attack", {"initial_prompt", "concept", "q", "s", "max_iterations", "temperature", "seed",
                                       "image_seed", "guidance_scale", "guidance", "include_thresholds_in_feedback",
                                       "full_history", "generator_retries", "thresholds"});
  auto& ac = c.attack;
  ac.initial_prompt = get<std::string>(a, "initial_prompt", "attack", ac.initial_prompt);
  ac.concept_descriptor = get<std::string>(a, "concept", "attack", ac.concept_descriptor);
  ac.q_candidates = get<std::size_t>(a, "q", "attack", ac.q_candidates);
  ac.s_survivors = get<std::size_t>(a, "s", "attack", ac.s_survivors);
  ac.max_iterations = get<std::size_t>(a, "max_iterations", "attack", ac.max_iterations);
  ac.temperature = get<double>(a, "temperature", "attack", ac.temperature);
  ac.rng_seed = get<std::uint64_t>(a, "seed", "attack", ac.rng_seed);
  ac.image_seed = get<long long>(a, "image_seed", "attack", ac.image_seed);
  ac.guidance_scale = get<double>(a, "guidance_scale", "attack", ac.guidance_scale);
  ac.include_thresholds_in_feedback = get<bool>(a, "include_thresholds_in_feedback", "attack", ac.include_thresholds_in_feedback);
  ac.full_history = get<bool>(a, "full_history", "attack", ac.full_history);
  ac.generator_retries = get<std::size_t>(a, "generator_retries", "attack", ac.generator_retries);
  c.guidance = get<bool>(a, "guidance", "attack", c.guidance);
  if (a.contains("thresholds")) {
    const auto& t = a.at("thresholds");
    if (!t.is_object()) throw Error(ErrorCode::ConfigError, "[attack.thresholds] must be a table");
    detail::reject_unknown(t, "attack.thresholds", {"det", "img", "aes"});
    ac.thresholds.tau_det = get<double>(t, "det", "attack.thresholds", ac.thresholds.tau_det);
    ac.thresholds.tau_img = get<double>(t, "img", "attack.thresholds", ac.thresholds.tau_img);
    ac.thresholds.tau_aes = get<double>(t, "aes", "attack.thresholds", ac.thresholds.tau_aes);
  }

  const auto& v = detail::section(root, "vocab");
  detail::reject_unknown(v, "vocab", {"k", "path"});
  c.k = get<std::size_t>(v, "k", "vocab", c.k);
  c.vocab_path = get<std::string>(v, "path", "vocab", c.vocab_path);

  const auto& r = detail::section(root, "run");
  detail::reject_unknown(r, "run", {"out_dir", "parallel", "candidate_parallel", "format", "detector_scope"});
  c.out_dir = get<std::string>(r, "out_dir", "run", c.out_dir.string());
  c.parallel = get<std::size_t>(r, "parallel", "run", c.parallel);
  c.candidate_parallel = get<std::size_t>(r, "candidate_parallel", "run", c.candidate_parallel);
  if (r.contains("format")) c.format = parse_format(get<std::string>(r, "format", "run", ""));
  if (r.contains("detector_scope")) {
    const auto s = get<std::string>(r, "detector_scope", "run", "");
    if (s == "any_candidate") c.detector_scope = DetectorScope::AnyCandidate;
    else if (s == "final_only") c.detector_scope = DetectorScope::FinalOnly;
    else throw Error(ErrorCode::ConfigError, "run.detector_scope must be 'any_candidate' or 'final_only'");
  }

  const auto& s = detail::section(root, "simulator");
  detail::reject_unknown(s, "simulator", {"enabled", "generator_seed", "word_list"});
  c.simulator = get<bool>(s, "enabled", "simulator", c.simulator);
  c.sim_generator_seed = get<std::uint64_t>(s, "generator_seed", "simulator", c.sim_generator_seed);
  c.sim_word_list = get<std::string>(s, "word_list", "simulator", c.sim_word_list);

  const auto& eps = detail::section(root, "endpoints");
  for (const auto& [name, e] : eps.items()) {
    const auto where = "endpoints." + name;
    if (!e.is_object()) throw Error(ErrorCode::ConfigError, "[" + where + "] must be a table");
    detail::reject_unknown(e, where, {"url", "model", "api_key_env", "timeout_s", "retries", "backoff_s", "labels",
                                      "artifact_dir", "encoder_id", "dim"});
    http::EndpointConfig ep;
    ep.url = get<std::string>(e, "url", where, "");
    ep.model = get<std::string>(e, "model", where, "");
    ep.api_key_env = get<std::string>(e, "api_key_env", where, "");
    ep.timeout_s = get<double>(e, "timeout_s", where, ep.timeout_s);
    ep.retries = get<std::size_t>(e, "retries", where, ep.retries);
    ep.backoff_s = get<double>(e, "backoff_s", where, ep.backoff_s);
    ep.labels = get<std::vector<std::string>>(e, "labels", where, {});
    ep.artifact_dir = get<std::string>(e, "artifact_dir", where, "");
    ep.encoder_id = get<std::string>(e, "encoder_id", where, "");
    ep.dim = get<std::size_t>(e, "dim", where, 0);
    c.endpoints[name] = std::move(ep);
  }
  return c;
}

inline ToolConfig load_tool_config(const std::filesystem::path& path) { return tool_config_from_toml(load_toml(path)); }

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

inline std::optional<std::string> process_env(const std::string& name) {
  if (const char* v = std::getenv(name.c_str())) return std::string(v);
  return std::nullopt;
}

/// Reads CONCEPTPROBE_SEED, _K, _Q, _S, _MAX_ITER, _TEMPERATURE, _THRESHOLDS, _NO_GUIDANCE,
/// _PARALLEL, _OUT, _FORMAT, _SIMULATOR and _VOCAB.
inline Overrides overrides_from_env(const EnvLookup& env = process_env) {
  Overrides o;
  const auto var = [&](const char* suffix) { return env(std::string("CONCEPTPROBE_") + suffix); };
  const auto as_uint = [&](const char* suffix) -> std::optional<std::uint64_t> {
    const auto v = var(suffix);
    if (!v) return std::nullopt;
    try {
      std::size_t used = 0;
      if (!v->empty() && v->front() == '-') throw std::invalid_argument(*v);
      const auto n = std::stoull(*v, &used);
      if (used != v->size()) throw std::invalid_argument(*v);
      return n;
    } catch (const std::exception&) {
      throw Error(ErrorCode::ConfigError, std::string("CONCEPTPROBE_") + suffix + " must be a non-negative integer");
    }
  };
  const auto as_bool = [&](const char* suffix) -> std::optional<bool> {
    const auto v = var(suffix);
    if (!v) return std::nullopt;
    const auto l = conceptprobe::detail::to_lower(*v);
    if (l == "1" || l == "true" || l == "yes") return true;
    if (l == "0" || l == "false" || l == "no" || l.empty()) return false;
    throw Error(ErrorCode::ConfigError, std::string("CONCEPTPROBE_") + suffix + " must be a boolean");
  };
  o.seed = as_uint("SEED");
  if (auto v = as_uint("K")) o.k = *v;
  if (auto v = as_uint("Q")) o.q = *v;
  if (auto v = as_uint("S")) o.s = *v;
  if (auto v = as_uint("MAX_ITER")) o.max_iter = *v;
  if (auto v = as_uint("PARALLEL")) o.parallel = *v;
  if (auto v = var("TEMPERATURE")) {
    try {
      o.temperature = std::stod(*v);
    } catch (const std::exception&) {
      throw Error(ErrorCode::ConfigError, "CONCEPTPROBE_TEMPERATURE must be a number");
    }
  }
  if (auto v = var("THRESHOLDS")) o.thresholds = parse_thresholds(*v);
  o.no_guidance = as_bool("NO_GUIDANCE");
  o.simulator = as_bool("SIMULATOR");
  o.out = var("OUT");
  o.vocab = var("VOCAB");
  if (auto v = var("FORMAT")) o.format = parse_format(*v);
  return o;
}

inline void apply(ToolConfig& c, const Overrides& o) {
  if (o.seed) c.attack.rng_seed = *o.seed;
  if (o.k) c.k = *o.k;
  if (o.q) c.attack.q_candidates = *o.q;
  if (o.s) c.attack.s_survivors = *o.s;
  if (o.max_iter) c.attack.max_iterations = *o.max_iter;
  if (o.temperature) c.attack.temperature = *o.temperature;
  if (o.thresholds) c.attack.thresholds = *o.thresholds;
  if (o.no_guidance) c.guidance = !*o.no_guidance;
  if (o.parallel) c.parallel = *o.parallel;
  if (o.out) c.out_dir = *o.out;
  if (o.format) c.format = *o.format;
  if (o.simulator) c.simulator = *o.simulator;
  if (o.vocab) c.vocab_path = *o.vocab;
}

/// File, then environment, then flags; later sources win.
inline ToolConfig resolve(const std::optional<std::filesystem::path>& file, const Overrides& flags,
                          const EnvLookup& env = process_env) {
  ToolConfig c = file ? load_tool_config(*file) : ToolConfig{};
  apply(c, overrides_from_env(env));
  apply(c, flags);
  if (c.parallel == 0) throw Error(ErrorCode::ConfigError, "parallel must be >= 1");
  if (c.k == 0) throw Error(ErrorCode::ConfigError, "k must be >= 1");
  return c;
}

}  // namespace conceptprobe::config
