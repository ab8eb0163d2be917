#pragma once

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "conceptprobe/adapters.hpp"
#include "conceptprobe/detail/text.hpp"

namespace conceptprobe::http {

/// One `[endpoints.<name>]` section of the tool config. Credentials are referenced by env-var name.
struct EndpointConfig {
  std::string url;           ///< full URL including path, e.g. http://localhost:8000/v1/chat/completions
  std::string model;         ///< sent as "model" where the schema has one; also the reported LM name
  std::string api_key_env;   ///< env var holding a bearer token; empty for none
  double timeout_s = 60.0;
  std::size_t retries = 3;   ///< extra attempts after the first on transport failure or 429/5xx
  double backoff_s = 0.5;    ///< doubled after every retry
  std::vector<std::string> labels;  ///< detector label set; the max confidence over these is the score
  std::string artifact_dir;  ///< where base64 image payloads are saved, if any
  std::string encoder_id;
  std::size_t dim = 0;
};

namespace detail {

struct SplitUrl {
  std::string origin;
  std::string path;
};

inline SplitUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw Error(ErrorCode::ConfigError, "endpoint url needs a scheme: '" + url + "'");
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

inline bool is_refusal_status(int status) { return status == 400 || status == 403 || status == 422 || status == 451; }
inline bool is_retryable_status(int status) { return status == 408 || status == 429 || status >= 500; }

}  // namespace detail

/// JSON-over-HTTP POST with bounded retry. Safe to share across threads: each call opens its own client.
class JsonEndpoint {
 public:
  explicit JsonEndpoint(EndpointConfig config) : config_(std::move(config)), url_(detail::split_url(config_.url)) {
    if (!config_.api_key_env.empty() && std::getenv(config_.api_key_env.c_str()) == nullptr)
      throw Error(ErrorCode::ConfigError, "environment variable " + config_.api_key_env + " is not set");
  }

  const EndpointConfig& config() const noexcept { return config_; }

  nlohmann::json post(const nlohmann::json& body) const {
    const auto payload = body.dump();
    std::string last_error;
    double backoff = config_.backoff_s;
    for (std::size_t attempt = 0; attempt <= config_.retries; ++attempt) {
      if (attempt > 0 && backoff > 0.0) {
        std::this_thread::sleep_for(std::chrono::duration<double>(backoff));
        backoff *= 2.0;
      }
      httplib::Client client(url_.origin);
      const auto secs = std::chrono::duration<double>(config_.timeout_s);
      client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(secs));
      client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(secs));
      client.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(secs));
      httplib::Headers headers;
      if (!config_.api_key_env.empty()) {
        if (const char* key = std::getenv(config_.api_key_env.c_str())) headers.emplace("Authorization", std::string("Bearer ") + key);
      }
      const auto res = client.Post(url_.path, headers, payload, "application/json");
      if (!res) {
        last_error = config_.url + ": " + httplib::to_string(res.error());
        continue;
      }
      if (res->status >= 200 && res->status < 300) {
        try {
          return nlohmann::json::parse(res->body);
        } catch (const nlohmann::json::exception& e) {
          throw Error(ErrorCode::ProviderContractViolation, config_.url + ": response is not JSON: " + e.what());
        }
      }
      if (detail::is_refusal_status(res->status))
        throw Error(ErrorCode::ProviderRefusal, config_.url + ": HTTP " + std::to_string(res->status) + " " + res->body.substr(0, 200));
      last_error = config_.url + ": HTTP " + std::to_string(res->status);
      if (!detail::is_retryable_status(res->status)) break;
    }
    throw Error(ErrorCode::TransportError, last_error + " (after " + std::to_string(config_.retries + 1) + " attempt(s))");
  }

 private:
  EndpointConfig config_;
  detail::SplitUrl url_;
};

namespace detail {

template <typename T>
T field(const nlohmann::json& j, const char* key, const std::string& url) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorCode::ProviderContractViolation, url + ": response lacks a valid \"" + key + "\" field");
  }
}

inline void check_refused(const nlohmann::json& j, const std::string& url) {
  if (j.is_object() && j.value("refused", false))
    throw Error(ErrorCode::ProviderRefusal, url + ": " + j.value("reason", std::string("refused")));
}

/// Reads {"score"} or {"labels":[{"name","confidence"}]}; for labels, the max over `wanted`
/// (or over every label when `wanted` is empty), 0 when none match.
inline double score_from(const nlohmann::json& j, const std::vector<std::string>& wanted, const std::string& url) {
  if (j.contains("score")) return field<double>(j, "score", url);
  if (!j.contains("labels") || !j.at("labels").is_array())
    throw Error(ErrorCode::ProviderContractViolation, url + ": response has neither \"score\" nor \"labels\"");
  double best = 0.0;
  for (const auto& l : j.at("labels")) {
    const auto name = field<std::string>(l, "name", url);
    const auto conf = field<double>(l, "confidence", url);
    const bool match = wanted.empty() || std::any_of(wanted.begin(), wanted.end(), [&](const std::string& w) {
                         return conceptprobe::detail::to_lower(w) == conceptprobe::detail::to_lower(name);
                       });
    if (match) best = std::max(best, conf);
  }
  return best;
}

}  // namespace detail

/// Chat-completion style: {"model","messages"} -> choices[0].message.content.
class HttpPromptGenerator final : public PromptGenerator {
 public:
  explicit HttpPromptGenerator(EndpointConfig c) : ep_(std::move(c)) {}

  std::string complete(const std::vector<ChatMessage>& messages) override {
    nlohmann::json msgs = nlohmann::json::array();
    for (const auto& m : messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
    const auto j = ep_.post({{"model", ep_.config().model}, {"messages", msgs}});
    detail::check_refused(j, ep_.config().url);
    try {
      const auto& content = j.at("choices").at(0).at("message").at("content");
      return content.is_null() ? std::string() : content.get<std::string>();
    } catch (const nlohmann::json::exception&) {
      throw Error(ErrorCode::ProviderContractViolation, ep_.config().url + ": missing choices[0].message.content");
    }
  }

 private:
  JsonEndpoint ep_;
};

/// {"prompt","seed","guidance_scale"} -> {"image_id", optional "image_base64"}.
class HttpTargetModel final : public TargetModel {
 public:
  explicit HttpTargetModel(EndpointConfig c) : ep_(std::move(c)) {}

  ImageHandle generate(const std::string& prompt, long long seed, double guidance_scale) override {
    const auto j = ep_.post({{"prompt", prompt}, {"seed", seed}, {"guidance_scale", guidance_scale}});
    detail::check_refused(j, ep_.config().url);
    ImageHandle h;
    h.id = detail::field<std::string>(j, "image_id", ep_.config().url);
    h.provenance = {prompt, seed, guidance_scale};
    if (j.contains("image_base64") && j.at("image_base64").is_string() && !ep_.config().artifact_dir.empty()) {
      const auto bytes = conceptprobe::detail::base64_decode(j.at("image_base64").get<std::string>());
      if (!bytes) throw Error(ErrorCode::ProviderContractViolation, ep_.config().url + ": image_base64 is not valid base64");
      std::filesystem::create_directories(ep_.config().artifact_dir);
      std::string safe;
      for (unsigned char ch : h.id) safe += std::isalnum(ch) || ch == '-' || ch == '_' ? static_cast<char>(ch) : '_';
      const auto path = std::filesystem::path(ep_.config().artifact_dir) / (safe + ".img");
      std::ofstream out(path, std::ios::binary);
      out.write(bytes->data(), static_cast<std::streamsize>(bytes->size()));
      if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
      h.bytes_ref = path.string();
    }
    return h;
  }

 private:
  JsonEndpoint ep_;
};

class HttpConceptDetector final : public ConceptDetector {
 public:
  explicit HttpConceptDetector(EndpointConfig c) : ep_(std::move(c)) {}
  double score(const ImageHandle& image) override {
    return detail::score_from(ep_.post({{"image_id", image.id}}), ep_.config().labels, ep_.config().url);
  }

 private:
  JsonEndpoint ep_;
};

class HttpAlignmentScorer final : public AlignmentScorer {
 public:
  explicit HttpAlignmentScorer(EndpointConfig c) : ep_(std::move(c)) {}
  double score(const std::string& reference_prompt, const ImageHandle& image) override {
    return detail::score_from(ep_.post({{"image_id", image.id}, {"reference", reference_prompt}}), {}, ep_.config().url);
  }

 private:
  JsonEndpoint ep_;
};

class HttpAestheticScorer final : public AestheticScorer {
 public:
  explicit HttpAestheticScorer(EndpointConfig c) : ep_(std::move(c)) {}
  double score(const ImageHandle& image) override {
    return detail::score_from(ep_.post({{"image_id", image.id}}), {}, ep_.config().url);
  }

 private:
  JsonEndpoint ep_;
};

/// {"model","input":[...]} -> {"data":[{"embedding":[...]}]}, in input order.
class HttpEmbeddingProvider final : public EmbeddingProvider {
 public:
  explicit HttpEmbeddingProvider(EndpointConfig c) : ep_(std::move(c)) {
    if (ep_.config().encoder_id.empty()) throw Error(ErrorCode::ConfigError, "embedding endpoint needs encoder_id");
    if (ep_.config().dim == 0) throw Error(ErrorCode::ConfigError, "embedding endpoint needs dim");
  }

  std::string encoder_id() const override { return ep_.config().encoder_id; }
  std::size_t dim() const override { return ep_.config().dim; }

  std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) override {
    const auto j = ep_.post({{"model", ep_.config().model}, {"input", texts}});
    std::vector<EmbeddingVector> out;
    try {
      for (const auto& d : j.at("data")) out.emplace_back(d.at("embedding").get<std::vector<double>>());
    } catch (const nlohmann::json::exception&) {
      throw Error(ErrorCode::ProviderContractViolation, ep_.config().url + ": malformed embedding response");
    }
    return out;
  }

 private:
  JsonEndpoint ep_;
};

/// {"model","text"} -> {"perplexity"}.
class HttpPerplexityLM final : public PerplexityLM {
 public:
  explicit HttpPerplexityLM(EndpointConfig c) : ep_(std::move(c)) {}
  double mean_perplexity(const std::string& prompt) override {
    return detail::field<double>(ep_.post({{"model", ep_.config().model}, {"text", prompt}}), "perplexity", ep_.config().url);
  }
  std::string model_name() const override { return ep_.config().model.empty() ? ep_.config().url : ep_.config().model; }

 private:
  JsonEndpoint ep_;
};

/// {"text"} -> {"gibberish": bool}.
class HttpGibberishDetector final : public GibberishDetector {
 public:
  explicit HttpGibberishDetector(EndpointConfig c) : ep_(std::move(c)) {}
  bool is_gibberish(const std::string& prompt) override {
    return detail::field<bool>(ep_.post({{"text", prompt}}), "gibberish", ep_.config().url);
  }

 private:
  JsonEndpoint ep_;
};

/// Builds adapters from named endpoint sections. Required: generator, target, detector,
/// alignment, aesthetic. Optional: embedding, perplexity, gibberish.
inline AdapterSet make_http_adapters(const std::map<std::string, EndpointConfig>& endpoints) {
  const auto need = [&](const std::string& name) -> const EndpointConfig& {
    const auto it = endpoints.find(name);
    if (it == endpoints.end() || it->second.url.empty())
      throw Error(ErrorCode::ConfigError, "missing [endpoints." + name + "] url");
    return it->second;
  };
  const auto has = [&](const std::string& name) {
    const auto it = endpoints.find(name);
    return it != endpoints.end() && !it->second.url.empty();
  };
  AdapterSet a;
  a.generator = std::make_shared<HttpPromptGenerator>(need("generator"));
  a.target = std::make_shared<HttpTargetModel>(need("target"));
  a.scorers.detector = std::make_shared<HttpConceptDetector>(need("detector"));
  a.scorers.alignment = std::make_shared<HttpAlignmentScorer>(need("alignment"));
  a.scorers.aesthetic = std::make_shared<HttpAestheticScorer>(need("aesthetic"));
  if (has("embedding")) a.embedding = std::make_shared<HttpEmbeddingProvider>(need("embedding"));
  if (has("perplexity")) a.perplexity = std::make_shared<HttpPerplexityLM>(need("perplexity"));
  if (has("gibberish")) a.gibberish = std::make_shared<HttpGibberishDetector>(need("gibberish"));
  return a;
}

}  // namespace conceptprobe::http
