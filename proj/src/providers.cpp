#include "promptopt/providers.hpp"

#include "httplib.h"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <random>
#include <thread>

#include "promptopt/text.hpp"

namespace promptopt {

namespace {

using nlohmann::json;

struct NamedProvider {
  ProviderId id;
  std::string_view name;
};

constexpr NamedProvider kProviderNames[] = {
    {ProviderId::OpenAICompatible, "openai-compatible"},
    {ProviderId::AnthropicCompatible, "anthropic-compatible"},
    {ProviderId::LocalEndpoint, "local-endpoint"},
    {ProviderId::Mock, "mock"},
};

}  // namespace

std::string_view to_string(ProviderId id) {
  for (const auto& p : kProviderNames) {
    if (p.id == id) return p.name;
  }
  return "mock";
}

ProviderId provider_id_from_string(std::string_view s) {
  for (const auto& p : kProviderNames) {
    if (p.name == s) return p.id;
  }
  throw Error(ErrorCode::ValidationError, "unknown provider '" + std::string(s) + "'");
}

std::string_view to_string(ModelRole role) {
  return role == ModelRole::Teacher ? "teacher" : "student";
}

ModelRole model_role_from_string(std::string_view s) {
  if (s == "teacher") return ModelRole::Teacher;
  if (s == "student") return ModelRole::Student;
  throw Error(ErrorCode::ValidationError, "unknown model role '" + std::string(s) + "'");
}

void ModelConfig::validate() const {
  if (!(temperature >= 0.0 && temperature <= 2.0)) {
    throw Error(ErrorCode::ValidationError, "temperature must lie in [0, 2]");
  }
  if (max_tokens < 1) {
    throw Error(ErrorCode::ValidationError, "max_tokens must be positive");
  }
}

void to_json(json& j, const ModelConfig& c) {
  j = json{{"provider_id", to_string(c.provider)},
           {"model_name", c.model_name},
           {"temperature", c.temperature},
           {"max_tokens", c.max_tokens},
           {"api_base", c.api_base},
           {"api_key_ref", c.api_key_ref},
           {"role", to_string(c.role)}};
}

void from_json(const json& j, ModelConfig& c) {
  c.provider = provider_id_from_string(j.value("provider_id", std::string("mock")));
  c.model_name = j.value("model_name", std::string("mock"));
  c.temperature = j.value("temperature", kDefaultTemperature);
  c.max_tokens = j.value("max_tokens", kDefaultMaxTokens);
  c.api_base = j.value("api_base", std::string());
  c.api_key_ref = j.value("api_key_ref", std::string());
  c.role = model_role_from_string(j.value("role", std::string("teacher")));
}

std::size_t estimate_tokens(std::string_view text) {
  return text::split_whitespace(text).size();
}

// --- ledger ---------------------------------------------------------------

void UsageLedger::record(const std::string& model,
                         const CompletionResponse& response,
                         std::int64_t wall_ms) {
  std::lock_guard lock(mu_);
  auto& c = by_model_[model];
  c.prompt_tokens += response.prompt_tokens;
  c.completion_tokens += response.completion_tokens;
  c.call_count += 1;
  c.wall_ms += wall_ms;
}

UsageCounters UsageLedger::usage(const std::string& model) const {
  std::lock_guard lock(mu_);
  auto it = by_model_.find(model);
  return it == by_model_.end() ? UsageCounters{} : it->second;
}

UsageCounters UsageLedger::total() const {
  std::lock_guard lock(mu_);
  UsageCounters sum;
  for (const auto& [_, c] : by_model_) {
    sum.prompt_tokens += c.prompt_tokens;
    sum.completion_tokens += c.completion_tokens;
    sum.call_count += c.call_count;
    sum.wall_ms += c.wall_ms;
  }
  return sum;
}

std::map<std::string, UsageCounters> UsageLedger::snapshot() const {
  std::lock_guard lock(mu_);
  return by_model_;
}

std::chrono::milliseconds RetryPolicy::backoff(int attempt, double unit_draw) const {
  double cap = static_cast<double>(base_delay.count()) * std::pow(factor, attempt);
  return std::chrono::milliseconds(static_cast<std::int64_t>(cap * unit_draw));
}

// --- provider base --------------------------------------------------------

Provider::Provider(std::ptrdiff_t parallelism)
    : in_flight_(std::clamp<std::ptrdiff_t>(parallelism, 1, 1024)) {}

CompletionResponse Provider::complete(const ModelConfig& config,
                                      const CompletionRequest& request) {
  if (request.user_text.empty()) {
    throw Error(ErrorCode::ValidationError, "completion request has empty user text");
  }
  in_flight_.acquire();
  struct Release {
    std::counting_semaphore<1024>& s;
    ~Release() { s.release(); }
  } release{in_flight_};
  return do_complete(config, request);
}

std::vector<double> Provider::embed(const ModelConfig& config, std::string_view) {
  throw Error(ErrorCode::ProviderError,
              "provider '" + std::string(to_string(config.provider)) +
                  "' does not offer embeddings");
}

// --- mock -----------------------------------------------------------------

namespace {

std::string combined_text(const CompletionRequest& request) {
  std::string all;
  if (request.system_text) {
    all += *request.system_text;
    all += '\n';
  }
  all += request.user_text;
  return all;
}

}  // namespace

MockProvider::MockProvider(Script script) : script_(std::move(script)) {
  for (std::size_t i = 0; i < script_.size(); ++i) {
    for (std::size_t k = i + 1; k < script_.size(); ++k) {
      if (script_[i].first == script_[k].first) {
        throw Error(ErrorCode::DuplicateKey,
                    "mock script repeats match text '" + script_[i].first + "'");
      }
    }
  }
}

std::shared_ptr<MockProvider> MockProvider::from_json(const json& doc) {
  const json* pairs = &doc;
  if (doc.is_object()) {
    if (!doc.contains("pairs")) {
      throw Error(ErrorCode::ValidationError, "mock script object lacks 'pairs'");
    }
    pairs = &doc.at("pairs");
  }
  if (!pairs->is_array()) {
    throw Error(ErrorCode::ValidationError, "mock script must be an array of pairs");
  }
  Script script;
  for (const auto& entry : *pairs) {
    if (!entry.is_object() || !entry.contains("match") || !entry.contains("response")) {
      throw Error(ErrorCode::ValidationError,
                  "mock script entries need 'match' and 'response'");
    }
    script.emplace_back(entry.at("match").get<std::string>(),
                        entry.at("response").get<std::string>());
  }
  return std::make_shared<MockProvider>(std::move(script));
}

std::shared_ptr<MockProvider> MockProvider::from_json_file(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::ValidationError, "cannot read mock script " + path.string());
  }
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ValidationError,
                "mock script " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(doc);
}

void MockProvider::set_responder(Responder responder) {
  std::lock_guard lock(mu_);
  responder_ = std::move(responder);
}

std::vector<CompletionRequest> MockProvider::requests() const {
  std::lock_guard lock(mu_);
  return history_;
}

std::string MockProvider::fallback_text(const CompletionRequest& request) {
  return "mock-response-" + text::hex64(text::fnv1a64(combined_text(request)));
}

std::optional<std::string> MockProvider::lookup(const CompletionRequest& request) const {
  for (const auto& [key, response] : script_) {
    if (request.user_text == key) return response;
  }
  const auto all = combined_text(request);
  const std::pair<std::string, std::string>* best = nullptr;
  std::size_t best_end = 0;
  for (const auto& entry : script_) {
    if (entry.first.empty()) continue;
    auto pos = all.rfind(entry.first);
    if (pos == std::string::npos) continue;
    auto end = pos + entry.first.size();
    if (best == nullptr || end > best_end ||
        (end == best_end && entry.first.size() > best->first.size())) {
      best = &entry;
      best_end = end;
    }
  }
  if (best) return best->second;
  return std::nullopt;
}

CompletionResponse MockProvider::do_complete(const ModelConfig&,
                                             const CompletionRequest& request) {
  Responder responder;
  {
    std::lock_guard lock(mu_);
    history_.push_back(request);
    responder = responder_;
  }
  std::optional<std::string> scripted;
  if (responder) scripted = responder(request);
  if (!scripted) scripted = lookup(request);

  CompletionResponse response;
  if (scripted) {
    response.text = *scripted;
    response.prompt_tokens =
        static_cast<std::int64_t>(estimate_tokens(combined_text(request)));
    response.completion_tokens = static_cast<std::int64_t>(estimate_tokens(response.text));
  } else {
    response.text = fallback_text(request);
  }
  return response;
}

std::vector<double> MockProvider::embed(const ModelConfig&, std::string_view input) {
  // Hashed character-trigram counts; deterministic and offline.
  constexpr std::size_t kDims = 256;
  std::vector<double> v(kDims, 0.0);
  auto lowered = text::to_lower(input);
  std::string padded = "  " + lowered + "  ";
  for (std::size_t i = 0; i + 3 <= padded.size(); ++i) {
    v[text::fnv1a64(std::string_view(padded).substr(i, 3)) % kDims] += 1.0;
  }
  return v;
}

std::shared_ptr<MockProvider> mock_script(MockProvider::Script pairs) {
  return std::make_shared<MockProvider>(std::move(pairs));
}

// --- http -----------------------------------------------------------------

std::string resolve_credential(const ModelConfig& config) {
  if (config.provider == ProviderId::Mock) return {};
  const bool required = config.provider != ProviderId::LocalEndpoint;
  if (config.api_key_ref.empty()) {
    if (required) {
      throw Error(ErrorCode::AuthError, "no credential variable configured for " +
                                            std::string(to_string(config.provider)));
    }
    return {};
  }
  const char* value = std::getenv(config.api_key_ref.c_str());
  if (value == nullptr || *value == '\0') {
    if (required) {
      throw Error(ErrorCode::AuthError,
                  "credential variable " + config.api_key_ref + " is not set");
    }
    return {};
  }
  return value;
}

namespace {

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string prefix;  // path without trailing slash
};

Endpoint parse_base(const ModelConfig& config) {
  std::string base = config.api_base;
  if (base.empty()) {
    switch (config.provider) {
      case ProviderId::OpenAICompatible: base = "https://api.openai.com/v1"; break;
      case ProviderId::AnthropicCompatible: base = "https://api.anthropic.com"; break;
      default: base = "http://127.0.0.1:8000/v1"; break;
    }
  }
  auto scheme_end = base.find("://");
  if (scheme_end == std::string::npos) {
    throw Error(ErrorCode::ValidationError, "api_base lacks a scheme: " + base);
  }
  auto path_start = base.find('/', scheme_end + 3);
  Endpoint ep;
  ep.origin = base.substr(0, path_start);
  if (path_start != std::string::npos) ep.prefix = base.substr(path_start);
  while (!ep.prefix.empty() && ep.prefix.back() == '/') ep.prefix.pop_back();
  return ep;
}

double jitter_draw() {
  thread_local std::mt19937_64 engine{std::random_device{}()};
  return std::uniform_real_distribution<double>(0.0, 1.0)(engine);
}

struct HttpOutcome {
  int status = 0;
  std::string body;
};

// Performs one POST with retries. Returns the body of a 2xx response.
std::string post_with_retry(const RetryPolicy& policy, const Endpoint& ep,
                            const std::string& path, const httplib::Headers& headers,
                            const std::string& body) {
  std::optional<Error> last;
  const int attempts = std::max(1, policy.max_attempts);
  for (int attempt = 0; attempt < attempts; ++attempt) {
    httplib::Client client(ep.origin);
    auto timeout = policy.request_timeout;
    client.set_connection_timeout(std::chrono::duration_cast<std::chrono::seconds>(timeout).count(),
                                  0);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);

    auto res = client.Post(path, headers, body, "application/json");
    if (!res) {
      auto err = res.error();
      if (err == httplib::Error::Read || err == httplib::Error::ConnectionTimeout) {
        last = Error(ErrorCode::Timeout, "request to " + ep.origin + path + " timed out");
      } else {
        last = Error(ErrorCode::ProviderError,
                     "transport failure to " + ep.origin + ": " + httplib::to_string(err));
      }
    } else if (res->status >= 200 && res->status < 300) {
      return res->body;
    } else if (res->status == 401 || res->status == 403) {
      throw Error(ErrorCode::AuthError,
                  "provider rejected credential (HTTP " + std::to_string(res->status) + ")");
    } else if (res->status == 429) {
      last = Error(ErrorCode::RateLimited, "HTTP 429 after retries: " + res->body);
    } else if (res->status >= 500) {
      last = Error(ErrorCode::ProviderError,
                   "HTTP " + std::to_string(res->status) + ": " + res->body);
    } else {
      throw Error(ErrorCode::ProviderError,
                  "HTTP " + std::to_string(res->status) + ": " + res->body);
    }
    if (attempt + 1 < attempts) {
      std::this_thread::sleep_for(policy.backoff(attempt, jitter_draw()));
    }
  }
  throw *last;
}

}  // namespace

HttpProvider::HttpProvider(RetryPolicy policy, std::ptrdiff_t parallelism)
    : Provider(parallelism), policy_(policy) {}

json HttpProvider::chat_body(const ModelConfig& config, const CompletionRequest& request) {
  const double temperature = request.overrides.temperature.value_or(config.temperature);
  const int max_tokens = request.overrides.max_tokens.value_or(config.max_tokens);
  if (config.provider == ProviderId::AnthropicCompatible) {
    json body{{"model", config.model_name},
              {"max_tokens", max_tokens},
              {"temperature", temperature},
              {"messages", json::array({{{"role", "user"}, {"content", request.user_text}}})}};
    if (request.system_text) body["system"] = *request.system_text;
    return body;
  }
  json messages = json::array();
  if (request.system_text) {
    messages.push_back({{"role", "system"}, {"content", *request.system_text}});
  }
  messages.push_back({{"role", "user"}, {"content", request.user_text}});
  return json{{"model", config.model_name},
              {"messages", messages},
              {"temperature", temperature},
              {"max_tokens", max_tokens}};
}

CompletionResponse HttpProvider::do_complete(const ModelConfig& config,
                                             const CompletionRequest& request) {
  const auto key = resolve_credential(config);
  const auto ep = parse_base(config);
  httplib::Headers headers;
  std::string path;
  if (config.provider == ProviderId::AnthropicCompatible) {
    path = ep.prefix + "/v1/messages";
    headers.emplace("x-api-key", key);
    headers.emplace("anthropic-version", "2023-06-01");
  } else {
    path = ep.prefix + "/chat/completions";
    if (!key.empty()) headers.emplace("Authorization", "Bearer " + key);
  }

  const auto started = std::chrono::steady_clock::now();
  auto raw = post_with_retry(policy_, ep, path, headers, chat_body(config, request).dump());
  const auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
      std::chrono::steady_clock::now() - started);

  CompletionResponse response;
  response.latency_ms = elapsed.count();
  try {
    auto doc = json::parse(raw);
    if (config.provider == ProviderId::AnthropicCompatible) {
      for (const auto& block : doc.at("content")) {
        if (block.value("type", std::string("text")) == "text") {
          response.text += block.at("text").get<std::string>();
        }
      }
      if (doc.contains("usage")) {
        response.prompt_tokens = doc["usage"].value("input_tokens", 0);
        response.completion_tokens = doc["usage"].value("output_tokens", 0);
      }
    } else {
      response.text = doc.at("choices").at(0).at("message").at("content").get<std::string>();
      if (doc.contains("usage")) {
        response.prompt_tokens = doc["usage"].value("prompt_tokens", 0);
        response.completion_tokens = doc["usage"].value("completion_tokens", 0);
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ProviderError, std::string("malformed provider reply: ") + e.what());
  }
  return response;
}

std::vector<double> HttpProvider::embed(const ModelConfig& config, std::string_view input) {
  if (config.provider == ProviderId::AnthropicCompatible) {
    return Provider::embed(config, input);
  }
  const auto key = resolve_credential(config);
  const auto ep = parse_base(config);
  httplib::Headers headers;
  if (!key.empty()) headers.emplace("Authorization", "Bearer " + key);
  json body{{"model", config.model_name}, {"input", std::string(input)}};
  auto raw = post_with_retry(policy_, ep, ep.prefix + "/embeddings", headers, body.dump());
  try {
    return json::parse(raw).at("data").at(0).at("embedding").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ProviderError, std::string("malformed embedding reply: ") + e.what());
  }
}

// --- client handle --------------------------------------------------------

Llm::Llm(ModelConfig config, std::shared_ptr<Provider> provider,
         std::shared_ptr<UsageLedger> ledger)
    : config_(std::move(config)), provider_(std::move(provider)), ledger_(std::move(ledger)) {
  config_.validate();
}

CompletionResponse Llm::complete(const CompletionRequest& request) const {
  const auto started = std::chrono::steady_clock::now();
  auto response = provider_->complete(config_, request);
  const auto wall = std::chrono::duration_cast<std::chrono::milliseconds>(
                        std::chrono::steady_clock::now() - started)
                        .count();
  ledger_->record(config_.model_name, response, wall);
  return response;
}

CompletionResponse Llm::complete(std::string user_text) const {
  CompletionRequest request;
  request.user_text = std::move(user_text);
  return complete(request);
}

std::vector<double> Llm::embed(std::string_view input) const {
  return provider_->embed(config_, input);
}

std::shared_ptr<Provider> make_provider(const ModelConfig& config,
                                        const std::optional<std::filesystem::path>& mock_script_path,
                                        RetryPolicy policy) {
  if (config.provider == ProviderId::Mock) {
    if (mock_script_path) return MockProvider::from_json_file(*mock_script_path);
    return std::make_shared<MockProvider>();
  }
  return std::make_shared<HttpProvider>(policy);
}

}  // namespace promptopt
