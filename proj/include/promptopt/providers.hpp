#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "promptopt/error.hpp"

namespace promptopt {

enum class ProviderId { OpenAICompatible, AnthropicCompatible, LocalEndpoint, Mock };
enum class ModelRole { Teacher, Student };

std::string_view to_string(ProviderId id);
ProviderId provider_id_from_string(std::string_view s);
std::string_view to_string(ModelRole role);
ModelRole model_role_from_string(std::string_view s);

inline constexpr double kDefaultTemperature = 0.7;
inline constexpr int kDefaultMaxTokens = 4000;

struct ModelConfig {
  ProviderId provider = ProviderId::Mock;
  std::string model_name = "mock";
  double temperature = kDefaultTemperature;
  int max_tokens = kDefaultMaxTokens;
  std::string api_base;
  // Name of the environment variable holding the credential, never the
  // credential itself.
  std::string api_key_ref;
  ModelRole role = ModelRole::Teacher;

  // Throws ValidationError when temperature is outside [0, 2] or
  // max_tokens < 1.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

struct GenerationOverrides {
  std::optional<double> temperature;
  std::optional<int> max_tokens;
};

struct CompletionRequest {
  std::optional<std::string> system_text;
  std::string user_text;
  GenerationOverrides overrides;
};

struct CompletionResponse {
  std::string text;
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
  std::int64_t latency_ms = 0;
};

// Whitespace-token count; the engine's canonical length unit.
std::size_t estimate_tokens(std::string_view text);

struct UsageCounters {
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
  std::int64_t call_count = 0;
  std::int64_t wall_ms = 0;
};

// Per-model cumulative usage. Counters only ever grow.
class UsageLedger {
 public:
  void record(const std::string& model, const CompletionResponse& response,
              std::int64_t wall_ms);
  UsageCounters usage(const std::string& model) const;
  UsageCounters total() const;
  std::map<std::string, UsageCounters> snapshot() const;

 private:
  mutable std::mutex mu_;
  std::map<std::string, UsageCounters> by_model_;
};

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds base_delay{500};
  double factor = 2.0;
  std::chrono::milliseconds request_timeout{120000};

  // Full jitter: uniform in [0, base * factor^attempt].
  std::chrono::milliseconds backoff(int attempt, double unit_draw) const;
};

inline constexpr std::ptrdiff_t kDefaultParallelism = 4;

class Provider {
 public:
  explicit Provider(std::ptrdiff_t parallelism = kDefaultParallelism);
  virtual ~Provider() = default;
  Provider(const Provider&) = delete;
  Provider& operator=(const Provider&) = delete;

  // Bounded by the provider's in-flight limit.
  CompletionResponse complete(const ModelConfig& config,
                              const CompletionRequest& request);

  // Dense embedding used by the embedding similarity backend.
  virtual std::vector<double> embed(const ModelConfig& config,
                                    std::string_view text);

 protected:
  virtual CompletionResponse do_complete(const ModelConfig& config,
                                         const CompletionRequest& request) = 0;

 private:
  std::counting_semaphore<1024> in_flight_;
};

// Deterministic offline provider. Lookup order: a custom responder (when
// set), exact match of the user text, substring match over system + user text,
// then a stable hash-derived fallback.
//
// Among several substring hits, the entry whose last occurrence ends furthest
// right wins, then the longer key, then script order. Rendered prompts put the
// query last, so the query's key beats keys that only occur in demonstrations.
class MockProvider final : public Provider {
 public:
  using Script = std::vector<std::pair<std::string, std::string>>;
  using Responder =
      std::function<std::optional<std::string>(const CompletionRequest&)>;

  // Throws DuplicateKey when two entries share match text.
  explicit MockProvider(Script script = {});

  // Loads a JSON array of {"match": ..., "response": ...} objects, or an
  // object holding such an array under "pairs".
  static std::shared_ptr<MockProvider> from_json_file(
      const std::filesystem::path& path);
  static std::shared_ptr<MockProvider> from_json(const nlohmann::json& doc);

  void set_responder(Responder responder);

  // Every request seen so far, in arrival order.
  std::vector<CompletionRequest> requests() const;

  static std::string fallback_text(const CompletionRequest& request);

  std::vector<double> embed(const ModelConfig& config,
                            std::string_view text) override;

 protected:
  CompletionResponse do_complete(const ModelConfig& config,
                                 const CompletionRequest& request) override;

 private:
  std::optional<std::string> lookup(const CompletionRequest& request) const;

  Script script_;
  Responder responder_;
  mutable std::mutex mu_;
  std::vector<CompletionRequest> history_;
};

std::shared_ptr<MockProvider> mock_script(MockProvider::Script pairs);

// Chat-completion client for OpenAI-compatible, Anthropic-compatible, and
// local OpenAI-style endpoints.
class HttpProvider final : public Provider {
 public:
  explicit HttpProvider(RetryPolicy policy = {},
                        std::ptrdiff_t parallelism = kDefaultParallelism);

  std::vector<double> embed(const ModelConfig& config,
                            std::string_view text) override;

  // Request body for the given provider family; exposed for wire-format tests.
  static nlohmann::json chat_body(const ModelConfig& config,
                                  const CompletionRequest& request);

 protected:
  CompletionResponse do_complete(const ModelConfig& config,
                                 const CompletionRequest& request) override;

 private:
  RetryPolicy policy_;
};

// Resolves the credential named by config.api_key_ref. Throws AuthError when a
// remote provider has no reference or the variable is unset or empty. Local
// endpoints may run without a credential and get an empty string.
std::string resolve_credential(const ModelConfig& config);

// A model configuration bound to a provider and a usage ledger. Copies share
// the provider and ledger.
class Llm {
 public:
  Llm(ModelConfig config, std::shared_ptr<Provider> provider,
      std::shared_ptr<UsageLedger> ledger = std::make_shared<UsageLedger>());

  CompletionResponse complete(const CompletionRequest& request) const;
  CompletionResponse complete(std::string user_text) const;
  std::vector<double> embed(std::string_view text) const;

  const ModelConfig& config() const noexcept { return config_; }
  Provider& provider() const noexcept { return *provider_; }
  const std::shared_ptr<Provider>& provider_handle() const noexcept {
    return provider_;
  }
  UsageLedger& ledger() const noexcept { return *ledger_; }
  std::int64_t call_count() const { return ledger_->usage(config_.model_name).call_count; }

 private:
  ModelConfig config_;
  std::shared_ptr<Provider> provider_;
  std::shared_ptr<UsageLedger> ledger_;
};

// Mock configs get a MockProvider (optionally scripted from a file); every
// other provider id gets an HttpProvider.
std::shared_ptr<Provider> make_provider(
    const ModelConfig& config,
    const std::optional<std::filesystem::path>& mock_script_path = std::nullopt,
    RetryPolicy policy = {});

}  // namespace promptopt
