#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include <nlohmann/json.hpp>

#include "promptopt/error.hpp"
#include "promptopt/pipeline.hpp"
#include "promptopt/providers.hpp"
#include "promptopt/session.hpp"

namespace promptopt {

inline constexpr std::size_t kJobQueueDepth = 4;

// HTTP status for each error name.
int http_status_for(ErrorCode code);

struct ServiceOptions {
  std::filesystem::path store_dir = "sessions";
  std::optional<std::filesystem::path> mock_script;
  ModelConfig teacher;
  ModelConfig student{ProviderId::Mock, "mock", kDefaultTemperature, kDefaultMaxTokens, "", "",
                      ModelRole::Student};
  std::string cors_origin;
  std::optional<std::filesystem::path> static_dir;
  std::size_t queue_depth = kJobQueueDepth;
};

struct OptimizeRequest {
  std::string raw_input;
  std::optional<SearchStrategy> strategy;
  std::optional<OptimizerBackend> backend;
  std::optional<double> lambda;
  std::optional<std::uint64_t> seed;
  std::optional<int> n_samples;
  std::optional<bool> enhance;
  nlohmann::json teacher = nlohmann::json::object();
  nlohmann::json student = nlohmann::json::object();
};

// Rejects unknown fields and an empty raw_input with ValidationError.
OptimizeRequest parse_optimize_request(const nlohmann::json& body);

// Applies a partial model config ({"provider_id", "model_name", ...}).
ModelConfig apply_model_overrides(ModelConfig base, const nlohmann::json& overrides);

// The summary returned for a finished run.
nlohmann::json optimize_response(const Session& s);

// Full session document served by GET /v1/sessions/{id}.
nlohmann::json session_document(const Session& s);

struct HttpResponse {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

// Routing and job execution, independent of the socket layer.
class Service {
 public:
  explicit Service(ServiceOptions options);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  HttpResponse handle(const std::string& method, const std::string& path,
                      const std::string& body);

  // Blocks until no job is queued or running.
  void wait_idle();

  const ServiceOptions& options() const noexcept { return options_; }
  const SessionStore& store() const noexcept { return store_; }

 private:
  enum class JobState { Pending, Running, Done, Failed };
  struct JobStatus {
    JobState state = JobState::Pending;
    std::string error;
    std::string detail;
  };
  struct Job {
    std::string session_id;
    std::function<void()> run;
  };

  HttpResponse post_optimize(const std::string& body);
  HttpResponse list_sessions();
  HttpResponse get_session(const std::string& id);
  HttpResponse get_dataset(const std::string& id);
  HttpResponse get_status(const std::string& id);
  HttpResponse post_feedback(const std::string& id, const std::string& body);
  HttpResponse post_reoptimize(const std::string& id);

  // Throws QueueFull or JobInFlight.
  void enqueue(Job job);
  bool in_flight(const std::string& id) const;
  Llm make_llm(const ModelConfig& config, const std::shared_ptr<UsageLedger>& ledger) const;
  void worker_loop();

  ServiceOptions options_;
  SessionStore store_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::condition_variable idle_cv_;
  std::deque<Job> queue_;
  std::map<std::string, JobStatus> status_;
  bool running_job_ = false;
  bool stopping_ = false;
  std::thread worker_;
};

// Binds, serves until the process is stopped, and returns the exit code.
int http_serve(const std::string& host, int port, ServiceOptions options);

}  // namespace promptopt
