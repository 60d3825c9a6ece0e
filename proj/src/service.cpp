#include "promptopt/service.hpp"

#include <csignal>
#include <iostream>
#include <set>

#include "httplib.h"

#include "promptopt/text.hpp"

namespace promptopt {

using nlohmann::json;

int http_status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::NotFound: return 404;
    case ErrorCode::JobInFlight:
    case ErrorCode::ReoptimizationNotRequired:
    case ErrorCode::NoUnresolvedFeedback: return 409;
    case ErrorCode::QueueFull: return 503;
    case ErrorCode::ValidationError:
    case ErrorCode::OffsetOutOfRange:
    case ErrorCode::UnknownTarget:
    case ErrorCode::SchemaError:
    case ErrorCode::SplitError:
    case ErrorCode::BudgetTooSmall:
    case ErrorCode::LengthMismatch:
    case ErrorCode::EmptyExampleSet:
    case ErrorCode::EmptyValidationSet:
    case ErrorCode::DuplicateKey: return 400;
    case ErrorCode::AuthError:
    case ErrorCode::RateLimited:
    case ErrorCode::ProviderError:
    case ErrorCode::Timeout:
    case ErrorCode::ExtractionParseError:
    case ErrorCode::ClassificationError:
    case ErrorCode::SelectionError:
    case ErrorCode::GenerationStalled:
    case ErrorCode::MetaParseError:
    case ErrorCode::ProposalParseError:
    case ErrorCode::StorageError:
    case ErrorCode::JudgeParseError:
    case ErrorCode::SchemaVersionMismatch: return 500;
  }
  return 500;
}

namespace {

std::string dump(const json& j) { return j.dump(2) + "\n"; }

HttpResponse json_response(int status, const json& body) { return {status, dump(body)}; }

HttpResponse error_response(ErrorCode code, const std::string& detail) {
  return json_response(http_status_for(code), {{"error", error_name(code)}, {"detail", detail}});
}

json parse_body(const std::string& body) {
  try {
    auto j = json::parse(body);
    if (!j.is_object()) throw Error(ErrorCode::ValidationError, "request body must be a JSON object");
    return j;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ValidationError, std::string("request body is not JSON: ") + e.what());
  }
}

template <typename T>
T field_as(const json& body, const char* key) {
  try {
    return body.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorCode::ValidationError, std::string("field '") + key + "' has the wrong type");
  }
}

std::string_view state_name(int state) {
  static constexpr std::string_view names[] = {"pending", "running", "done", "error"};
  return names[state];
}

}  // namespace

OptimizeRequest parse_optimize_request(const json& body) {
  static const std::set<std::string> known = {"raw_input", "strategy", "backend", "lambda",
                                              "seed",      "n_samples", "enhance", "teacher",
                                              "student"};
  for (const auto& [key, value] : body.items()) {
    if (!known.count(key)) throw Error(ErrorCode::ValidationError, "unknown field '" + key + "'");
  }
  OptimizeRequest r;
  if (!body.contains("raw_input")) throw Error(ErrorCode::ValidationError, "raw_input is required");
  r.raw_input = field_as<std::string>(body, "raw_input");
  if (text::trim(r.raw_input).empty()) {
    throw Error(ErrorCode::ValidationError, "raw_input must not be empty");
  }
  if (body.contains("strategy") && !body["strategy"].is_null()) {
    auto s = field_as<std::string>(body, "strategy");
    r.strategy = strategy_from_string(s);
    if (!r.strategy) throw Error(ErrorCode::ValidationError, "unknown strategy '" + s + "'");
  }
  if (body.contains("backend") && !body["backend"].is_null()) {
    auto s = field_as<std::string>(body, "backend");
    r.backend = backend_from_string(s);
    if (!r.backend) throw Error(ErrorCode::ValidationError, "unknown backend '" + s + "'");
  }
  if (body.contains("lambda") && !body["lambda"].is_null()) {
    r.lambda = field_as<double>(body, "lambda");
    if (*r.lambda < 0) throw Error(ErrorCode::ValidationError, "lambda must be >= 0");
  }
  if (body.contains("seed") && !body["seed"].is_null()) r.seed = field_as<std::uint64_t>(body, "seed");
  if (body.contains("n_samples") && !body["n_samples"].is_null()) {
    r.n_samples = field_as<int>(body, "n_samples");
    if (*r.n_samples < 2) throw Error(ErrorCode::ValidationError, "n_samples must be >= 2");
  }
  if (body.contains("enhance") && !body["enhance"].is_null()) r.enhance = field_as<bool>(body, "enhance");
  for (const char* role : {"teacher", "student"}) {
    if (!body.contains(role) || body[role].is_null()) continue;
    if (!body[role].is_object()) {
      throw Error(ErrorCode::ValidationError, std::string("field '") + role + "' must be an object");
    }
    (std::string_view(role) == "teacher" ? r.teacher : r.student) = body[role];
  }
  return r;
}

ModelConfig apply_model_overrides(ModelConfig base, const json& overrides) {
  static const std::set<std::string> known = {"provider_id", "model_name", "temperature",
                                              "max_tokens",  "api_base",   "api_key_ref"};
  for (const auto& [key, value] : overrides.items()) {
    if (!known.count(key)) {
      throw Error(ErrorCode::ValidationError, "unknown model field '" + key + "'");
    }
  }
  json merged = base;
  for (const auto& [key, value] : overrides.items()) merged[key] = value;
  try {
    auto out = merged.get<ModelConfig>();
    out.validate();
    return out;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ValidationError, std::string("invalid model config: ") + e.what());
  }
}

json optimize_response(const Session& s) {
  const auto& best = s.versions.at(best_version_index(s));
  return json{{"session_id", s.id},
              {"best_prompt_text", best.prompt.render_template()},
              {"best_version", best_version_index(s)},
              {"baseline_score", s.versions.front().eval.combined},
              {"best_score", best.eval.combined},
              {"prompt_length", best.eval.prompt_length},
              {"dataset_size", s.dataset.examples.size()},
              {"trials_run", s.trials.size()}};
}

json session_document(const Session& s) {
  auto doc = session_state_json(s);
  for (std::size_t i = 0; i < s.versions.size(); ++i) {
    doc["versions"][i]["rendered_prompt"] = s.versions[i].prompt.render_template();
    doc["versions"][i]["index"] = i;
  }
  doc["event_log"] = s.event_log;
  doc["summary"] = optimize_response(s);
  return doc;
}

// --- Service --------------------------------------------------------------------

Service::Service(ServiceOptions options)
    : options_(std::move(options)), store_(options_.store_dir) {
  worker_ = std::thread([this] { worker_loop(); });
}

Service::~Service() {
  {
    std::lock_guard lock(mu_);
    stopping_ = true;
  }
  cv_.notify_all();
  if (worker_.joinable()) worker_.join();
}

void Service::worker_loop() {
  for (;;) {
    Job job;
    {
      std::unique_lock lock(mu_);
      cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
      if (queue_.empty()) return;
      job = std::move(queue_.front());
      queue_.pop_front();
      running_job_ = true;
      status_[job.session_id].state = JobState::Running;
    }
    JobStatus outcome{JobState::Done, "", ""};
    try {
      job.run();
    } catch (const Error& e) {
      outcome = {JobState::Failed, std::string(e.name()), e.detail()};
    } catch (const std::exception& e) {
      outcome = {JobState::Failed, "StorageError", e.what()};
    }
    {
      std::lock_guard lock(mu_);
      status_[job.session_id] = outcome;
      running_job_ = false;
    }
    idle_cv_.notify_all();
  }
}

void Service::wait_idle() {
  std::unique_lock lock(mu_);
  idle_cv_.wait(lock, [&] { return queue_.empty() && !running_job_; });
}

bool Service::in_flight(const std::string& id) const {
  auto it = status_.find(id);
  return it != status_.end() &&
         (it->second.state == JobState::Pending || it->second.state == JobState::Running);
}

void Service::enqueue(Job job) {
  {
    std::lock_guard lock(mu_);
    if (in_flight(job.session_id)) {
      throw Error(ErrorCode::JobInFlight, "a job for session " + job.session_id + " is running");
    }
    if (queue_.size() >= options_.queue_depth) {
      throw Error(ErrorCode::QueueFull, "job queue is full");
    }
    status_[job.session_id] = JobStatus{};
    queue_.push_back(std::move(job));
  }
  cv_.notify_all();
}

Llm Service::make_llm(const ModelConfig& config, const std::shared_ptr<UsageLedger>& ledger) const {
  return Llm(config, make_provider(config, options_.mock_script), ledger);
}

HttpResponse Service::handle(const std::string& method, const std::string& path,
                             const std::string& body) {
  try {
    auto parts = text::split(path, "/");
    std::vector<std::string> seg;
    for (auto& p : parts) {
      if (!p.empty()) seg.push_back(std::move(p));
    }
    auto wrong_method = [&] {
      return error_response(ErrorCode::ValidationError, "method " + method + " not allowed on " + path);
    };

    if (seg.size() == 1 && seg[0] == "healthz") {
      if (method != "GET") return wrong_method();
      return {200, "ok", "text/plain"};
    }
    if (seg.size() >= 2 && seg[0] == "v1") {
      if (seg.size() == 2 && seg[1] == "optimize") {
        return method == "POST" ? post_optimize(body) : wrong_method();
      }
      if (seg[1] == "sessions") {
        if (seg.size() == 2) return method == "GET" ? list_sessions() : wrong_method();
        const auto& id = seg[2];
        if (seg.size() == 3) return method == "GET" ? get_session(id) : wrong_method();
        if (seg.size() == 4) {
          if (seg[3] == "dataset") return method == "GET" ? get_dataset(id) : wrong_method();
          if (seg[3] == "status") return method == "GET" ? get_status(id) : wrong_method();
          if (seg[3] == "feedback") return method == "POST" ? post_feedback(id, body) : wrong_method();
          if (seg[3] == "reoptimize") return method == "POST" ? post_reoptimize(id) : wrong_method();
        }
      }
    }
    return error_response(ErrorCode::NotFound, "no route for " + method + " " + path);
  } catch (const Error& e) {
    return error_response(e.code(), e.detail());
  } catch (const std::exception& e) {
    return error_response(ErrorCode::StorageError, e.what());
  }
}

HttpResponse Service::post_optimize(const std::string& body) {
  auto request = parse_optimize_request(parse_body(body));
  auto teacher_cfg = apply_model_overrides(options_.teacher, request.teacher);
  teacher_cfg.role = ModelRole::Teacher;
  auto student_cfg = apply_model_overrides(options_.student, request.student);
  student_cfg.role = ModelRole::Student;

  PipelineOptions popts;
  if (request.strategy) popts.strategy = *request.strategy;
  popts.backend = request.backend;
  popts.lambda = request.lambda;
  popts.seed = request.seed.value_or(0);
  popts.n_samples = request.n_samples;
  popts.enhance = request.enhance.value_or(true);

  auto id = new_uuid();
  Job job;
  job.session_id = id;
  job.run = [this, id, raw = request.raw_input, popts, teacher_cfg, student_cfg] {
    auto ledger = std::make_shared<UsageLedger>();
    auto teacher = make_llm(teacher_cfg, ledger);
    auto student = make_llm(student_cfg, ledger);
    std::lock_guard lock(store_.lock_for(id));
    run_pipeline(raw, popts, teacher, student, store_, id);
  };
  enqueue(std::move(job));
  return json_response(202, {{"session_id", id}, {"status", "pending"}});
}

HttpResponse Service::list_sessions() {
  json items = json::array();
  for (const auto& id : store_.list()) {
    try {
      auto s = store_.load(id);
      items.push_back({{"id", s.id},
                       {"created_at", s.created_at},
                       {"updated_at", s.updated_at},
                       {"task", s.spec.task_text()},
                       {"versions", s.versions.size()},
                       {"best_score", optimize_response(s)["best_score"]}});
    } catch (const Error&) {
      // Unreadable sessions are skipped in the listing; GET on the id reports why.
    }
  }
  return json_response(200, {{"sessions", items}});
}

HttpResponse Service::get_session(const std::string& id) {
  return json_response(200, session_document(store_.load(id)));
}

HttpResponse Service::get_dataset(const std::string& id) {
  auto s = store_.load(id);
  return json_response(200, {{"session_id", s.id},
                             {"schema", s.dataset.schema},
                             {"examples", s.dataset.examples},
                             {"generation_log", s.dataset.generation_log}});
}

HttpResponse Service::get_status(const std::string& id) {
  std::optional<JobStatus> job;
  {
    std::lock_guard lock(mu_);
    if (auto it = status_.find(id); it != status_.end() && it->second.state != JobState::Done) {
      job = it->second;
    }
  }
  if (job) {
    json body{{"session_id", id}, {"status", state_name(static_cast<int>(job->state))}};
    if (job->state == JobState::Failed) {
      body["error"] = {{"error", job->error}, {"detail", job->detail}};
    }
    return json_response(200, body);
  }
  auto s = store_.load(id);
  return json_response(200, {{"session_id", id}, {"status", "done"}, {"result", optimize_response(s)}});
}

HttpResponse Service::post_feedback(const std::string& id, const std::string& body) {
  auto j = parse_body(body);
  {
    std::lock_guard lock(mu_);
    if (in_flight(id)) throw Error(ErrorCode::JobInFlight, "a job for session " + id + " is running");
  }
  FeedbackItem item;
  try {
    item = j.get<FeedbackItem>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ValidationError, std::string("invalid feedback item: ") + e.what());
  }
  std::lock_guard lock(store_.lock_for(id));
  auto s = store_.load(id);
  auto stored = record_feedback(s, item, store_);
  return json_response(201, stored);
}

HttpResponse Service::post_reoptimize(const std::string& id) {
  {
    std::lock_guard lock(mu_);
    if (in_flight(id)) throw Error(ErrorCode::JobInFlight, "a job for session " + id + " is running");
  }
  ModelConfig teacher_cfg, student_cfg;
  {
    std::lock_guard lock(store_.lock_for(id));
    auto s = store_.load(id);
    if (unresolved_feedback_count(s) > 0) integrate_feedback(s, store_);
    if (!s.pending_reoptimization) {
      throw Error(ErrorCode::ReoptimizationNotRequired,
                  "no feedback has been recorded since the last optimization");
    }
    teacher_cfg = s.configs.teacher;
    student_cfg = s.configs.student;
  }
  Job job;
  job.session_id = id;
  job.run = [this, id, teacher_cfg, student_cfg] {
    auto ledger = std::make_shared<UsageLedger>();
    auto teacher = make_llm(teacher_cfg, ledger);
    auto student = make_llm(student_cfg, ledger);
    std::lock_guard lock(store_.lock_for(id));
    auto s = store_.load(id);
    reoptimize(s, teacher, student, store_);
  };
  enqueue(std::move(job));
  return json_response(202, {{"session_id", id}, {"status", "pending"}});
}

// --- socket layer -----------------------------------------------------------------

namespace {

httplib::Server* g_server = nullptr;

void stop_on_signal(int) {
  if (g_server) g_server->stop();
}

}  // namespace

int http_serve(const std::string& host, int port, ServiceOptions options) {
  Service service(std::move(options));
  httplib::Server server;
  const auto& opts = service.options();

  if (opts.static_dir && !server.set_mount_point("/ui", opts.static_dir->string())) {
    std::cerr << "static directory " << opts.static_dir->string() << " does not exist\n";
    return 1;
  }
  auto cors = [origin = opts.cors_origin](httplib::Response& res) {
    if (origin.empty()) return;
    res.set_header("Access-Control-Allow-Origin", origin);
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
  };
  auto forward = [&](const httplib::Request& req, httplib::Response& res) {
    auto r = service.handle(req.method, req.path, req.body);
    res.status = r.status;
    res.set_content(r.body, r.content_type);
    cors(res);
  };
  server.Get(".*", forward);
  server.Post(".*", forward);
  server.Options(".*", [&](const httplib::Request&, httplib::Response& res) {
    res.status = 204;
    cors(res);
  });

  g_server = &server;
  std::signal(SIGINT, stop_on_signal);
  std::signal(SIGTERM, stop_on_signal);
  std::cerr << "listening on " << host << ":" << port << "\n";
  const bool ok = server.listen(host, port);
  g_server = nullptr;
  if (!ok) {
    std::cerr << "cannot bind " << host << ":" << port << "\n";
    return 1;
  }
  service.wait_idle();
  return 0;
}

}  // namespace promptopt
