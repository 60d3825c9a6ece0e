#include <gtest/gtest.h>

#include <httplib.h>

#include <condition_variable>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include "promptopt/cli.hpp"
#include "promptopt/service.hpp"
#include "support.hpp"

using namespace promptopt;
using nlohmann::json;
using testsupport::TempDir;

namespace {

struct CliRun {
  int code = -1;
  std::string out;
  std::string err;
};

CliRun cli(std::vector<std::string> args) {
  std::vector<const char*> argv{"promptopt"};
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  CliRun r;
  r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::vector<std::string> with_store(const TempDir& dir, std::vector<std::string> rest) {
  std::vector<std::string> args{"--store-dir", dir.path().string(), "--mock-script",
                                testsupport::fixture("sentiment_mock.json").string()};
  args.insert(args.end(), rest.begin(), rest.end());
  return args;
}

ServiceOptions service_options(const TempDir& dir) {
  ServiceOptions o;
  o.store_dir = dir.path();
  o.mock_script = testsupport::fixture("sentiment_mock.json");
  return o;
}

json body_of(const HttpResponse& r) { return json::parse(r.body); }

std::string optimize_body(std::uint64_t seed = 3) {
  return json{{"raw_input", testsupport::kSentimentTask}, {"seed", seed}}.dump();
}

std::string run_session(Service& svc, std::uint64_t seed = 3) {
  auto r = svc.handle("POST", "/v1/optimize", optimize_body(seed));
  EXPECT_EQ(r.status, 202) << r.body;
  svc.wait_idle();
  return body_of(r)["session_id"].get<std::string>();
}

// Chat endpoint that holds every request until released, then answers 401.
struct GateServer {
  httplib::Server server;
  int port = 0;
  std::thread thread;
  std::mutex mu;
  std::condition_variable cv;
  bool open = false;
  int arrived = 0;

  GateServer() {
    port = server.bind_to_any_port("127.0.0.1");
    server.Post(".*", [this](const httplib::Request&, httplib::Response& res) {
      std::unique_lock lock(mu);
      ++arrived;
      cv.notify_all();
      cv.wait(lock, [&] { return open; });
      res.status = 401;
      res.set_content("{}", "application/json");
    });
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~GateServer() {
    release();
    server.stop();
    if (thread.joinable()) thread.join();
  }
  void wait_for_request() {
    std::unique_lock lock(mu);
    cv.wait(lock, [&] { return arrived > 0; });
  }
  void release() {
    {
      std::lock_guard lock(mu);
      open = true;
    }
    cv.notify_all();
  }
  json teacher() const {
    return {{"provider_id", "local-endpoint"},
            {"model_name", "gated"},
            {"api_base", "http://127.0.0.1:" + std::to_string(port) + "/v1"}};
  }
};

}  // namespace

// --- error names ------------------------------------------------------------------

TEST(ErrorNames, TableIsExhaustiveAndStatusesMatch) {
  const std::map<std::string, int> expected_status = {
      {"AuthError", 500},          {"RateLimited", 500},
      {"ProviderError", 500},      {"Timeout", 500},
      {"DuplicateKey", 400},       {"ExtractionParseError", 500},
      {"ClassificationError", 500}, {"SchemaError", 400},
      {"SelectionError", 500},     {"BudgetTooSmall", 400},
      {"GenerationStalled", 500},  {"SplitError", 400},
      {"LengthMismatch", 400},     {"EmptyExampleSet", 400},
      {"MetaParseError", 500},     {"ProposalParseError", 500},
      {"EmptyValidationSet", 400}, {"StorageError", 500},
      {"OffsetOutOfRange", 400},   {"UnknownTarget", 400},
      {"NoUnresolvedFeedback", 409}, {"ReoptimizationNotRequired", 409},
      {"JudgeParseError", 500},    {"NotFound", 404},
      {"SchemaVersionMismatch", 500}, {"ValidationError", 400},
      {"JobInFlight", 409},        {"QueueFull", 503},
  };
  ASSERT_EQ(expected_status.size(), kErrorNames.size());
  for (std::size_t i = 0; i < kErrorNames.size(); ++i) {
    const auto code = static_cast<ErrorCode>(i);
    const std::string name(kErrorNames[i]);
    ASSERT_EQ(error_code_from_name(name), code);
    Error e(code, "detail text");
    EXPECT_EQ(e.name(), name);
    EXPECT_EQ(e.detail(), "detail text");
    EXPECT_NE(std::string(e.what()).find(name), std::string::npos);
    ASSERT_TRUE(expected_status.count(name)) << name;
    EXPECT_EQ(http_status_for(code), expected_status.at(name)) << name;
  }
  EXPECT_FALSE(error_code_from_name("NoSuchError").has_value());
}

// --- request parsing -----------------------------------------------------------------

TEST(OptimizeRequestParsing, AcceptsKnownFieldsOnly) {
  auto r = parse_optimize_request({{"raw_input", "x"},
                                   {"strategy", "heavy_search"},
                                   {"backend", "structured_search"},
                                   {"lambda", 0.01},
                                   {"seed", 9},
                                   {"n_samples", 40},
                                   {"enhance", false},
                                   {"teacher", {{"model_name", "t"}}}});
  EXPECT_EQ(r.strategy, SearchStrategy::Heavy);
  EXPECT_EQ(r.backend, OptimizerBackend::StructuredSearch);
  EXPECT_EQ(r.lambda, 0.01);
  EXPECT_EQ(r.seed, 9u);
  EXPECT_EQ(r.n_samples, 40);
  EXPECT_EQ(r.enhance, false);
  EXPECT_EQ(r.teacher["model_name"], "t");

  for (const json& bad : {json{{"raw_input", "x"}, {"extra", 1}}, json{{"raw_input", "  "}},
                          json::object(), json{{"raw_input", 3}},
                          json{{"raw_input", "x"}, {"strategy", "fast"}},
                          json{{"raw_input", "x"}, {"lambda", -0.1}},
                          json{{"raw_input", "x"}, {"n_samples", 1}},
                          json{{"raw_input", "x"}, {"teacher", "gpt"}}}) {
    try {
      parse_optimize_request(bad);
      ADD_FAILURE() << bad.dump();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::ValidationError) << bad.dump();
    }
  }
}

TEST(OptimizeRequestParsing, ModelOverrides) {
  auto c = apply_model_overrides(ModelConfig{}, {{"model_name", "m2"}, {"temperature", 0.3}});
  EXPECT_EQ(c.model_name, "m2");
  EXPECT_DOUBLE_EQ(c.temperature, 0.3);
  EXPECT_THROW(apply_model_overrides(ModelConfig{}, {{"colour", "red"}}), Error);
  EXPECT_THROW(apply_model_overrides(ModelConfig{}, {{"provider_id", "nope"}}), Error);
}

// --- service ----------------------------------------------------------------------

TEST(Service, HealthAndRouting) {
  TempDir dir("svc-routes");
  Service svc(service_options(dir));
  auto h = svc.handle("GET", "/healthz", "");
  EXPECT_EQ(h.status, 200);
  EXPECT_EQ(h.body, "ok");
  EXPECT_EQ(h.content_type, "text/plain");

  auto missing = svc.handle("GET", "/v2/whatever", "");
  EXPECT_EQ(missing.status, 404);
  EXPECT_EQ(body_of(missing)["error"], "NotFound");

  for (auto [method, path] : std::vector<std::pair<std::string, std::string>>{
           {"POST", "/healthz"},
           {"GET", "/v1/optimize"},
           {"POST", "/v1/sessions"},
           {"POST", "/v1/sessions/abc"},
           {"GET", "/v1/sessions/abc/feedback"},
           {"GET", "/v1/sessions/abc/reoptimize"}}) {
    auto r = svc.handle(method, path, "{}");
    EXPECT_EQ(r.status, 400) << method << " " << path;
    EXPECT_EQ(body_of(r)["error"], "ValidationError");
  }

  auto list = svc.handle("GET", "/v1/sessions", "");
  EXPECT_EQ(list.status, 200);
  EXPECT_EQ(body_of(list), (json{{"sessions", json::array()}}));
  EXPECT_EQ(list.body, body_of(list).dump(2) + "\n");

  for (const auto* path : {"/v1/sessions/nope", "/v1/sessions/nope/dataset", "/v1/sessions/nope/status"}) {
    auto r = svc.handle("GET", path, "");
    EXPECT_EQ(r.status, 404) << path;
    EXPECT_EQ(body_of(r)["error"], "NotFound");
  }
}

TEST(Service, OptimizeValidation) {
  TempDir dir("svc-validate");
  Service svc(service_options(dir));
  for (const auto* body : {"not json", "[1,2]", R"({"raw_input": ""})", R"({"raw_input": "x", "k": 1})",
                           R"({"raw_input": "x", "teacher": {"bogus": 1}})"}) {
    auto r = svc.handle("POST", "/v1/optimize", body);
    EXPECT_EQ(r.status, 400) << body;
    EXPECT_EQ(body_of(r)["error"], "ValidationError") << body;
  }
}

TEST(Service, FullLifecycle) {
  TempDir dir("svc-life");
  Service svc(service_options(dir));
  auto accepted = svc.handle("POST", "/v1/optimize", optimize_body());
  ASSERT_EQ(accepted.status, 202);
  auto ack = body_of(accepted);
  EXPECT_EQ(ack["status"], "pending");
  const auto id = ack["session_id"].get<std::string>();
  svc.wait_idle();

  auto status = body_of(svc.handle("GET", "/v1/sessions/" + id + "/status", ""));
  EXPECT_EQ(status["status"], "done");
  for (const auto* key : {"session_id", "best_prompt_text", "best_version", "baseline_score",
                          "best_score", "prompt_length", "dataset_size", "trials_run"}) {
    EXPECT_TRUE(status["result"].contains(key)) << key;
  }
  EXPECT_EQ(status["result"]["dataset_size"], 30);

  auto doc = body_of(svc.handle("GET", "/v1/sessions/" + id, ""));
  EXPECT_EQ(doc["id"], id);
  EXPECT_EQ(doc["schema_version"], kSessionSchemaVersion);
  ASSERT_FALSE(doc["versions"].empty());
  EXPECT_TRUE(doc["versions"][0]["rendered_prompt"].is_string());
  EXPECT_TRUE(doc["versions"][0]["parent"].is_null());
  const auto n_versions = doc["versions"].size();

  auto data = body_of(svc.handle("GET", "/v1/sessions/" + id + "/dataset", ""));
  EXPECT_EQ(data["examples"].size(), 30u);
  EXPECT_EQ(data["schema"]["input_fields"], json::array({"text"}));

  auto listed = body_of(svc.handle("GET", "/v1/sessions", ""));
  ASSERT_EQ(listed["sessions"].size(), 1u);
  EXPECT_EQ(listed["sessions"][0]["id"], id);

  // Feedback errors.
  auto bad_span = svc.handle("POST", "/v1/sessions/" + id + "/feedback",
                             json{{"target", "prompt_version"}, {"target_ref", 0},
                                  {"start_offset", 5}, {"end_offset", 100000}, {"comment", "x"}}
                                 .dump());
  EXPECT_EQ(bad_span.status, 400);
  EXPECT_EQ(body_of(bad_span)["error"], "OffsetOutOfRange");
  auto bad_target = svc.handle("POST", "/v1/sessions/" + id + "/feedback",
                               json{{"target", "synthetic_example"}, {"target_ref", "ex-9999"},
                                    {"start_offset", 0}, {"end_offset", 1}}
                                   .dump());
  EXPECT_EQ(bad_target.status, 400);
  EXPECT_EQ(body_of(bad_target)["error"], "UnknownTarget");
  auto malformed = svc.handle("POST", "/v1/sessions/" + id + "/feedback", R"({"target": "prompt"})");
  EXPECT_EQ(malformed.status, 400);
  auto no_session = svc.handle("POST", "/v1/sessions/zzz/feedback",
                               json{{"target", "prompt_version"}, {"target_ref", "0"},
                                    {"start_offset", 0}, {"end_offset", 1}}
                                   .dump());
  EXPECT_EQ(no_session.status, 404);

  auto not_required = svc.handle("POST", "/v1/sessions/" + id + "/reoptimize", "");
  EXPECT_EQ(not_required.status, 409);
  EXPECT_EQ(body_of(not_required)["error"], "ReoptimizationNotRequired");

  auto created = svc.handle("POST", "/v1/sessions/" + id + "/feedback",
                            json{{"target", "prompt_version"}, {"target_ref", "0"},
                                 {"start_offset", 0}, {"end_offset", 4},
                                 {"comment", "Say what to do with mixed reviews"}}
                                .dump());
  ASSERT_EQ(created.status, 201) << created.body;
  auto item = body_of(created);
  EXPECT_EQ(item["resolved"], false);
  EXPECT_EQ(item["source"], "user");
  EXPECT_EQ(item["selected_text"].get<std::string>().size(), 4u);

  auto again = svc.handle("POST", "/v1/sessions/" + id + "/reoptimize", "");
  ASSERT_EQ(again.status, 202) << again.body;
  svc.wait_idle();
  EXPECT_EQ(body_of(svc.handle("GET", "/v1/sessions/" + id + "/status", ""))["status"], "done");
  auto after = body_of(svc.handle("GET", "/v1/sessions/" + id, ""));
  EXPECT_EQ(after["versions"].size(), n_versions + 1);
  EXPECT_EQ(after["versions"].back()["parent"], n_versions - 1);
  EXPECT_EQ(after["feedback"][0]["resolved"], true);
  EXPECT_EQ(after["pending_reoptimization"], false);
  EXPECT_EQ(svc.handle("POST", "/v1/sessions/" + id + "/reoptimize", "").status, 409);
}

TEST(Service, RestartServesIdenticalDocuments) {
  TempDir dir("svc-restart");
  std::string id;
  std::vector<std::string> bodies;
  auto snapshot = [&](Service& svc) {
    return std::vector<std::string>{svc.handle("GET", "/v1/sessions", "").body,
                                    svc.handle("GET", "/v1/sessions/" + id, "").body,
                                    svc.handle("GET", "/v1/sessions/" + id + "/dataset", "").body,
                                    svc.handle("GET", "/v1/sessions/" + id + "/status", "").body};
  };
  {
    Service svc(service_options(dir));
    id = run_session(svc);
    bodies = snapshot(svc);
  }
  Service restarted(service_options(dir));
  EXPECT_EQ(snapshot(restarted), bodies);
}

TEST(Service, SameRequestAndSeedGiveSameVersions) {
  TempDir a("svc-det-a"), b("svc-det-b");
  Service sa(service_options(a)), sb(service_options(b));
  auto da = body_of(sa.handle("GET", "/v1/sessions/" + run_session(sa, 11), ""));
  auto db = body_of(sb.handle("GET", "/v1/sessions/" + run_session(sb, 11), ""));
  ASSERT_EQ(da["versions"].size(), db["versions"].size());
  for (std::size_t i = 0; i < da["versions"].size(); ++i) {
    EXPECT_EQ(da["versions"][i]["rendered_prompt"], db["versions"][i]["rendered_prompt"]);
    EXPECT_EQ(da["versions"][i]["eval"], db["versions"][i]["eval"]);
  }
  EXPECT_EQ(da["trials"], db["trials"]);
  EXPECT_EQ(da["split"], db["split"]);
}

TEST(Service, QueueDepthZeroRejects) {
  TempDir dir("svc-full");
  auto opts = service_options(dir);
  opts.queue_depth = 0;
  Service svc(opts);
  auto r = svc.handle("POST", "/v1/optimize", optimize_body());
  EXPECT_EQ(r.status, 503);
  EXPECT_EQ(body_of(r)["error"], "QueueFull");
}

TEST(Service, InFlightJobsAndFailures) {
  TempDir dir("svc-gate");
  GateServer gate;
  auto opts = service_options(dir);
  opts.queue_depth = 1;
  Service svc(opts);
  auto gated = json{{"raw_input", testsupport::kSentimentTask}, {"teacher", gate.teacher()}};

  auto first = svc.handle("POST", "/v1/optimize", gated.dump());
  ASSERT_EQ(first.status, 202) << first.body;
  const auto id = body_of(first)["session_id"].get<std::string>();
  gate.wait_for_request();

  EXPECT_EQ(body_of(svc.handle("GET", "/v1/sessions/" + id + "/status", ""))["status"], "running");
  auto fb = svc.handle("POST", "/v1/sessions/" + id + "/feedback",
                       json{{"target", "prompt_version"}, {"target_ref", "0"},
                            {"start_offset", 0}, {"end_offset", 1}}
                           .dump());
  EXPECT_EQ(fb.status, 409);
  EXPECT_EQ(body_of(fb)["error"], "JobInFlight");
  EXPECT_EQ(svc.handle("POST", "/v1/sessions/" + id + "/reoptimize", "").status, 409);

  auto second = svc.handle("POST", "/v1/optimize", gated.dump());
  ASSERT_EQ(second.status, 202);
  const auto second_id = body_of(second)["session_id"].get<std::string>();
  EXPECT_EQ(body_of(svc.handle("GET", "/v1/sessions/" + second_id + "/status", ""))["status"],
            "pending");
  auto third = svc.handle("POST", "/v1/optimize", gated.dump());
  EXPECT_EQ(third.status, 503);
  EXPECT_EQ(body_of(third)["error"], "QueueFull");

  gate.release();
  svc.wait_idle();
  auto failed = body_of(svc.handle("GET", "/v1/sessions/" + id + "/status", ""));
  EXPECT_EQ(failed["status"], "error");
  EXPECT_EQ(failed["error"]["error"], "AuthError");
  EXPECT_EQ(svc.handle("GET", "/v1/sessions/" + id, "").status, 404);
}

// --- command line ------------------------------------------------------------------

TEST(Cli, UsageErrorsExitTwo) {
  auto none = cli({});
  EXPECT_EQ(none.code, kExitUsageError);
  auto unknown = cli({"optimize", "--input", "x", "--bogus"});
  EXPECT_EQ(unknown.code, kExitUsageError);
  EXPECT_NE(unknown.err.find("--bogus"), std::string::npos);
  auto missing = cli({"optimize"});
  EXPECT_EQ(missing.code, kExitUsageError);
  EXPECT_NE(missing.err.find("--input"), std::string::npos);
  auto bad_enum = cli({"optimize", "--input", "x", "--strategy", "fast"});
  EXPECT_EQ(bad_enum.code, kExitUsageError);
  EXPECT_NE(bad_enum.err.find("--strategy"), std::string::npos);
  auto negative = cli({"optimize", "--input", "x", "--lambda", "-1"});
  EXPECT_EQ(negative.code, kExitUsageError);
  auto both = cli({"feedback", "--session", "s", "--start", "0", "--end", "1", "--comment", "c"});
  EXPECT_EQ(both.code, kExitUsageError);
  EXPECT_EQ(cli({"--help"}).code, kExitOk);
}

TEST(Cli, DomainErrorsExitOne) {
  TempDir dir("cli-domain");
  auto missing = cli(with_store(dir, {"sessions", "show", "nope"}));
  EXPECT_EQ(missing.code, kExitDomainError);
  EXPECT_NE(missing.err.find("NotFound"), std::string::npos);

  auto as_json = cli(with_store(dir, {"--json", "sessions", "show", "nope"}));
  EXPECT_EQ(as_json.code, kExitDomainError);
  EXPECT_EQ(json::parse(as_json.out)["error"], "NotFound");

  ::unsetenv("PROMPTOPT_UNSET_KEY");
  auto auth = cli({"--store-dir", dir.path().string(), "--provider", "openai-compatible", "--model",
                   "m", "--api-key-ref", "PROMPTOPT_UNSET_KEY", "optimize", "--input",
                   testsupport::kSentimentTask});
  EXPECT_EQ(auth.code, kExitDomainError);
  EXPECT_NE(auth.err.find("AuthError"), std::string::npos);

  auto empty = cli(with_store(dir, {"optimize", "--input", "   "}));
  EXPECT_EQ(empty.code, kExitDomainError);
  EXPECT_NE(empty.err.find("ValidationError"), std::string::npos);
}

TEST(Cli, EndToEndSessionCommands) {
  TempDir dir("cli-e2e");
  auto opt = cli(with_store(dir, {"--json", "optimize", "--input", testsupport::kSentimentTask,
                                  "--seed", "4"}));
  ASSERT_EQ(opt.code, kExitOk) << opt.err;
  auto summary = json::parse(opt.out);
  const auto id = summary["session_id"].get<std::string>();
  EXPECT_EQ(summary["dataset_size"], 30);

  auto plain = cli(with_store(dir, {"sessions", "list"}));
  EXPECT_EQ(plain.code, kExitOk);
  EXPECT_NE(plain.out.find(id), std::string::npos);

  auto show = cli(with_store(dir, {"--json", "sessions", "show", id}));
  ASSERT_EQ(show.code, kExitOk);
  EXPECT_EQ(json::parse(show.out)["id"], id);

  const auto csv = (dir.path() / "scores.csv").string();
  auto eval = cli(with_store(dir, {"evaluate", "--session", id, "--version", "0", "--csv", csv}));
  ASSERT_EQ(eval.code, kExitOk) << eval.err;
  EXPECT_NE(eval.out.find("performance: "), std::string::npos);
  EXPECT_TRUE(std::filesystem::exists(csv));
  EXPECT_EQ(cli(with_store(dir, {"evaluate", "--session", id, "--version", "99"})).code,
            kExitDomainError);

  auto bad_fb = cli(with_store(dir, {"feedback", "--session", id, "--version", "0", "--start", "3",
                                     "--end", "2", "--comment", "c"}));
  EXPECT_EQ(bad_fb.code, kExitDomainError);
  EXPECT_NE(bad_fb.err.find("OffsetOutOfRange"), std::string::npos);

  auto fb = cli(with_store(dir, {"feedback", "--session", id, "--version", "0", "--start", "0",
                                 "--end", "4", "--comment", "Handle mixed reviews"}));
  ASSERT_EQ(fb.code, kExitOk) << fb.err;
  EXPECT_NE(fb.out.find("feedback_id: "), std::string::npos);

  auto re = cli(with_store(dir, {"reoptimize", "--session", id}));
  ASSERT_EQ(re.code, kExitOk) << re.err;
  EXPECT_NE(re.out.find("new_version: "), std::string::npos);
  auto re_again = cli(with_store(dir, {"reoptimize", "--session", id}));
  EXPECT_EQ(re_again.code, kExitDomainError);
  EXPECT_NE(re_again.err.find("ReoptimizationNotRequired"), std::string::npos);
}

TEST(Cli, GenerateDataWritesJsonLines) {
  TempDir dir("cli-gen");
  const auto out = (dir.path() / "data.jsonl").string();
  auto r = cli(with_store(dir, {"generate-data", "--input", testsupport::kSentimentTask, "--n", "5",
                                "--out", out}));
  ASSERT_EQ(r.code, kExitOk) << r.err;
  std::ifstream in(out);
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) {
    auto row = json::parse(line);
    EXPECT_TRUE(row["inputs"].contains("text"));
    EXPECT_TRUE(row["outputs"].contains("label"));
    ++lines;
  }
  EXPECT_EQ(lines, 5);
}
