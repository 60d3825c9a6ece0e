#include "promptopt/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "promptopt/metrics.hpp"
#include "promptopt/pipeline.hpp"
#include "promptopt/service.hpp"
#include "promptopt/session.hpp"
#include "promptopt/text.hpp"

namespace promptopt {

using nlohmann::json;

namespace {

struct ModelFlags {
  std::string provider = "mock";
  std::string model;
  std::string api_base;
  std::string api_key_ref;
  std::string student_provider;
  std::string student_model;
};

struct Globals {
  std::string store_dir = "sessions";
  std::string mock_script;
  bool json_output = false;
  ModelFlags models;
};

std::string default_key_ref(ProviderId id) {
  switch (id) {
    case ProviderId::OpenAICompatible: return "OPENAI_API_KEY";
    case ProviderId::AnthropicCompatible: return "ANTHROPIC_API_KEY";
    default: return "";
  }
}

ModelConfig model_config(const std::string& provider, const std::string& model,
                         const ModelFlags& flags, ModelRole role) {
  ModelConfig c;
  c.provider = provider_id_from_string(provider);
  c.model_name = model.empty() ? std::string(c.provider == ProviderId::Mock ? "mock" : "") : model;
  if (c.model_name.empty()) {
    throw Error(ErrorCode::ValidationError, "--model is required for provider " + provider);
  }
  c.api_base = flags.api_base;
  c.api_key_ref = flags.api_key_ref.empty() ? default_key_ref(c.provider) : flags.api_key_ref;
  c.role = role;
  c.validate();
  return c;
}

ModelConfig teacher_config(const ModelFlags& f) {
  return model_config(f.provider, f.model, f, ModelRole::Teacher);
}

ModelConfig student_config(const ModelFlags& f) {
  auto provider = f.student_provider.empty() ? f.provider : f.student_provider;
  auto model = f.student_model.empty() ? f.model : f.student_model;
  return model_config(provider, model, f, ModelRole::Student);
}

std::optional<std::filesystem::path> mock_path(const Globals& g) {
  if (g.mock_script.empty()) return std::nullopt;
  return std::filesystem::path(g.mock_script);
}

Llm make_llm(const ModelConfig& config, const Globals& g,
             const std::shared_ptr<UsageLedger>& ledger) {
  return Llm(config, make_provider(config, mock_path(g)), ledger);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::ValidationError, "cannot read file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string task_input(const std::string& input, const std::string& input_file) {
  auto raw = input_file.empty() ? input : read_text_file(input_file);
  if (text::trim(raw).empty()) throw Error(ErrorCode::ValidationError, "task input is empty");
  return raw;
}

void print_summary(std::ostream& out, const Session& s) {
  auto summary = optimize_response(s);
  out << "session_id: " << s.id << "\n"
      << "versions: " << s.versions.size() << "\n"
      << "baseline_score: " << summary["baseline_score"].get<double>() << "\n"
      << "best_score: " << summary["best_score"].get<double>() << "\n"
      << "prompt_length: " << summary["prompt_length"].get<std::size_t>() << "\n"
      << "dataset_size: " << summary["dataset_size"].get<std::size_t>() << "\n"
      << "trials_run: " << summary["trials_run"].get<std::size_t>() << "\n"
      << "\n" << summary["best_prompt_text"].get<std::string>();
}

template <typename T>
T parse_enum(std::optional<T> parsed, const std::string& flag, const std::string& value) {
  if (!parsed) throw CLI::ValidationError(flag, "unknown value '" + value + "'");
  return *parsed;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Automatic prompt optimization: task objective in, optimized prompt out."};
  app.name("promptopt");
  app.require_subcommand(1);
  app.fallthrough(true);

  Globals g;
  app.add_option("--store-dir", g.store_dir, "Session store directory")->capture_default_str();
  app.add_option("--mock-script", g.mock_script, "JSON file of match/response pairs for the mock provider");
  app.add_flag("--json", g.json_output, "Machine-readable JSON output");
  app.add_option("--provider", g.models.provider,
                 "openai-compatible | anthropic-compatible | local-endpoint | mock")
      ->capture_default_str();
  app.add_option("--model", g.models.model, "Model name for teacher and student");
  app.add_option("--api-base", g.models.api_base, "Provider base URL");
  app.add_option("--api-key-ref", g.models.api_key_ref, "Environment variable holding the credential");
  app.add_option("--student-provider", g.models.student_provider, "Student provider, if different");
  app.add_option("--student-model", g.models.student_model, "Student model, if different");

  // optimize
  auto* optimize_cmd = app.add_subcommand("optimize", "Run the full optimization pipeline");
  std::string input, input_file, strategy = "quick_search", backend;
  std::optional<double> lambda;
  std::uint64_t seed = 0;
  std::optional<int> n_samples;
  bool no_enhance = false;
  auto* input_opt = optimize_cmd->add_option("--input", input, "Task objective text");
  auto* input_file_opt = optimize_cmd->add_option("--input-file", input_file, "File holding the task objective");
  input_opt->excludes(input_file_opt);
  optimize_cmd->add_option("--strategy", strategy, "quick_search | moderate_search | heavy_search")
      ->capture_default_str();
  optimize_cmd->add_option("--backend", backend, "simple_meta_prompt | structured_search");
  optimize_cmd->add_option("--lambda", lambda, "Length penalty weight")->check(CLI::NonNegativeNumber);
  optimize_cmd->add_option("--seed", seed, "Random seed")->capture_default_str();
  optimize_cmd->add_option("--n-samples", n_samples, "Override the strategy's dataset size")
      ->check(CLI::Range(2, 100000));
  optimize_cmd->add_flag("--no-enhance", no_enhance, "Skip refinement of inferred fields");

  // generate-data
  auto* generate_cmd = app.add_subcommand("generate-data", "Generate a synthetic dataset");
  std::string gen_input, gen_input_file, schema_file, out_file;
  int gen_n = 30;
  auto* gen_input_opt = generate_cmd->add_option("--input", gen_input, "Task objective text");
  auto* gen_file_opt = generate_cmd->add_option("--input-file", gen_input_file, "File holding the task objective");
  gen_input_opt->excludes(gen_file_opt);
  generate_cmd->add_option("--n", gen_n, "Number of examples")->check(CLI::PositiveNumber)->capture_default_str();
  generate_cmd->add_option("--schema-file", schema_file, "JSON {input_fields, output_fields}")
      ->check(CLI::ExistingFile);
  generate_cmd->add_option("--out", out_file, "Write JSON Lines here instead of stdout");
  generate_cmd->add_flag("--no-enhance", no_enhance, "Skip refinement of inferred fields");

  // evaluate
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Re-evaluate a stored prompt version");
  std::string eval_session, metric_name, csv_file;
  std::optional<std::size_t> eval_version;
  evaluate_cmd->add_option("--session", eval_session, "Session id")->required();
  evaluate_cmd->add_option("--metric", metric_name,
                           "exact_match | token_f1 | macro_f1 | similarity | similarity_plus_exact_match");
  evaluate_cmd->add_option("--version", eval_version, "Version index (default: latest)");
  evaluate_cmd->add_option("--csv", csv_file, "Write per-example scores as CSV");

  // feedback
  auto* feedback_cmd = app.add_subcommand("feedback", "Attach feedback to a span of a prompt or example");
  std::string fb_session, fb_comment, fb_example, fb_text;
  std::optional<std::size_t> fb_version;
  std::size_t fb_start = 0, fb_end = 0;
  feedback_cmd->add_option("--session", fb_session, "Session id")->required();
  auto* version_opt = feedback_cmd->add_option("--version", fb_version, "Prompt version index");
  auto* example_opt = feedback_cmd->add_option("--example", fb_example, "Synthetic example id");
  version_opt->excludes(example_opt);
  feedback_cmd->add_option("--start", fb_start, "Start offset (characters)")->required();
  feedback_cmd->add_option("--end", fb_end, "End offset (characters, exclusive)")->required();
  feedback_cmd->add_option("--comment", fb_comment, "Comment text")->required();
  feedback_cmd->add_option("--text", fb_text, "Selected text, checked against the offsets");

  // reoptimize
  auto* reoptimize_cmd = app.add_subcommand("reoptimize", "Integrate feedback and optimize again");
  std::string re_session;
  reoptimize_cmd->add_option("--session", re_session, "Session id")->required();

  // sessions
  auto* sessions_cmd = app.add_subcommand("sessions", "Inspect stored sessions");
  sessions_cmd->require_subcommand(1);
  auto* list_cmd = sessions_cmd->add_subcommand("list", "List sessions");
  auto* show_cmd = sessions_cmd->add_subcommand("show", "Show one session");
  std::string show_id;
  show_cmd->add_option("id", show_id, "Session id")->required();

  // serve
  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP service");
  int port = 8080;
  std::string host = "127.0.0.1", cors_origin, static_dir;
  serve_cmd->add_option("--port", port, "Port")->check(CLI::Range(1, 65535))->capture_default_str();
  serve_cmd->add_option("--host", host, "Bind address")->capture_default_str();
  serve_cmd->add_option("--cors-origin", cors_origin, "Allowed CORS origin for the web UI");
  serve_cmd->add_option("--static-dir", static_dir, "Directory served under /ui");

  std::vector<std::string> args;
  for (int i = argc - 1; i >= 1; --i) args.emplace_back(argv[i]);

  try {
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsageError;
  }

  auto report = [&](const json& j, auto&& plain) {
    if (g.json_output) {
      out << j.dump(2) << "\n";
    } else {
      plain();
    }
  };

  try {
    SessionStore store(g.store_dir);

    if (*optimize_cmd) {
      if (input.empty() && input_file.empty()) {
        throw CLI::RequiredError("--input or --input-file");
      }
      PipelineOptions popts;
      popts.strategy = parse_enum(strategy_from_string(strategy), "--strategy", strategy);
      if (!backend.empty()) popts.backend = parse_enum(backend_from_string(backend), "--backend", backend);
      popts.lambda = lambda;
      popts.seed = seed;
      popts.n_samples = n_samples;
      popts.enhance = !no_enhance;
      auto ledger = std::make_shared<UsageLedger>();
      auto teacher = make_llm(teacher_config(g.models), g, ledger);
      auto student = make_llm(student_config(g.models), g, ledger);
      auto raw = task_input(input, input_file);
      auto session = run_pipeline(raw, popts, teacher, student, store);
      report(optimize_response(session), [&] { print_summary(out, session); });
      return kExitOk;
    }

    if (*generate_cmd) {
      if (gen_input.empty() && gen_input_file.empty()) {
        throw CLI::RequiredError("--input or --input-file");
      }
      PipelineOptions popts;
      popts.enhance = !no_enhance;
      popts.n_samples = std::max(gen_n, 2);
      auto ledger = std::make_shared<UsageLedger>();
      auto teacher = make_llm(teacher_config(g.models), g, ledger);
      auto task = configure_task(task_input(gen_input, gen_input_file), popts, teacher);
      if (!schema_file.empty()) {
        try {
          task.schema = json::parse(read_text_file(schema_file)).get<FieldSchema>();
        } catch (const json::exception& e) {
          throw Error(ErrorCode::SchemaError, std::string("invalid schema file: ") + e.what());
        }
        task.schema.validate();
        task.spec.schema = task.schema;
      }
      auto dataset = generate_dataset(task.spec, task.schema, gen_n, teacher,
                                      popts.generation_token_budget);
      if (out_file.empty()) {
        write_jsonl(out, dataset.examples);
      } else {
        std::ofstream file(out_file, std::ios::binary | std::ios::trunc);
        if (!file) throw Error(ErrorCode::StorageError, "cannot write " + out_file);
        write_jsonl(file, dataset.examples);
        report(json{{"examples", dataset.examples.size()}, {"path", out_file},
                    {"generation_log", dataset.generation_log}},
               [&] { out << "wrote " << dataset.examples.size() << " examples to " << out_file << "\n"; });
      }
      return kExitOk;
    }

    if (*evaluate_cmd) {
      auto s = store.load(eval_session);
      const auto index = eval_version.value_or(s.versions.size() - 1);
      if (index >= s.versions.size()) {
        throw Error(ErrorCode::UnknownTarget, "no prompt version " + std::to_string(index));
      }
      auto metric = s.configs.metric;
      if (!metric_name.empty()) {
        metric.primary = parse_enum(metric_kind_from_string(metric_name), "--metric", metric_name);
      }
      auto ledger = std::make_shared<UsageLedger>();
      auto student = make_llm(s.configs.student, g, ledger);
      auto result = evaluate(s.versions[index].prompt, s.split.val, metric, student, s.configs.objective);
      if (!csv_file.empty()) {
        std::ofstream file(csv_file, std::ios::binary | std::ios::trunc);
        if (!file) throw Error(ErrorCode::StorageError, "cannot write " + csv_file);
        write_per_example_csv(file, result);
      }
      report(json(result), [&] {
        out << "version: " << index << "\n"
            << "metric: " << to_string(result.metric.primary) << "\n"
            << "performance: " << result.performance << "\n"
            << "prompt_length: " << result.prompt_length << "\n"
            << "combined: " << result.combined << "\n";
      });
      return kExitOk;
    }

    if (*feedback_cmd) {
      if (!fb_version && fb_example.empty()) throw CLI::RequiredError("--version or --example");
      std::lock_guard lock(store.lock_for(fb_session));
      auto s = store.load(fb_session);
      FeedbackItem item;
      if (fb_version) {
        item.target = FeedbackTarget::PromptVersion;
        item.target_ref = std::to_string(*fb_version);
      } else {
        item.target = FeedbackTarget::SyntheticExample;
        item.target_ref = fb_example;
      }
      item.start_offset = fb_start;
      item.end_offset = fb_end;
      item.comment = fb_comment;
      item.selected_text = fb_text;
      auto stored = record_feedback(s, item, store);
      report(json(stored), [&] {
        out << "feedback_id: " << stored.id << "\nselected_text: " << stored.selected_text << "\n";
      });
      return kExitOk;
    }

    if (*reoptimize_cmd) {
      std::lock_guard lock(store.lock_for(re_session));
      auto s = store.load(re_session);
      if (unresolved_feedback_count(s) > 0) integrate_feedback(s, store);
      auto ledger = std::make_shared<UsageLedger>();
      auto teacher = make_llm(s.configs.teacher, g, ledger);
      auto student = make_llm(s.configs.student, g, ledger);
      reoptimize(s, teacher, student, store);
      report(optimize_response(s), [&] {
        out << "new_version: " << s.versions.size() - 1 << "\n";
        print_summary(out, s);
      });
      return kExitOk;
    }

    if (*list_cmd) {
      json items = json::array();
      for (const auto& id : store.list()) {
        auto s = store.load(id);
        items.push_back({{"id", s.id}, {"created_at", s.created_at}, {"versions", s.versions.size()},
                         {"task", s.spec.task_text()}});
      }
      report(items, [&] {
        for (const auto& item : items) {
          out << item["id"].get<std::string>() << "  " << item["created_at"].get<std::string>()
              << "  versions=" << item["versions"].get<std::size_t>() << "  "
              << item["task"].get<std::string>() << "\n";
        }
      });
      return kExitOk;
    }

    if (*show_cmd) {
      auto s = store.load(show_id);
      report(session_document(s), [&] {
        out << "session_id: " << s.id << "\ncreated_at: " << s.created_at << "\n";
        for (std::size_t i = 0; i < s.versions.size(); ++i) {
          const auto& v = s.versions[i];
          out << "version " << i << ": combined=" << v.eval.combined
              << " performance=" << v.eval.performance << " length=" << v.eval.prompt_length
              << "\n";
        }
        out << "feedback items: " << s.feedback.size() << " (" << unresolved_feedback_count(s)
            << " unresolved)\n";
      });
      return kExitOk;
    }

    if (*serve_cmd) {
      ServiceOptions sopts;
      sopts.store_dir = g.store_dir;
      sopts.mock_script = mock_path(g);
      sopts.teacher = teacher_config(g.models);
      sopts.student = student_config(g.models);
      sopts.cors_origin = cors_origin;
      if (!static_dir.empty()) sopts.static_dir = static_dir;
      return http_serve(host, port, std::move(sopts));
    }
  } catch (const CLI::Error& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsageError;
  } catch (const Error& e) {
    if (g.json_output) {
      out << json{{"error", e.name()}, {"detail", e.detail()}}.dump(2) << "\n";
    }
    err << "error: " << e.name() << ": " << e.detail() << "\n";
    return kExitDomainError;
  }
  err << app.help();
  return kExitUsageError;
}

}  // namespace promptopt
