#include "promptopt/session.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "promptopt/teacher.hpp"
#include "promptopt/text.hpp"

namespace promptopt {

using nlohmann::json;
namespace fs = std::filesystem;

std::string_view to_string(FeedbackTarget t) {
  return t == FeedbackTarget::PromptVersion ? "prompt_version" : "synthetic_example";
}

std::string_view to_string(FeedbackSource s) { return s == FeedbackSource::User ? "user" : "auto"; }

namespace {

FeedbackTarget target_from_string(const std::string& s) {
  if (s == "prompt_version") return FeedbackTarget::PromptVersion;
  if (s == "synthetic_example") return FeedbackTarget::SyntheticExample;
  throw Error(ErrorCode::ValidationError, "unknown feedback target '" + s + "'");
}

FeedbackSource source_from_string(const std::string& s) {
  if (s == "user") return FeedbackSource::User;
  if (s == "auto") return FeedbackSource::Auto;
  throw Error(ErrorCode::ValidationError, "unknown feedback source '" + s + "'");
}

}  // namespace

void to_json(json& j, const PromptVersion& v) {
  j = json{{"prompt", v.prompt},
           {"eval", v.eval},
           {"parent", v.parent ? json(*v.parent) : json(nullptr)},
           {"created_at", v.created_at}};
}

void from_json(const json& j, PromptVersion& v) {
  v.prompt = j.at("prompt").get<CandidatePrompt>();
  v.eval = j.at("eval").get<EvaluationResult>();
  v.parent.reset();
  if (!j.at("parent").is_null()) v.parent = j["parent"].get<std::size_t>();
  v.created_at = j.at("created_at").get<std::string>();
}

void to_json(json& j, const FeedbackItem& f) {
  j = json{{"id", f.id},
           {"target", to_string(f.target)},
           {"target_ref", f.target_ref},
           {"selected_text", f.selected_text},
           {"start_offset", f.start_offset},
           {"end_offset", f.end_offset},
           {"comment", f.comment},
           {"source", to_string(f.source)},
           {"resolved", f.resolved},
           {"created_at", f.created_at}};
}

void from_json(const json& j, FeedbackItem& f) {
  f.id = j.value("id", std::string());
  f.target = target_from_string(j.at("target").get<std::string>());
  const auto& ref = j.at("target_ref");
  f.target_ref = ref.is_number_integer() ? std::to_string(ref.get<long long>())
                                         : ref.get<std::string>();
  f.selected_text = j.value("selected_text", std::string());
  f.start_offset = j.at("start_offset").get<std::size_t>();
  f.end_offset = j.at("end_offset").get<std::size_t>();
  f.comment = j.value("comment", std::string());
  f.source = source_from_string(j.value("source", std::string("user")));
  f.resolved = j.value("resolved", false);
  f.created_at = j.value("created_at", std::string());
}

void to_json(json& j, const SessionConfigs& c) {
  j = json{{"optimizer", c.optimizer},
           {"objective", c.objective},
           {"teacher", c.teacher},
           {"student", c.student},
           {"metric", c.metric},
           {"seed", c.seed},
           {"generation_token_budget", c.generation_token_budget},
           {"stratify_field", c.stratify_field ? json(*c.stratify_field) : json(nullptr)}};
}

void from_json(const json& j, SessionConfigs& c) {
  c.optimizer = j.at("optimizer").get<OptimizerConfig>();
  c.objective = j.at("objective").get<ObjectiveConfig>();
  c.teacher = j.at("teacher").get<ModelConfig>();
  c.student = j.at("student").get<ModelConfig>();
  c.metric = j.at("metric").get<MetricSpec>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.generation_token_budget = j.value("generation_token_budget", std::size_t{2000});
  c.stratify_field.reset();
  if (j.contains("stratify_field") && !j["stratify_field"].is_null()) {
    c.stratify_field = j["stratify_field"].get<std::string>();
  }
}

void to_json(json& j, const SessionEvent& e) {
  j = json{{"timestamp", e.timestamp}, {"kind", e.kind}, {"detail", e.detail}};
}

void from_json(const json& j, SessionEvent& e) {
  e.timestamp = j.at("timestamp").get<std::string>();
  e.kind = j.at("kind").get<std::string>();
  e.detail = j.value("detail", json::object());
}

const PromptVersion& Session::latest() const {
  if (versions.empty()) throw Error(ErrorCode::ValidationError, "session has no prompt versions");
  return versions.back();
}

void Session::log(std::string kind, json detail) {
  auto now = text::utc_timestamp_now();
  // Clock steps backwards must not break updated_at >= created_at.
  if (now < created_at) now = created_at;
  event_log.push_back({now, std::move(kind), std::move(detail)});
  updated_at = std::max(updated_at, now);
}

json session_state_json(const Session& s) {
  return json{{"schema_version", kSessionSchemaVersion},
              {"id", s.id},
              {"created_at", s.created_at},
              {"updated_at", s.updated_at},
              {"spec", s.spec},
              {"schema", s.dataset.schema},
              {"generation_log", s.dataset.generation_log},
              {"split", s.split},
              {"versions", s.versions},
              {"feedback", s.feedback},
              {"configs", s.configs},
              {"trials", s.trials},
              {"pending_reoptimization", s.pending_reoptimization}};
}

std::string new_uuid() {
  static std::mutex mu;
  static std::mt19937_64 engine{std::random_device{}()};
  std::uint64_t hi, lo;
  {
    std::lock_guard lock(mu);
    hi = engine();
    lo = engine();
  }
  hi = (hi & 0xffffffffffff0fffULL) | 0x0000000000004000ULL;
  lo = (lo & 0x3fffffffffffffffULL) | 0x8000000000000000ULL;
  char buf[37];
  std::snprintf(buf, sizeof buf, "%08x-%04x-%04x-%04x-%012llx",
                static_cast<unsigned>(hi >> 32), static_cast<unsigned>((hi >> 16) & 0xffff),
                static_cast<unsigned>(hi & 0xffff), static_cast<unsigned>(lo >> 48),
                static_cast<unsigned long long>(lo & 0xffffffffffffULL));
  return buf;
}

// --- store --------------------------------------------------------------------

namespace {

bool valid_id(const std::string& id) {
  if (id.empty() || id.size() > 64) return false;
  return std::all_of(id.begin(), id.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_';
  });
}

void write_atomic(const fs::path& path, const std::string& content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::StorageError, "cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw Error(ErrorCode::StorageError, "write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::StorageError, "cannot replace " + path.string() + ": " + ec.message());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::StorageError, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

SessionStore::SessionStore(fs::path root) : root_(std::move(root)) {}

void SessionStore::persist(const Session& s) const {
  if (!valid_id(s.id)) throw Error(ErrorCode::StorageError, "invalid session id '" + s.id + "'");
  const auto dir = root_ / s.id;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw Error(ErrorCode::StorageError,
                "cannot create session directory " + dir.string() +
                    (ec ? ": " + ec.message() : std::string()));
  }

  std::ostringstream dataset;
  write_jsonl(dataset, s.dataset.examples);
  std::string events;
  for (const auto& e : s.event_log) events += json(e).dump() + "\n";

  write_atomic(dir / "dataset.jsonl", dataset.str());
  write_atomic(dir / "events.jsonl", events);
  write_atomic(dir / "session.json", session_state_json(s).dump(2) + "\n");
}

bool SessionStore::exists(const std::string& id) const {
  return valid_id(id) && fs::is_regular_file(root_ / id / "session.json");
}

Session SessionStore::load(const std::string& id) const {
  if (!valid_id(id) || !fs::is_directory(root_ / id)) {
    throw Error(ErrorCode::NotFound, "no session '" + id + "'");
  }
  const auto dir = root_ / id;
  if (!fs::is_regular_file(dir / "session.json")) {
    throw Error(ErrorCode::StorageError, "session '" + id + "' has no session.json");
  }
  json state;
  try {
    state = json::parse(read_file(dir / "session.json"));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::StorageError, "session.json is not valid JSON: " + std::string(e.what()));
  }
  if (!state.is_object() || !state.contains("schema_version") ||
      !state["schema_version"].is_number_integer()) {
    throw Error(ErrorCode::SchemaVersionMismatch, "session.json carries no schema_version");
  }
  if (state["schema_version"].get<int>() != kSessionSchemaVersion) {
    throw Error(ErrorCode::SchemaVersionMismatch,
                "session.json has schema_version " + state["schema_version"].dump() +
                    ", expected " + std::to_string(kSessionSchemaVersion));
  }

  Session s;
  try {
    s.id = state.at("id").get<std::string>();
    s.created_at = state.at("created_at").get<std::string>();
    s.updated_at = state.at("updated_at").get<std::string>();
    s.spec = state.at("spec").get<TaskSpec>();
    s.dataset.schema = state.at("schema").get<FieldSchema>();
    s.dataset.generation_log = state.at("generation_log").get<std::vector<GenerationBatch>>();
    s.split = state.at("split").get<DatasetSplit>();
    s.versions = state.at("versions").get<std::vector<PromptVersion>>();
    s.feedback = state.at("feedback").get<std::vector<FeedbackItem>>();
    s.configs = state.at("configs").get<SessionConfigs>();
    s.trials = state.at("trials").get<std::vector<TrialRecord>>();
    s.pending_reoptimization = state.at("pending_reoptimization").get<bool>();

    std::istringstream dataset(read_file(dir / "dataset.jsonl"));
    s.dataset.examples = read_jsonl(dataset, s.dataset.schema);

    std::istringstream events(read_file(dir / "events.jsonl"));
    std::string line;
    while (std::getline(events, line)) {
      if (text::trim(line).empty()) continue;
      s.event_log.push_back(json::parse(line).get<SessionEvent>());
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::StorageError, "session '" + id + "' is corrupt: " + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::StorageError) throw;
    throw Error(ErrorCode::StorageError, "session '" + id + "' is corrupt: " + e.detail());
  }
  if (s.id != id) throw Error(ErrorCode::StorageError, "session.json id does not match directory");
  return s;
}

std::vector<std::string> SessionStore::list() const {
  std::vector<std::pair<std::string, std::string>> found;  // created_at, id
  std::error_code ec;
  if (!fs::is_directory(root_, ec)) return {};
  for (const auto& entry : fs::directory_iterator(root_, ec)) {
    auto id = entry.path().filename().string();
    if (!exists(id)) continue;
    try {
      auto state = json::parse(read_file(entry.path() / "session.json"));
      found.emplace_back(state.value("created_at", std::string()), id);
    } catch (const std::exception&) {
      found.emplace_back(std::string(), id);
    }
  }
  std::sort(found.begin(), found.end());
  std::vector<std::string> ids;
  for (auto& [created, id] : found) ids.push_back(std::move(id));
  return ids;
}

std::mutex& SessionStore::lock_for(const std::string& id) const {
  std::lock_guard lock(map_mu_);
  auto& slot = locks_[id];
  if (!slot) slot = std::make_unique<std::mutex>();
  return *slot;
}

// --- lifecycle ------------------------------------------------------------------

namespace {

bool same_prompt(const CandidatePrompt& a, const CandidatePrompt& b) {
  return a.instruction == b.instruction && a.demos == b.demos && a.technique == b.technique &&
         a.render_schema == b.render_schema;
}

PromptVersion make_version(CandidatePrompt prompt, EvaluationResult eval,
                           std::optional<std::size_t> parent, std::size_t index) {
  prompt.version_tag = "v" + std::to_string(index);
  return {std::move(prompt), std::move(eval), parent, text::utc_timestamp_now()};
}

}  // namespace

Session create_session(const TaskSpec& spec, const SyntheticDataset& dataset,
                       const DatasetSplit& split, const OptimizationResult& result,
                       const SessionConfigs& configs, const SessionStore& store,
                       std::optional<std::string> id) {
  if (result.best.instruction.empty() || result.best_eval.per_example.empty()) {
    throw Error(ErrorCode::ValidationError, "optimization result has no evaluated best prompt");
  }
  Session s;
  s.id = id.value_or(new_uuid());
  s.created_at = text::utc_timestamp_now();
  s.updated_at = s.created_at;
  s.spec = spec;
  s.dataset = dataset;
  s.split = split;
  s.configs = configs;
  s.trials = result.trials;
  s.versions.push_back(make_version(result.baseline, result.baseline_eval, std::nullopt, 0));
  if (!same_prompt(result.baseline, result.best)) {
    s.versions.push_back(make_version(result.best, result.best_eval, 0, 1));
  }
  s.log("created", {{"versions", s.versions.size()},
                    {"backend", to_string(result.backend)},
                    {"best_combined", result.best_eval.combined},
                    {"baseline_combined", result.baseline_eval.combined}});
  store.persist(s);
  return s;
}

std::string rendered_target(const Session& s, FeedbackTarget target, const std::string& ref) {
  if (target == FeedbackTarget::PromptVersion) {
    std::size_t idx = 0;
    auto [ptr, ec] = std::from_chars(ref.data(), ref.data() + ref.size(), idx);
    if (ec != std::errc() || ptr != ref.data() + ref.size() || idx >= s.versions.size()) {
      throw Error(ErrorCode::UnknownTarget, "no prompt version '" + ref + "'");
    }
    return s.versions[idx].prompt.render_template();
  }
  const auto* ex = s.dataset.find(ref);
  if (!ex) throw Error(ErrorCode::UnknownTarget, "no synthetic example '" + ref + "'");
  return serialize_record(s.dataset.schema, ex->inputs, ex->outputs);
}

FeedbackItem record_feedback(Session& s, FeedbackItem item, const SessionStore& store) {
  const auto target_text = rendered_target(s, item.target, item.target_ref);
  const auto length = text::codepoint_count(target_text);
  if (item.start_offset >= item.end_offset || item.end_offset > length) {
    throw Error(ErrorCode::OffsetOutOfRange,
                "span [" + std::to_string(item.start_offset) + ", " +
                    std::to_string(item.end_offset) + ") is not inside a target of length " +
                    std::to_string(length));
  }
  auto selected = text::codepoint_substr(target_text, item.start_offset, item.end_offset);
  if (!selected) throw Error(ErrorCode::OffsetOutOfRange, "span outside the target text");
  if (item.selected_text.empty()) {
    item.selected_text = *selected;
  } else if (item.selected_text != *selected) {
    throw Error(ErrorCode::ValidationError,
                "selected_text does not match the target text at the given offsets");
  }
  if (item.id.empty()) item.id = new_uuid();
  for (const auto& f : s.feedback) {
    if (f.id == item.id) throw Error(ErrorCode::ValidationError, "duplicate feedback id");
  }
  item.resolved = false;
  item.created_at = text::utc_timestamp_now();

  if (item.target == FeedbackTarget::SyntheticExample) s.dataset.find(item.target_ref)->flagged = true;
  s.feedback.push_back(item);
  s.log("feedback_recorded", {{"feedback_id", item.id},
                              {"target", to_string(item.target)},
                              {"target_ref", item.target_ref},
                              {"source", to_string(item.source)}});
  store.persist(s);
  return item;
}

std::size_t unresolved_feedback_count(const Session& s) {
  return static_cast<std::size_t>(
      std::count_if(s.feedback.begin(), s.feedback.end(), [](const auto& f) { return !f.resolved; }));
}

std::size_t best_version_index(const Session& s) {
  if (s.versions.empty()) throw Error(ErrorCode::ValidationError, "session has no prompt versions");
  std::size_t best = 0;
  for (std::size_t i = 1; i < s.versions.size(); ++i) {
    if (s.versions[i].eval.combined > s.versions[best].eval.combined) best = i;
  }
  return best;
}

TaskSpec integrate_feedback(Session& s, const SessionStore& store) {
  if (unresolved_feedback_count(s) == 0) {
    throw Error(ErrorCode::NoUnresolvedFeedback, "every feedback item is already resolved");
  }
  json applied = json::array();
  for (auto& f : s.feedback) {
    if (f.resolved) continue;
    if (f.target == FeedbackTarget::PromptVersion) {
      s.spec.feedback_notes.push_back("On '" + f.selected_text + "': " + f.comment);
    } else if (auto* ex = s.dataset.find(f.target_ref)) {
      ex->excluded = true;
      std::string note = "Avoid examples like '" + example_digest(*ex, s.dataset.schema) + "'";
      if (!f.comment.empty()) note += ": " + f.comment;
      s.spec.feedback_notes.push_back(std::move(note));
    }
    f.resolved = true;
    applied.push_back(f.id);
  }
  s.pending_reoptimization = true;
  s.log("feedback_integrated", {{"feedback_ids", applied}});
  store.persist(s);
  return s.spec;
}

void reoptimize(Session& s, const Llm& teacher, const Llm& student, const SessionStore& store,
                ReoptimizeOptions options) {
  if (!s.pending_reoptimization) {
    throw Error(ErrorCode::ReoptimizationNotRequired,
                "no feedback has been integrated since the last optimization");
  }
  const auto& cfg = s.configs;
  std::size_t replacements = 0;
  const auto active = s.dataset.active_count();
  const auto target = static_cast<std::size_t>(cfg.optimizer.n_samples);
  if (active < target) {
    GenerationOptions gen;
    gen.existing = s.dataset.examples;
    gen.first_batch_number = static_cast<int>(s.dataset.generation_log.size()) + 1;
    auto extra = generate_dataset(s.spec, s.dataset.schema, static_cast<int>(target - active),
                                  teacher, cfg.generation_token_budget, gen);
    replacements = extra.examples.size();
    for (auto& e : extra.examples) s.dataset.examples.push_back(std::move(e));
    for (auto& b : extra.generation_log) s.dataset.generation_log.push_back(b);
  }

  s.split = split_dataset(s.dataset, cfg.optimizer.train_ratio, cfg.stratify_field, cfg.seed);
  StudentScorer default_scorer(student);
  const ExampleScorer& scorer = options.scorer ? *options.scorer : default_scorer;
  auto result = optimize(s.spec, s.split, cfg.metric, cfg.optimizer, cfg.objective, teacher, scorer,
                         cfg.seed);

  const auto parent = s.versions.empty() ? std::optional<std::size_t>{}
                                         : std::optional<std::size_t>{s.versions.size() - 1};
  s.versions.push_back(make_version(result.best, result.best_eval, parent, s.versions.size()));
  s.trials = result.trials;
  s.pending_reoptimization = false;
  s.log("reoptimized", {{"version", s.versions.size() - 1},
                        {"replacement_examples", replacements},
                        {"best_combined", result.best_eval.combined}});
  store.persist(s);
}

FeedbackItem generate_auto_feedback(Session& s, const std::vector<std::string>& error_log,
                                    const Llm& judge, const SessionStore& store) {
  const auto version_index = best_version_index(s);
  const auto& version = s.versions[version_index];
  std::vector<ExampleScore> worst = version.eval.per_example;
  std::stable_sort(worst.begin(), worst.end(),
                   [](const auto& a, const auto& b) { return a.score < b.score; });
  const bool any_low = !worst.empty() && worst.front().score < kLowScoreThreshold;
  if (!any_low && error_log.empty()) {
    throw Error(ErrorCode::ValidationError,
                "nothing to diagnose: no low-scoring examples and no errors");
  }
  if (worst.size() > kJudgeWorstRecords) worst.resize(kJudgeWorstRecords);

  const auto prompt_text = version.prompt.render_template();
  std::ostringstream ss;
  ss << "You are reviewing a prompt that underperforms. Diagnose why and recommend one concrete "
        "refinement.\n\nPrompt:\n<<<\n"
     << prompt_text << ">>>\n\nLowest-scoring examples:\n";
  for (const auto& w : worst) {
    ss << "- id=" << w.id << " score=" << w.score << "\n  output: " << w.prediction << "\n";
    if (const auto* ex = s.dataset.find(w.id)) {
      std::vector<std::string> gold;
      for (const auto& [k, v] : ex->outputs) gold.push_back(k + "=" + v);
      ss << "  expected: " << text::join(gold, "; ") << "\n";
    }
  }
  if (!error_log.empty()) {
    ss << "\nErrors:\n";
    for (const auto& e : error_log) ss << "- " << e << "\n";
  }
  ss << "\nReply with your diagnosis and recommendation inside one fenced block.";

  CompletionRequest request;
  request.user_text = ss.str();
  auto parse = [](const std::string& reply) -> std::optional<std::string> {
    auto block = text::fenced_block(reply);
    if (!block || text::trim(*block).empty()) return std::nullopt;
    return std::string(text::trim(*block));
  };
  auto comment = ask_structured(judge, request, parse,
                                "Reply with the diagnosis inside one fenced block.",
                                ErrorCode::JudgeParseError, "judge reply");

  FeedbackItem item;
  item.target = FeedbackTarget::PromptVersion;
  item.target_ref = std::to_string(version_index);
  item.start_offset = 0;
  item.end_offset = text::codepoint_count(prompt_text);
  item.comment = std::move(comment);
  item.source = FeedbackSource::Auto;
  return record_feedback(s, std::move(item), store);
}

}  // namespace promptopt
