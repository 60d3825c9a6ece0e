#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "promptopt/config.hpp"
#include "promptopt/metrics.hpp"
#include "promptopt/optimizer.hpp"
#include "promptopt/prompt.hpp"
#include "promptopt/providers.hpp"
#include "promptopt/synthgen.hpp"

namespace promptopt {

inline constexpr int kSessionSchemaVersion = 1;

struct PromptVersion {
  CandidatePrompt prompt;
  EvaluationResult eval;
  std::optional<std::size_t> parent;
  std::string created_at;

  bool operator==(const PromptVersion&) const = default;
};

enum class FeedbackTarget { PromptVersion, SyntheticExample };
enum class FeedbackSource { User, Auto };

std::string_view to_string(FeedbackTarget t);
std::string_view to_string(FeedbackSource s);

struct FeedbackItem {
  std::string id;
  FeedbackTarget target = FeedbackTarget::PromptVersion;
  // Version index (as decimal text) or example id.
  std::string target_ref;
  std::string selected_text;
  std::size_t start_offset = 0;
  std::size_t end_offset = 0;
  std::string comment;
  FeedbackSource source = FeedbackSource::User;
  bool resolved = false;
  std::string created_at;

  bool operator==(const FeedbackItem&) const = default;
};

struct SessionConfigs {
  OptimizerConfig optimizer;
  ObjectiveConfig objective;
  ModelConfig teacher;
  ModelConfig student{ProviderId::Mock, "mock", kDefaultTemperature, kDefaultMaxTokens, "", "",
                      ModelRole::Student};
  MetricSpec metric;
  std::uint64_t seed = 0;
  std::size_t generation_token_budget = 2000;
  std::optional<std::string> stratify_field;

  bool operator==(const SessionConfigs&) const = default;
};

struct SessionEvent {
  std::string timestamp;
  std::string kind;
  nlohmann::json detail = nlohmann::json::object();

  bool operator==(const SessionEvent&) const = default;
};

struct Session {
  std::string id;
  std::string created_at;
  std::string updated_at;
  TaskSpec spec;
  SyntheticDataset dataset;
  DatasetSplit split;
  std::vector<PromptVersion> versions;
  std::vector<FeedbackItem> feedback;
  SessionConfigs configs;
  std::vector<SessionEvent> event_log;
  // Trial audit trail of the most recent optimization.
  std::vector<TrialRecord> trials;
  // Set by integrate_feedback, cleared by reoptimize.
  bool pending_reoptimization = false;

  const PromptVersion& latest() const;
  void log(std::string kind, nlohmann::json detail = nlohmann::json::object());

  bool operator==(const Session&) const = default;
};

void to_json(nlohmann::json& j, const PromptVersion& v);
void from_json(const nlohmann::json& j, PromptVersion& v);
void to_json(nlohmann::json& j, const FeedbackItem& f);
void from_json(const nlohmann::json& j, FeedbackItem& f);
void to_json(nlohmann::json& j, const SessionConfigs& c);
void from_json(const nlohmann::json& j, SessionConfigs& c);
void to_json(nlohmann::json& j, const SessionEvent& e);
void from_json(const nlohmann::json& j, SessionEvent& e);

// Session state without the event log and dataset rows, which live in their
// own files.
nlohmann::json session_state_json(const Session& s);

std::string new_uuid();

// Directory-per-session store: <root>/<id>/{session.json, events.jsonl,
// dataset.jsonl}. Writes go through a temporary file and a rename.
class SessionStore {
 public:
  explicit SessionStore(std::filesystem::path root);

  const std::filesystem::path& root() const noexcept { return root_; }

  void persist(const Session& s) const;
  Session load(const std::string& id) const;
  bool exists(const std::string& id) const;
  // Ids sorted by creation time, then id.
  std::vector<std::string> list() const;

  // Serializes mutations of one session.
  std::mutex& lock_for(const std::string& id) const;

 private:
  std::filesystem::path root_;
  mutable std::mutex map_mu_;
  mutable std::map<std::string, std::unique_ptr<std::mutex>> locks_;
};

Session create_session(const TaskSpec& spec, const SyntheticDataset& dataset,
                       const DatasetSplit& split, const OptimizationResult& result,
                       const SessionConfigs& configs, const SessionStore& store,
                       std::optional<std::string> id = std::nullopt);

// Text that offsets of feedback on `target`/`ref` point into.
std::string rendered_target(const Session& s, FeedbackTarget target, const std::string& ref);

// Validates offsets and selected text, assigns an id when missing, flags
// targeted examples and persists. An empty selected_text is filled from the
// offsets.
FeedbackItem record_feedback(Session& s, FeedbackItem item, const SessionStore& store);

std::size_t unresolved_feedback_count(const Session& s);

// Index of the version with the highest combined score; the earliest wins ties.
std::size_t best_version_index(const Session& s);

TaskSpec integrate_feedback(Session& s, const SessionStore& store);

struct ReoptimizeOptions {
  // When set, evaluation uses this scorer instead of the student.
  const ExampleScorer* scorer = nullptr;
};

void reoptimize(Session& s, const Llm& teacher, const Llm& student, const SessionStore& store,
                ReoptimizeOptions options = {});

inline constexpr double kLowScoreThreshold = 0.5;
inline constexpr std::size_t kJudgeWorstRecords = 5;

// Diagnoses the best version with the judge and records the reply as feedback
// spanning that version's whole rendered prompt.
FeedbackItem generate_auto_feedback(Session& s, const std::vector<std::string>& error_log,
                                    const Llm& judge, const SessionStore& store);

}  // namespace promptopt
