#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "promptopt/providers.hpp"

namespace promptopt {

enum class TaskType {
  Classification,
  Qa,
  Generation,
  Summarization,
  Translation,
  MathReasoning,
  CodeGeneration,
  Other,
};

inline constexpr std::array<TaskType, 8> kAllTaskTypes = {
    TaskType::Classification, TaskType::Qa,          TaskType::Generation,
    TaskType::Summarization,  TaskType::Translation, TaskType::MathReasoning,
    TaskType::CodeGeneration, TaskType::Other,
};

enum class Complexity { Simple, Moderate, Complex };
enum class SearchStrategy { Quick, Moderate, Heavy };
enum class OptimizerBackend { SimpleMetaPrompt, StructuredSearch };
enum class PromptingTechnique { Predict, ChainOfThought, ProgramOfThought, React };
enum class MetricKind { ExactMatch, TokenF1, MacroF1, Similarity, SimilarityPlusExactMatch };
enum class SimilarityBackend { Embedding, Lexical };

inline constexpr std::array<PromptingTechnique, 4> kAllTechniques = {
    PromptingTechnique::Predict, PromptingTechnique::ChainOfThought,
    PromptingTechnique::ProgramOfThought, PromptingTechnique::React};

std::string_view to_string(TaskType v);
std::string_view to_string(Complexity v);
std::string_view to_string(SearchStrategy v);
std::string_view to_string(OptimizerBackend v);
std::string_view to_string(PromptingTechnique v);
std::string_view to_string(MetricKind v);
std::string_view to_string(SimilarityBackend v);

// Parsers return nullopt for names outside the enumeration.
std::optional<TaskType> task_type_from_string(std::string_view s);
std::optional<Complexity> complexity_from_string(std::string_view s);
std::optional<SearchStrategy> strategy_from_string(std::string_view s);
std::optional<OptimizerBackend> backend_from_string(std::string_view s);
std::optional<PromptingTechnique> technique_from_string(std::string_view s);
std::optional<MetricKind> metric_kind_from_string(std::string_view s);
std::optional<SimilarityBackend> similarity_backend_from_string(std::string_view s);

using FieldMap = std::map<std::string, std::string>;

struct FewShotExample {
  FieldMap inputs;
  FieldMap outputs;
  bool operator==(const FewShotExample&) const = default;
};

struct FieldSchema {
  std::vector<std::string> input_fields;
  std::vector<std::string> output_fields;

  // Throws SchemaError: empty lists, duplicate names, or names that are not
  // identifiers.
  void validate() const;
  bool conforms(const FieldMap& inputs, const FieldMap& outputs) const;
  std::vector<std::string> all_fields() const;

  bool operator==(const FieldSchema&) const = default;
};

struct TaskSpec {
  std::string raw_input;
  // Text in front of the first marker (the whole input when no markers).
  std::string unmarked_text;

  std::string task;
  std::string instructions;
  std::string rules;
  std::string few_shot_text;
  std::vector<FewShotExample> few_shot_examples;
  std::string context;
  std::string question;
  std::string output_format;
  std::string tools;

  std::optional<TaskType> task_type;
  std::string other_label;
  Complexity complexity = Complexity::Simple;
  std::vector<std::string> feedback_notes;

  std::optional<FieldSchema> schema;
  std::optional<PromptingTechnique> technique;
  // Digest of the exemplar set and the teacher's raw answer.
  std::string technique_audit;

  // Task description used when the [TASK] marker is absent.
  const std::string& task_text() const;

  bool operator==(const TaskSpec&) const = default;
};

void to_json(nlohmann::json& j, const FewShotExample& e);
void from_json(const nlohmann::json& j, FewShotExample& e);
void to_json(nlohmann::json& j, const FieldSchema& s);
void from_json(const nlohmann::json& j, FieldSchema& s);
void to_json(nlohmann::json& j, const TaskSpec& s);
void from_json(const nlohmann::json& j, TaskSpec& s);

// --- marker grammar -------------------------------------------------------

enum class Marker { Task, Instructions, Rules, FewShotExamples, Context, Question, OutputFormat, Tools };

inline constexpr std::array<std::string_view, 8> kMarkerLiterals = {
    "[TASK]",    "[INSTRUCTIONS]", "[RULES]",         "[FEW_SHOT_EXAMPLES]",
    "[CONTEXT]", "[QUESTION]",     "[OUTPUT_FORMAT]", "[TOOLS]",
};

std::string& marker_field(TaskSpec& spec, Marker m);
const std::string& marker_field(const TaskSpec& spec, Marker m);

// Total parser: never throws. Repeated markers keep the last occurrence.
TaskSpec parse_structured_input(std::string_view raw);

// Renders the marked fields (and any unmarked preamble) back to marker text.
std::string serialize_markers(const TaskSpec& spec);

// Few-shot block: one JSON object per line with "inputs" and "outputs".
// Lines that are not such objects are skipped.
std::vector<FewShotExample> parse_few_shot_block(std::string_view block);
std::string render_few_shot_block(const std::vector<FewShotExample>& examples);

// --- teacher-driven inference ---------------------------------------------

struct InferOptions {
  bool enhance = true;
};

// Fields a complete spec must carry; missing ones trigger one extraction call.
inline constexpr std::array<Marker, 4> kRequiredMarkers = {
    Marker::Task, Marker::Instructions, Marker::Rules, Marker::OutputFormat};

TaskSpec infer_task_spec(std::string_view raw, const TaskSpec& partial, const Llm& teacher,
                         InferOptions options = {});

// Keyword rule stage; nullopt when no rule fires.
std::optional<TaskType> classify_by_rules(std::string_view task_text);

// Keyword rules first, the teacher only when no rule fires. Stores the result
// on the spec.
TaskType classify_task(TaskSpec& spec, const Llm& teacher);

Complexity assess_complexity(const TaskSpec& spec);

std::optional<FieldSchema> default_schema(TaskType type);

FieldSchema infer_field_schema(const TaskSpec& spec, const Llm& teacher);

// --- optimizer configuration ----------------------------------------------

struct OptimizerConfig {
  OptimizerBackend backend = OptimizerBackend::SimpleMetaPrompt;
  SearchStrategy strategy = SearchStrategy::Quick;
  int n_samples = 30;
  int n_trials = 10;
  int n_demos = 4;
  int n_instruction_candidates = 5;
  int minibatch_size = 5;
  double train_ratio = 0.2;

  // Throws ValidationError on non-positive counts or a ratio outside (0, 1).
  void validate() const;

  bool operator==(const OptimizerConfig&) const = default;
};

void to_json(nlohmann::json& j, const OptimizerConfig& c);
void from_json(const nlohmann::json& j, OptimizerConfig& c);

OptimizerConfig strategy_defaults(SearchStrategy strategy);

// --- technique selection --------------------------------------------------

struct TechniqueSelectionExemplar {
  TaskType task_type = TaskType::Other;
  Complexity complexity = Complexity::Simple;
  PromptingTechnique chosen = PromptingTechnique::Predict;
  std::string rationale;
};

void to_json(nlohmann::json& j, const TechniqueSelectionExemplar& e);
void from_json(const nlohmann::json& j, TechniqueSelectionExemplar& e);

// Curated set; covers every task type at least once.
std::vector<TechniqueSelectionExemplar> default_technique_exemplars();
std::vector<TechniqueSelectionExemplar> load_technique_exemplars(
    const std::filesystem::path& path);
std::string exemplar_digest(const std::vector<TechniqueSelectionExemplar>& exemplars);

struct TechniqueSelection {
  PromptingTechnique technique = PromptingTechnique::Predict;
  std::string exemplar_digest;
  std::string answer;
};

// The teacher sees the exemplars and the new (task type, complexity) and must
// name exactly one technique. Stores technique and audit trail on the spec.
TechniqueSelection select_technique(TaskSpec& spec,
                                    const std::vector<TechniqueSelectionExemplar>& exemplars,
                                    const Llm& teacher);

// --- metric selection -----------------------------------------------------

struct MetricSpec {
  MetricKind primary = MetricKind::TokenF1;
  bool length_penalty_enabled = false;
  SimilarityBackend similarity_backend = SimilarityBackend::Lexical;
  // Falls back to the lexical backend when embeddings are unavailable.
  bool lexical_fallback = true;

  bool operator==(const MetricSpec&) const = default;
};

void to_json(nlohmann::json& j, const MetricSpec& m);
void from_json(const nlohmann::json& j, MetricSpec& m);

MetricSpec select_metric(TaskType type);

}  // namespace promptopt
