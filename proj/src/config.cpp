#include "promptopt/config.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "promptopt/teacher.hpp"
#include "promptopt/text.hpp"

namespace promptopt {

using nlohmann::json;

namespace {

template <typename E, std::size_t N>
std::optional<E> lookup_name(const std::array<std::pair<E, std::string_view>, N>& table,
                             std::string_view s) {
  for (const auto& [value, name] : table) {
    if (name == s) return value;
  }
  return std::nullopt;
}

template <typename E, std::size_t N>
std::string_view name_of(const std::array<std::pair<E, std::string_view>, N>& table, E v) {
  for (const auto& [value, name] : table) {
    if (value == v) return name;
  }
  return "unknown";
}

constexpr std::array<std::pair<TaskType, std::string_view>, 8> kTaskTypeNames = {{
    {TaskType::Classification, "classification"},
    {TaskType::Qa, "qa"},
    {TaskType::Generation, "generation"},
    {TaskType::Summarization, "summarization"},
    {TaskType::Translation, "translation"},
    {TaskType::MathReasoning, "math_reasoning"},
    {TaskType::CodeGeneration, "code_generation"},
    {TaskType::Other, "other"},
}};

constexpr std::array<std::pair<Complexity, std::string_view>, 3> kComplexityNames = {{
    {Complexity::Simple, "simple"},
    {Complexity::Moderate, "moderate"},
    {Complexity::Complex, "complex"},
}};

constexpr std::array<std::pair<SearchStrategy, std::string_view>, 3> kStrategyNames = {{
    {SearchStrategy::Quick, "quick_search"},
    {SearchStrategy::Moderate, "moderate_search"},
    {SearchStrategy::Heavy, "heavy_search"},
}};

constexpr std::array<std::pair<OptimizerBackend, std::string_view>, 2> kBackendNames = {{
    {OptimizerBackend::SimpleMetaPrompt, "simple_meta_prompt"},
    {OptimizerBackend::StructuredSearch, "structured_search"},
}};

constexpr std::array<std::pair<PromptingTechnique, std::string_view>, 4> kTechniqueNames = {{
    {PromptingTechnique::Predict, "predict"},
    {PromptingTechnique::ChainOfThought, "chain_of_thought"},
    {PromptingTechnique::ProgramOfThought, "program_of_thought"},
    {PromptingTechnique::React, "react"},
}};

constexpr std::array<std::pair<MetricKind, std::string_view>, 5> kMetricNames = {{
    {MetricKind::ExactMatch, "exact_match"},
    {MetricKind::TokenF1, "token_f1"},
    {MetricKind::MacroF1, "macro_f1"},
    {MetricKind::Similarity, "similarity"},
    {MetricKind::SimilarityPlusExactMatch, "similarity_plus_exact_match"},
}};

constexpr std::array<std::pair<SimilarityBackend, std::string_view>, 2> kSimilarityNames = {{
    {SimilarityBackend::Embedding, "embedding"},
    {SimilarityBackend::Lexical, "lexical"},
}};

template <typename T>
T required_enum(std::optional<T> v, std::string_view what, std::string_view got) {
  if (!v) {
    throw Error(ErrorCode::ValidationError,
                "unknown " + std::string(what) + " '" + std::string(got) + "'");
  }
  return *v;
}

}  // namespace

std::string_view to_string(TaskType v) { return name_of(kTaskTypeNames, v); }
std::string_view to_string(Complexity v) { return name_of(kComplexityNames, v); }
std::string_view to_string(SearchStrategy v) { return name_of(kStrategyNames, v); }
std::string_view to_string(OptimizerBackend v) { return name_of(kBackendNames, v); }
std::string_view to_string(PromptingTechnique v) { return name_of(kTechniqueNames, v); }
std::string_view to_string(MetricKind v) { return name_of(kMetricNames, v); }
std::string_view to_string(SimilarityBackend v) { return name_of(kSimilarityNames, v); }

std::optional<TaskType> task_type_from_string(std::string_view s) {
  return lookup_name(kTaskTypeNames, s);
}
std::optional<Complexity> complexity_from_string(std::string_view s) {
  return lookup_name(kComplexityNames, s);
}
std::optional<SearchStrategy> strategy_from_string(std::string_view s) {
  return lookup_name(kStrategyNames, s);
}
std::optional<OptimizerBackend> backend_from_string(std::string_view s) {
  return lookup_name(kBackendNames, s);
}
std::optional<PromptingTechnique> technique_from_string(std::string_view s) {
  return lookup_name(kTechniqueNames, s);
}
std::optional<MetricKind> metric_kind_from_string(std::string_view s) {
  return lookup_name(kMetricNames, s);
}
std::optional<SimilarityBackend> similarity_backend_from_string(std::string_view s) {
  return lookup_name(kSimilarityNames, s);
}

// --- schema -----------------------------------------------------------------

namespace {

bool is_identifier(std::string_view name) {
  if (name.empty()) return false;
  auto head = name.front();
  if (!(std::isalpha(static_cast<unsigned char>(head)) || head == '_')) return false;
  return std::all_of(name.begin(), name.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
  });
}

}  // namespace

void FieldSchema::validate() const {
  if (input_fields.empty() || output_fields.empty()) {
    throw Error(ErrorCode::SchemaError, "schema needs at least one input and one output field");
  }
  std::set<std::string> seen;
  for (const auto& name : all_fields()) {
    if (!is_identifier(name)) {
      throw Error(ErrorCode::SchemaError, "field name '" + name + "' is not an identifier");
    }
    if (!seen.insert(name).second) {
      throw Error(ErrorCode::SchemaError, "field name '" + name + "' appears twice");
    }
  }
}

bool FieldSchema::conforms(const FieldMap& inputs, const FieldMap& outputs) const {
  auto same_keys = [](const std::vector<std::string>& names, const FieldMap& m) {
    if (names.size() != m.size()) return false;
    return std::all_of(names.begin(), names.end(),
                       [&](const std::string& n) { return m.count(n) == 1; });
  };
  return same_keys(input_fields, inputs) && same_keys(output_fields, outputs);
}

std::vector<std::string> FieldSchema::all_fields() const {
  std::vector<std::string> all = input_fields;
  all.insert(all.end(), output_fields.begin(), output_fields.end());
  return all;
}

const std::string& TaskSpec::task_text() const {
  if (!task.empty()) return task;
  if (!unmarked_text.empty()) return unmarked_text;
  return raw_input;
}

// --- json -----------------------------------------------------------------

void to_json(json& j, const FewShotExample& e) {
  j = json{{"inputs", e.inputs}, {"outputs", e.outputs}};
}

void from_json(const json& j, FewShotExample& e) {
  e.inputs = j.at("inputs").get<FieldMap>();
  e.outputs = j.at("outputs").get<FieldMap>();
}

void to_json(json& j, const FieldSchema& s) {
  j = json{{"input_fields", s.input_fields}, {"output_fields", s.output_fields}};
}

void from_json(const json& j, FieldSchema& s) {
  s.input_fields = j.at("input_fields").get<std::vector<std::string>>();
  s.output_fields = j.at("output_fields").get<std::vector<std::string>>();
}

void to_json(json& j, const TaskSpec& s) {
  j = json{{"raw_input", s.raw_input},
           {"unmarked_text", s.unmarked_text},
           {"task", s.task},
           {"instructions", s.instructions},
           {"rules", s.rules},
           {"few_shot_text", s.few_shot_text},
           {"few_shot_examples", s.few_shot_examples},
           {"context", s.context},
           {"question", s.question},
           {"output_format", s.output_format},
           {"tools", s.tools},
           {"task_type", s.task_type ? json(to_string(*s.task_type)) : json(nullptr)},
           {"other_label", s.other_label},
           {"complexity", to_string(s.complexity)},
           {"feedback_notes", s.feedback_notes},
           {"schema", s.schema ? json(*s.schema) : json(nullptr)},
           {"technique", s.technique ? json(to_string(*s.technique)) : json(nullptr)},
           {"technique_audit", s.technique_audit}};
}

void from_json(const json& j, TaskSpec& s) {
  s.raw_input = j.at("raw_input").get<std::string>();
  s.unmarked_text = j.value("unmarked_text", std::string());
  s.task = j.value("task", std::string());
  s.instructions = j.value("instructions", std::string());
  s.rules = j.value("rules", std::string());
  s.few_shot_text = j.value("few_shot_text", std::string());
  s.few_shot_examples = j.value("few_shot_examples", std::vector<FewShotExample>{});
  s.context = j.value("context", std::string());
  s.question = j.value("question", std::string());
  s.output_format = j.value("output_format", std::string());
  s.tools = j.value("tools", std::string());
  s.task_type.reset();
  if (j.contains("task_type") && !j["task_type"].is_null()) {
    auto name = j["task_type"].get<std::string>();
    s.task_type = required_enum(task_type_from_string(name), "task type", name);
  }
  s.other_label = j.value("other_label", std::string());
  auto complexity = j.value("complexity", std::string("simple"));
  s.complexity = required_enum(complexity_from_string(complexity), "complexity", complexity);
  s.feedback_notes = j.value("feedback_notes", std::vector<std::string>{});
  s.schema.reset();
  if (j.contains("schema") && !j["schema"].is_null()) s.schema = j["schema"].get<FieldSchema>();
  s.technique.reset();
  if (j.contains("technique") && !j["technique"].is_null()) {
    auto name = j["technique"].get<std::string>();
    s.technique = required_enum(technique_from_string(name), "technique", name);
  }
  s.technique_audit = j.value("technique_audit", std::string());
}

// --- markers --------------------------------------------------------------

std::string& marker_field(TaskSpec& spec, Marker m) {
  switch (m) {
    case Marker::Task: return spec.task;
    case Marker::Instructions: return spec.instructions;
    case Marker::Rules: return spec.rules;
    case Marker::FewShotExamples: return spec.few_shot_text;
    case Marker::Context: return spec.context;
    case Marker::Question: return spec.question;
    case Marker::OutputFormat: return spec.output_format;
    case Marker::Tools: return spec.tools;
  }
  return spec.task;
}

const std::string& marker_field(const TaskSpec& spec, Marker m) {
  return marker_field(const_cast<TaskSpec&>(spec), m);
}

namespace {

std::string_view field_key(Marker m) {
  // Marker literal without brackets, used in teacher key/value replies.
  auto lit = kMarkerLiterals[static_cast<std::size_t>(m)];
  return lit.substr(1, lit.size() - 2);
}

}  // namespace

TaskSpec parse_structured_input(std::string_view raw) {
  TaskSpec spec;
  spec.raw_input = std::string(raw);

  struct Hit {
    std::size_t pos;
    std::size_t marker;
  };
  std::vector<Hit> hits;
  for (std::size_t m = 0; m < kMarkerLiterals.size(); ++m) {
    auto lit = kMarkerLiterals[m];
    for (auto pos = raw.find(lit); pos != std::string_view::npos; pos = raw.find(lit, pos + 1)) {
      hits.push_back({pos, m});
    }
  }
  std::sort(hits.begin(), hits.end(), [](const Hit& a, const Hit& b) { return a.pos < b.pos; });

  if (hits.empty()) {
    spec.unmarked_text = std::string(text::trim(raw));
    return spec;
  }
  spec.unmarked_text = std::string(text::trim(raw.substr(0, hits.front().pos)));
  for (std::size_t i = 0; i < hits.size(); ++i) {
    auto start = hits[i].pos + kMarkerLiterals[hits[i].marker].size();
    auto end = i + 1 < hits.size() ? hits[i + 1].pos : raw.size();
    marker_field(spec, static_cast<Marker>(hits[i].marker)) =
        std::string(text::trim(raw.substr(start, end - start)));
  }
  spec.few_shot_examples = parse_few_shot_block(spec.few_shot_text);
  return spec;
}

std::string serialize_markers(const TaskSpec& spec) {
  std::string out;
  if (!spec.unmarked_text.empty()) out += spec.unmarked_text + "\n";
  for (std::size_t m = 0; m < kMarkerLiterals.size(); ++m) {
    auto marker = static_cast<Marker>(m);
    std::string value = marker_field(spec, marker);
    if (marker == Marker::FewShotExamples && value.empty() && !spec.few_shot_examples.empty()) {
      value = render_few_shot_block(spec.few_shot_examples);
    }
    if (value.empty()) continue;
    out += std::string(kMarkerLiterals[m]) + " " + value + "\n";
  }
  return out;
}

std::vector<FewShotExample> parse_few_shot_block(std::string_view block) {
  std::vector<FewShotExample> out;
  for (const auto& line : text::split(block, "\n")) {
    auto trimmed = text::trim(line);
    if (trimmed.empty() || trimmed.front() != '{') continue;
    try {
      auto doc = json::parse(trimmed);
      if (!doc.is_object() || !doc.contains("inputs") || !doc.contains("outputs")) continue;
      out.push_back(doc.get<FewShotExample>());
    } catch (const json::exception&) {
      continue;
    }
  }
  return out;
}

std::string render_few_shot_block(const std::vector<FewShotExample>& examples) {
  std::vector<std::string> lines;
  for (const auto& e : examples) lines.push_back(json(e).dump());
  return text::join(lines, "\n");
}

// --- inference --------------------------------------------------------------

namespace {

constexpr std::array<Marker, 7> kTextMarkers = {
    Marker::Task,     Marker::Instructions, Marker::Rules, Marker::Context,
    Marker::Question, Marker::OutputFormat, Marker::Tools};

std::optional<Marker> text_marker_for_key(std::string_view key) {
  for (auto m : kTextMarkers) {
    if (field_key(m) == key) return m;
  }
  return std::nullopt;
}

using KeyValues = std::map<Marker, std::string>;

std::optional<KeyValues> parse_key_value_block(const std::string& reply) {
  auto block = text::fenced_block(reply);
  if (!block) return std::nullopt;
  KeyValues values;
  std::optional<Marker> current;
  for (const auto& line : text::split(*block, "\n")) {
    auto colon = line.find(':');
    if (colon != std::string::npos) {
      auto key = text::trim(std::string_view(line).substr(0, colon));
      if (auto m = text_marker_for_key(key)) {
        current = m;
        values[*m] = std::string(text::trim(std::string_view(line).substr(colon + 1)));
        continue;
      }
    }
    if (current && !text::trim(line).empty()) {
      auto& v = values[*current];
      if (!v.empty()) v += '\n';
      v += std::string(text::trim(line));
    }
  }
  if (values.empty()) return std::nullopt;
  return values;
}

std::string extraction_prompt(const TaskSpec& spec, const std::vector<Marker>& missing) {
  std::ostringstream ss;
  ss << "You are configuring an automatic prompt-optimization run. Read the task request "
        "and identify its components.\n\n";
  ss << "Task request:\n<<<\n" << spec.raw_input << "\n>>>\n\n";
  bool any_present = false;
  for (auto m : kTextMarkers) {
    const auto& value = marker_field(spec, m);
    if (value.empty()) continue;
    if (!any_present) ss << "Components already provided (do not change them):\n";
    any_present = true;
    ss << field_key(m) << ": " << value << "\n";
  }
  if (any_present) ss << "\n";
  ss << "Components to infer:";
  for (std::size_t i = 0; i < missing.size(); ++i) ss << (i ? ", " : " ") << field_key(missing[i]);
  ss << "\nInclude CONTEXT, QUESTION or TOOLS only when the request clearly implies them.\n";
  ss << "Reply with one fenced block of FIELD: value lines.";
  return ss.str();
}

std::string enhancement_prompt(const TaskSpec& spec, Marker field, const std::string& value) {
  std::ostringstream ss;
  ss << "Improve one component of a task specification so it is clear, specific and "
        "unambiguous. Keep its meaning; do not add requirements the user did not ask for.\n\n";
  ss << "Task: " << spec.task_text() << "\n\n";
  ss << "Current " << field_key(field) << ":\n<<<\n" << value << "\n>>>\n\n";
  ss << "Refine the field " << field_key(field) << ". Reply with the improved text in one "
        "fenced block.";
  return ss.str();
}

std::optional<std::string> parse_fenced_text(const std::string& reply) {
  auto block = text::fenced_block(reply);
  if (!block) return std::nullopt;
  auto trimmed = text::trim(*block);
  if (trimmed.empty()) return std::nullopt;
  return std::string(trimmed);
}

}  // namespace

TaskSpec infer_task_spec(std::string_view raw, const TaskSpec& partial, const Llm& teacher,
                         InferOptions options) {
  if (text::trim(raw).empty()) {
    throw Error(ErrorCode::ValidationError, "task objective is empty");
  }
  TaskSpec spec = partial;
  spec.raw_input = std::string(raw);

  std::vector<Marker> missing;
  for (auto m : kRequiredMarkers) {
    if (marker_field(spec, m).empty()) missing.push_back(m);
  }
  if (missing.empty()) return spec;

  CompletionRequest request;
  request.user_text = extraction_prompt(spec, missing);
  auto values = ask_structured(teacher, request, parse_key_value_block,
                               "Reply with one fenced block of FIELD: value lines.",
                               ErrorCode::ExtractionParseError, "task extraction reply");

  std::vector<Marker> filled;
  for (const auto& [marker, value] : values) {
    auto& field = marker_field(spec, marker);
    if (!field.empty() || value.empty()) continue;
    field = value;
    filled.push_back(marker);
  }

  if (options.enhance) {
    for (auto marker : filled) {
      CompletionRequest refine;
      refine.user_text = enhancement_prompt(spec, marker, marker_field(spec, marker));
      marker_field(spec, marker) =
          ask_structured(teacher, refine, parse_fenced_text,
                         "Reply with the improved text inside one fenced block.",
                         ErrorCode::ExtractionParseError, "field refinement reply");
    }
  }
  return spec;
}

// --- classification -------------------------------------------------------

namespace {

struct KeywordRule {
  TaskType type;
  std::vector<std::string_view> prefixes;
};

const std::vector<KeywordRule>& keyword_rules() {
  static const std::vector<KeywordRule> rules = {
      {TaskType::Summarization, {"summar", "tldr", "condense"}},
      {TaskType::Translation, {"translat"}},
      {TaskType::Classification, {"classif", "categor", "label", "sentiment"}},
      {TaskType::MathReasoning, {"solve", "compute", "math", "arithmetic", "calculat", "equation"}},
      {TaskType::CodeGeneration, {"code", "coding", "program", "implement", "debug"}},
      {TaskType::Qa, {"answer", "question"}},
      {TaskType::Generation, {"generat", "write", "compose", "draft"}},
  };
  return rules;
}

std::vector<std::string> words(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      cur += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

struct ParsedTaskType {
  TaskType type;
  std::string label;
};

std::optional<ParsedTaskType> parse_task_type_answer(const std::string& reply) {
  std::string body = text::fenced_block(reply).value_or(reply);
  auto trimmed = std::string(text::trim(body));
  while (!trimmed.empty() && (trimmed.back() == '.' || trimmed.back() == '`')) trimmed.pop_back();
  while (!trimmed.empty() && trimmed.front() == '`') trimmed.erase(trimmed.begin());
  auto lowered = text::to_lower(text::trim(trimmed));
  if (auto t = task_type_from_string(lowered)) return ParsedTaskType{*t, {}};
  // "other: <label>" carries a free-text label.
  if (lowered.rfind("other:", 0) == 0) {
    auto label = std::string(text::trim(std::string_view(trimmed).substr(6)));
    if (!label.empty()) return ParsedTaskType{TaskType::Other, label};
  }
  return std::nullopt;
}

}  // namespace

std::optional<TaskType> classify_by_rules(std::string_view task_text) {
  auto ws = words(task_text);
  for (const auto& rule : keyword_rules()) {
    for (const auto& w : ws) {
      for (auto prefix : rule.prefixes) {
        if (w.rfind(prefix, 0) == 0) return rule.type;
      }
    }
  }
  return std::nullopt;
}

TaskType classify_task(TaskSpec& spec, const Llm& teacher) {
  const auto& subject = spec.task_text();
  if (text::trim(subject).empty()) {
    throw Error(ErrorCode::ValidationError, "nothing to classify: task and raw input are empty");
  }
  if (auto ruled = classify_by_rules(subject)) {
    spec.task_type = *ruled;
    return *ruled;
  }
  std::ostringstream ss;
  ss << "Classify the following task into one of these task types: ";
  for (std::size_t i = 0; i < kTaskTypeNames.size(); ++i) {
    ss << (i ? ", " : "") << kTaskTypeNames[i].second;
  }
  ss << ". Use \"other: <short label>\" when none fits.\n\nTask:\n<<<\n" << subject
     << "\n>>>\n\nAnswer with exactly one task type name.";
  CompletionRequest request;
  request.user_text = ss.str();
  auto parsed = ask_structured(teacher, request, parse_task_type_answer,
                               "Answer with exactly one task type name and nothing else.",
                               ErrorCode::ClassificationError, "task type answer");
  spec.task_type = parsed.type;
  spec.other_label = parsed.label;
  return parsed.type;
}

Complexity assess_complexity(const TaskSpec& spec) {
  if (spec.task_type == TaskType::MathReasoning || spec.task_type == TaskType::CodeGeneration) {
    return Complexity::Complex;
  }
  auto guidance = estimate_tokens(spec.rules) + estimate_tokens(spec.instructions);
  return guidance > 40 ? Complexity::Complex : Complexity::Simple;
}

std::optional<FieldSchema> default_schema(TaskType type) {
  switch (type) {
    case TaskType::Classification: return FieldSchema{{"text"}, {"label"}};
    case TaskType::Qa: return FieldSchema{{"question", "context"}, {"answer"}};
    case TaskType::Summarization: return FieldSchema{{"document"}, {"summary"}};
    case TaskType::Generation: return FieldSchema{{"concepts"}, {"text"}};
    case TaskType::MathReasoning: return FieldSchema{{"question"}, {"answer"}};
    default: return std::nullopt;
  }
}

namespace {

std::vector<std::string> keys_of(const FieldMap& m) {
  std::vector<std::string> out;
  for (const auto& [k, _] : m) out.push_back(k);
  return out;
}

std::optional<FieldSchema> parse_schema_reply(const std::string& reply) {
  auto block = text::fenced_block(reply);
  if (!block) return std::nullopt;
  FieldSchema schema;
  auto names = [](std::string_view list) {
    std::vector<std::string> out;
    for (const auto& piece : text::split(list, ",")) {
      auto name = std::string(text::trim(piece));
      if (!name.empty()) out.push_back(name);
    }
    return out;
  };
  for (const auto& line : text::split(*block, "\n")) {
    auto trimmed = text::trim(line);
    if (text::starts_with_ci(trimmed, "INPUTS:")) schema.input_fields = names(trimmed.substr(7));
    if (text::starts_with_ci(trimmed, "OUTPUTS:")) schema.output_fields = names(trimmed.substr(8));
  }
  try {
    schema.validate();
  } catch (const Error&) {
    return std::nullopt;
  }
  return schema;
}

}  // namespace

FieldSchema infer_field_schema(const TaskSpec& spec, const Llm& teacher) {
  if (!spec.task_type) {
    throw Error(ErrorCode::SchemaError, "task type must be assigned before schema inference");
  }
  if (!spec.few_shot_examples.empty()) {
    const auto& first = spec.few_shot_examples.front();
    FieldSchema schema{keys_of(first.inputs), keys_of(first.outputs)};
    for (const auto& e : spec.few_shot_examples) {
      if (keys_of(e.inputs) != schema.input_fields || keys_of(e.outputs) != schema.output_fields) {
        throw Error(ErrorCode::SchemaError, "few-shot examples disagree on their field names");
      }
    }
    schema.validate();
    return schema;
  }
  if (auto schema = default_schema(*spec.task_type)) return *schema;

  std::ostringstream ss;
  ss << "Decide the input and output fields for a prompt that performs this task. Use short "
        "snake_case identifiers.\n\nTask type: "
     << to_string(*spec.task_type) << "\nTask:\n<<<\n" << spec.task_text() << "\n>>>\n";
  if (!spec.instructions.empty()) ss << "Instructions: " << spec.instructions << "\n";
  ss << "\nReply with one fenced block containing INPUTS: and OUTPUTS: lines.";
  CompletionRequest request;
  request.user_text = ss.str();
  return ask_structured(teacher, request, parse_schema_reply,
                        "Reply with one fenced block containing exactly an INPUTS: line and an "
                        "OUTPUTS: line of comma-separated identifiers.",
                        ErrorCode::SchemaError, "field schema reply");
}

// --- optimizer config -------------------------------------------------------

void OptimizerConfig::validate() const {
  if (n_samples < 1 || n_trials < 1 || n_instruction_candidates < 1 || minibatch_size < 1) {
    throw Error(ErrorCode::ValidationError, "optimizer counts must be positive");
  }
  if (n_demos < 0) throw Error(ErrorCode::ValidationError, "n_demos must be non-negative");
  if (!(train_ratio > 0.0 && train_ratio < 1.0)) {
    throw Error(ErrorCode::ValidationError, "train_ratio must lie in (0, 1)");
  }
}

void to_json(json& j, const OptimizerConfig& c) {
  j = json{{"backend", to_string(c.backend)},
           {"strategy", to_string(c.strategy)},
           {"n_samples", c.n_samples},
           {"n_trials", c.n_trials},
           {"n_demos", c.n_demos},
           {"n_instruction_candidates", c.n_instruction_candidates},
           {"minibatch_size", c.minibatch_size},
           {"train_ratio", c.train_ratio}};
}

void from_json(const json& j, OptimizerConfig& c) {
  auto backend = j.at("backend").get<std::string>();
  c.backend = required_enum(backend_from_string(backend), "backend", backend);
  auto strategy = j.at("strategy").get<std::string>();
  c.strategy = required_enum(strategy_from_string(strategy), "strategy", strategy);
  c.n_samples = j.at("n_samples").get<int>();
  c.n_trials = j.at("n_trials").get<int>();
  c.n_demos = j.at("n_demos").get<int>();
  c.n_instruction_candidates = j.at("n_instruction_candidates").get<int>();
  c.minibatch_size = j.at("minibatch_size").get<int>();
  c.train_ratio = j.at("train_ratio").get<double>();
}

OptimizerConfig strategy_defaults(SearchStrategy strategy) {
  OptimizerConfig cfg;
  cfg.strategy = strategy;
  switch (strategy) {
    case SearchStrategy::Quick:
      cfg.n_samples = 30;
      cfg.n_trials = 10;
      break;
    case SearchStrategy::Moderate:
      cfg.n_samples = 100;
      cfg.n_trials = 15;
      break;
    case SearchStrategy::Heavy:
      cfg.n_samples = 300;
      cfg.n_trials = 30;
      break;
  }
  cfg.minibatch_size = 5;
  cfg.train_ratio = 0.2;
  cfg.n_demos = 4;
  cfg.n_instruction_candidates = 5;
  cfg.backend = OptimizerBackend::SimpleMetaPrompt;
  return cfg;
}

// --- technique selection ----------------------------------------------------

void to_json(json& j, const TechniqueSelectionExemplar& e) {
  j = json{{"task_type", to_string(e.task_type)},
           {"complexity", to_string(e.complexity)},
           {"chosen", to_string(e.chosen)},
           {"rationale", e.rationale}};
}

void from_json(const json& j, TechniqueSelectionExemplar& e) {
  auto type = j.at("task_type").get<std::string>();
  e.task_type = required_enum(task_type_from_string(type), "task type", type);
  auto complexity = j.at("complexity").get<std::string>();
  e.complexity = required_enum(complexity_from_string(complexity), "complexity", complexity);
  auto chosen = j.at("chosen").get<std::string>();
  e.chosen = required_enum(technique_from_string(chosen), "technique", chosen);
  e.rationale = j.value("rationale", std::string());
}

std::vector<TechniqueSelectionExemplar> default_technique_exemplars() {
  using T = TaskType;
  using C = Complexity;
  using P = PromptingTechnique;
  return {
      {T::Classification, C::Simple, P::Predict,
       "Labels follow directly from the text; intermediate reasoning adds cost without accuracy."},
      {T::Classification, C::Complex, P::ChainOfThought,
       "Many overlapping categories benefit from weighing evidence before labelling."},
      {T::Qa, C::Simple, P::Predict, "Extractive answers are read off the context."},
      {T::Qa, C::Complex, P::ChainOfThought, "Multi-hop questions need linked intermediate facts."},
      {T::Generation, C::Simple, P::Predict, "Free-form text is produced in one pass."},
      {T::Summarization, C::Simple, P::Predict, "Condensing a document needs no explicit derivation."},
      {T::Summarization, C::Complex, P::ChainOfThought,
       "Long multi-topic documents benefit from outlining key points first."},
      {T::Translation, C::Simple, P::Predict, "Direct mapping between languages."},
      {T::MathReasoning, C::Complex, P::ProgramOfThought,
       "Arithmetic is more reliable when derived as explicit computation steps."},
      {T::MathReasoning, C::Simple, P::ChainOfThought, "Short word problems need a few steps."},
      {T::CodeGeneration, C::Complex, P::ChainOfThought,
       "Plan the algorithm before writing the code."},
      {T::Other, C::Complex, P::React,
       "Tasks that need lookups or tools interleave reasoning with actions."},
      {T::Other, C::Simple, P::Predict, "Default for straightforward tasks."},
  };
}

std::vector<TechniqueSelectionExemplar> load_technique_exemplars(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ValidationError, "cannot read exemplar file " + path.string());
  try {
    json doc;
    in >> doc;
    return doc.get<std::vector<TechniqueSelectionExemplar>>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ValidationError, "bad exemplar file " + path.string() + ": " + e.what());
  }
}

std::string exemplar_digest(const std::vector<TechniqueSelectionExemplar>& exemplars) {
  return text::digest(json(exemplars).dump());
}

namespace {

std::optional<PromptingTechnique> parse_technique_answer(const std::string& reply) {
  std::string body = text::fenced_block(reply).value_or(reply);
  auto trimmed = std::string(text::trim(body));
  while (!trimmed.empty() && (trimmed.back() == '.' || trimmed.back() == '`')) trimmed.pop_back();
  while (!trimmed.empty() && trimmed.front() == '`') trimmed.erase(trimmed.begin());
  return technique_from_string(text::to_lower(text::trim(trimmed)));
}

}  // namespace

TechniqueSelection select_technique(TaskSpec& spec,
                                    const std::vector<TechniqueSelectionExemplar>& exemplars,
                                    const Llm& teacher) {
  if (!spec.task_type) {
    throw Error(ErrorCode::SelectionError, "task type must be assigned before technique selection");
  }
  if (exemplars.empty()) {
    throw Error(ErrorCode::SelectionError, "technique exemplar set is empty");
  }
  std::ostringstream ss;
  ss << "Choose the prompting technique most likely to perform best for a new task. "
        "Techniques: predict, chain_of_thought, program_of_thought, react.\n\n"
        "Reference choices:\n";
  for (const auto& e : exemplars) {
    ss << "- task_type=" << to_string(e.task_type) << ", complexity=" << to_string(e.complexity)
       << " -> " << to_string(e.chosen);
    if (!e.rationale.empty()) ss << " (" << e.rationale << ")";
    ss << "\n";
  }
  ss << "\nNew task:\ntask_type=" << to_string(*spec.task_type)
     << ", complexity=" << to_string(spec.complexity) << "\nDescription: " << spec.task_text()
     << "\n\nAnswer with exactly one technique name.";
  CompletionRequest request;
  request.user_text = ss.str();

  std::string raw_answer;
  auto parse = [&](const std::string& reply) {
    raw_answer = reply;
    return parse_technique_answer(reply);
  };
  TechniqueSelection selection;
  selection.technique = ask_structured(teacher, request, parse,
                                       "Answer with exactly one of: predict, chain_of_thought, "
                                       "program_of_thought, react.",
                                       ErrorCode::SelectionError, "technique answer");
  selection.exemplar_digest = exemplar_digest(exemplars);
  selection.answer = std::string(text::trim(raw_answer));
  spec.technique = selection.technique;
  spec.technique_audit = "exemplars=" + selection.exemplar_digest + " answer=" + selection.answer;
  return selection;
}

// --- metric selection -------------------------------------------------------

void to_json(json& j, const MetricSpec& m) {
  j = json{{"primary_metric", to_string(m.primary)},
           {"length_penalty_enabled", m.length_penalty_enabled},
           {"similarity_backend", to_string(m.similarity_backend)},
           {"lexical_fallback", m.lexical_fallback}};
}

void from_json(const json& j, MetricSpec& m) {
  auto primary = j.at("primary_metric").get<std::string>();
  m.primary = required_enum(metric_kind_from_string(primary), "metric", primary);
  m.length_penalty_enabled = j.value("length_penalty_enabled", false);
  auto backend = j.value("similarity_backend", std::string("lexical"));
  m.similarity_backend =
      required_enum(similarity_backend_from_string(backend), "similarity backend", backend);
  m.lexical_fallback = j.value("lexical_fallback", true);
}

MetricSpec select_metric(TaskType type) {
  MetricSpec m;
  m.similarity_backend = SimilarityBackend::Embedding;
  switch (type) {
    case TaskType::Classification:
      m.primary = MetricKind::MacroF1;
      m.length_penalty_enabled = true;
      break;
    case TaskType::Qa: m.primary = MetricKind::SimilarityPlusExactMatch; break;
    case TaskType::Summarization:
    case TaskType::Generation: m.primary = MetricKind::Similarity; break;
    case TaskType::Translation:
      m.primary = MetricKind::Similarity;
      m.lexical_fallback = false;
      break;
    case TaskType::MathReasoning: m.primary = MetricKind::ExactMatch; break;
    case TaskType::CodeGeneration:
    case TaskType::Other:
      std::clog << "warning: no dedicated metric for task type '" << to_string(type)
                << "'; using token_f1\n";
      m.primary = MetricKind::TokenF1;
      break;
  }
  return m;
}

}  // namespace promptopt
