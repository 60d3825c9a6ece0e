#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "promptopt/config.hpp"
#include "promptopt/error.hpp"
#include "promptopt/providers.hpp"

namespace promptopt {

enum class Provenance { Generated, UserSupplied };

std::string_view to_string(Provenance p);

struct SyntheticExample {
  std::string id;
  FieldMap inputs;
  FieldMap outputs;
  Provenance provenance = Provenance::Generated;
  // Set when feedback targets the example.
  bool flagged = false;
  // Set when integrated feedback removes the example from future splits.
  bool excluded = false;

  bool operator==(const SyntheticExample&) const = default;
};

void to_json(nlohmann::json& j, const SyntheticExample& e);
void from_json(const nlohmann::json& j, SyntheticExample& e);

struct GenerationBatch {
  int batch_index = 0;
  int requested = 0;
  int accepted = 0;
  int rejected = 0;
  bool operator==(const GenerationBatch&) const = default;
};

struct SyntheticDataset {
  std::vector<SyntheticExample> examples;
  FieldSchema schema;
  std::vector<GenerationBatch> generation_log;

  const SyntheticExample* find(std::string_view id) const;
  SyntheticExample* find(std::string_view id);
  std::size_t active_count() const;

  bool operator==(const SyntheticDataset&) const = default;
};

void to_json(nlohmann::json& j, const GenerationBatch& b);
void from_json(const nlohmann::json& j, GenerationBatch& b);

// One example per line: {"id", "inputs", "outputs", "provenance", "flagged",
// "excluded"}. Reading validates every line against the schema.
void write_jsonl(std::ostream& out, std::span<const SyntheticExample> examples);
std::vector<SyntheticExample> read_jsonl(std::istream& in, const FieldSchema& schema);

void write_generation_log_csv(std::ostream& out, std::span<const GenerationBatch> log);

struct DatasetSplit {
  std::vector<SyntheticExample> train;
  std::vector<SyntheticExample> val;
  double train_ratio = 0.2;
  std::optional<std::string> stratify_field;

  bool operator==(const DatasetSplit&) const = default;
};

void to_json(nlohmann::json& j, const DatasetSplit& s);
void from_json(const nlohmann::json& j, DatasetSplit& s);

// --- template ---------------------------------------------------------------

enum class ValueKind { Numeric, Label, FreeText };

std::string_view to_string(ValueKind k);

struct TemplateField {
  std::string name;
  bool is_output = false;
  std::string example_value;
  ValueKind kind = ValueKind::FreeText;
};

struct DataTemplate {
  std::vector<TemplateField> fields;
  std::string style_notes;

  const TemplateField* field(std::string_view name) const;
};

// Fields with at most this many distinct sample values count as labels.
inline constexpr std::size_t kLabelDistinctLimit = 10;

DataTemplate extract_template(std::span<const SyntheticExample> samples, const FieldSchema& schema);

// --- batching -------------------------------------------------------------

inline constexpr std::size_t kRecordOverheadTokens = 8;
inline constexpr int kMaxBatchSize = 20;
inline constexpr int kAttemptMultiplier = 3;
inline constexpr std::string_view kRecordDelimiter = "|||";

std::size_t tokens_per_example(const DataTemplate& tmpl);

// clamp(floor(budget / per_example), 1, 20); BudgetTooSmall when the budget
// cannot hold one example.
int optimal_batch_size_for(std::size_t tokens_per_example, std::size_t token_budget);
int optimal_batch_size(const DataTemplate& tmpl, std::size_t token_budget);

// Line-delimited record: inputs then outputs as "name=value" joined by "|||".
std::string serialize_record(const FieldSchema& schema, const FieldMap& inputs,
                             const FieldMap& outputs);

std::string build_generation_prompt(const TaskSpec& spec, const DataTemplate& tmpl,
                                    int batch_size, std::span<const std::string> seen_digests,
                                    int batch_number = 1);

// Digest shown to the teacher so it can avoid repeats.
std::string example_digest(const SyntheticExample& e, const FieldSchema& schema);

inline constexpr std::size_t kMaxDigestsInPrompt = 10;

struct RecordRejection {
  std::size_t line = 0;
  std::string reason;  // malformed | unknown_field | missing_field | empty_value |
                       // duplicate_field | duplicate_record
  std::string record;
};

struct ParseOutcome {
  std::vector<SyntheticExample> kept;
  std::vector<RecordRejection> rejected;
};

ParseOutcome parse_and_validate(std::string_view raw, const FieldSchema& schema);

// --- generation -------------------------------------------------------------

class GenerationStalledError : public Error {
 public:
  GenerationStalledError(const std::string& detail, SyntheticDataset partial)
      : Error(ErrorCode::GenerationStalled, detail), partial_(std::move(partial)) {}
  const SyntheticDataset& partial() const noexcept { return partial_; }

 private:
  SyntheticDataset partial_;
};

struct GenerationOptions {
  // Examples already held; their inputs count as duplicates and new ids are
  // numbered after them.
  std::span<const SyntheticExample> existing;
  // Batch numbers (in prompts and the log) start here; continuing runs pass
  // the length of the previous log plus one.
  int first_batch_number = 1;
};

// Returns exactly n new examples or throws.
SyntheticDataset generate_dataset(const TaskSpec& spec, const FieldSchema& schema, int n,
                                  const Llm& teacher, std::size_t token_budget,
                                  GenerationOptions options = {});

std::string example_id(std::size_t ordinal);

// Excluded examples are left out. Train size is round-half-up(ratio * N).
DatasetSplit split_dataset(const SyntheticDataset& dataset, double train_ratio,
                           const std::optional<std::string>& stratify_field, std::uint64_t seed);

}  // namespace promptopt
