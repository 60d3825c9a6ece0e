#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "promptopt/config.hpp"
#include "promptopt/metrics.hpp"
#include "promptopt/optimizer.hpp"
#include "promptopt/providers.hpp"
#include "promptopt/session.hpp"
#include "promptopt/synthgen.hpp"

namespace promptopt {

inline constexpr std::size_t kDefaultGenerationBudget = 2000;

struct PipelineOptions {
  SearchStrategy strategy = SearchStrategy::Quick;
  std::optional<OptimizerBackend> backend;
  std::optional<double> lambda;
  std::uint64_t seed = 0;
  // Overrides the strategy's sample count when set.
  std::optional<int> n_samples;
  bool enhance = true;
  std::size_t generation_token_budget = kDefaultGenerationBudget;
  std::vector<TechniqueSelectionExemplar> exemplars = default_technique_exemplars();
  // Overrides the metric chosen from the task type.
  std::optional<MetricKind> metric;
  // Reports stage names as the run progresses.
  std::function<void(const std::string&)> on_stage;
};

struct ConfiguredTask {
  TaskSpec spec;
  FieldSchema schema;
  MetricSpec metric;
  OptimizerConfig optimizer;
  ObjectiveConfig objective;
};

// Marker parsing, field inference, classification, complexity, schema,
// technique and metric selection.
ConfiguredTask configure_task(std::string_view raw_input, const PipelineOptions& options,
                              const Llm& teacher);

// User-supplied few-shot examples that fit the schema, followed by generated
// examples up to n_samples.
SyntheticDataset build_dataset(const ConfiguredTask& task, const Llm& teacher,
                               const PipelineOptions& options);

// Stratifies on the first output field for classification tasks.
std::optional<std::string> stratify_field_for(const ConfiguredTask& task);

// Configures, generates data, splits, optimizes and stores a session.
Session run_pipeline(std::string_view raw_input, const PipelineOptions& options, const Llm& teacher,
                     const Llm& student, const SessionStore& store,
                     std::optional<std::string> session_id = std::nullopt);

}  // namespace promptopt
