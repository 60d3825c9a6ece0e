#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "promptopt/config.hpp"
#include "promptopt/metrics.hpp"
#include "promptopt/prompt.hpp"
#include "promptopt/providers.hpp"
#include "promptopt/rng.hpp"
#include "promptopt/synthgen.hpp"

namespace promptopt {

struct TrialRecord {
  int trial_index = 0;
  int instruction_index = 0;
  int demo_set_index = 0;
  std::string demo_set_digest;
  std::vector<std::string> minibatch_ids;
  double minibatch_score = 0.0;
  double combined = 0.0;

  bool operator==(const TrialRecord&) const = default;
};

void to_json(nlohmann::json& j, const TrialRecord& t);
void from_json(const nlohmann::json& j, TrialRecord& t);

struct OptimizationResult {
  CandidatePrompt best;
  EvaluationResult best_eval;
  CandidatePrompt baseline;
  EvaluationResult baseline_eval;
  std::vector<TrialRecord> trials;
  OptimizerBackend backend = OptimizerBackend::SimpleMetaPrompt;
  // Instruction pool the search drew from; index 0 is the baseline.
  std::vector<std::string> instructions;

  bool operator==(const OptimizationResult&) const = default;
};

void to_json(nlohmann::json& j, const OptimizationResult& r);
void from_json(const nlohmann::json& j, OptimizationResult& r);

inline constexpr double kBootstrapThreshold = 0.9;
inline constexpr std::size_t kFullEvaluationTopK = 3;
inline constexpr std::size_t kProposalTrainDigests = 3;

// The spec's own instruction: task, instructions, rules and output format.
std::string baseline_instruction(const TaskSpec& spec);
// Baseline instruction with no demonstrations.
CandidatePrompt baseline_prompt(const TaskSpec& spec);

// Condensed prompt-writing guidance embedded in every meta prompt.
std::string guidelines_digest();

std::string meta_prompt_text(const TaskSpec& spec);
std::string proposal_prompt_text(const TaskSpec& spec, std::span<const SyntheticExample> train,
                                 int k);

// One teacher call; the fenced block of the reply becomes the instruction.
CandidatePrompt meta_prompt_optimize(const TaskSpec& spec, const Llm& teacher, std::size_t n_demos);

// Numbered variants from one teacher call, with the baseline at index 0.
std::vector<std::string> parse_instruction_list(const std::string& reply);
std::vector<std::string> propose_instructions(const TaskSpec& spec,
                                              std::span<const SyntheticExample> train, int k,
                                              const Llm& teacher);

std::vector<Demo> bootstrap_demos(const CandidatePrompt& prompt,
                                  std::span<const SyntheticExample> train, std::size_t max_demos,
                                  double threshold, const MetricSpec& metric,
                                  const ExampleScorer& scorer);

// Picks the next (instruction, demo set) pair for a trial.
class TrialChooser {
 public:
  virtual ~TrialChooser() = default;
  virtual std::pair<std::size_t, std::size_t> next(std::size_t n_instructions,
                                                   std::size_t n_demo_sets,
                                                   std::span<const TrialRecord> history,
                                                   DeterministicRng& rng) = 0;
};

// Uniform over untried pairs while any remain, then uniform over all pairs.
class UniformChooser final : public TrialChooser {
 public:
  std::pair<std::size_t, std::size_t> next(std::size_t n_instructions, std::size_t n_demo_sets,
                                           std::span<const TrialRecord> history,
                                           DeterministicRng& rng) override;
};

struct SearchInputs {
  std::vector<std::string> instructions;
  std::vector<Demo> demo_pool;
  PromptingTechnique technique = PromptingTechnique::Predict;
  FieldSchema schema;
};

// Demo subsets considered by the search: the empty set first, then seeded
// samples of size min(n_demos, |pool|).
std::vector<std::vector<Demo>> demo_set_candidates(std::span<const Demo> pool,
                                                   std::size_t n_demos, std::size_t count,
                                                   DeterministicRng& rng);

OptimizationResult search(const SearchInputs& inputs, const DatasetSplit& split,
                          const MetricSpec& metric, const OptimizerConfig& cfg,
                          const ObjectiveConfig& obj, const ExampleScorer& scorer,
                          std::uint64_t seed, TrialChooser* chooser = nullptr);

OptimizationResult optimize(const TaskSpec& spec, const DatasetSplit& split,
                            const MetricSpec& metric, const OptimizerConfig& cfg,
                            const ObjectiveConfig& obj, const Llm& teacher,
                            const ExampleScorer& scorer, std::uint64_t seed);

OptimizationResult optimize(const TaskSpec& spec, const DatasetSplit& split,
                            const MetricSpec& metric, const OptimizerConfig& cfg,
                            const ObjectiveConfig& obj, const Llm& teacher, const Llm& student,
                            std::uint64_t seed);

}  // namespace promptopt
