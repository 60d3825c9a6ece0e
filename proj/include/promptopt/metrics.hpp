#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "promptopt/config.hpp"
#include "promptopt/prompt.hpp"
#include "promptopt/providers.hpp"
#include "promptopt/synthgen.hpp"

namespace promptopt {

double exact_match(std::string_view pred, std::string_view gold);

// Multiset token F1 over normalized whitespace tokens.
double token_f1(std::string_view pred, std::string_view gold);

// Unweighted mean of per-label F1 over the labels present in golds.
double macro_f1(std::span<const std::string> preds, std::span<const std::string> golds);

// Per-example scores in [0, 1] whose mean equals macro_f1 of the same vectors.
// Correct predictions score above incorrect ones.
std::vector<double> macro_f1_per_example(std::span<const std::string> preds,
                                         std::span<const std::string> golds);

// Cosine of character-trigram count vectors over normalized text.
double lexical_similarity(std::string_view a, std::string_view b);

// Cosine of two embedding vectors mapped from [-1, 1] to [0, 1].
double embedding_similarity(const std::vector<double>& a, const std::vector<double>& b);

// Embedding backend requires an embedder; the lexical backend never calls one.
double similarity(std::string_view pred, std::string_view gold, SimilarityBackend backend,
                  const Llm* embedder = nullptr);

inline constexpr double kDefaultLambda = 0.005;
inline constexpr double kOutputLengthPenalty = 0.001;

double cost_term(double lambda, std::size_t prompt_length);
double complexity_term(std::string_view prompt);

struct ObjectiveConfig {
  double lambda = kDefaultLambda;
  double alpha = 1.0;
  // Unset means "same as lambda".
  std::optional<double> beta;
  double gamma = 0.0;

  double beta_value() const { return beta.value_or(lambda); }
  // Throws ValidationError when lambda < 0.
  void validate() const;

  bool operator==(const ObjectiveConfig&) const = default;
};

void to_json(nlohmann::json& j, const ObjectiveConfig& c);
void from_json(const nlohmann::json& j, ObjectiveConfig& c);

double combined_score(double performance, std::size_t prompt_length, double complexity,
                      const ObjectiveConfig& cfg);
double combined_objective(double performance, std::string_view prompt, const ObjectiveConfig& cfg);

struct ExampleScore {
  std::string id;
  double score = 0.0;
  std::string prediction;

  bool operator==(const ExampleScore&) const = default;
};

struct EvaluationResult {
  double performance = 0.0;
  std::size_t prompt_length = 0;
  double length_term = 1.0;
  double complexity_term = 0.0;
  double combined = 0.0;
  std::vector<ExampleScore> per_example;
  MetricSpec metric;

  bool operator==(const EvaluationResult&) const = default;
};

void to_json(nlohmann::json& j, const ExampleScore& s);
void from_json(const nlohmann::json& j, ExampleScore& s);
void to_json(nlohmann::json& j, const EvaluationResult& r);
void from_json(const nlohmann::json& j, EvaluationResult& r);

void write_per_example_csv(std::ostream& out, const EvaluationResult& r);

// Scores predicted output maps against gold examples. The metric is applied
// per output field and averaged. `metric` is updated to the similarity backend
// actually used when a fallback happens.
std::vector<double> score_predictions(std::span<const FieldMap> predictions,
                                      std::span<const SyntheticExample> golds, MetricSpec& metric,
                                      const Llm* embedder);

// Produces per-example scores for a prompt. The default implementation runs a
// student model; tests substitute synthetic scorers.
class ExampleScorer {
 public:
  virtual ~ExampleScorer() = default;
  virtual std::vector<ExampleScore> score(const CandidatePrompt& prompt,
                                          std::span<const SyntheticExample> examples,
                                          MetricSpec& metric) const = 0;
};

class StudentScorer final : public ExampleScorer {
 public:
  // Similarity metrics embed through `embedder` when given, else the student.
  explicit StudentScorer(Llm student, std::optional<Llm> embedder = std::nullopt);

  std::vector<ExampleScore> score(const CandidatePrompt& prompt,
                                  std::span<const SyntheticExample> examples,
                                  MetricSpec& metric) const override;

  // Raw student predictions, one per example, requested concurrently.
  std::vector<std::string> predict(const CandidatePrompt& prompt,
                                   std::span<const SyntheticExample> examples) const;

  const Llm& student() const noexcept { return student_; }

 private:
  Llm student_;
  std::optional<Llm> embedder_;
};

// Throws EmptyExampleSet when `examples` is empty.
EvaluationResult evaluate(const CandidatePrompt& prompt, std::span<const SyntheticExample> examples,
                          const MetricSpec& metric, const ExampleScorer& scorer,
                          const ObjectiveConfig& cfg);

EvaluationResult evaluate(const CandidatePrompt& prompt, std::span<const SyntheticExample> examples,
                          const MetricSpec& metric, const Llm& student, const ObjectiveConfig& cfg);

}  // namespace promptopt
