#include "promptopt/optimizer.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <set>
#include <sstream>

#include "promptopt/teacher.hpp"
#include "promptopt/text.hpp"

namespace promptopt {

using nlohmann::json;

void to_json(json& j, const TrialRecord& t) {
  j = json{{"trial_index", t.trial_index},
           {"instruction_index", t.instruction_index},
           {"demo_set_index", t.demo_set_index},
           {"demo_set_digest", t.demo_set_digest},
           {"minibatch_ids", t.minibatch_ids},
           {"minibatch_score", t.minibatch_score},
           {"combined", t.combined}};
}

void from_json(const json& j, TrialRecord& t) {
  t.trial_index = j.at("trial_index").get<int>();
  t.instruction_index = j.at("instruction_index").get<int>();
  t.demo_set_index = j.value("demo_set_index", 0);
  t.demo_set_digest = j.at("demo_set_digest").get<std::string>();
  t.minibatch_ids = j.at("minibatch_ids").get<std::vector<std::string>>();
  t.minibatch_score = j.at("minibatch_score").get<double>();
  t.combined = j.at("combined").get<double>();
}

void to_json(json& j, const OptimizationResult& r) {
  j = json{{"best", r.best},
           {"best_eval", r.best_eval},
           {"baseline", r.baseline},
           {"baseline_eval", r.baseline_eval},
           {"trials", r.trials},
           {"backend", to_string(r.backend)},
           {"instructions", r.instructions}};
}

void from_json(const json& j, OptimizationResult& r) {
  r.best = j.at("best").get<CandidatePrompt>();
  r.best_eval = j.at("best_eval").get<EvaluationResult>();
  r.baseline = j.at("baseline").get<CandidatePrompt>();
  r.baseline_eval = j.at("baseline_eval").get<EvaluationResult>();
  r.trials = j.at("trials").get<std::vector<TrialRecord>>();
  auto backend = j.at("backend").get<std::string>();
  auto parsed = backend_from_string(backend);
  if (!parsed) throw Error(ErrorCode::ValidationError, "unknown backend '" + backend + "'");
  r.backend = *parsed;
  r.instructions = j.value("instructions", std::vector<std::string>{});
}

// --- prompts ----------------------------------------------------------------

std::string baseline_instruction(const TaskSpec& spec) {
  std::vector<std::string> parts;
  for (const auto* field : {&spec.task_text(), &spec.instructions, &spec.rules,
                            &spec.output_format}) {
    auto t = text::trim(*field);
    if (!t.empty()) parts.emplace_back(t);
  }
  return text::join(parts, "\n");
}

namespace {

void require_complete(const TaskSpec& spec) {
  if (!spec.schema) throw Error(ErrorCode::ValidationError, "task spec has no field schema");
  if (!spec.task_type) throw Error(ErrorCode::ValidationError, "task spec has no task type");
}

PromptingTechnique technique_of(const TaskSpec& spec) {
  return spec.technique.value_or(PromptingTechnique::Predict);
}

void describe_spec(std::ostringstream& ss, const TaskSpec& spec) {
  if (spec.task_type) ss << "Task type: " << to_string(*spec.task_type) << "\n";
  ss << "Current instruction:\n<<<\n" << baseline_instruction(spec) << "\n>>>\n";
  if (!spec.context.empty()) ss << "Context: " << spec.context << "\n";
  if (!spec.tools.empty()) ss << "Tools: " << spec.tools << "\n";
  if (spec.schema) {
    ss << "Input fields: " << text::join(spec.schema->input_fields, ", ")
       << "\nOutput fields: " << text::join(spec.schema->output_fields, ", ") << "\n";
  }
  auto technique = technique_of(spec);
  ss << "Prompting technique: " << to_string(technique);
  if (auto d = technique_directive(technique); !d.empty()) ss << ". The student is told: " << d;
  ss << "\n";
  if (!spec.feedback_notes.empty()) {
    ss << "\nReviewer feedback to address:\n";
    for (const auto& note : spec.feedback_notes) ss << "- " << note << "\n";
  }
}

std::optional<std::string> fenced_instruction(const std::string& reply) {
  auto block = text::fenced_block(reply);
  if (!block) return std::nullopt;
  auto t = text::trim(*block);
  if (t.empty()) return std::nullopt;
  return std::string(t);
}

}  // namespace

CandidatePrompt baseline_prompt(const TaskSpec& spec) {
  require_complete(spec);
  CandidatePrompt p;
  p.instruction = baseline_instruction(spec);
  p.technique = technique_of(spec);
  p.render_schema = *spec.schema;
  p.version_tag = "baseline";
  return p;
}

std::string guidelines_digest() {
  return "- State the goal in the first sentence.\n"
         "- Name every input field and say exactly what each output field must contain.\n"
         "- Prefer concrete constraints over adjectives; drop filler and repetition.\n"
         "- Keep the prompt as short as the task allows.\n"
         "- Describe the output format precisely enough to be parsed.\n";
}

std::string meta_prompt_text(const TaskSpec& spec) {
  std::ostringstream ss;
  ss << "You are an expert prompt engineer. Rewrite the instruction below into an improved "
        "prompt for a smaller student model.\n\n";
  describe_spec(ss, spec);
  ss << "\nGuidelines:\n" << guidelines_digest();
  ss << "\nReply with the improved instruction only, inside one fenced block.";
  return ss.str();
}

std::string proposal_prompt_text(const TaskSpec& spec, std::span<const SyntheticExample> train,
                                 int k) {
  std::ostringstream ss;
  ss << "You are an expert prompt engineer. Write " << k
     << " alternative instructions for the task below. Vary wording, emphasis and length.\n\n";
  describe_spec(ss, spec);
  if (!train.empty() && spec.schema) {
    ss << "\nTraining examples:\n";
    for (std::size_t i = 0; i < std::min(train.size(), kProposalTrainDigests); ++i) {
      ss << "- " << demo_digest({train[i].inputs, train[i].outputs}, *spec.schema) << "\n";
    }
  }
  ss << "\nGuidelines:\n" << guidelines_digest();
  ss << "\nReply with a numbered list of exactly " << k
     << " instructions (1. ... 2. ...) inside one fenced block.";
  return ss.str();
}

CandidatePrompt meta_prompt_optimize(const TaskSpec& spec, const Llm& teacher,
                                     std::size_t n_demos) {
  require_complete(spec);
  CompletionRequest request;
  request.user_text = meta_prompt_text(spec);
  CandidatePrompt p;
  p.instruction = ask_structured(teacher, request, fenced_instruction,
                                 "Reply with the improved instruction inside one fenced block.",
                                 ErrorCode::MetaParseError, "meta prompt reply");
  p.technique = technique_of(spec);
  p.render_schema = *spec.schema;
  for (const auto& ex : spec.few_shot_examples) {
    if (p.demos.size() >= n_demos) break;
    if (spec.schema->conforms(ex.inputs, ex.outputs)) p.demos.push_back(ex);
  }
  p.version_tag = "meta";
  return p;
}

std::vector<std::string> parse_instruction_list(const std::string& reply) {
  auto body = text::fenced_block(reply).value_or(reply);
  std::vector<std::string> items;
  bool in_item = false;
  for (const auto& raw : text::split(body, "\n")) {
    auto line = text::trim(raw);
    if (line.empty()) {
      in_item = false;
      continue;
    }
    std::size_t i = 0;
    while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) ++i;
    if (i > 0 && i < line.size() && (line[i] == '.' || line[i] == ')')) {
      auto rest = text::trim(line.substr(i + 1));
      if (!rest.empty()) {
        items.emplace_back(rest);
        in_item = true;
        continue;
      }
    }
    if (in_item) items.back() += " " + std::string(line);
  }
  return items;
}

std::vector<std::string> propose_instructions(const TaskSpec& spec,
                                              std::span<const SyntheticExample> train, int k,
                                              const Llm& teacher) {
  if (k < 1) throw Error(ErrorCode::ValidationError, "k must be at least 1");
  const std::size_t needed = std::min(2, k);
  CompletionRequest request;
  request.user_text = proposal_prompt_text(spec, train, k);
  auto parse = [&](const std::string& reply) -> std::optional<std::vector<std::string>> {
    auto items = parse_instruction_list(reply);
    if (items.size() < needed) return std::nullopt;
    if (items.size() > static_cast<std::size_t>(k)) items.resize(static_cast<std::size_t>(k));
    return items;
  };
  auto variants = ask_structured(teacher, request, parse,
                                 "Reply with a numbered list of " + std::to_string(k) +
                                     " instructions inside one fenced block.",
                                 ErrorCode::ProposalParseError, "instruction proposal reply");
  std::vector<std::string> pool{baseline_instruction(spec)};
  pool.insert(pool.end(), variants.begin(), variants.end());
  return pool;
}

std::vector<Demo> bootstrap_demos(const CandidatePrompt& prompt,
                                  std::span<const SyntheticExample> train, std::size_t max_demos,
                                  double threshold, const MetricSpec& metric,
                                  const ExampleScorer& scorer) {
  if (threshold < 0.0 || threshold > 1.0) {
    throw Error(ErrorCode::ValidationError, "bootstrap threshold must lie in [0, 1]");
  }
  std::vector<Demo> demos;
  for (std::size_t i = 0; i < train.size() && demos.size() < max_demos; ++i) {
    MetricSpec m = metric;
    auto scored = scorer.score(prompt, train.subspan(i, 1), m);
    if (!scored.empty() && scored.front().score >= threshold) {
      demos.push_back({train[i].inputs, train[i].outputs});
    }
  }
  return demos;
}

// --- search -------------------------------------------------------------------

std::pair<std::size_t, std::size_t> UniformChooser::next(std::size_t n_instructions,
                                                         std::size_t n_demo_sets,
                                                         std::span<const TrialRecord> history,
                                                         DeterministicRng& rng) {
  std::set<std::pair<std::size_t, std::size_t>> tried;
  for (const auto& t : history) {
    tried.emplace(static_cast<std::size_t>(t.instruction_index),
                  static_cast<std::size_t>(t.demo_set_index));
  }
  std::vector<std::pair<std::size_t, std::size_t>> untried;
  for (std::size_t i = 0; i < n_instructions; ++i) {
    for (std::size_t d = 0; d < n_demo_sets; ++d) {
      if (!tried.count({i, d})) untried.emplace_back(i, d);
    }
  }
  if (!untried.empty()) return untried[rng.below(untried.size())];
  auto flat = rng.below(n_instructions * n_demo_sets);
  return {flat / n_demo_sets, flat % n_demo_sets};
}

std::vector<std::vector<Demo>> demo_set_candidates(std::span<const Demo> pool,
                                                   std::size_t n_demos, std::size_t count,
                                                   DeterministicRng& rng) {
  std::vector<std::vector<Demo>> sets{{}};
  const auto size = std::min(n_demos, pool.size());
  if (size == 0) return sets;
  std::set<std::vector<std::size_t>> seen;
  for (std::size_t c = 0; c < count; ++c) {
    auto idx = rng.sample_indices(pool.size(), size);
    std::sort(idx.begin(), idx.end());
    if (!seen.insert(idx).second) continue;
    std::vector<Demo> set;
    for (auto i : idx) set.push_back(pool[i]);
    sets.push_back(std::move(set));
  }
  return sets;
}

namespace {

std::string demo_set_digest(const std::vector<Demo>& demos, const FieldSchema& schema) {
  if (demos.empty()) return "none";
  std::string all;
  for (const auto& d : demos) all += demo_digest(d, schema) + "\n";
  return text::digest(all);
}

}  // namespace

OptimizationResult search(const SearchInputs& inputs, const DatasetSplit& split,
                          const MetricSpec& metric, const OptimizerConfig& cfg,
                          const ObjectiveConfig& obj, const ExampleScorer& scorer,
                          std::uint64_t seed, TrialChooser* chooser) {
  if (split.val.empty()) throw Error(ErrorCode::EmptyValidationSet, "validation set is empty");
  if (inputs.instructions.empty()) {
    throw Error(ErrorCode::ValidationError, "search needs at least one instruction");
  }
  cfg.validate();
  obj.validate();

  DeterministicRng rng(seed);
  UniformChooser uniform;
  if (!chooser) chooser = &uniform;

  const auto demo_sets =
      demo_set_candidates(inputs.demo_pool, static_cast<std::size_t>(cfg.n_demos),
                          static_cast<std::size_t>(cfg.n_instruction_candidates), rng);

  auto make_prompt = [&](std::size_t i, std::size_t d) {
    CandidatePrompt p;
    p.instruction = inputs.instructions[i];
    p.demos = demo_sets[d];
    p.technique = inputs.technique;
    p.render_schema = inputs.schema;
    p.version_tag = i == 0 && d == 0 ? "baseline"
                                     : "i" + std::to_string(i) + "-d" + std::to_string(d);
    return p;
  };

  OptimizationResult result;
  result.backend = OptimizerBackend::StructuredSearch;
  result.instructions = inputs.instructions;

  const auto mb_size = std::min<std::size_t>(static_cast<std::size_t>(cfg.minibatch_size),
                                             split.val.size());
  using Pair = std::pair<std::size_t, std::size_t>;
  std::map<Pair, std::pair<double, int>> pair_totals;  // sum of combined, count
  std::map<Pair, int> first_seen;

  for (int t = 0; t < cfg.n_trials; ++t) {
    auto [i, d] = chooser->next(inputs.instructions.size(), demo_sets.size(), result.trials, rng);
    auto idx = rng.sample_indices(split.val.size(), mb_size);
    std::sort(idx.begin(), idx.end());
    std::vector<SyntheticExample> minibatch;
    for (auto k : idx) minibatch.push_back(split.val[k]);

    auto eval = evaluate(make_prompt(i, d), minibatch, metric, scorer, obj);
    TrialRecord rec;
    rec.trial_index = t;
    rec.instruction_index = static_cast<int>(i);
    rec.demo_set_index = static_cast<int>(d);
    rec.demo_set_digest = demo_set_digest(demo_sets[d], inputs.schema);
    for (const auto& e : minibatch) rec.minibatch_ids.push_back(e.id);
    rec.minibatch_score = eval.performance;
    rec.combined = eval.combined;
    result.trials.push_back(rec);

    auto& total = pair_totals[{i, d}];
    total.first += eval.combined;
    total.second += 1;
    first_seen.try_emplace({i, d}, t);
  }

  std::vector<Pair> ranked;
  for (const auto& [pair, total] : pair_totals) ranked.push_back(pair);
  std::stable_sort(ranked.begin(), ranked.end(), [&](const Pair& a, const Pair& b) {
    double ma = pair_totals[a].first / pair_totals[a].second;
    double mb = pair_totals[b].first / pair_totals[b].second;
    if (ma != mb) return ma > mb;
    return first_seen[a] < first_seen[b];
  });

  // The baseline is always a finalist, in addition to the top-ranked pairs.
  std::vector<Pair> finalists{{0, 0}};
  for (std::size_t r = 0; r < std::min(ranked.size(), kFullEvaluationTopK); ++r) {
    if (ranked[r] != Pair{0, 0}) finalists.push_back(ranked[r]);
  }

  result.baseline = make_prompt(0, 0);
  result.baseline_eval = evaluate(result.baseline, split.val, metric, scorer, obj);
  result.best = result.baseline;
  result.best_eval = result.baseline_eval;
  for (std::size_t f = 1; f < finalists.size(); ++f) {
    auto prompt = make_prompt(finalists[f].first, finalists[f].second);
    auto eval = evaluate(prompt, split.val, metric, scorer, obj);
    if (eval.combined > result.best_eval.combined) {
      result.best = std::move(prompt);
      result.best_eval = std::move(eval);
    }
  }
  return result;
}

// --- optimize -----------------------------------------------------------------

OptimizationResult optimize(const TaskSpec& spec, const DatasetSplit& split,
                            const MetricSpec& metric, const OptimizerConfig& cfg,
                            const ObjectiveConfig& obj, const Llm& teacher,
                            const ExampleScorer& scorer, std::uint64_t seed) {
  require_complete(spec);
  cfg.validate();
  obj.validate();
  if (split.val.empty()) throw Error(ErrorCode::EmptyValidationSet, "validation set is empty");

  if (cfg.backend == OptimizerBackend::SimpleMetaPrompt) {
    OptimizationResult result;
    result.backend = OptimizerBackend::SimpleMetaPrompt;
    auto candidate = meta_prompt_optimize(spec, teacher, static_cast<std::size_t>(cfg.n_demos));
    result.baseline = baseline_prompt(spec);
    result.instructions = {result.baseline.instruction, candidate.instruction};
    auto candidate_eval = evaluate(candidate, split.val, metric, scorer, obj);
    result.baseline_eval = evaluate(result.baseline, split.val, metric, scorer, obj);
    if (candidate_eval.combined > result.baseline_eval.combined) {
      result.best = std::move(candidate);
      result.best_eval = std::move(candidate_eval);
    } else {
      result.best = result.baseline;
      result.best_eval = result.baseline_eval;
    }
    return result;
  }

  SearchInputs inputs;
  inputs.instructions = propose_instructions(spec, split.train, cfg.n_instruction_candidates, teacher);
  inputs.technique = technique_of(spec);
  inputs.schema = *spec.schema;
  // Twice the per-prompt demo count so sampled subsets can differ.
  inputs.demo_pool = bootstrap_demos(baseline_prompt(spec), split.train,
                                     2 * static_cast<std::size_t>(cfg.n_demos),
                                     kBootstrapThreshold, metric, scorer);
  return search(inputs, split, metric, cfg, obj, scorer, seed);
}

OptimizationResult optimize(const TaskSpec& spec, const DatasetSplit& split,
                            const MetricSpec& metric, const OptimizerConfig& cfg,
                            const ObjectiveConfig& obj, const Llm& teacher, const Llm& student,
                            std::uint64_t seed) {
  return optimize(spec, split, metric, cfg, obj, teacher, StudentScorer(student), seed);
}

}  // namespace promptopt
