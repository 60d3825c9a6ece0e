#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>

#include "promptopt/optimizer.hpp"
#include "support.hpp"

using namespace promptopt;
using namespace testsupport;
using nlohmann::json;

namespace {

TaskSpec complete_spec() {
  auto spec = parse_structured_input(
      "[TASK] Classify the sentiment of short product reviews as positive or negative. "
      "[RULES] Answer with one word. [OUTPUT_FORMAT] positive or negative");
  spec.task_type = TaskType::Classification;
  spec.schema = FieldSchema{{"text"}, {"label"}};
  spec.technique = PromptingTechnique::Predict;
  return spec;
}

DatasetSplit make_split(std::size_t n, double ratio = 0.2, std::uint64_t seed = 3) {
  SyntheticDataset d;
  d.schema = FieldSchema{{"text"}, {"label"}};
  d.examples = labelled_examples(n);
  return split_dataset(d, ratio, std::nullopt, seed);
}

SearchInputs length_inputs(const std::vector<std::size_t>& lengths) {
  SearchInputs in;
  for (std::size_t i = 0; i < lengths.size(); ++i) in.instructions.push_back(words(lengths[i], "w" + std::to_string(i) + "_"));
  in.schema = FieldSchema{{"text"}, {"label"}};
  return in;
}

OptimizerConfig search_config(int trials) {
  auto cfg = strategy_defaults(SearchStrategy::Quick);
  cfg.backend = OptimizerBackend::StructuredSearch;
  cfg.n_trials = trials;
  return cfg;
}

// Student that labels every review correctly except those containing `wrong`.
std::shared_ptr<MockProvider> labelling_student(const std::string& wrong = "\x01") {
  auto mock = mock_script({});
  mock->set_responder([wrong](const CompletionRequest& r) -> std::optional<std::string> {
    auto pos = r.user_text.rfind("text: ");
    if (pos == std::string::npos) return std::nullopt;
    auto line = r.user_text.substr(pos + 6, r.user_text.find('\n', pos) - pos - 6);
    if (line.find(wrong) != std::string::npos) return std::string("neutral");
    auto digits = line.substr(line.find_last_of(' ') + 1);
    if (!std::all_of(digits.begin(), digits.end(), ::isdigit) || digits.empty()) return std::nullopt;
    return std::string(std::stoi(digits) % 2 == 0 ? "positive" : "negative");
  });
  return mock;
}

}  // namespace

TEST(Prompts, BaselineJoinsSpecFields) {
  auto spec = complete_spec();
  EXPECT_EQ(baseline_instruction(spec),
            "Classify the sentiment of short product reviews as positive or negative.\n"
            "Answer with one word.\npositive or negative");
  auto p = baseline_prompt(spec);
  EXPECT_TRUE(p.demos.empty());
  TaskSpec incomplete;
  EXPECT_THROW(baseline_prompt(incomplete), Error);
}

TEST(Prompts, MetaPromptCarriesFeedbackAndGuidelines) {
  auto spec = complete_spec();
  spec.feedback_notes = {"Mention sarcasm explicitly"};
  auto text = meta_prompt_text(spec);
  EXPECT_NE(text.find("Mention sarcasm explicitly"), std::string::npos);
  EXPECT_NE(text.find(guidelines_digest()), std::string::npos);
  auto proposal = proposal_prompt_text(spec, make_split(30).train, 4);
  EXPECT_NE(proposal.find("exactly 4 instructions"), std::string::npos);
  EXPECT_NE(proposal.find("Mention sarcasm explicitly"), std::string::npos);
}

TEST(Prompts, RenderLayoutAndTemplate) {
  CandidatePrompt p;
  p.instruction = "Label it.";
  p.render_schema = FieldSchema{{"text"}, {"label"}};
  p.demos = {{{{"text", "great"}}, {{"label", "positive"}}}};
  EXPECT_EQ(p.render({{"text", "awful"}}),
            "Label it.\n\nFormat:\ntext: <text>\nlabel: <label>\n\n---\n\ntext: great\nlabel: "
            "positive\n\n---\n\ntext: awful\n");
  EXPECT_NE(p.render_template().find("text: {text}\n"), std::string::npos);
  EXPECT_EQ(p.body_text(), "Label it.\ntext: great\nlabel: positive\n");
  EXPECT_EQ(p.length(), 6u);
  p.technique = PromptingTechnique::ChainOfThought;
  EXPECT_NE(p.render_template().find("Reasoning: <step-by-step reasoning>"), std::string::npos);
  EXPECT_EQ(json(p).get<CandidatePrompt>(), p);
  p.demos.push_back({{{"wrong", "x"}}, {{"label", "y"}}});
  EXPECT_THROW(p.validate(), Error);
}

TEST(Prompts, StudentReplyParsing) {
  FieldSchema one{{"q"}, {"answer"}};
  EXPECT_EQ(parse_student_reply(" 42 \n", one, PromptingTechnique::Predict).at("answer"), "42");
  EXPECT_EQ(parse_student_reply("Reasoning: 40+2\nanswer: 42", one, PromptingTechnique::ChainOfThought)
                .at("answer"),
            "42");
  EXPECT_EQ(parse_student_reply("thinking\nmore\n42", one, PromptingTechnique::ChainOfThought).at("answer"),
            "42");
  FieldSchema two{{"q"}, {"a", "b"}};
  auto m = parse_student_reply("a: 1\nb: 2\na: 3", two, PromptingTechnique::Predict);
  EXPECT_EQ(m.at("a"), "3");
  EXPECT_EQ(m.at("b"), "2");
  EXPECT_EQ(parse_student_reply("nothing", two, PromptingTechnique::Predict).at("a"), "");
}

TEST(InstructionList, ParsesNumberedItems) {
  auto items = parse_instruction_list("```\n1. First one\ncontinued\n2) Second\n\n3. Third\n```");
  ASSERT_EQ(items.size(), 3u);
  EXPECT_EQ(items[0], "First one continued");
  EXPECT_EQ(items[1], "Second");
  EXPECT_TRUE(parse_instruction_list("no list here").empty());
}

TEST(InstructionList, ProposalNeedsTwoItems) {
  Llm teacher(named_mock("t", ModelRole::Teacher),
              mock_script({{"inside one fenced block.", "```\n1. Only one\n```"}}));
  try {
    propose_instructions(complete_spec(), {}, 5, teacher);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ProposalParseError);
  }
  Llm good(named_mock("t", ModelRole::Teacher), sentiment_mock());
  auto pool = propose_instructions(complete_spec(), {}, 5, good);
  EXPECT_EQ(pool.front(), baseline_instruction(complete_spec()));
  EXPECT_EQ(pool.size(), 6u);
}

TEST(MetaPrompt, ParseErrorAfterReasks) {
  Llm teacher(named_mock("t", ModelRole::Teacher), mock_script({{"inside one fenced block.", "no fence"}}));
  try {
    meta_prompt_optimize(complete_spec(), teacher, 4);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MetaParseError);
  }
  EXPECT_EQ(teacher.call_count(), 3);
}

TEST(Chooser, TriesEveryPairBeforeRepeating) {
  UniformChooser chooser;
  DeterministicRng rng(5);
  std::vector<TrialRecord> history;
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (int t = 0; t < 12; ++t) {
    auto [i, d] = chooser.next(4, 3, history, rng);
    ASSERT_LT(i, 4u);
    ASSERT_LT(d, 3u);
    EXPECT_TRUE(seen.insert({i, d}).second);
    TrialRecord r;
    r.instruction_index = static_cast<int>(i);
    r.demo_set_index = static_cast<int>(d);
    history.push_back(r);
  }
  auto [i, d] = chooser.next(4, 3, history, rng);
  EXPECT_LT(i * 3 + d, 12u);
}

TEST(DemoSets, EmptyFirstThenDistinctSubsets) {
  std::vector<Demo> pool;
  for (int i = 0; i < 6; ++i) pool.push_back({{{"text", std::to_string(i)}}, {{"label", "x"}}});
  DeterministicRng rng(2);
  auto sets = demo_set_candidates(pool, 4, 5, rng);
  ASSERT_GE(sets.size(), 2u);
  EXPECT_TRUE(sets.front().empty());
  for (std::size_t s = 1; s < sets.size(); ++s) {
    EXPECT_EQ(sets[s].size(), 4u);
    for (std::size_t t = 1; t < s; ++t) EXPECT_NE(sets[s], sets[t]);
  }
  DeterministicRng rng2(2);
  EXPECT_EQ(demo_set_candidates({}, 4, 5, rng2).size(), 1u);
}

TEST(Bootstrap, KeepsOnlyHighScoringGoldExamples) {
  auto split = make_split(30);
  Llm student(named_mock("s", ModelRole::Student), labelling_student("number 1"));
  StudentScorer scorer(student);
  auto demos = bootstrap_demos(baseline_prompt(complete_spec()), split.train, 8, 0.9,
                               MetricSpec{MetricKind::ExactMatch}, scorer);
  for (const auto& d : demos) {
    EXPECT_EQ(d.inputs.at("text").find("number 1"), std::string::npos);
    bool in_train = std::any_of(split.train.begin(), split.train.end(), [&](const auto& e) {
      return e.inputs == d.inputs && e.outputs == d.outputs;
    });
    EXPECT_TRUE(in_train);
  }
  EXPECT_THROW(bootstrap_demos(baseline_prompt(complete_spec()), split.train, 8, 1.5,
                               MetricSpec{}, scorer),
               Error);
}

TEST(Search, LengthTrendAcrossLambda) {
  auto split = make_split(30);
  auto inputs = length_inputs({11, 16, 29});
  auto pick = [&](double lambda) {
    ObjectiveConfig obj;
    obj.lambda = lambda;
    return search(inputs, split, MetricSpec{}, search_config(10), obj, LengthScorer(), 1)
        .best.length();
  };
  EXPECT_EQ(pick(0.0), 29u);
  EXPECT_EQ(pick(0.005), 16u);
  EXPECT_EQ(pick(0.05), 11u);
}

TEST(Search, SelectedLengthNonIncreasingInLambda) {
  std::mt19937_64 gen(404);
  auto split = make_split(20);
  for (int trial = 0; trial < 60; ++trial) {
    std::vector<std::size_t> lengths;
    const auto k = 2 + gen() % 5;
    for (std::size_t i = 0; i < k; ++i) lengths.push_back(1 + gen() % 40);
    auto inputs = length_inputs(lengths);
    std::vector<double> lambdas;
    for (int i = 0; i < 6; ++i) lambdas.push_back(0.05 * static_cast<double>(gen() % 1001) / 1000.0);
    std::sort(lambdas.begin(), lambdas.end());
    std::size_t previous = SIZE_MAX;
    for (double lambda : lambdas) {
      ObjectiveConfig obj;
      obj.lambda = lambda;
      auto best = search(inputs, split, MetricSpec{}, search_config(static_cast<int>(k) + 2), obj,
                         LengthScorer(0.9), gen())
                      .best.length();
      ASSERT_LE(best, previous) << "lambda=" << lambda;
      previous = best;
    }
  }
}

TEST(Search, TrialAccountingAndMinibatches) {
  std::vector<Demo> pool;
  for (int i = 0; i < 8; ++i) pool.push_back({{{"text", "demo " + std::to_string(i)}}, {{"label", "positive"}}});
  for (std::size_t n : {6u, 10u, 30u, 60u}) {
    auto split = make_split(n);
    auto inputs = length_inputs({5, 7, 9, 11});
    inputs.demo_pool = pool;
    for (int trials : {1, 4, 10, 30}) {
      auto cfg = search_config(trials);
      auto result = search(inputs, split, MetricSpec{}, cfg, ObjectiveConfig{}, HashScorer(n), 9);
      ASSERT_LE(static_cast<int>(result.trials.size()), cfg.n_trials);
      const auto expected = std::min<std::size_t>(5, split.val.size());
      std::set<std::string> val_ids;
      for (const auto& e : split.val) val_ids.insert(e.id);
      for (const auto& t : result.trials) {
        ASSERT_EQ(t.minibatch_ids.size(), expected);
        std::set<std::string> unique(t.minibatch_ids.begin(), t.minibatch_ids.end());
        EXPECT_EQ(unique.size(), expected);
        for (const auto& id : t.minibatch_ids) EXPECT_TRUE(val_ids.count(id));
      }
      EXPECT_GE(result.best_eval.combined, result.baseline_eval.combined);
      EXPECT_EQ(result.baseline.instruction, inputs.instructions[0]);
      EXPECT_TRUE(result.baseline.demos.empty());
      for (const auto& d : result.best.demos) {
        EXPECT_NE(std::find(pool.begin(), pool.end(), d), pool.end());
      }
    }
  }
}

TEST(Search, DeterministicUnderFixedSeed) {
  auto split = make_split(30);
  auto inputs = length_inputs({5, 7, 9});
  auto a = search(inputs, split, MetricSpec{}, search_config(10), ObjectiveConfig{}, HashScorer(1), 42);
  auto b = search(inputs, split, MetricSpec{}, search_config(10), ObjectiveConfig{}, HashScorer(1), 42);
  EXPECT_EQ(json(a).dump(), json(b).dump());
  EXPECT_EQ(json(a).get<OptimizationResult>(), a);
}

TEST(Search, Errors) {
  DatasetSplit empty;
  auto code_of = [&](const SearchInputs& in, const DatasetSplit& s) {
    try {
      search(in, s, MetricSpec{}, search_config(3), ObjectiveConfig{}, HashScorer(0), 0);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::QueueFull;
  };
  EXPECT_EQ(code_of(length_inputs({3}), empty), ErrorCode::EmptyValidationSet);
  EXPECT_EQ(code_of(SearchInputs{}, make_split(10)), ErrorCode::ValidationError);
}

TEST(Search, BaselineNeverLosesAcrossRandomScorers) {
  auto split = make_split(30);
  std::vector<Demo> pool;
  for (int i = 0; i < 6; ++i) pool.push_back({{{"text", "d" + std::to_string(i)}}, {{"label", "negative"}}});
  for (std::uint64_t salt = 0; salt < 40; ++salt) {
    auto inputs = length_inputs({4, 6, 8, 10, 12});
    inputs.demo_pool = pool;
    ObjectiveConfig obj;
    obj.lambda = 0.001 * static_cast<double>(salt);
    auto r = search(inputs, split, MetricSpec{}, search_config(10), obj, HashScorer(salt), salt);
    EXPECT_GE(r.best_eval.combined, r.baseline_eval.combined);
  }
}

TEST(Optimize, SimpleBackendCallAccounting) {
  auto split = make_split(30);
  auto ledger = std::make_shared<UsageLedger>();
  Llm teacher(named_mock("teacher", ModelRole::Teacher), sentiment_mock(), ledger);
  Llm student(named_mock("student", ModelRole::Student), labelling_student(), ledger);
  auto cfg = strategy_defaults(SearchStrategy::Quick);
  auto r = optimize(complete_spec(), split, MetricSpec{MetricKind::ExactMatch}, cfg, ObjectiveConfig{},
                    teacher, student, 0);
  EXPECT_EQ(ledger->usage("teacher").call_count, 1);
  EXPECT_EQ(ledger->usage("student").call_count, static_cast<std::int64_t>(2 * split.val.size()));
  EXPECT_EQ(r.backend, OptimizerBackend::SimpleMetaPrompt);
  EXPECT_GE(r.best_eval.combined, r.baseline_eval.combined);
  EXPECT_EQ(r.instructions.size(), 2u);
  EXPECT_EQ(r.instructions[1], "Label the review sentiment: positive or negative.");
  // The rewrite is shorter and the student is perfect either way.
  EXPECT_EQ(r.best.instruction, r.instructions[1]);
}

TEST(Optimize, SimpleBackendKeepsBaselineWhenRewriteIsWorse) {
  auto split = make_split(30);
  Llm teacher(named_mock("teacher", ModelRole::Teacher), sentiment_mock());
  auto mock = labelling_student();
  // The rewritten instruction makes the student fail.
  mock->set_responder([](const CompletionRequest& r) -> std::optional<std::string> {
    if (r.user_text.rfind("Label the review sentiment", 0) == 0) return std::string("unsure");
    auto pos = r.user_text.rfind("number ");
    if (pos == std::string::npos) return std::nullopt;
    return std::string(std::stoi(r.user_text.substr(pos + 7)) % 2 == 0 ? "positive" : "negative");
  });
  Llm student(named_mock("student", ModelRole::Student), mock);
  auto r = optimize(complete_spec(), split, MetricSpec{MetricKind::ExactMatch},
                    strategy_defaults(SearchStrategy::Quick), ObjectiveConfig{}, teacher, student, 0);
  EXPECT_EQ(r.best, r.baseline);
  EXPECT_DOUBLE_EQ(r.baseline_eval.performance, 1.0);
}

TEST(Optimize, StructuredBackendUsesBootstrappedGoldDemos) {
  auto split = make_split(30);
  Llm teacher(named_mock("teacher", ModelRole::Teacher), sentiment_mock());
  Llm student(named_mock("student", ModelRole::Student), labelling_student("number 3"));
  auto cfg = strategy_defaults(SearchStrategy::Quick);
  cfg.backend = OptimizerBackend::StructuredSearch;
  auto r = optimize(complete_spec(), split, MetricSpec{MetricKind::ExactMatch}, cfg, ObjectiveConfig{},
                    teacher, student, 11);
  EXPECT_EQ(r.backend, OptimizerBackend::StructuredSearch);
  EXPECT_LE(r.trials.size(), 10u);
  EXPECT_EQ(r.instructions.size(), 6u);
  EXPECT_GE(r.best_eval.combined, r.baseline_eval.combined);
  for (const auto& d : r.best.demos) {
    bool gold = std::any_of(split.train.begin(), split.train.end(), [&](const auto& e) {
      return e.inputs == d.inputs && e.outputs == d.outputs;
    });
    EXPECT_TRUE(gold);
  }
}

TEST(Optimize, RequiresValidationData) {
  Llm teacher(named_mock("teacher", ModelRole::Teacher), sentiment_mock());
  DatasetSplit empty;
  try {
    optimize(complete_spec(), empty, MetricSpec{}, strategy_defaults(SearchStrategy::Quick),
             ObjectiveConfig{}, teacher, HashScorer(0), 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyValidationSet);
  }
}
