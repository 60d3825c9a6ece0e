#include "promptopt/pipeline.hpp"

namespace promptopt {

namespace {

void stage(const PipelineOptions& options, const std::string& name) {
  if (options.on_stage) options.on_stage(name);
}

}  // namespace

ConfiguredTask configure_task(std::string_view raw_input, const PipelineOptions& options,
                              const Llm& teacher) {
  ConfiguredTask task;
  stage(options, "configure");
  auto parsed = parse_structured_input(raw_input);
  task.spec = infer_task_spec(raw_input, parsed, teacher, InferOptions{options.enhance});
  classify_task(task.spec, teacher);
  task.spec.complexity = assess_complexity(task.spec);
  task.schema = infer_field_schema(task.spec, teacher);
  task.spec.schema = task.schema;
  select_technique(task.spec, options.exemplars, teacher);
  task.metric = select_metric(*task.spec.task_type);
  if (options.metric) task.metric.primary = *options.metric;

  task.optimizer = strategy_defaults(options.strategy);
  if (options.backend) task.optimizer.backend = *options.backend;
  if (options.n_samples) task.optimizer.n_samples = *options.n_samples;
  task.optimizer.validate();
  if (options.lambda) task.objective.lambda = *options.lambda;
  task.objective.validate();
  return task;
}

SyntheticDataset build_dataset(const ConfiguredTask& task, const Llm& teacher,
                               const PipelineOptions& options) {
  SyntheticDataset dataset;
  dataset.schema = task.schema;
  const auto target = static_cast<std::size_t>(task.optimizer.n_samples);
  for (const auto& fs : task.spec.few_shot_examples) {
    if (dataset.examples.size() >= target) break;
    if (!task.schema.conforms(fs.inputs, fs.outputs)) continue;
    SyntheticExample e;
    e.id = example_id(dataset.examples.size() + 1);
    e.inputs = fs.inputs;
    e.outputs = fs.outputs;
    e.provenance = Provenance::UserSupplied;
    dataset.examples.push_back(std::move(e));
  }
  if (dataset.examples.size() < target) {
    stage(options, "generate");
    GenerationOptions gen;
    gen.existing = dataset.examples;
    auto generated = generate_dataset(task.spec, task.schema,
                                      static_cast<int>(target - dataset.examples.size()), teacher,
                                      options.generation_token_budget, gen);
    for (auto& e : generated.examples) dataset.examples.push_back(std::move(e));
    dataset.generation_log = std::move(generated.generation_log);
  }
  return dataset;
}

std::optional<std::string> stratify_field_for(const ConfiguredTask& task) {
  if (task.spec.task_type == TaskType::Classification && !task.schema.output_fields.empty()) {
    return task.schema.output_fields.front();
  }
  return std::nullopt;
}

Session run_pipeline(std::string_view raw_input, const PipelineOptions& options, const Llm& teacher,
                     const Llm& student, const SessionStore& store,
                     std::optional<std::string> session_id) {
  auto task = configure_task(raw_input, options, teacher);
  auto dataset = build_dataset(task, teacher, options);

  stage(options, "split");
  auto stratify = stratify_field_for(task);
  auto split = split_dataset(dataset, task.optimizer.train_ratio, stratify, options.seed);

  stage(options, "optimize");
  auto result = optimize(task.spec, split, task.metric, task.optimizer, task.objective, teacher,
                         student, options.seed);

  stage(options, "store");
  SessionConfigs configs;
  configs.optimizer = task.optimizer;
  configs.objective = task.objective;
  configs.teacher = teacher.config();
  configs.student = student.config();
  configs.metric = task.metric;
  configs.seed = options.seed;
  configs.generation_token_budget = options.generation_token_budget;
  configs.stratify_field = stratify;
  return create_session(task.spec, dataset, split, result, configs, store, std::move(session_id));
}

}  // namespace promptopt
