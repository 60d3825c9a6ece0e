#include "promptopt/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "promptopt/rng.hpp"
#include "promptopt/text.hpp"

namespace promptopt {

using nlohmann::json;

std::string_view to_string(Provenance p) {
  return p == Provenance::Generated ? "generated" : "user_supplied";
}

std::string_view to_string(ValueKind k) {
  switch (k) {
    case ValueKind::Numeric: return "numeric";
    case ValueKind::Label: return "label";
    case ValueKind::FreeText: return "free-text";
  }
  return "free-text";
}

void to_json(json& j, const SyntheticExample& e) {
  j = json{{"id", e.id},
           {"inputs", e.inputs},
           {"outputs", e.outputs},
           {"provenance", to_string(e.provenance)},
           {"flagged", e.flagged},
           {"excluded", e.excluded}};
}

void from_json(const json& j, SyntheticExample& e) {
  e.id = j.at("id").get<std::string>();
  e.inputs = j.at("inputs").get<FieldMap>();
  e.outputs = j.at("outputs").get<FieldMap>();
  auto prov = j.value("provenance", std::string("generated"));
  if (prov == "generated") {
    e.provenance = Provenance::Generated;
  } else if (prov == "user_supplied") {
    e.provenance = Provenance::UserSupplied;
  } else {
    throw Error(ErrorCode::ValidationError, "unknown provenance '" + prov + "'");
  }
  e.flagged = j.value("flagged", false);
  e.excluded = j.value("excluded", false);
}

void to_json(json& j, const GenerationBatch& b) {
  j = json{{"batch_index", b.batch_index},
           {"requested", b.requested},
           {"accepted", b.accepted},
           {"rejected", b.rejected}};
}

void from_json(const json& j, GenerationBatch& b) {
  b.batch_index = j.at("batch_index").get<int>();
  b.requested = j.at("requested").get<int>();
  b.accepted = j.at("accepted").get<int>();
  b.rejected = j.at("rejected").get<int>();
}

void to_json(json& j, const DatasetSplit& s) {
  j = json{{"train", s.train},
           {"val", s.val},
           {"train_ratio", s.train_ratio},
           {"stratify_field", s.stratify_field ? json(*s.stratify_field) : json(nullptr)}};
}

void from_json(const json& j, DatasetSplit& s) {
  s.train = j.at("train").get<std::vector<SyntheticExample>>();
  s.val = j.at("val").get<std::vector<SyntheticExample>>();
  s.train_ratio = j.at("train_ratio").get<double>();
  s.stratify_field.reset();
  if (j.contains("stratify_field") && !j["stratify_field"].is_null()) {
    s.stratify_field = j["stratify_field"].get<std::string>();
  }
}

const SyntheticExample* SyntheticDataset::find(std::string_view id) const {
  for (const auto& e : examples) {
    if (e.id == id) return &e;
  }
  return nullptr;
}

SyntheticExample* SyntheticDataset::find(std::string_view id) {
  return const_cast<SyntheticExample*>(std::as_const(*this).find(id));
}

std::size_t SyntheticDataset::active_count() const {
  return static_cast<std::size_t>(
      std::count_if(examples.begin(), examples.end(), [](const auto& e) { return !e.excluded; }));
}

void write_jsonl(std::ostream& out, std::span<const SyntheticExample> examples) {
  for (const auto& e : examples) out << json(e).dump() << '\n';
}

std::vector<SyntheticExample> read_jsonl(std::istream& in, const FieldSchema& schema) {
  std::vector<SyntheticExample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    SyntheticExample e;
    try {
      e = json::parse(line).get<SyntheticExample>();
    } catch (const json::exception& ex) {
      throw Error(ErrorCode::SchemaError,
                  "dataset line " + std::to_string(line_no) + " is not a valid example: " + ex.what());
    }
    if (!schema.conforms(e.inputs, e.outputs)) {
      throw Error(ErrorCode::SchemaError,
                  "dataset line " + std::to_string(line_no) + " does not match the field schema");
    }
    out.push_back(std::move(e));
  }
  return out;
}

void write_generation_log_csv(std::ostream& out, std::span<const GenerationBatch> log) {
  out << "batch_index,requested,accepted,rejected\n";
  for (const auto& b : log) {
    out << b.batch_index << ',' << b.requested << ',' << b.accepted << ',' << b.rejected << '\n';
  }
}

// --- template ---------------------------------------------------------------

const TemplateField* DataTemplate::field(std::string_view name) const {
  for (const auto& f : fields) {
    if (f.name == name) return &f;
  }
  return nullptr;
}

namespace {

bool is_numeric(std::string_view v) {
  v = text::trim(v);
  if (v.empty()) return false;
  std::string s(v);
  char* end = nullptr;
  std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size();
}

const std::string& value_of(const SyntheticExample& e, const std::string& name, bool output) {
  return output ? e.outputs.at(name) : e.inputs.at(name);
}

}  // namespace

DataTemplate extract_template(std::span<const SyntheticExample> samples, const FieldSchema& schema) {
  schema.validate();
  for (const auto& s : samples) {
    if (!schema.conforms(s.inputs, s.outputs)) {
      throw Error(ErrorCode::SchemaError, "sample '" + s.id + "' does not match the field schema");
    }
  }
  DataTemplate tmpl;
  auto add = [&](const std::string& name, bool output) {
    TemplateField f;
    f.name = name;
    f.is_output = output;
    if (samples.empty()) {
      f.example_value = "<" + name + ">";
      f.kind = ValueKind::FreeText;
    } else {
      f.example_value = value_of(samples.front(), name, output);
      std::set<std::string> distinct;
      bool numeric = true;
      for (const auto& s : samples) {
        const auto& v = value_of(s, name, output);
        distinct.insert(v);
        numeric = numeric && is_numeric(v);
      }
      if (numeric) {
        f.kind = ValueKind::Numeric;
      } else if (distinct.size() <= kLabelDistinctLimit) {
        f.kind = ValueKind::Label;
      } else {
        f.kind = ValueKind::FreeText;
      }
    }
    tmpl.fields.push_back(std::move(f));
  };
  for (const auto& name : schema.input_fields) add(name, false);
  for (const auto& name : schema.output_fields) add(name, true);
  if (!samples.empty()) tmpl.style_notes = "Match the length and tone of the sample records.";
  return tmpl;
}

std::size_t tokens_per_example(const DataTemplate& tmpl) {
  std::vector<std::string> parts;
  for (const auto& f : tmpl.fields) parts.push_back(f.name + "=" + f.example_value);
  auto record = text::join(parts, " " + std::string(kRecordDelimiter) + " ");
  return estimate_tokens(record) + kRecordOverheadTokens;
}

int optimal_batch_size_for(std::size_t per_example, std::size_t token_budget) {
  if (per_example == 0) per_example = 1;
  if (token_budget < per_example) {
    throw Error(ErrorCode::BudgetTooSmall,
                "token budget " + std::to_string(token_budget) + " cannot hold one example of ~" +
                    std::to_string(per_example) + " tokens");
  }
  auto fit = token_budget / per_example;
  return static_cast<int>(std::clamp<std::size_t>(fit, 1, kMaxBatchSize));
}

int optimal_batch_size(const DataTemplate& tmpl, std::size_t token_budget) {
  return optimal_batch_size_for(tokens_per_example(tmpl), token_budget);
}

std::string serialize_record(const FieldSchema& schema, const FieldMap& inputs,
                             const FieldMap& outputs) {
  std::vector<std::string> parts;
  for (const auto& name : schema.input_fields) parts.push_back(name + "=" + inputs.at(name));
  for (const auto& name : schema.output_fields) parts.push_back(name + "=" + outputs.at(name));
  return text::join(parts, " " + std::string(kRecordDelimiter) + " ");
}

std::string example_digest(const SyntheticExample& e, const FieldSchema& schema) {
  std::vector<std::string> parts;
  for (const auto& name : schema.input_fields) {
    auto it = e.inputs.find(name);
    if (it != e.inputs.end()) parts.push_back(name + "=" + it->second);
  }
  auto d = text::join(parts, " " + std::string(kRecordDelimiter) + " ");
  constexpr std::size_t kMaxDigest = 80;
  if (d.size() > kMaxDigest) {
    auto cut = text::codepoint_to_byte(d, kMaxDigest);
    if (cut != std::string::npos && cut < d.size()) d = d.substr(0, cut) + "...";
  }
  return d;
}

std::string build_generation_prompt(const TaskSpec& spec, const DataTemplate& tmpl, int batch_size,
                                    std::span<const std::string> seen_digests, int batch_number) {
  if (batch_size < 1) throw Error(ErrorCode::ValidationError, "batch size must be positive");
  std::ostringstream ss;
  ss << "You are generating synthetic training data for the task below.\n\n";
  ss << "Task: " << spec.task_text() << "\n";
  if (!spec.instructions.empty()) ss << "Instructions: " << spec.instructions << "\n";
  if (!spec.rules.empty()) ss << "Rules: " << spec.rules << "\n";
  if (!spec.output_format.empty()) ss << "Output format: " << spec.output_format << "\n";
  if (!spec.context.empty()) ss << "Context: " << spec.context << "\n";

  ss << "\nRecord layout (inputs first, then outputs):\n";
  std::vector<std::string> example_parts;
  for (const auto& f : tmpl.fields) {
    ss << "- " << f.name << " (" << (f.is_output ? "output" : "input") << ", "
       << to_string(f.kind) << ")\n";
    example_parts.push_back(f.name + "=" + f.example_value);
  }
  ss << "\nExample record:\n"
     << text::fence(text::join(example_parts, " " + std::string(kRecordDelimiter) + " ")) << "\n";
  if (!tmpl.style_notes.empty()) ss << tmpl.style_notes << "\n";

  ss << "\nRequirements:\n"
     << "- Produce exactly " << batch_size << " new records.\n"
     << "- Spread the records across complexity levels, from easy to hard.\n"
     << "- Include edge cases and unusual but valid inputs.\n"
     << "- Vary style, phrasing and length between records.\n"
     << "- Every field must be present and non-empty. Never use \"" << kRecordDelimiter
     << "\" inside a value. Keep each record on one line.\n";

  if (!spec.feedback_notes.empty()) {
    ss << "\nReviewer feedback to respect:\n";
    for (const auto& note : spec.feedback_notes) ss << "- " << note << "\n";
  }

  if (!seen_digests.empty()) {
    ss << "\nAlready generated, do not repeat or paraphrase these:\n";
    auto first = seen_digests.size() > kMaxDigestsInPrompt ? seen_digests.size() - kMaxDigestsInPrompt
                                                           : 0;
    for (auto i = first; i < seen_digests.size(); ++i) ss << "- " << seen_digests[i] << "\n";
  }

  ss << "\nReply with one fenced block containing exactly " << batch_size
     << " records, one per line.\nBatch number: " << batch_number << ".";
  return ss.str();
}

ParseOutcome parse_and_validate(std::string_view raw, const FieldSchema& schema) {
  ParseOutcome outcome;
  auto block = text::fenced_block(raw);
  if (!block) return outcome;

  std::set<std::string> input_keys(schema.input_fields.begin(), schema.input_fields.end());
  std::set<std::string> output_keys(schema.output_fields.begin(), schema.output_fields.end());
  std::set<FieldMap> kept_inputs;

  auto lines = text::split(*block, "\n");
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    auto line = std::string(text::trim(lines[ln]));
    if (line.empty()) continue;
    auto reject = [&](std::string reason) {
      outcome.rejected.push_back({ln + 1, std::move(reason), line});
    };

    SyntheticExample e;
    std::string problem;
    for (const auto& part : text::split(line, kRecordDelimiter)) {
      auto eq = part.find('=');
      if (eq == std::string::npos) {
        problem = "malformed";
        break;
      }
      auto name = std::string(text::trim(std::string_view(part).substr(0, eq)));
      auto value = std::string(text::trim(std::string_view(part).substr(eq + 1)));
      bool is_input = input_keys.count(name) > 0;
      bool is_output = output_keys.count(name) > 0;
      if (!is_input && !is_output) {
        problem = "unknown_field";
        break;
      }
      auto& target = is_input ? e.inputs : e.outputs;
      if (target.count(name)) {
        problem = "duplicate_field";
        break;
      }
      if (value.empty()) {
        problem = "empty_value";
        break;
      }
      target.emplace(std::move(name), std::move(value));
    }
    if (problem.empty() && !schema.conforms(e.inputs, e.outputs)) problem = "missing_field";
    if (problem.empty() && kept_inputs.count(e.inputs)) problem = "duplicate_record";
    if (!problem.empty()) {
      reject(problem);
      continue;
    }
    kept_inputs.insert(e.inputs);
    outcome.kept.push_back(std::move(e));
  }
  return outcome;
}

std::string example_id(std::size_t ordinal) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "ex-%04zu", ordinal);
  return buf;
}

SyntheticDataset generate_dataset(const TaskSpec& spec, const FieldSchema& schema, int n,
                                  const Llm& teacher, std::size_t token_budget,
                                  GenerationOptions options) {
  if (n < 1) throw Error(ErrorCode::ValidationError, "requested dataset size must be positive");
  schema.validate();

  std::vector<SyntheticExample> samples;
  for (const auto& fs : spec.few_shot_examples) {
    if (schema.conforms(fs.inputs, fs.outputs)) {
      samples.push_back({"", fs.inputs, fs.outputs, Provenance::UserSupplied});
    }
  }
  if (samples.empty()) {
    for (const auto& e : options.existing) {
      if (samples.size() >= kLabelDistinctLimit) break;
      if (!e.excluded) samples.push_back(e);
    }
  }
  const auto tmpl = extract_template(samples, schema);
  const int batch_size = optimal_batch_size(tmpl, token_budget);
  const int max_attempts = kAttemptMultiplier * ((n + batch_size - 1) / batch_size);

  SyntheticDataset dataset;
  dataset.schema = schema;
  std::set<FieldMap> seen;
  std::vector<std::string> digests;
  for (const auto& e : options.existing) {
    seen.insert(e.inputs);
    digests.push_back(example_digest(e, schema));
  }
  std::size_t next_ordinal = options.existing.size() + 1;

  for (int attempt = 0; attempt < max_attempts && static_cast<int>(dataset.examples.size()) < n;
       ++attempt) {
    const int remaining = n - static_cast<int>(dataset.examples.size());
    const int current = std::min(batch_size, remaining);
    CompletionRequest request;
    const int batch_number = options.first_batch_number + attempt;
    request.user_text = build_generation_prompt(spec, tmpl, current, digests, batch_number);
    auto reply = teacher.complete(request);
    auto outcome = parse_and_validate(reply.text, schema);

    GenerationBatch log{batch_number, current, 0, static_cast<int>(outcome.rejected.size())};
    for (auto& e : outcome.kept) {
      if (static_cast<int>(dataset.examples.size()) >= n) break;  // overshoot is dropped
      if (!seen.insert(e.inputs).second) {
        ++log.rejected;
        continue;
      }
      e.id = example_id(next_ordinal++);
      e.provenance = Provenance::Generated;
      digests.push_back(example_digest(e, schema));
      dataset.examples.push_back(std::move(e));
      ++log.accepted;
    }
    dataset.generation_log.push_back(log);
  }

  if (static_cast<int>(dataset.examples.size()) < n) {
    auto got = dataset.examples.size();
    throw GenerationStalledError("generated " + std::to_string(got) + " of " + std::to_string(n) +
                                     " examples within " + std::to_string(max_attempts) +
                                     " teacher calls",
                                 std::move(dataset));
  }
  return dataset;
}

// --- split ----------------------------------------------------------------

namespace {

std::size_t round_half_up(double x) { return static_cast<std::size_t>(std::floor(x + 0.5)); }

}  // namespace

DatasetSplit split_dataset(const SyntheticDataset& dataset, double train_ratio,
                           const std::optional<std::string>& stratify_field, std::uint64_t seed) {
  if (!(train_ratio > 0.0 && train_ratio < 1.0)) {
    throw Error(ErrorCode::SplitError, "train_ratio must lie strictly between 0 and 1");
  }
  std::vector<std::size_t> active;
  for (std::size_t i = 0; i < dataset.examples.size(); ++i) {
    if (!dataset.examples[i].excluded) active.push_back(i);
  }
  const auto n = active.size();
  if (n < 2) throw Error(ErrorCode::SplitError, "need at least two examples to split");
  const auto n_train = round_half_up(train_ratio * static_cast<double>(n));
  if (n_train >= n) {
    throw Error(ErrorCode::SplitError, "train_ratio leaves no validation examples");
  }

  DeterministicRng rng(seed);
  std::vector<std::size_t> train_idx;

  if (!stratify_field) {
    auto order = active;
    rng.shuffle(order);
    train_idx.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  } else {
    const auto& outs = dataset.schema.output_fields;
    if (std::find(outs.begin(), outs.end(), *stratify_field) == outs.end()) {
      throw Error(ErrorCode::SplitError, "stratify field '" + *stratify_field +
                                             "' is not an output field");
    }
    std::map<std::string, std::vector<std::size_t>> strata;
    for (auto i : active) strata[dataset.examples[i].outputs.at(*stratify_field)].push_back(i);

    // Largest-remainder allocation of n_train across strata.
    struct Quota {
      std::string label;
      std::size_t take;
      double fraction;
    };
    std::vector<Quota> quotas;
    std::size_t allocated = 0;
    for (const auto& [label, members] : strata) {
      double exact = train_ratio * static_cast<double>(members.size());
      auto base = static_cast<std::size_t>(std::floor(exact));
      quotas.push_back({label, base, exact - static_cast<double>(base)});
      allocated += base;
    }
    std::vector<std::size_t> order(quotas.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return quotas[a].fraction > quotas[b].fraction;
    });
    for (std::size_t k = 0; allocated < n_train; ++k) {
      if (k >= order.size()) {
        throw Error(ErrorCode::SplitError, "cannot allocate train examples across strata");
      }
      auto& q = quotas[order[k]];
      if (q.take + 1 > strata[q.label].size()) continue;
      ++q.take;
      ++allocated;
    }
    for (const auto& q : quotas) {
      auto members = strata[q.label];
      rng.shuffle(members);
      train_idx.insert(train_idx.end(), members.begin(),
                       members.begin() + static_cast<std::ptrdiff_t>(q.take));
    }
  }

  std::sort(train_idx.begin(), train_idx.end());
  DatasetSplit split;
  split.train_ratio = train_ratio;
  split.stratify_field = stratify_field;
  for (auto i : active) {
    if (std::binary_search(train_idx.begin(), train_idx.end(), i)) {
      split.train.push_back(dataset.examples[i]);
    } else {
      split.val.push_back(dataset.examples[i]);
    }
  }
  return split;
}

}  // namespace promptopt
