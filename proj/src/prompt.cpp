#include "promptopt/prompt.hpp"

#include <set>
#include <sstream>

#include "promptopt/text.hpp"

namespace promptopt {

using nlohmann::json;

namespace {

constexpr std::string_view kSeparator = "---";

const char* slot_hint(PromptingTechnique t) {
  switch (t) {
    case PromptingTechnique::ChainOfThought: return "Reasoning: <step-by-step reasoning>";
    case PromptingTechnique::ProgramOfThought: return "Program: <program-style derivation>";
    case PromptingTechnique::React:
      return "Thought: <thought>\nAction: <action>\nObservation: <observation>";
    case PromptingTechnique::Predict: break;
  }
  return nullptr;
}

void render_fields(std::ostringstream& ss, const std::vector<std::string>& names,
                   const FieldMap& values) {
  for (const auto& name : names) {
    auto it = values.find(name);
    ss << name << ": " << (it == values.end() ? std::string() : it->second) << "\n";
  }
}

std::string render_with(const CandidatePrompt& p, const FieldMap& inputs) {
  const auto& schema = p.render_schema;
  std::ostringstream ss;
  ss << p.instruction << "\n";
  if (auto d = technique_directive(p.technique); !d.empty()) ss << "\n" << d << "\n";

  ss << "\nFormat:\n";
  for (const auto& name : schema.input_fields) ss << name << ": <" << name << ">\n";
  if (auto hint = slot_hint(p.technique)) ss << hint << "\n";
  for (const auto& name : schema.output_fields) ss << name << ": <" << name << ">\n";

  for (const auto& demo : p.demos) {
    ss << "\n" << kSeparator << "\n\n";
    render_fields(ss, schema.input_fields, demo.inputs);
    render_fields(ss, schema.output_fields, demo.outputs);
  }
  ss << "\n" << kSeparator << "\n\n";
  render_fields(ss, schema.input_fields, inputs);
  return ss.str();
}

}  // namespace

std::string technique_directive(PromptingTechnique technique) {
  switch (technique) {
    case PromptingTechnique::Predict: return "";
    case PromptingTechnique::ChainOfThought:
      return "Think step by step. Write your reasoning on a line starting with \"Reasoning:\" "
             "before the answer fields.";
    case PromptingTechnique::ProgramOfThought:
      return "Before answering, write a short program-style derivation on lines starting with "
             "\"Program:\", then give the result in the answer fields.";
    case PromptingTechnique::React:
      return "Work in cycles of \"Thought:\", \"Action:\" and \"Observation:\" lines, then give "
             "the final answer fields.";
  }
  return "";
}

std::string CandidatePrompt::render(const FieldMap& inputs) const { return render_with(*this, inputs); }

std::string CandidatePrompt::render_template() const {
  FieldMap placeholders;
  for (const auto& name : render_schema.input_fields) placeholders[name] = "{" + name + "}";
  return render_with(*this, placeholders);
}

std::string CandidatePrompt::body_text() const {
  std::string out = instruction;
  for (const auto& demo : demos) {
    out += "\n";
    for (const auto& name : render_schema.input_fields) {
      auto it = demo.inputs.find(name);
      if (it != demo.inputs.end()) out += name + ": " + it->second + "\n";
    }
    for (const auto& name : render_schema.output_fields) {
      auto it = demo.outputs.find(name);
      if (it != demo.outputs.end()) out += name + ": " + it->second + "\n";
    }
  }
  return out;
}

std::size_t CandidatePrompt::length() const { return estimate_tokens(body_text()); }

void CandidatePrompt::validate() const {
  render_schema.validate();
  for (const auto& demo : demos) {
    if (!render_schema.conforms(demo.inputs, demo.outputs)) {
      throw Error(ErrorCode::SchemaError, "demonstration does not match the prompt schema");
    }
  }
}

void to_json(json& j, const CandidatePrompt& p) {
  j = json{{"instruction", p.instruction},
           {"demos", p.demos},
           {"technique", to_string(p.technique)},
           {"render_schema", p.render_schema},
           {"version_tag", p.version_tag}};
}

void from_json(const json& j, CandidatePrompt& p) {
  p.instruction = j.at("instruction").get<std::string>();
  p.demos = j.value("demos", std::vector<Demo>{});
  auto technique = j.value("technique", std::string("predict"));
  auto parsed = technique_from_string(technique);
  if (!parsed) throw Error(ErrorCode::ValidationError, "unknown technique '" + technique + "'");
  p.technique = *parsed;
  p.render_schema = j.at("render_schema").get<FieldSchema>();
  p.version_tag = j.value("version_tag", std::string());
}

FieldMap parse_student_reply(const std::string& reply, const FieldSchema& schema,
                             PromptingTechnique technique) {
  auto lines = text::split(reply, "\n");
  std::set<std::string> headers = {"reasoning", "program", "thought", "action", "observation"};
  for (const auto& f : schema.all_fields()) headers.insert(text::to_lower(f));

  auto header_of = [&](std::string_view line) -> std::string {
    auto colon = line.find(':');
    if (colon == std::string_view::npos) return {};
    auto key = text::to_lower(text::trim(line.substr(0, colon)));
    return headers.count(key) ? key : std::string();
  };

  FieldMap out;
  bool any_header = false;
  for (const auto& name : schema.output_fields) {
    const auto key = text::to_lower(name);
    std::optional<std::size_t> start;
    for (std::size_t i = 0; i < lines.size(); ++i) {
      if (header_of(text::trim(lines[i])) == key) start = i;
    }
    if (!start) {
      out[name] = "";
      continue;
    }
    any_header = true;
    auto first = std::string_view(lines[*start]);
    first = text::trim(first);
    std::string value(text::trim(first.substr(first.find(':') + 1)));
    for (auto i = *start + 1; i < lines.size(); ++i) {
      auto line = text::trim(lines[i]);
      if (!header_of(line).empty()) break;
      if (!value.empty()) value += "\n";
      value += line;
    }
    out[name] = std::string(text::trim(value));
  }

  if (!any_header && schema.output_fields.size() == 1) {
    if (technique == PromptingTechnique::Predict) {
      out[schema.output_fields.front()] = std::string(text::trim(reply));
    } else {
      std::string last;
      for (const auto& line : lines) {
        if (!text::trim(line).empty()) last = std::string(text::trim(line));
      }
      out[schema.output_fields.front()] = last;
    }
  }
  return out;
}

std::string demo_digest(const Demo& demo, const FieldSchema& schema) {
  std::vector<std::string> ins, outs;
  for (const auto& name : schema.input_fields) {
    auto it = demo.inputs.find(name);
    if (it != demo.inputs.end()) ins.push_back(name + "=" + it->second);
  }
  for (const auto& name : schema.output_fields) {
    auto it = demo.outputs.find(name);
    if (it != demo.outputs.end()) outs.push_back(name + "=" + it->second);
  }
  return text::join(ins, "; ") + " => " + text::join(outs, "; ");
}

}  // namespace promptopt
