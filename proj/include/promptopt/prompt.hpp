#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "promptopt/config.hpp"

namespace promptopt {

using Demo = FewShotExample;

// An instruction plus attached demonstrations, rendered for a student model.
struct CandidatePrompt {
  std::string instruction;
  std::vector<Demo> demos;
  PromptingTechnique technique = PromptingTechnique::Predict;
  FieldSchema render_schema;
  std::string version_tag;

  // Full prompt for concrete inputs.
  std::string render(const FieldMap& inputs) const;
  // Same layout with "{field}" placeholders in place of the query inputs. This
  // is the text that feedback offsets point into.
  std::string render_template() const;

  // Instruction and demonstrations as plain text; what the length and
  // complexity terms of the objective measure.
  std::string body_text() const;
  std::size_t length() const;

  // Throws SchemaError when a demo does not match the render schema.
  void validate() const;

  bool operator==(const CandidatePrompt&) const = default;
};

void to_json(nlohmann::json& j, const CandidatePrompt& p);
void from_json(const nlohmann::json& j, CandidatePrompt& p);

// Extra directive appended after the instruction; empty for predict.
std::string technique_directive(PromptingTechnique technique);

// Reads the output fields back out of a student reply. Missing fields come
// back empty.
FieldMap parse_student_reply(const std::string& reply, const FieldSchema& schema,
                             PromptingTechnique technique);

// Compact "inputs => outputs" rendering of a demo or example.
std::string demo_digest(const Demo& demo, const FieldSchema& schema);

}  // namespace promptopt
