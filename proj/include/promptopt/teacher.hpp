#pragma once

#include <optional>
#include <string>
#include <utility>

#include "promptopt/error.hpp"
#include "promptopt/providers.hpp"

namespace promptopt {

// Teacher replies are parsed strictly; a malformed reply is re-asked this many
// times before the caller's error is raised.
inline constexpr int kTeacherReasks = 2;

// Sends `request`, parses the reply with `parse` (returning std::optional), and
// re-asks with `reminder` appended while parsing fails.
template <typename Parse>
auto ask_structured(const Llm& model, CompletionRequest request, Parse&& parse,
                    const std::string& reminder, ErrorCode on_failure,
                    const std::string& what) {
  const std::string original = request.user_text;
  std::string last_reply;
  for (int attempt = 0; attempt <= kTeacherReasks; ++attempt) {
    if (attempt > 0) {
      request.user_text = original + "\n\nYour previous reply could not be parsed. " + reminder;
    }
    auto reply = model.complete(request);
    if (auto parsed = parse(reply.text)) return std::move(*parsed);
    last_reply = std::move(reply.text);
  }
  if (last_reply.size() > 200) last_reply = last_reply.substr(0, 200) + "...";
  throw Error(on_failure, what + " unparseable after " + std::to_string(kTeacherReasks) +
                              " re-asks; last reply: " + last_reply);
}

}  // namespace promptopt
