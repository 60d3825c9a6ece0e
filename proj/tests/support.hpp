#pragma once

// Helpers shared by the unit tests and the acceptance binary.

#include <cmath>
#include <filesystem>
#include <memory>
#include <span>
#include <random>
#include <string>
#include <vector>

#include "promptopt/config.hpp"
#include "promptopt/metrics.hpp"
#include "promptopt/providers.hpp"
#include "promptopt/synthgen.hpp"
#include "promptopt/text.hpp"

namespace testsupport {

inline std::filesystem::path fixture(const std::string& name) {
  return std::filesystem::path(PROMPTOPT_FIXTURES) / name;
}

inline const char* kSentimentTask =
    "[TASK] Classify the sentiment of short product reviews as positive or negative.";

// Fresh scratch directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("promptopt-" + tag + "-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline std::shared_ptr<promptopt::MockProvider> sentiment_mock() {
  return promptopt::MockProvider::from_json_file(fixture("sentiment_mock.json"));
}

inline promptopt::ModelConfig named_mock(const std::string& name, promptopt::ModelRole role) {
  promptopt::ModelConfig c;
  c.model_name = name;
  c.role = role;
  return c;
}

// Random word drawn from a small vocabulary with some punctuation and UTF-8.
inline std::string random_word(std::mt19937_64& gen) {
  static const std::vector<std::string> vocab = {
      "alpha", "beta", "Gamma", "delta.", "x", "42", "3.5", "caf\xC3\xA9", "na\xC3\xAFve",
      "end.", "The", "the", "a", "(paren)", "q?", "yes", "no", "one,two", "\xE2\x82\xAC" "9"};
  return vocab[gen() % vocab.size()];
}

inline std::string random_phrase(std::mt19937_64& gen, std::size_t max_words) {
  std::string out;
  const auto n = gen() % (max_words + 1);
  for (std::size_t i = 0; i < n; ++i) {
    if (i) out += (gen() % 5 == 0) ? "  " : " ";
    out += random_word(gen);
  }
  return out;
}

// Non-empty phrase; optionally multi-line.
inline std::string random_field_text(std::mt19937_64& gen) {
  std::string out = random_word(gen) + " " + random_phrase(gen, 6);
  if (gen() % 4 == 0) out += "\n" + random_word(gen) + " " + random_phrase(gen, 3);
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

// Examples with labels that make a scripted student possible.
inline std::vector<promptopt::SyntheticExample> labelled_examples(std::size_t n) {
  std::vector<promptopt::SyntheticExample> out;
  for (std::size_t i = 0; i < n; ++i) {
    promptopt::SyntheticExample e;
    e.id = promptopt::example_id(i + 1);
    e.inputs["text"] = "sample text number " + std::to_string(i);
    e.outputs["label"] = (i % 2 == 0) ? "positive" : "negative";
    out.push_back(std::move(e));
  }
  return out;
}

// Per-example score depends only on the prompt's length: c - 0.04 * exp(-L / 3),
// increasing and concave in L.
class LengthScorer final : public promptopt::ExampleScorer {
 public:
  explicit LengthScorer(double ceiling = 1.0) : ceiling_(ceiling) {}
  std::vector<promptopt::ExampleScore> score(const promptopt::CandidatePrompt& prompt,
                                             std::span<const promptopt::SyntheticExample> examples,
                                             promptopt::MetricSpec&) const override {
    const double L = static_cast<double>(prompt.length());
    const double p = ceiling_ - 0.04 * std::exp(-L / 3.0);
    std::vector<promptopt::ExampleScore> out;
    for (const auto& e : examples) out.push_back({e.id, p, "x"});
    return out;
  }

 private:
  double ceiling_;
};

// Deterministic pseudo-random score per (prompt text, example id).
class HashScorer final : public promptopt::ExampleScorer {
 public:
  explicit HashScorer(std::uint64_t salt) : salt_(salt) {}
  std::vector<promptopt::ExampleScore> score(const promptopt::CandidatePrompt& prompt,
                                             std::span<const promptopt::SyntheticExample> examples,
                                             promptopt::MetricSpec&) const override {
    std::vector<promptopt::ExampleScore> out;
    const auto body = prompt.body_text();
    for (const auto& e : examples) {
      auto h = promptopt::text::fnv1a64(body + "#" + e.id + "#" + std::to_string(salt_));
      out.push_back({e.id, static_cast<double>(h % 1001) / 1000.0, "x"});
    }
    return out;
  }

 private:
  std::uint64_t salt_;
};

// Spec with a random subset of marker fields and few-shot examples.
inline promptopt::TaskSpec random_marked_spec(std::mt19937_64& gen) {
  promptopt::TaskSpec spec;
  for (std::size_t m = 0; m < promptopt::kMarkerLiterals.size(); ++m) {
    auto marker = static_cast<promptopt::Marker>(m);
    if (marker == promptopt::Marker::FewShotExamples) continue;
    if (marker != promptopt::Marker::Task && gen() % 3 == 0) continue;
    promptopt::marker_field(spec, marker) = random_field_text(gen);
  }
  if (gen() % 2) spec.unmarked_text = random_field_text(gen);
  const auto n_shots = gen() % 3;
  for (std::size_t i = 0; i < n_shots; ++i) {
    spec.few_shot_examples.push_back(
        {{{"question", random_field_text(gen)}}, {{"answer", random_word(gen)}}});
  }
  if (n_shots) spec.few_shot_text = promptopt::render_few_shot_block(spec.few_shot_examples);
  return spec;
}

inline std::string words(std::size_t n, const std::string& stem = "word") {
  std::string out;
  for (std::size_t i = 0; i < n; ++i) {
    if (i) out += ' ';
    out += stem + std::to_string(i);
  }
  return out;
}

}  // namespace testsupport
