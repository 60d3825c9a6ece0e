#include "promptopt/metrics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <map>
#include <mutex>
#include <numeric>
#include <ostream>
#include <set>
#include <thread>
#include <unordered_map>

#include "promptopt/text.hpp"

namespace promptopt {

using nlohmann::json;

double exact_match(std::string_view pred, std::string_view gold) {
  return text::normalize_answer(pred) == text::normalize_answer(gold) ? 1.0 : 0.0;
}

double token_f1(std::string_view pred, std::string_view gold) {
  auto p = text::normalized_tokens(pred);
  auto g = text::normalized_tokens(gold);
  if (p.empty() && g.empty()) return 1.0;
  if (p.empty() || g.empty()) return 0.0;
  std::unordered_map<std::string, long> counts;
  for (const auto& t : g) ++counts[t];
  long overlap = 0;
  for (const auto& t : p) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  if (overlap == 0) return 0.0;
  double precision = static_cast<double>(overlap) / static_cast<double>(p.size());
  double recall = static_cast<double>(overlap) / static_cast<double>(g.size());
  return 2.0 * precision * recall / (precision + recall);
}

namespace {

struct Confusion {
  std::vector<std::string> pred;
  std::vector<std::string> gold;
  std::map<std::string, double> f1_by_label;  // labels present in golds
  double macro = 0.0;
};

Confusion confusion(std::span<const std::string> preds, std::span<const std::string> golds) {
  if (preds.size() != golds.size()) {
    throw Error(ErrorCode::LengthMismatch, std::to_string(preds.size()) + " predictions vs " +
                                               std::to_string(golds.size()) + " gold labels");
  }
  if (golds.empty()) throw Error(ErrorCode::EmptyExampleSet, "macro F1 over zero examples");
  Confusion c;
  std::map<std::string, long> tp, fp, fn;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    c.pred.push_back(text::normalize_answer(preds[i]));
    c.gold.push_back(text::normalize_answer(golds[i]));
    tp.try_emplace(c.gold.back(), 0);
    if (c.pred[i] == c.gold[i]) {
      ++tp[c.gold[i]];
    } else {
      ++fp[c.pred[i]];
      ++fn[c.gold[i]];
    }
  }
  double sum = 0.0;
  for (const auto& [label, t] : tp) {
    double denom = 2.0 * static_cast<double>(t) + static_cast<double>(fp[label] + fn[label]);
    double f1 = denom == 0.0 ? 0.0 : 2.0 * static_cast<double>(t) / denom;
    c.f1_by_label[label] = f1;
    sum += f1;
  }
  c.macro = sum / static_cast<double>(tp.size());
  return c;
}

}  // namespace

double macro_f1(std::span<const std::string> preds, std::span<const std::string> golds) {
  return confusion(preds, golds).macro;
}

std::vector<double> macro_f1_per_example(std::span<const std::string> preds,
                                         std::span<const std::string> golds) {
  auto c = confusion(preds, golds);
  const auto n = static_cast<double>(preds.size());
  double correct = 0.0;
  for (std::size_t i = 0; i < c.pred.size(); ++i) correct += c.pred[i] == c.gold[i] ? 1.0 : 0.0;
  const double acc = correct / n;
  const double m = c.macro;
  // Affine split around the macro score: correct examples get m + k(1 - acc),
  // incorrect ones m - k*acc, so the mean is exactly m. k is the largest
  // spread keeping both values inside [0, 1].
  double k = 0.0;
  if (acc > 0.0 && acc < 1.0) k = std::min((1.0 - m) / (1.0 - acc), m / acc);
  std::vector<double> out(c.pred.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double s = c.pred[i] == c.gold[i] ? m + k * (1.0 - acc) : m - k * acc;
    out[i] = std::clamp(s, 0.0, 1.0);
  }
  return out;
}

namespace {

std::map<std::string, double> trigram_counts(std::string_view s) {
  auto norm = text::normalize_answer(s);
  std::map<std::string, double> counts;
  if (norm.empty()) return counts;
  if (norm.size() < 3) {
    counts[norm] = 1.0;
    return counts;
  }
  for (std::size_t i = 0; i + 3 <= norm.size(); ++i) counts[norm.substr(i, 3)] += 1.0;
  return counts;
}

}  // namespace

double lexical_similarity(std::string_view a, std::string_view b) {
  auto ca = trigram_counts(a);
  auto cb = trigram_counts(b);
  if (ca.empty() && cb.empty()) return 1.0;
  if (ca.empty() || cb.empty()) return 0.0;
  if (ca == cb) return 1.0;
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (const auto& [g, v] : ca) {
    na += v * v;
    auto it = cb.find(g);
    if (it != cb.end()) dot += v * it->second;
  }
  for (const auto& [g, v] : cb) nb += v * v;
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), 0.0, 1.0);
}

double embedding_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.empty()) {
    throw Error(ErrorCode::ProviderError, "embedding dimensions do not match");
  }
  if (a == b) return 1.0;
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return na == nb ? 1.0 : 0.5;
  double cosine = std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
  return (cosine + 1.0) / 2.0;
}

double similarity(std::string_view pred, std::string_view gold, SimilarityBackend backend,
                  const Llm* embedder) {
  if (backend == SimilarityBackend::Lexical) return lexical_similarity(pred, gold);
  if (!embedder) throw Error(ErrorCode::ProviderError, "embedding backend has no embedder");
  if (text::trim(pred).empty() && text::trim(gold).empty()) return 1.0;
  if (text::trim(pred).empty() || text::trim(gold).empty()) return 0.0;
  return embedding_similarity(embedder->embed(pred), embedder->embed(gold));
}

double cost_term(double lambda, std::size_t prompt_length) {
  return std::exp(-lambda * static_cast<double>(prompt_length));
}

double complexity_term(std::string_view prompt) {
  auto tokens = text::normalized_tokens(prompt);
  if (tokens.empty()) return 0.0;
  std::set<std::string> distinct(tokens.begin(), tokens.end());
  return static_cast<double>(distinct.size()) / static_cast<double>(tokens.size());
}

void ObjectiveConfig::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw Error(ErrorCode::ValidationError, "lambda must be a finite value >= 0");
  }
  if (!std::isfinite(alpha) || !std::isfinite(gamma) || !std::isfinite(beta_value())) {
    throw Error(ErrorCode::ValidationError, "objective weights must be finite");
  }
}

void to_json(json& j, const ObjectiveConfig& c) {
  j = json{{"lambda", c.lambda},
           {"alpha", c.alpha},
           {"beta", c.beta ? json(*c.beta) : json(nullptr)},
           {"gamma", c.gamma}};
}

void from_json(const json& j, ObjectiveConfig& c) {
  c.lambda = j.value("lambda", kDefaultLambda);
  c.alpha = j.value("alpha", 1.0);
  c.beta.reset();
  if (j.contains("beta") && !j["beta"].is_null()) c.beta = j["beta"].get<double>();
  c.gamma = j.value("gamma", 0.0);
  c.validate();
}

double combined_score(double performance, std::size_t prompt_length, double complexity,
                      const ObjectiveConfig& cfg) {
  return cfg.alpha * performance + cfg.beta_value() * cost_term(cfg.lambda, prompt_length) +
         cfg.gamma * (1.0 - complexity);
}

double combined_objective(double performance, std::string_view prompt, const ObjectiveConfig& cfg) {
  return combined_score(performance, estimate_tokens(prompt), complexity_term(prompt), cfg);
}

void to_json(json& j, const ExampleScore& s) {
  j = json{{"id", s.id}, {"score", s.score}, {"prediction", s.prediction}};
}

void from_json(const json& j, ExampleScore& s) {
  s.id = j.at("id").get<std::string>();
  s.score = j.at("score").get<double>();
  s.prediction = j.value("prediction", std::string());
}

void to_json(json& j, const EvaluationResult& r) {
  j = json{{"performance", r.performance},      {"prompt_length", r.prompt_length},
           {"length_term", r.length_term},      {"complexity_term", r.complexity_term},
           {"combined", r.combined},            {"per_example", r.per_example},
           {"metric", r.metric}};
}

void from_json(const json& j, EvaluationResult& r) {
  r.performance = j.at("performance").get<double>();
  r.prompt_length = j.at("prompt_length").get<std::size_t>();
  r.length_term = j.at("length_term").get<double>();
  r.complexity_term = j.at("complexity_term").get<double>();
  r.combined = j.at("combined").get<double>();
  r.per_example = j.at("per_example").get<std::vector<ExampleScore>>();
  r.metric = j.at("metric").get<MetricSpec>();
}

void write_per_example_csv(std::ostream& out, const EvaluationResult& r) {
  auto quote = [](const std::string& s) {
    std::string q = "\"";
    for (char c : s) {
      if (c == '"') q += '"';
      q += c;
    }
    return q + "\"";
  };
  out << "id,score,prediction\n";
  char buf[64];
  for (const auto& e : r.per_example) {
    std::snprintf(buf, sizeof buf, "%.17g", e.score);
    out << quote(e.id) << ',' << buf << ',' << quote(e.prediction) << '\n';
  }
}

std::vector<double> score_predictions(std::span<const FieldMap> predictions,
                                      std::span<const SyntheticExample> golds, MetricSpec& metric,
                                      const Llm* embedder) {
  if (predictions.size() != golds.size()) {
    throw Error(ErrorCode::LengthMismatch, "prediction and example counts differ");
  }
  const auto n = golds.size();
  std::vector<double> scores(n, 0.0);
  if (n == 0) return scores;

  auto pred_of = [&](std::size_t i, const std::string& field) -> std::string {
    auto it = predictions[i].find(field);
    return it == predictions[i].end() ? std::string() : it->second;
  };

  auto sim = [&](const std::string& p, const std::string& g) {
    if (metric.similarity_backend == SimilarityBackend::Embedding) {
      try {
        return similarity(p, g, SimilarityBackend::Embedding, embedder);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::ProviderError || !metric.lexical_fallback) throw;
        metric.similarity_backend = SimilarityBackend::Lexical;
      }
    }
    return lexical_similarity(p, g);
  };

  // Field names come from the first gold example; all examples share a schema.
  std::vector<std::string> fields;
  for (const auto& [name, value] : golds.front().outputs) fields.push_back(name);

  for (const auto& field : fields) {
    std::vector<double> field_scores(n);
    if (metric.primary == MetricKind::MacroF1) {
      std::vector<std::string> p(n), g(n);
      for (std::size_t i = 0; i < n; ++i) {
        p[i] = pred_of(i, field);
        g[i] = golds[i].outputs.at(field);
      }
      field_scores = macro_f1_per_example(p, g);
    } else {
      for (std::size_t i = 0; i < n; ++i) {
        const auto p = pred_of(i, field);
        const auto& g = golds[i].outputs.at(field);
        switch (metric.primary) {
          case MetricKind::ExactMatch: field_scores[i] = exact_match(p, g); break;
          case MetricKind::TokenF1: field_scores[i] = token_f1(p, g); break;
          case MetricKind::Similarity: field_scores[i] = sim(p, g); break;
          case MetricKind::SimilarityPlusExactMatch:
            field_scores[i] = std::max(exact_match(p, g), sim(p, g));
            break;
          case MetricKind::MacroF1: break;
        }
      }
    }
    for (std::size_t i = 0; i < n; ++i) scores[i] += field_scores[i];
  }

  for (std::size_t i = 0; i < n; ++i) {
    scores[i] /= static_cast<double>(fields.size());
    if (metric.length_penalty_enabled) {
      std::size_t out_len = 0;
      for (const auto& field : fields) out_len += estimate_tokens(pred_of(i, field));
      scores[i] *= cost_term(kOutputLengthPenalty, out_len);
    }
    scores[i] = std::clamp(scores[i], 0.0, 1.0);
  }
  return scores;
}

StudentScorer::StudentScorer(Llm student, std::optional<Llm> embedder)
    : student_(std::move(student)), embedder_(std::move(embedder)) {}

std::vector<std::string> StudentScorer::predict(const CandidatePrompt& prompt,
                                                std::span<const SyntheticExample> examples) const {
  std::vector<std::string> replies(examples.size());
  const std::size_t workers =
      std::min<std::size_t>(static_cast<std::size_t>(kDefaultParallelism), examples.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;

  auto work = [&] {
    for (;;) {
      auto i = next.fetch_add(1);
      if (i >= examples.size()) return;
      {
        std::lock_guard lock(failure_mu);
        if (failure) return;
      }
      try {
        replies[i] = student_.complete(prompt.render(examples[i].inputs)).text;
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };

  if (workers <= 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  }
  if (failure) std::rethrow_exception(failure);
  return replies;
}

std::vector<ExampleScore> StudentScorer::score(const CandidatePrompt& prompt,
                                               std::span<const SyntheticExample> examples,
                                               MetricSpec& metric) const {
  auto replies = predict(prompt, examples);
  std::vector<FieldMap> parsed;
  parsed.reserve(replies.size());
  for (const auto& r : replies) {
    parsed.push_back(parse_student_reply(r, prompt.render_schema, prompt.technique));
  }
  const Llm& embedder = embedder_ ? *embedder_ : student_;
  auto scores = score_predictions(parsed, examples, metric, &embedder);
  std::vector<ExampleScore> out;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    out.push_back({examples[i].id, scores[i], replies[i]});
  }
  return out;
}

EvaluationResult evaluate(const CandidatePrompt& prompt, std::span<const SyntheticExample> examples,
                          const MetricSpec& metric, const ExampleScorer& scorer,
                          const ObjectiveConfig& cfg) {
  if (examples.empty()) throw Error(ErrorCode::EmptyExampleSet, "no examples to evaluate on");
  cfg.validate();
  EvaluationResult r;
  r.metric = metric;
  r.per_example = scorer.score(prompt, examples, r.metric);
  if (r.per_example.size() != examples.size()) {
    throw Error(ErrorCode::LengthMismatch, "scorer returned the wrong number of scores");
  }
  double sum = 0.0;
  for (const auto& e : r.per_example) sum += e.score;
  r.performance = sum / static_cast<double>(r.per_example.size());
  const auto body = prompt.body_text();
  r.prompt_length = prompt.length();
  r.length_term = cost_term(cfg.lambda, r.prompt_length);
  r.complexity_term = complexity_term(body);
  r.combined = combined_score(r.performance, r.prompt_length, r.complexity_term, cfg);
  return r;
}

EvaluationResult evaluate(const CandidatePrompt& prompt, std::span<const SyntheticExample> examples,
                          const MetricSpec& metric, const Llm& student, const ObjectiveConfig& cfg) {
  return evaluate(prompt, examples, metric, StudentScorer(student), cfg);
}

}  // namespace promptopt
