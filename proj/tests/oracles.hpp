#pragma once

// Reference implementations written independently of the library, used as
// test oracles.

#include <algorithm>
#include <cctype>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace oracle {

// Lowercased whitespace tokens, written without the library helpers.
inline std::vector<std::string> tokens(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string tok;
  while (in >> tok) {
    for (auto& c : tok) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    out.push_back(tok);
  }
  return out;
}

inline double token_f1(const std::string& pred, const std::string& gold) {
  auto p = tokens(pred), g = tokens(gold);
  if (p.empty() && g.empty()) return 1.0;
  if (p.empty() || g.empty()) return 0.0;
  std::map<std::string, int> cp, cg;
  for (const auto& t : p) ++cp[t];
  for (const auto& t : g) ++cg[t];
  int common = 0;
  for (const auto& [t, c] : cp) {
    auto it = cg.find(t);
    if (it != cg.end()) common += std::min(c, it->second);
  }
  if (common == 0) return 0.0;
  const double precision = static_cast<double>(common) / static_cast<double>(p.size());
  const double recall = static_cast<double>(common) / static_cast<double>(g.size());
  return 2 * precision * recall / (precision + recall);
}

// Confusion-matrix macro F1 over the labels seen in the gold vector.
inline double macro_f1(const std::vector<std::string>& pred, const std::vector<std::string>& gold) {
  std::set<std::string> labels(gold.begin(), gold.end());
  double sum = 0;
  for (const auto& label : labels) {
    int tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
      const bool p = pred[i] == label, g = gold[i] == label;
      tp += p && g;
      fp += p && !g;
      fn += !p && g;
    }
    const double precision = tp + fp ? static_cast<double>(tp) / (tp + fp) : 0.0;
    const double recall = tp + fn ? static_cast<double>(tp) / (tp + fn) : 0.0;
    sum += precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
  }
  return sum / static_cast<double>(labels.size());
}

// Positive-term series for e^x, inverted, so no cancellation for large x.
inline long double exp_neg(long double x) {
  long double term = 1.0L, sum = 1.0L;
  for (int k = 1; k < 400; ++k) {
    term *= x / k;
    sum += term;
  }
  return 1.0L / sum;
}

}  // namespace oracle
