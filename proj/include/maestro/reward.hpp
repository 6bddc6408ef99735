#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "maestro/errors.hpp"
#include "maestro/numeric_text.hpp"

namespace maestro {

enum class RewardKind { rule, model, oracle };

inline const char* reward_kind_name(RewardKind k) {
  switch (k) {
    case RewardKind::rule: return "rule";
    case RewardKind::model: return "model";
    case RewardKind::oracle: return "oracle";
  }
  return "?";
}

struct RewardSignal {
  double value = 0.0;  // in [0,1]; rule/oracle kinds emit only {0,1}
  RewardKind kind = RewardKind::rule;
  std::string detail;
};

/// Per-node expected answer: a number graded with relative tolerance, or an
/// option label graded by exact match.
struct GroundTruth {
  int node_id = 0;
  std::variant<double, std::string> expected;
  double rel_tolerance = 1e-2;
};

/// Either a numeric answer or an option label (single letter A-E).
struct ExtractedAnswer {
  std::optional<double> number;
  std::optional<std::string> label;
};

namespace detail {

inline std::optional<std::string> last_boxed_content(const std::string& text) {
  const std::string marker = "\\boxed{";
  std::size_t best = std::string::npos;
  std::size_t pos = 0;
  while ((pos = text.find(marker, pos)) != std::string::npos) {
    best = pos;
    pos += marker.size();
  }
  if (best == std::string::npos) return std::nullopt;
  std::size_t open = best + marker.size();
  int depth = 1;
  std::size_t i = open;
  for (; i < text.size() && depth > 0; ++i) {
    if (text[i] == '{') ++depth;
    else if (text[i] == '}') --depth;
  }
  if (depth != 0) return std::nullopt;
  return text.substr(open, i - open - 1);
}

inline std::optional<std::string> option_label(const std::string& s) {
  std::string t = s;
  // strip surrounding whitespace, parentheses and trailing punctuation
  while (!t.empty() && (std::isspace(static_cast<unsigned char>(t.front())) ||
                        t.front() == '(')) {
    t.erase(t.begin());
  }
  while (!t.empty() && (std::isspace(static_cast<unsigned char>(t.back())) ||
                        t.back() == ')' || t.back() == '.' || t.back() == ':')) {
    t.pop_back();
  }
  if (t.size() == 1 && t[0] >= 'A' && t[0] <= 'E') return t;
  return std::nullopt;
}

}  // namespace detail

/// Pulls the answer out of an agent reply: content of the last boxed
/// expression when present, otherwise the last number in the text. Single
/// letters A-E are treated as option labels.
inline ExtractedAnswer extract_answer(const std::string& text) {
  ExtractedAnswer out;
  if (auto boxed = detail::last_boxed_content(text)) {
    if (auto label = detail::option_label(*boxed)) {
      out.label = *label;
      return out;
    }
    auto nums = scan_numbers(*boxed);
    if (!nums.empty()) {
      out.number = nums.back().value;
      return out;
    }
    raise(ErrorCode::NoAnswerFound, "boxed content not understood: " + *boxed);
  }
  auto nums = scan_numbers(text);
  if (!nums.empty()) {
    out.number = nums.back().value;
    return out;
  }
  if (auto label = detail::option_label(text)) {
    out.label = *label;
    return out;
  }
  raise(ErrorCode::NoAnswerFound, "no boxed expression, number or option label");
}

/// Binary correctness. Numeric answers pass when the absolute error is within
/// rel_tolerance * max(|expected|, 1e-12), boundary inclusive.
inline RewardSignal rule_reward(const ExtractedAnswer& answer,
                                const GroundTruth& truth,
                                RewardKind kind = RewardKind::rule) {
  if (!(truth.rel_tolerance > 0.0)) {
    raise(ErrorCode::ConfigError, "rel_tolerance must be > 0");
  }
  RewardSignal signal;
  signal.kind = kind;
  if (std::holds_alternative<double>(truth.expected)) {
    const double expected = std::get<double>(truth.expected);
    if (!answer.number) {
      signal.detail = "expected a number";
      return signal;
    }
    const double tol = truth.rel_tolerance * std::max(std::abs(expected), 1e-12);
    if (std::isfinite(*answer.number) &&
        std::abs(*answer.number - expected) <= tol) {
      signal.value = 1.0;
    } else {
      signal.detail = "got " + render_double(*answer.number) + ", expected " +
                      render_double(expected);
    }
    return signal;
  }
  const std::string& expected = std::get<std::string>(truth.expected);
  if (answer.label && *answer.label == expected) {
    signal.value = 1.0;
  } else {
    signal.detail = "expected option " + expected;
  }
  return signal;
}

/// Grades raw agent text; extraction failures count as reward 0.
inline RewardSignal rule_reward_text(const std::string& answer_text,
                                     const GroundTruth& truth,
                                     RewardKind kind = RewardKind::rule) {
  try {
    return rule_reward(extract_answer(answer_text), truth, kind);
  } catch (const Error& ex) {
    if (ex.code() == ErrorCode::NoAnswerFound) {
      RewardSignal signal;
      signal.kind = kind;
      signal.detail = ex.what();
      return signal;
    }
    throw;
  }
}

/// Ground truths for a simulated environment, keyed by node id.
using GroundTruthStore = std::map<int, GroundTruth>;

/// Deterministic stand-in for the learned reward model: rule grading against
/// the synthetic ground truth of the node.
inline RewardSignal oracle_reward(const GroundTruthStore& env, int node_id,
                                  const std::string& answer_text) {
  auto it = env.find(node_id);
  if (it == env.end()) {
    raise(ErrorCode::MissingGroundTruth, "node " + std::to_string(node_id));
  }
  return rule_reward_text(answer_text, it->second, RewardKind::oracle);
}

/// One upstream (question, answer) pair shown to the scorer.
struct ContextPair {
  std::string question;
  std::string answer;
};

/// Wire description of the external scoring service.
struct RewardEndpoint {
  std::string base_url;        // e.g. http://127.0.0.1:8080
  std::string path = "/score";
  int timeout_seconds = 30;
};

// model_reward lives in http_clients.hpp so pure reward logic does not drag
// the HTTP stack into every translation unit.

}  // namespace maestro
