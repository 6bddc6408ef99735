#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "maestro/agent_db.hpp"
#include "maestro/errors.hpp"
#include "maestro/numeric_text.hpp"
#include "maestro/rng.hpp"
#include "maestro/task_graph.hpp"

namespace maestro {

struct ExecutionResult {
  std::string answer_text;
  long tokens = 0;       // prompt + completion
  double latency = 0.0;  // seconds
  bool ok = false;
  std::string error;     // failure category when ok == false
};

/// Desk-scale stand-in for an LLM agent: per-domain success probabilities
/// and a deterministic answer distribution keyed by the run seed.
struct SimulatedAgentSpec {
  std::string agent_id;
  std::map<std::string, double> skill;  // domain -> success probability; "*" = default
  double cost_tokens = 400.0;           // mean tokens per call
  double noise_scale = 0.5;             // relative perturbation on failure
};

enum class EmbeddingMode { local_hash, endpoint };

/// Deterministic character-3-gram feature hashing, signed, L2-normalized.
inline std::vector<double> hash_embedding(const std::string& text, int dimension) {
  if (text.empty()) raise(ErrorCode::EmptyText, "cannot embed empty text");
  if (dimension < 1) raise(ErrorCode::ConfigError, "embedding dimension < 1");
  std::vector<double> v(static_cast<std::size_t>(dimension), 0.0);
  auto add_gram = [&](std::string_view gram) {
    const std::uint64_t h = hash_bytes(gram);
    const std::size_t bucket = h % static_cast<std::uint64_t>(dimension);
    v[bucket] += (h >> 63) ? 1.0 : -1.0;
  };
  if (text.size() < 3) {
    add_gram(text);
  } else {
    for (std::size_t i = 0; i + 3 <= text.size(); ++i) {
      add_gram(std::string_view(text).substr(i, 3));
    }
  }
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  if (norm == 0.0) {
    // All grams cancelled; fall back to a single bucket so the vector stays unit.
    v[hash_bytes(text) % static_cast<std::uint64_t>(dimension)] = 1.0;
    norm = 1.0;
  }
  for (double& x : v) x /= norm;
  return v;
}

inline std::vector<double> normalized(std::vector<double> v) {
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  if (norm == 0.0) raise(ErrorCode::MalformedResponse, "zero embedding vector");
  for (double& x : v) x /= norm;
  return v;
}

/// One resolved upstream dependency as shown to a downstream agent.
struct UpstreamContext {
  int from_id = 0;
  std::string question;
  std::string answer_text;
  std::optional<double> answer_value;
  std::string relation_text;  // how the upstream answer parameterizes this node
};

/// Builds the user prompt for an agent: upstream question/answer pairs in
/// node-id order, then the subtask text with its parameter relations.
/// Deterministic byte-for-byte given inputs.
inline std::string assemble_prompt(const StaticProfile& agent,
                                   const SubtaskNode& node,
                                   std::vector<UpstreamContext> context) {
  std::sort(context.begin(), context.end(),
            [](const UpstreamContext& a, const UpstreamContext& b) {
              return a.from_id < b.from_id;
            });
  // Every placeholder must be defined by some incoming relation.
  for (const auto& ph : detail::find_placeholders(node.text)) {
    bool defined = false;
    for (const auto& up : context) {
      if (up.relation_text.find(ph) != std::string::npos) {
        defined = true;
        break;
      }
    }
    if (!defined) {
      raise(ErrorCode::UnresolvedPlaceholder,
            ph + " in node " + std::to_string(node.id));
    }
  }
  std::string prompt = agent.prompt;
  prompt += "\n\n";
  if (!context.empty()) {
    prompt += "Previous questions and answers:\n";
    for (const auto& up : context) {
      prompt += "Question " + std::to_string(up.from_id) + ": " + up.question +
                "\nAnswer " + std::to_string(up.from_id) + ": " +
                up.answer_text + "\n";
    }
    prompt += "\n";
  }
  prompt += "Your subtask: " + node.text;
  for (const auto& up : context) {
    if (!up.relation_text.empty()) {
      prompt += "\n" + up.relation_text;
    }
  }
  prompt +=
      "\nConclude with: The answer is therefore \\boxed{your final answer}.";
  return prompt;
}

/// Identifies one simulated execution; equal keys give identical results.
struct SimKey {
  std::uint64_t seed = 0;
  std::uint64_t task_id = 0;
  int node_id = 0;
  std::string agent_id;
};

/// Deterministic simulated agent call. A success emits the boxed ground
/// truth; a failure emits a perturbation guaranteed far outside the grading
/// tolerance (relative error at least noise_scale/2).
inline ExecutionResult execute_simulated(const SimulatedAgentSpec& spec,
                                         const SimKey& key,
                                         const std::string& domain,
                                         double ground_truth) {
  double p = 0.0;
  if (auto it = spec.skill.find(domain); it != spec.skill.end()) {
    p = it->second;
  } else if (auto any = spec.skill.find("*"); any != spec.skill.end()) {
    p = any->second;
  } else {
    raise(ErrorCode::UnknownDomain,
          domain + " for agent " + spec.agent_id);
  }
  Rng rng = keyed_rng({key.seed, key.task_id,
                       static_cast<std::uint64_t>(key.node_id),
                       hash_bytes(key.agent_id)});
  const bool success = rng.next_bernoulli(p);
  double reported = ground_truth;
  if (!success) {
    const double u = 0.5 + rng.next_unit();        // [0.5, 1.5)
    const double sign = rng.next_bool() ? 1.0 : -1.0;
    if (std::abs(ground_truth) > 1e-9) {
      reported = ground_truth * (1.0 + sign * u * spec.noise_scale);
    } else {
      reported = sign * u * spec.noise_scale;  // additive near zero
    }
  }
  ExecutionResult result;
  result.ok = true;
  result.answer_text = "The answer is therefore \\boxed{" +
                       render_double(reported) + "}.";
  const double jitter = 0.8 + 0.4 * rng.next_unit();
  result.tokens = std::max<long>(1, std::lround(spec.cost_tokens * jitter));
  result.latency = 0.0;
  return result;
}

}  // namespace maestro
