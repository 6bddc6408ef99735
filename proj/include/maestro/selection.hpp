#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "maestro/agent_db.hpp"
#include "maestro/backends.hpp"
#include "maestro/errors.hpp"
#include "maestro/reward.hpp"
#include "maestro/rng.hpp"
#include "maestro/task_graph.hpp"

namespace maestro {

/// Ordered coarse-search result for one node: at most k agents, scores
/// non-increasing, ties broken by ascending agent id.
struct CandidateSet {
  int node_id = 0;
  std::vector<std::pair<std::string, double>> candidates;
  int k = 0;
};

struct CandidateRecord {
  std::string agent_id;
  double reward = 0.0;
  double cost = 0.0;  // normalized cost units
  long tokens = 0;
  bool ok = false;
};

struct SelectionOutcome {
  int node_id = 0;
  std::string chosen_agent;
  NodeAnswer chosen_answer;
  std::vector<CandidateRecord> per_candidate;
  bool fallback_used = false;
};

/// One reward/cost observation to apply to the database.
struct AgentDbUpdate {
  std::string agent_id;
  double reward = 0.0;
  double cost = 0.0;
};

/// Upper Confidence Bound: Q(a,q) + c * sqrt(N / (n(a) + epsilon)).
inline double ucb_score(const AgentProfile& agent,
                        const std::vector<double>& task_embedding,
                        const SelectionParams& params, long total_selections) {
  const double q = quality_score(agent, task_embedding, params);
  const double n = static_cast<double>(agent.dynamic_profile.count);
  return q + params.c_explore *
                 std::sqrt(static_cast<double>(total_selections) /
                           (n + params.epsilon));
}

/// Top-k agents by UCB (exploration on) or by plain quality score
/// (exploration off). The similarity gate may zero Q but never excludes.
inline CandidateSet coarse_select(const AgentDb& db, int node_id,
                                  const std::vector<double>& task_embedding,
                                  const SelectionParams& params,
                                  long total_selections, bool explore = true) {
  if (db.empty()) raise(ErrorCode::EmptyDatabase, "coarse_select");
  std::vector<std::pair<std::string, double>> scored;
  scored.reserve(db.size());
  for (const auto& agent : db.agents()) {
    double score;
    if (explore) {
      score = ucb_score(agent, task_embedding, params, total_selections);
    } else {
      score = quality_score(agent, task_embedding, params);
    }
    scored.emplace_back(agent.static_profile.agent_id, score);
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  CandidateSet set;
  set.node_id = node_id;
  set.k = params.top_k;
  const std::size_t take =
      std::min<std::size_t>(scored.size(), static_cast<std::size_t>(params.top_k));
  set.candidates.assign(scored.begin(), scored.begin() + take);
  return set;
}

/// Ablation baseline: k distinct agents drawn uniformly.
inline CandidateSet coarse_select_random(const AgentDb& db, int node_id,
                                         int top_k, Rng& rng) {
  if (db.empty()) raise(ErrorCode::EmptyDatabase, "coarse_select_random");
  std::vector<std::string> ids;
  ids.reserve(db.size());
  for (const auto& agent : db.agents()) {
    ids.push_back(agent.static_profile.agent_id);
  }
  // partial Fisher-Yates
  const std::size_t take =
      std::min<std::size_t>(ids.size(), static_cast<std::size_t>(top_k));
  for (std::size_t i = 0; i < take; ++i) {
    std::size_t j = i + rng.next_below(ids.size() - i);
    std::swap(ids[i], ids[j]);
  }
  CandidateSet set;
  set.node_id = node_id;
  set.k = top_k;
  for (std::size_t i = 0; i < take; ++i) {
    set.candidates.emplace_back(ids[i], 0.0);
  }
  return set;
}

/// Runs an agent against a node with resolved upstream context.
using AgentExecutor = std::function<ExecutionResult(
    const StaticProfile&, const SubtaskNode&,
    const std::vector<UpstreamContext>&)>;

/// Scores a candidate answer in context.
using CrmFn = std::function<RewardSignal(
    const StaticProfile&, const SubtaskNode&,
    const std::vector<UpstreamContext>&, const std::string& answer_text)>;

struct TrainingSelection {
  SelectionOutcome outcome;  // chosen fields meaningful only if !all_failed
  std::vector<AgentDbUpdate> updates;  // one per candidate, in candidate order
  bool all_failed = false;
};

namespace detail {

inline NodeAnswer make_node_answer(int node_id, const std::string& agent_id,
                                   const ExecutionResult& result) {
  NodeAnswer answer;
  answer.node_id = node_id;
  answer.agent_id = agent_id;
  answer.raw_text = result.answer_text;
  answer.tokens = result.tokens;
  try {
    auto extracted = extract_answer(result.answer_text);
    if (extracted.number && std::isfinite(*extracted.number)) {
      answer.value = extracted.number;
    }
  } catch (const Error& ex) {
    if (ex.code() != ErrorCode::NoAnswerFound) throw;
  }
  return answer;
}

}  // namespace detail

/// Training-time fine selection: every candidate runs, every answer is
/// scored, the best reward wins the node. Returns the outcome plus the
/// reward/cost updates (one per candidate; failures count as reward 0 and
/// are excluded from the argmax). The caller applies the updates, which also
/// advances N by |candidates|. Failed candidates still update the database,
/// so the updates are returned even when every candidate failed.
inline TrainingSelection run_candidates_training(
    const CandidateSet& cands, const AgentDb& db, const SubtaskNode& node,
    const std::vector<UpstreamContext>& context, const AgentExecutor& execute,
    const CrmFn& crm, double token_scale = 10000.0) {
  TrainingSelection sel;
  sel.outcome.node_id = cands.node_id;
  std::vector<ExecutionResult> results;
  results.reserve(cands.candidates.size());
  for (const auto& [agent_id, score] : cands.candidates) {
    const StaticProfile& agent = db.at(agent_id).static_profile;
    ExecutionResult result = execute(agent, node, context);
    CandidateRecord record;
    record.agent_id = agent_id;
    record.tokens = result.tokens;
    record.cost = static_cast<double>(result.tokens) / token_scale;
    record.ok = result.ok;
    if (result.ok) {
      record.reward = crm(agent, node, context, result.answer_text).value;
    }
    sel.outcome.per_candidate.push_back(record);
    sel.updates.push_back({agent_id, record.reward, record.cost});
    results.push_back(std::move(result));
  }
  const CandidateRecord* best = nullptr;
  std::size_t best_index = 0;
  for (std::size_t i = 0; i < sel.outcome.per_candidate.size(); ++i) {
    const CandidateRecord& r = sel.outcome.per_candidate[i];
    if (!r.ok) continue;
    if (!best || r.reward > best->reward ||
        (r.reward == best->reward && r.agent_id < best->agent_id)) {
      best = &r;
      best_index = i;
    }
  }
  if (!best) {
    sel.all_failed = true;
    return sel;
  }
  sel.outcome.chosen_agent = best->agent_id;
  sel.outcome.chosen_answer = detail::make_node_answer(
      cands.node_id, best->agent_id, results[best_index]);
  return sel;
}

/// As run_candidates_training, but raises AllCandidatesFailed when no
/// candidate executed cleanly (the per-candidate updates are then lost; use
/// the lower-level form when failures must still reach the database).
inline TrainingSelection fine_select_training(
    const CandidateSet& cands, const AgentDb& db, const SubtaskNode& node,
    const std::vector<UpstreamContext>& context, const AgentExecutor& execute,
    const CrmFn& crm, double token_scale = 10000.0) {
  TrainingSelection sel = run_candidates_training(cands, db, node, context,
                                                  execute, crm, token_scale);
  if (sel.all_failed) {
    raise(ErrorCode::AllCandidatesFailed,
          "node " + std::to_string(cands.node_id));
  }
  return sel;
}

inline void apply_training_selection(AgentDb& db, const TrainingSelection& sel) {
  for (const auto& update : sel.updates) {
    db.apply_update(update.agent_id, update.reward, update.cost);
  }
  db.add_selections(static_cast<long>(sel.updates.size()));
}

/// Test-time fine selection: the candidate list is already ranked by quality
/// score, so the first agent that executes cleanly takes the node. No
/// database mutation happens here.
inline SelectionOutcome fine_select_inference(
    const CandidateSet& cands, const AgentDb& db, const SubtaskNode& node,
    const std::vector<UpstreamContext>& context, const AgentExecutor& execute,
    double token_scale = 10000.0) {
  SelectionOutcome outcome;
  outcome.node_id = cands.node_id;
  for (std::size_t i = 0; i < cands.candidates.size(); ++i) {
    const std::string& agent_id = cands.candidates[i].first;
    const StaticProfile& agent = db.at(agent_id).static_profile;
    ExecutionResult result = execute(agent, node, context);
    CandidateRecord record;
    record.agent_id = agent_id;
    record.tokens = result.tokens;
    record.cost = static_cast<double>(result.tokens) / token_scale;
    record.ok = result.ok;
    outcome.per_candidate.push_back(record);
    if (result.ok) {
      outcome.chosen_agent = agent_id;
      outcome.chosen_answer =
          detail::make_node_answer(cands.node_id, agent_id, result);
      outcome.fallback_used = i > 0;
      return outcome;
    }
  }
  raise(ErrorCode::AllCandidatesFailed, "node " + std::to_string(cands.node_id));
}

}  // namespace maestro
