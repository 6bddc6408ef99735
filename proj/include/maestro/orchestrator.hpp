#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <deque>
#include <exception>
#include <istream>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "maestro/agent_db.hpp"
#include "maestro/backends.hpp"
#include "maestro/errors.hpp"
#include "maestro/http_clients.hpp"
#include "maestro/reward.hpp"
#include "maestro/selection.hpp"
#include "maestro/synthesis.hpp"
#include "maestro/task_graph.hpp"

namespace maestro {

enum class RunMode { train, infer };
enum class CrmKind { rule, model, oracle };
enum class BackendKind { llm, simulated };
// full: UCB coarse + reward fine; greedy: plain quality argmax, no
// exploration; random: uniform candidates. The latter two are ablations.
enum class SelectionStrategy { full, greedy, random };

struct RunConfig {
  RunMode mode = RunMode::train;
  SelectionParams params;
  CrmKind crm = CrmKind::oracle;
  BackendKind backend = BackendKind::simulated;
  SelectionStrategy strategy = SelectionStrategy::full;
  std::uint64_t seed = 0;
  int max_parallel_nodes = 1;
  double token_scale = 10000.0;
  double grading_rel_tolerance = 1e-2;
  bool use_decomposer = false;  // false: dataset DAG is ground truth
  bool embed_node_text = false; // false: embed the target profile
  std::map<std::string, SimulatedAgentSpec> sim_agents;
  ChatEndpoint chat;
  RewardEndpoint reward_endpoint;
  ChatEndpoint decomposer_endpoint;
  std::string decomposer_model = "decomposer";
  EmbeddingProvider embedding = EmbeddingProvider::local_hash();

  void validate() const {
    params.validate();
    if (max_parallel_nodes < 1) {
      raise(ErrorCode::ConfigError, "max_parallel_nodes must be >= 1");
    }
    if (token_scale <= 0.0) {
      raise(ErrorCode::ConfigError, "token_scale must be > 0");
    }
    if (backend == BackendKind::simulated && crm == CrmKind::model) {
      raise(ErrorCode::ConfigError,
            "simulated backend requires the oracle or rule CRM");
    }
    if (crm == CrmKind::model && reward_endpoint.base_url.empty()) {
      raise(ErrorCode::ConfigError, "model CRM needs a reward endpoint URL");
    }
    if (backend == BackendKind::simulated && sim_agents.empty()) {
      raise(ErrorCode::ConfigError,
            "simulated backend needs simulated agent specs");
    }
  }
};

struct CurvePoint {
  long task_index = 0;
  double rolling_accuracy = 0.0;     // window of 50 tasks
  double cumulative_accuracy = 0.0;
};

struct RunStats {
  long tasks_seen = 0;
  long tasks_correct = 0;
  double accuracy = 0.0;
  long total_tokens = 0;
  long executions = 0;       // agent calls across all tasks
  long selections_N = 0;     // database N after the run
  std::vector<CurvePoint> curve;
  std::vector<long> per_task_executions;
  std::vector<int> per_task_nodes;
};

struct SolveResult {
  std::optional<double> final_value;
  std::string final_text;
  std::vector<SelectionOutcome> outcomes;  // ascending node id
  long tokens = 0;
  long executions = 0;
  bool failed = false;
  std::string fail_reason;
};

struct ResultLine {
  long task_id = 0;
  std::optional<double> final_answer;
  bool correct = false;
  long tokens = 0;
  std::vector<std::pair<int, std::string>> assignments;  // node -> agent
};

namespace detail {

// Runs fn(0..count-1) on up to max_threads workers. Work items must not
// touch shared mutable state; results land in caller-provided slots.
template <typename Fn>
inline void run_indexed(int count, int max_threads, const Fn& fn) {
  if (count <= 0) return;
  const int workers = std::min(max_threads, count);
  if (workers <= 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&] {
    while (true) {
      const int i = next.fetch_add(1);
      if (i >= count) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int t = 0; t < workers; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

inline AggregateMode sink_aggregate_mode(const std::string& sink_text) {
  return sink_text.find("the sum of") != std::string::npos
             ? AggregateMode::sum
             : AggregateMode::product;
}

}  // namespace detail

/// End-to-end engine: decompose (or adopt) the task graph, sweep ready
/// frontiers, run two-stage selection per node, resolve downstream context,
/// and read the final answer off the sink node.
class Orchestrator {
 public:
  Orchestrator(AgentDb& db, RunConfig config)
      : db_(db), cfg_(std::move(config)) {
    cfg_.validate();
  }

  const RunConfig& config() const { return cfg_; }

  SolveResult solve_task(const SyntheticTask& task, std::uint64_t task_id) {
    SolveResult result;
    TaskGraph graph;
    try {
      graph = obtain_graph(task);
    } catch (const Error& ex) {
      result.failed = true;
      result.fail_reason = ex.what();
      return result;
    }
    std::map<int, NodeAnswer> answers;
    std::set<int> completed;
    long task_selections = 0;

    while (completed.size() < graph.nodes.size() && !result.failed) {
      const std::set<int> frontier_set = ready_frontier(graph, completed);
      std::vector<int> frontier(frontier_set.begin(), frontier_set.end());

      // Phase 1 (serial): coarse selection against the round-start state.
      std::vector<CandidateSet> cands(frontier.size());
      std::vector<std::vector<UpstreamContext>> contexts(frontier.size());
      std::vector<double> truths(frontier.size());
      for (std::size_t i = 0; i < frontier.size(); ++i) {
        const SubtaskNode& node = graph.node(frontier[i]);
        contexts[i] = upstream_context(graph, node.id, answers);
        truths[i] = effective_truth(task, graph, node.id, answers);
        cands[i] = select_candidates(node, task_id, task_selections);
      }

      // Phase 2 (parallel): execution and scoring, no shared mutation.
      std::vector<TrainingSelection> train_results(frontier.size());
      std::vector<SelectionOutcome> infer_results(frontier.size());
      std::vector<std::string> failures(frontier.size());
      detail::run_indexed(
          static_cast<int>(frontier.size()), cfg_.max_parallel_nodes,
          [&](int i) {
            const SubtaskNode& node = graph.node(frontier[i]);
            const AgentExecutor executor =
                make_executor(task, task_id, truths[i]);
            if (cfg_.mode == RunMode::train) {
              const CrmFn crm = make_crm(node.id, truths[i]);
              train_results[i] =
                  run_candidates_training(cands[i], db_, node, contexts[i],
                                          executor, crm, cfg_.token_scale);
            } else {
              try {
                infer_results[i] = fine_select_inference(
                    cands[i], db_, node, contexts[i], executor,
                    cfg_.token_scale);
              } catch (const Error& ex) {
                if (ex.code() != ErrorCode::AllCandidatesFailed) throw;
                failures[i] = ex.what();
              }
            }
          });

      // Phase 3 (barrier, ascending node id): apply updates, adopt answers.
      for (std::size_t i = 0; i < frontier.size(); ++i) {
        if (cfg_.mode == RunMode::train) {
          const TrainingSelection& sel = train_results[i];
          apply_training_selection(db_, {sel.outcome, sel.updates, false});
          task_selections += static_cast<long>(sel.updates.size());
          for (const auto& record : sel.outcome.per_candidate) {
            result.tokens += record.tokens;
            result.executions += 1;
          }
          if (sel.all_failed) {
            result.failed = true;
            result.fail_reason =
                "AllCandidatesFailed: node " + std::to_string(frontier[i]);
            continue;
          }
          answers[frontier[i]] = sel.outcome.chosen_answer;
          result.outcomes.push_back(sel.outcome);
        } else {
          if (!failures[i].empty()) {
            result.failed = true;
            result.fail_reason = failures[i];
            for (const auto& record : infer_results[i].per_candidate) {
              result.tokens += record.tokens;
              result.executions += 1;
            }
            continue;
          }
          const SelectionOutcome& outcome = infer_results[i];
          for (const auto& record : outcome.per_candidate) {
            result.tokens += record.tokens;
            result.executions += 1;
          }
          answers[frontier[i]] = outcome.chosen_answer;
          result.outcomes.push_back(outcome);
        }
      }
      for (int id : frontier) completed.insert(id);
    }

    if (!result.failed) {
      const NodeAnswer& sink = answers.at(graph.final_node);
      result.final_value = sink.value;
      result.final_text = sink.raw_text;
    }
    return result;
  }

  /// Sequential pass over the dataset with database learning and a training
  /// curve point per task.
  RunStats run_training(const std::vector<SyntheticTask>& dataset) {
    if (cfg_.mode != RunMode::train) {
      raise(ErrorCode::ConfigError, "run_training requires train mode");
    }
    RunStats stats;
    std::deque<int> window;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      SolveResult res = solve_task(dataset[i], i);
      const bool correct = grade(res, dataset[i]);
      accumulate(stats, res, correct, dataset[i]);
      window.push_back(correct ? 1 : 0);
      if (window.size() > 50) window.pop_front();
      double rolling = 0.0;
      for (int w : window) rolling += w;
      rolling /= static_cast<double>(window.size());
      stats.curve.push_back(
          {static_cast<long>(i), rolling,
           static_cast<double>(stats.tasks_correct) /
               static_cast<double>(stats.tasks_seen)});
    }
    finish(stats);
    return stats;
  }

  /// Read-only pass: one answer per task, no database mutation.
  RunStats run_inference(const std::vector<SyntheticTask>& dataset,
                         std::vector<ResultLine>* results = nullptr) {
    if (cfg_.mode != RunMode::infer) {
      raise(ErrorCode::ConfigError, "run_inference requires infer mode");
    }
    RunStats stats;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      SolveResult res = solve_task(dataset[i], i);
      const bool correct = grade(res, dataset[i]);
      accumulate(stats, res, correct, dataset[i]);
      if (results) {
        ResultLine line;
        line.task_id = static_cast<long>(i);
        line.final_answer = res.final_value;
        line.correct = correct;
        line.tokens = res.tokens;
        for (const auto& outcome : res.outcomes) {
          line.assignments.emplace_back(outcome.node_id, outcome.chosen_agent);
        }
        results->push_back(std::move(line));
      }
    }
    finish(stats);
    return stats;
  }

  /// Task-level correctness: the sink answer graded against the dataset
  /// final answer under the rule tolerance.
  bool grade(const SolveResult& res, const SyntheticTask& task) const {
    if (res.failed || !res.final_value) return false;
    GroundTruth truth;
    truth.node_id = task.graph.final_node;
    truth.expected = task.final_answer;
    truth.rel_tolerance = cfg_.grading_rel_tolerance;
    ExtractedAnswer answer;
    answer.number = res.final_value;
    return rule_reward(answer, truth).value == 1.0;
  }

 private:
  TaskGraph obtain_graph(const SyntheticTask& task) const {
    if (!cfg_.use_decomposer) {
      return task.graph;  // ground-truth decomposition
    }
    DecomposerClient client;
    client.endpoint = cfg_.decomposer_endpoint;
    client.model = cfg_.decomposer_model;
    return client.decompose(task.question_text);
  }

  std::vector<UpstreamContext> upstream_context(
      const TaskGraph& graph, int node_id,
      const std::map<int, NodeAnswer>& answers) const {
    std::vector<UpstreamContext> context;
    for (const DependencyEdge* edge : graph.incoming_edges(node_id)) {
      UpstreamContext up;
      up.from_id = edge->from;
      up.question = graph.node(edge->from).text;
      const NodeAnswer& answer = answers.at(edge->from);
      up.answer_text = answer.raw_text;
      up.answer_value = answer.value;
      up.relation_text = edge->relation_text;
      context.push_back(std::move(up));
    }
    return context;
  }

  /// Ground truth the node is graded (and simulated) against. Subtask nodes
  /// carry dataset truth; the sink's truth is recomputed from the answers
  /// actually adopted upstream, so upstream mistakes propagate honestly.
  double effective_truth(const SyntheticTask& task, const TaskGraph& graph,
                         int node_id,
                         const std::map<int, NodeAnswer>& answers) const {
    if (node_id != graph.final_node) {
      auto it = task.node_truths.find(node_id);
      return it != task.node_truths.end()
                 ? it->second
                 : std::numeric_limits<double>::quiet_NaN();
    }
    const AggregateMode agg =
        detail::sink_aggregate_mode(graph.node(node_id).text);
    double acc = agg == AggregateMode::product ? 1.0 : 0.0;
    for (int pred : graph.predecessors(node_id)) {
      const auto it = answers.find(pred);
      if (it == answers.end() || !it->second.value) {
        return std::numeric_limits<double>::quiet_NaN();
      }
      if (agg == AggregateMode::product) acc *= *it->second.value;
      else acc += *it->second.value;
    }
    return acc;
  }

  CandidateSet select_candidates(const SubtaskNode& node,
                                 std::uint64_t task_id, long task_selections) {
    if (cfg_.strategy == SelectionStrategy::random) {
      Rng rng = keyed_rng({cfg_.seed, task_id,
                           static_cast<std::uint64_t>(node.id), 0xCA4Dull});
      return coarse_select_random(db_, node.id, cfg_.params.top_k, rng);
    }
    const std::string& embed_text =
        (cfg_.embed_node_text || node.target_profile.empty())
            ? node.text
            : node.target_profile;
    const std::vector<double> embedding = cfg_.embedding.embed(embed_text);
    const long n_total =
        cfg_.params.selection_scope == SelectionScope::global_count
            ? db_.total_selections()
            : task_selections;
    const bool explore = cfg_.strategy == SelectionStrategy::full &&
                         cfg_.mode == RunMode::train;
    return coarse_select(db_, node.id, embedding, cfg_.params, n_total,
                         explore);
  }

  AgentExecutor make_executor(const SyntheticTask& task, std::uint64_t task_id,
                              double truth) const {
    if (cfg_.backend == BackendKind::simulated) {
      const auto& sim_agents = cfg_.sim_agents;
      const auto& domains = task.domains;
      const std::uint64_t seed = cfg_.seed;
      return [&sim_agents, &domains, seed, task_id, truth](
                 const StaticProfile& agent, const SubtaskNode& node,
                 const std::vector<UpstreamContext>&) {
        auto it = sim_agents.find(agent.agent_id);
        if (it == sim_agents.end()) {
          raise(ErrorCode::ConfigError,
                "no simulated spec for agent " + agent.agent_id);
        }
        const auto dom = domains.find(node.id);
        const std::string domain =
            dom != domains.end() ? dom->second : std::string("general");
        return execute_simulated(
            it->second, SimKey{seed, task_id, node.id, agent.agent_id},
            domain, truth);
      };
    }
    const ChatEndpoint chat = cfg_.chat;
    return [chat](const StaticProfile& agent, const SubtaskNode& node,
                  const std::vector<UpstreamContext>& context) {
      return execute_llm(chat, agent, assemble_prompt(agent, node, context));
    };
  }

  CrmFn make_crm(int node_id, double truth) const {
    if (cfg_.crm == CrmKind::model) {
      const RewardEndpoint endpoint = cfg_.reward_endpoint;
      return [endpoint](const StaticProfile& agent, const SubtaskNode& node,
                        const std::vector<UpstreamContext>& context,
                        const std::string& answer_text) {
        std::vector<ContextPair> pairs;
        for (const auto& up : context) {
          pairs.push_back({up.question, up.answer_text});
        }
        return model_reward(endpoint, agent, node, pairs, answer_text);
      };
    }
    const RewardKind kind =
        cfg_.crm == CrmKind::rule ? RewardKind::rule : RewardKind::oracle;
    GroundTruth gt;
    gt.node_id = node_id;
    gt.expected = truth;
    gt.rel_tolerance = cfg_.grading_rel_tolerance;
    return [gt, kind](const StaticProfile&, const SubtaskNode&,
                      const std::vector<UpstreamContext>&,
                      const std::string& answer_text) {
      return rule_reward_text(answer_text, gt, kind);
    };
  }

  void accumulate(RunStats& stats, const SolveResult& res, bool correct,
                  const SyntheticTask& task) {
    stats.tasks_seen += 1;
    stats.tasks_correct += correct ? 1 : 0;
    stats.total_tokens += res.tokens;
    stats.executions += res.executions;
    stats.per_task_executions.push_back(res.executions);
    stats.per_task_nodes.push_back(static_cast<int>(task.graph.nodes.size()));
  }

  void finish(RunStats& stats) {
    stats.accuracy = stats.tasks_seen == 0
                         ? 0.0
                         : static_cast<double>(stats.tasks_correct) /
                               static_cast<double>(stats.tasks_seen);
    stats.selections_N = db_.total_selections();
  }

  AgentDb& db_;
  RunConfig cfg_;
};

// ---------------------------------------------------------------------------
// Dataset / results / report plumbing.

inline std::vector<SyntheticTask> load_dataset(std::istream& in) {
  std::vector<SyntheticTask> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json doc = nlohmann::json::parse(line, nullptr, false);
    if (doc.is_discarded()) {
      raise(ErrorCode::ParseError, "dataset line " + std::to_string(line_no));
    }
    out.push_back(task_from_line(doc));
  }
  return out;
}

inline nlohmann::json result_line_to_json(const ResultLine& line) {
  nlohmann::json assignments = nlohmann::json::array();
  for (const auto& [node_id, agent_id] : line.assignments) {
    assignments.push_back({{"node_id", node_id}, {"agent_id", agent_id}});
  }
  nlohmann::json doc = {{"task_id", line.task_id},
                        {"correct", line.correct},
                        {"tokens", line.tokens},
                        {"assignments", assignments}};
  if (line.final_answer) {
    doc["final_answer"] = *line.final_answer;
  } else {
    doc["final_answer"] = nullptr;
  }
  return doc;
}

inline void write_results(const std::vector<ResultLine>& results,
                          std::ostream& out) {
  for (const auto& line : results) {
    out << result_line_to_json(line).dump() << "\n";
  }
}

inline std::vector<ResultLine> load_results(std::istream& in) {
  std::vector<ResultLine> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json doc = nlohmann::json::parse(line, nullptr, false);
    if (doc.is_discarded()) {
      raise(ErrorCode::ParseError, "results line " + std::to_string(line_no));
    }
    ResultLine r;
    try {
      r.task_id = doc.at("task_id").get<long>();
      r.correct = doc.at("correct").get<bool>();
      r.tokens = doc.at("tokens").get<long>();
      if (doc.contains("final_answer") && !doc.at("final_answer").is_null()) {
        r.final_answer = doc.at("final_answer").get<double>();
      }
      for (const auto& item : doc.at("assignments")) {
        r.assignments.emplace_back(item.at("node_id").get<int>(),
                                   item.at("agent_id").get<std::string>());
      }
    } catch (const nlohmann::json::exception& ex) {
      raise(ErrorCode::ParseError,
            "results line " + std::to_string(line_no) + ": " + ex.what());
    }
    out.push_back(std::move(r));
  }
  return out;
}

inline void write_curve(const std::vector<CurvePoint>& curve,
                        std::ostream& out) {
  out << "task_index,rolling_accuracy_window_50,cumulative_accuracy\n";
  for (const auto& p : curve) {
    out << p.task_index << "," << render_double(p.rolling_accuracy) << ","
        << render_double(p.cumulative_accuracy) << "\n";
  }
}

struct BucketReport {
  long tasks = 0;
  long correct = 0;
  std::optional<double> accuracy;  // empty bucket reports n/a, not 0
};

struct EvalReport {
  std::map<std::string, BucketReport> buckets;  // by difficulty
  double mean_tokens = 0.0;
  long total_tokens = 0;
  long tasks = 0;
  std::map<std::string, long> agent_selections;  // node assignments per agent
};

/// Accuracy per difficulty bucket, token accounting, and the per-agent
/// selection distribution.
inline EvalReport evaluate(const std::vector<ResultLine>& results,
                           const std::vector<SyntheticTask>& dataset) {
  EvalReport report;
  for (const auto& line : results) {
    if (line.task_id < 0 ||
        line.task_id >= static_cast<long>(dataset.size())) {
      raise(ErrorCode::IdMismatch, "task_id " + std::to_string(line.task_id));
    }
    const SyntheticTask& task = dataset[static_cast<std::size_t>(line.task_id)];
    BucketReport& bucket = report.buckets[task.difficulty];
    bucket.tasks += 1;
    bucket.correct += line.correct ? 1 : 0;
    report.total_tokens += line.tokens;
    report.tasks += 1;
    for (const auto& [node_id, agent_id] : line.assignments) {
      report.agent_selections[agent_id] += 1;
    }
  }
  for (auto& [name, bucket] : report.buckets) {
    if (bucket.tasks > 0) {
      bucket.accuracy = static_cast<double>(bucket.correct) /
                        static_cast<double>(bucket.tasks);
    }
  }
  report.mean_tokens = report.tasks == 0
                           ? 0.0
                           : static_cast<double>(report.total_tokens) /
                                 static_cast<double>(report.tasks);
  return report;
}

inline nlohmann::json report_to_json(const EvalReport& report) {
  nlohmann::json buckets = nlohmann::json::object();
  for (const auto& [name, bucket] : report.buckets) {
    nlohmann::json b = {{"tasks", bucket.tasks}, {"correct", bucket.correct}};
    if (bucket.accuracy) b["accuracy"] = *bucket.accuracy;
    else b["accuracy"] = nullptr;
    buckets[name] = b;
  }
  nlohmann::json selections = nlohmann::json::object();
  for (const auto& [agent, count] : report.agent_selections) {
    selections[agent] = count;
  }
  return {{"buckets", buckets},
          {"tasks", report.tasks},
          {"mean_tokens", report.mean_tokens},
          {"total_tokens", report.total_tokens},
          {"agent_selections", selections}};
}

}  // namespace maestro
