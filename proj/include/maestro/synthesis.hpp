#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "maestro/errors.hpp"
#include "maestro/numeric_text.hpp"
#include "maestro/rng.hpp"
#include "maestro/task_graph.hpp"

namespace maestro {

/// One flat QA pool item eligible for composition: problem text, numeric
/// answer, and the numeric constant (with its span) that dependency edges
/// will rewire.
struct CandidateSubtask {
  std::string text;
  double answer = 0.0;
  double constant = 0.0;
  std::size_t span_begin = 0;
  std::size_t span_length = 0;
  std::string domain;
  std::string source_id;
};

struct ExtractedConstant {
  double value = 0.0;
  std::size_t begin = 0;
  std::size_t length = 0;
};

/// Picks the wireable constant of a problem text: the first decimal literal
/// with magnitude in [1e-3, 1e6] that is not an exponent, a list index, or a
/// year (4-digit integer in 1900..2100). Returns nothing when the item
/// should be discarded from the pool.
inline std::optional<ExtractedConstant> extract_constant(const std::string& text) {
  for (const NumberToken& tok : scan_numbers(text)) {
    const double mag = std::abs(tok.value);
    if (!(mag >= 1e-3 && mag <= 1e6)) continue;
    if (tok.preceded_by == '^') continue;  // exponent of a power expression
    if (tok.is_integer) {
      if (tok.value >= 1900 && tok.value <= 2100 && tok.length == 4) continue;
      // enumerator at the start of the text: "1. Prove ..." / "2) Show ..."
      const std::size_t after = tok.begin + tok.length;
      if (tok.preceded_by == '\0' && after < text.size() &&
          (text[after] == '.' || text[after] == ')')) {
        continue;
      }
    }
    return ExtractedConstant{tok.value, tok.begin, tok.length};
  }
  return std::nullopt;
}

enum class AggregateMode { product, sum };

/// A composite benchmark task: the natural-language question, its underlying
/// DAG, exact per-node ground truth, and the final answer.
struct SyntheticTask {
  std::string question_text;
  TaskGraph graph;
  std::map<int, double> node_truths;
  double final_answer = 0.0;
  std::string difficulty;  // easy=3, medium=5, hard=7 subtasks
  std::uint64_t seed = 0;
  std::map<int, std::string> domains;  // node id -> domain label
};

namespace synth_detail {

struct DagSkeleton {
  TaskGraph graph;
  std::map<int, int> param_parent;  // node id -> parameter parent (nodes 2..n)
};

// Nodes 1..n plus an aggregation sink n+1. Edges only run from lower to
// higher ids, so the graph is acyclic by construction.
inline DagSkeleton build_skeleton(int n_subtasks, std::uint64_t seed) {
  if (n_subtasks < 1) {
    raise(ErrorCode::InvalidSize,
          "n_subtasks = " + std::to_string(n_subtasks));
  }
  DagSkeleton skel;
  const int sink = n_subtasks + 1;
  for (int i = 1; i <= sink; ++i) {
    SubtaskNode node;
    node.id = i;
    node.text = i == sink ? "aggregate the subtask answers" : "pending subtask";
    skel.graph.nodes.push_back(std::move(node));
  }
  skel.graph.final_node = sink;
  Rng parent_rng = keyed_rng({seed, 0xDA61ULL});
  for (int i = 2; i <= n_subtasks; ++i) {
    const int parent =
        1 + static_cast<int>(parent_rng.next_below(static_cast<std::uint64_t>(i - 1)));
    skel.param_parent[i] = parent;
    skel.graph.edges.push_back({parent, i, ""});
  }
  // Optional ordering edges diversify the topology without carrying data.
  Rng order_rng = keyed_rng({seed, 0x0BDEULL});
  for (int i = 1; i <= n_subtasks; ++i) {
    for (int j = i + 1; j <= n_subtasks; ++j) {
      if (skel.param_parent.count(j) && skel.param_parent.at(j) == i) continue;
      if (order_rng.next_unit() < 0.2) {
        skel.graph.edges.push_back({i, j, ""});
      }
    }
  }
  for (int i = 1; i <= n_subtasks; ++i) {
    skel.graph.edges.push_back({i, sink, ""});
  }
  return skel;
}

// Searches near `initial` for an operand x such that apply(x) == target
// bit-exactly; the rendered decimal of x re-parses to x, so the identity
// survives serialization. An additive target can be unreachable when the
// offset is much larger than the target (the sum then steps over the
// target's neighborhood); the multiplicative form steps by at most one ulp
// of the target and is the fallback.
template <typename Apply>
inline std::optional<double> nudge_operand(double initial, double target,
                                           Apply apply) {
  if (std::isfinite(initial) && apply(initial) == target) return initial;
  for (const double direction : {std::numeric_limits<double>::infinity(),
                                 -std::numeric_limits<double>::infinity()}) {
    double x = initial;
    for (int step = 0; step < 2048; ++step) {
      x = std::nextafter(x, direction);
      if (!std::isfinite(x)) break;
      if (apply(x) == target) return x;
    }
  }
  return std::nullopt;
}

}  // namespace synth_detail

/// Skeleton generator: nodes 1..n plus aggregation sink, node 1 parentless,
/// every later subtask node wired to exactly one uniformly drawn parameter
/// parent, sink fed by every subtask node.
inline TaskGraph generate_random_dag(int n_subtasks, std::uint64_t seed) {
  return synth_detail::build_skeleton(n_subtasks, seed).graph;
}

/// Renders the natural-language dependency between an upstream answer and a
/// downstream constant. The identity f(a_j) = c_k holds bit-exactly after
/// re-parsing the rendered operand.
inline std::string build_edge_text(double a_j, double c_k,
                                   const std::string& unk, std::uint64_t seed) {
  if (!std::isfinite(a_j) || !std::isfinite(c_k)) {
    raise(ErrorCode::DegenerateUpstream, "non-finite operand");
  }
  Rng rng = keyed_rng({seed, 0xED6EULL});
  const bool can_multiply = std::abs(a_j) > 1e-9;

  auto multiplicative = [&]() -> std::optional<std::string> {
    if (!can_multiply) return std::nullopt;
    auto rho = synth_detail::nudge_operand(c_k / a_j, c_k,
                                           [&](double x) { return a_j * x; });
    if (!rho) return std::nullopt;
    const double parsed = parse_double(render_double(*rho));
    if (a_j * parsed != c_k) return std::nullopt;
    return "in this question, " + unk + " = previous answer * " +
           render_double(*rho);
  };
  auto additive = [&]() -> std::optional<std::string> {
    auto delta = synth_detail::nudge_operand(c_k - a_j, c_k,
                                             [&](double x) { return a_j + x; });
    if (!delta) return std::nullopt;
    const double parsed = parse_double(render_double(*delta));
    if (a_j + parsed != c_k) return std::nullopt;
    if (*delta >= 0.0) {
      return "in this question, " + unk + " = previous answer + " +
             render_double(*delta);
    }
    return "in this question, " + unk + " = previous answer - " +
           render_double(-*delta);
  };

  // A multiplicative draw on a near-zero upstream redraws as additive; an
  // unreachable additive target falls back to the multiplicative form.
  if (rng.next_below(3) == 0 && can_multiply) {
    if (auto text = multiplicative()) return *text;
  }
  if (auto text = additive()) return *text;
  if (auto text = multiplicative()) return *text;
  raise(ErrorCode::DegenerateUpstream,
        "no exact relation from " + render_double(a_j) + " to " +
            render_double(c_k));
}

/// Replaces the constant literal at the recorded span with the placeholder;
/// any attached unit stays in place.
inline std::string redact_constants(const std::string& text,
                                    std::size_t span_begin,
                                    std::size_t span_length,
                                    const std::string& unk) {
  if (span_begin + span_length > text.size()) {
    raise(ErrorCode::SpanMismatch, "span beyond end of text");
  }
  const std::string span = text.substr(span_begin, span_length);
  if (!try_parse_double(span)) {
    raise(ErrorCode::SpanMismatch, "span '" + span + "' is not a literal");
  }
  std::string out = text;
  out.replace(span_begin, span_length, unk);
  // exactly one occurrence of the placeholder
  std::size_t first = out.find(unk);
  if (first == std::string::npos || out.find(unk, first + 1) != std::string::npos) {
    raise(ErrorCode::SpanMismatch, "placeholder " + unk + " not unique");
  }
  return out;
}

/// Builds one composite task: samples distinct pool items, wires parameter
/// edges with exact relation texts, redacts non-root constants, and appends
/// the aggregation sink. Deterministic in (pool, n_subtasks, seed).
inline SyntheticTask synthesize_task(const std::vector<CandidateSubtask>& pool,
                                     int n_subtasks, std::uint64_t seed,
                                     AggregateMode agg = AggregateMode::product) {
  if (n_subtasks < 1) {
    raise(ErrorCode::InvalidSize, "n_subtasks = " + std::to_string(n_subtasks));
  }
  if (static_cast<int>(pool.size()) < n_subtasks) {
    raise(ErrorCode::PoolTooSmall,
          std::to_string(pool.size()) + " items for " +
              std::to_string(n_subtasks) + " subtasks");
  }
  // sample n distinct items (partial Fisher-Yates over indices)
  Rng sample_rng = keyed_rng({seed, 0x5A3Dull});
  std::vector<std::size_t> indices(pool.size());
  for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;
  for (int i = 0; i < n_subtasks; ++i) {
    std::size_t j = i + sample_rng.next_below(indices.size() - i);
    std::swap(indices[i], indices[j]);
  }

  auto skel = synth_detail::build_skeleton(n_subtasks, seed);
  SyntheticTask task;
  task.seed = seed;
  task.graph = std::move(skel.graph);
  const int sink = n_subtasks + 1;

  for (int i = 1; i <= n_subtasks; ++i) {
    const CandidateSubtask& item = pool[indices[i - 1]];
    SubtaskNode& node = task.graph.nodes[i - 1];
    node.text = item.text;
    node.target_profile = "expert in " + item.domain;
    task.node_truths[i] = item.answer;
    task.domains[i] = item.domain;
  }

  // Wire parameter edges and redact the child constants. A (parent answer,
  // child constant) pair without an exact relation rotates to another parent
  // and, failing that, swaps in a spare pool item for the child.
  std::size_t next_spare = static_cast<std::size_t>(n_subtasks);
  for (int child = 2; child <= n_subtasks; ++child) {
    const std::string unk = "UNK_" + std::to_string(child - 2);
    const std::uint64_t edge_seed =
        combine_keys({seed, 0xE0ull, static_cast<std::uint64_t>(child)});
    const int drawn_parent = skel.param_parent.at(child);

    std::string relation;
    int parent = drawn_parent;
    bool wired = false;
    while (!wired) {
      const CandidateSubtask& item = pool[indices[child - 1]];
      for (int offset = 0; offset < child - 1 && !wired; ++offset) {
        parent = 1 + (drawn_parent - 1 + offset) % (child - 1);
        try {
          relation = build_edge_text(task.node_truths.at(parent),
                                     item.constant, unk, edge_seed);
          wired = true;
        } catch (const Error& ex) {
          if (ex.code() != ErrorCode::DegenerateUpstream) throw;
        }
      }
      if (!wired) {
        if (next_spare >= indices.size()) {
          raise(ErrorCode::DegenerateUpstream,
                "node " + std::to_string(child) + ": pool exhausted");
        }
        std::swap(indices[child - 1], indices[next_spare++]);
        const CandidateSubtask& swapped = pool[indices[child - 1]];
        task.graph.nodes[child - 1].text = swapped.text;
        task.graph.nodes[child - 1].target_profile =
            "expert in " + swapped.domain;
        task.node_truths[child] = swapped.answer;
        task.domains[child] = swapped.domain;
      }
    }

    const CandidateSubtask& item = pool[indices[child - 1]];
    SubtaskNode& node = task.graph.nodes[child - 1];
    node.text = redact_constants(node.text, item.span_begin, item.span_length, unk);
    node.unknowns.push_back(unk);
    if (parent != drawn_parent) {
      // rewire: move the parameter edge, dropping any ordering duplicate
      auto& edges = task.graph.edges;
      for (auto it = edges.begin(); it != edges.end(); ++it) {
        if (it->from == parent && it->to == child) {
          edges.erase(it);
          break;
        }
      }
      for (auto& edge : edges) {
        if (edge.from == drawn_parent && edge.to == child) {
          edge.from = parent;
          break;
        }
      }
    }
    for (auto& edge : task.graph.edges) {
      if (edge.from == parent && edge.to == child) {
        edge.relation_text = relation;
        break;
      }
    }
  }

  // Aggregation sink: combines every subtask answer.
  const char* agg_word = agg == AggregateMode::product ? "product" : "sum";
  {
    SubtaskNode& sink_node = task.graph.nodes[sink - 1];
    std::string answers;
    for (int i = 1; i <= n_subtasks; ++i) {
      if (i > 1) answers += i == n_subtasks ? " and " : ", ";
      answers += "Answer[" + std::to_string(i) + "]";
    }
    sink_node.text = "Compute the " + std::string(agg_word) + " of " + answers +
                     ", where Answer[i] is the answer of Task i.";
    sink_node.target_profile = "expert in arithmetic aggregation";
    task.domains[sink] = "aggregation";
  }
  double acc = agg == AggregateMode::product ? 1.0 : 0.0;
  for (int i = 1; i <= n_subtasks; ++i) {
    if (agg == AggregateMode::product) acc *= task.node_truths.at(i);
    else acc += task.node_truths.at(i);
  }
  task.node_truths[sink] = acc;
  task.final_answer = acc;

  task.difficulty = n_subtasks == 3   ? "easy"
                    : n_subtasks == 5 ? "medium"
                    : n_subtasks == 7 ? "hard"
                                      : "n" + std::to_string(n_subtasks);

  // Render the whole graph as one natural-language question, topological order.
  std::string q;
  for (int id : topological_order(task.graph)) {
    const SubtaskNode& node = task.graph.node(id);
    q += "Task " + std::to_string(id);
    auto preds = task.graph.predecessors(id);
    if (!preds.empty()) {
      q += " (depends on Task";
      if (preds.size() > 1) q += "s";
      for (std::size_t i = 0; i < preds.size(); ++i) {
        q += (i == 0 ? " " : ", ") + std::to_string(preds[i]);
      }
      q += ")";
    }
    q += ": " + node.text;
    for (const auto* edge : task.graph.incoming_edges(id)) {
      if (!edge->relation_text.empty()) {
        q += " (" + edge->relation_text +
             ", where the previous answer is Answer[" +
             std::to_string(edge->from) + "])";
      }
    }
    if (id == sink) {
      q += " Conclude with: The answer is therefore \\boxed{[ANSWER]}.";
    }
    q += "\n";
  }
  task.question_text = std::move(q);

  validate(task.graph);
  return task;
}

inline nlohmann::json task_to_line(const SyntheticTask& task) {
  nlohmann::json truths = nlohmann::json::object();
  for (const auto& [id, value] : task.node_truths) {
    truths[std::to_string(id)] = value;
  }
  nlohmann::json domains = nlohmann::json::object();
  for (const auto& [id, domain] : task.domains) {
    domains[std::to_string(id)] = domain;
  }
  return {{"question_text", task.question_text},
          {"graph", graph_to_json(task.graph)},
          {"node_truths", truths},
          {"final_answer", task.final_answer},
          {"difficulty", task.difficulty},
          {"seed", task.seed},
          {"domains", domains}};
}

inline SyntheticTask task_from_line(const nlohmann::json& line) {
  SyntheticTask task;
  try {
    task.question_text = line.at("question_text").get<std::string>();
    task.graph = graph_from_json(line.at("graph"));
    for (const auto& [key, value] : line.at("node_truths").items()) {
      task.node_truths[std::stoi(key)] = value.get<double>();
    }
    task.final_answer = line.at("final_answer").get<double>();
    task.difficulty = line.at("difficulty").get<std::string>();
    task.seed = line.value("seed", std::uint64_t{0});
    if (line.contains("domains")) {
      for (const auto& [key, value] : line.at("domains").items()) {
        task.domains[std::stoi(key)] = value.get<std::string>();
      }
    }
  } catch (const nlohmann::json::exception& ex) {
    raise(ErrorCode::ParseError, ex.what());
  }
  return task;
}

/// Reads the pool JSON-lines format {text, answer, domain, source_id},
/// keeping only items with a wireable constant.
inline std::vector<CandidateSubtask> load_pool(std::istream& in) {
  std::vector<CandidateSubtask> pool;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json doc = nlohmann::json::parse(line, nullptr, false);
    if (doc.is_discarded()) {
      raise(ErrorCode::ParseError, "pool line " + std::to_string(line_no));
    }
    CandidateSubtask item;
    try {
      item.text = doc.at("text").get<std::string>();
      item.answer = doc.at("answer").get<double>();
      item.domain = doc.value("domain", std::string("general"));
      item.source_id = doc.value("source_id", std::string());
    } catch (const nlohmann::json::exception& ex) {
      raise(ErrorCode::ParseError,
            "pool line " + std::to_string(line_no) + ": " + ex.what());
    }
    if (!std::isfinite(item.answer)) continue;
    auto constant = extract_constant(item.text);
    if (!constant) continue;  // discarded from the pool
    item.constant = constant->value;
    item.span_begin = constant->begin;
    item.span_length = constant->length;
    pool.push_back(std::move(item));
  }
  return pool;
}

/// Emits a JSON-lines dataset with the requested difficulty mix. Every line
/// gets an independent seed derived from the master seed, so identical
/// inputs give byte-identical files.
inline void synthesize_dataset(const std::vector<CandidateSubtask>& pool,
                               int easy, int medium, int hard,
                               std::uint64_t seed, std::ostream& out,
                               AggregateMode agg = AggregateMode::product) {
  if (easy < 0 || medium < 0 || hard < 0) {
    raise(ErrorCode::InvalidSize, "negative difficulty count");
  }
  std::uint64_t line_index = 0;
  auto emit = [&](int n_subtasks, int count) {
    for (int i = 0; i < count; ++i, ++line_index) {
      const std::uint64_t line_seed = combine_keys({seed, 0x11AEull, line_index});
      SyntheticTask task = synthesize_task(pool, n_subtasks, line_seed, agg);
      out << task_to_line(task).dump() << "\n";
    }
  };
  emit(3, easy);
  emit(5, medium);
  emit(7, hard);
}

}  // namespace maestro
