#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "maestro/errors.hpp"

namespace maestro {

struct SubtaskNode {
  int id = 0;
  std::string text;
  std::string target_profile;         // expertise description, similarity source
  std::vector<std::string> unknowns;  // placeholder symbols appearing in text
};

struct DependencyEdge {
  int from = 0;
  int to = 0;
  std::string relation_text;  // empty for pure ordering edges
};

struct NodeAnswer {
  int node_id = 0;
  std::optional<double> value;
  std::string raw_text;
  std::string agent_id;
  long tokens = 0;
};

/// Directed acyclic decomposition of a question. Immutable after validation;
/// safe to share across concurrent executors.
struct TaskGraph {
  std::vector<SubtaskNode> nodes;
  std::vector<DependencyEdge> edges;
  int final_node = 0;

  const SubtaskNode& node(int id) const {
    for (const auto& n : nodes) {
      if (n.id == id) return n;
    }
    raise(ErrorCode::DanglingEdge, "no node with id " + std::to_string(id));
  }

  bool has_node(int id) const {
    return std::any_of(nodes.begin(), nodes.end(),
                       [&](const SubtaskNode& n) { return n.id == id; });
  }

  /// Ids with an edge into `id`, ascending.
  std::vector<int> predecessors(int id) const {
    std::vector<int> out;
    for (const auto& e : edges) {
      if (e.to == id) out.push_back(e.from);
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }

  std::vector<const DependencyEdge*> incoming_edges(int id) const {
    std::vector<const DependencyEdge*> out;
    for (const auto& e : edges) {
      if (e.to == id) out.push_back(&e);
    }
    std::sort(out.begin(), out.end(),
              [](const DependencyEdge* a, const DependencyEdge* b) {
                return a->from < b->from;
              });
    return out;
  }
};

namespace detail {

/// Placeholder tokens are fixed as "UNK_<n>".
inline std::vector<std::string> find_placeholders(const std::string& text) {
  std::vector<std::string> out;
  const std::string marker = "UNK_";
  std::size_t pos = 0;
  while ((pos = text.find(marker, pos)) != std::string::npos) {
    std::size_t end = pos + marker.size();
    while (end < text.size() && text[end] >= '0' && text[end] <= '9') ++end;
    if (end > pos + marker.size()) {
      out.push_back(text.substr(pos, end - pos));
    }
    pos = end;
  }
  return out;
}

// Kahn's algorithm with ascending-id tie-break; nodes left over sit on a cycle.
inline std::vector<int> kahn_order(const TaskGraph& graph, bool* complete) {
  std::map<int, int> indegree;
  std::map<int, std::vector<int>> successors;
  for (const auto& n : graph.nodes) indegree[n.id];
  for (const auto& e : graph.edges) {
    ++indegree[e.to];
    successors[e.from].push_back(e.to);
  }
  std::set<int> ready;
  for (const auto& [id, deg] : indegree) {
    if (deg == 0) ready.insert(id);
  }
  std::vector<int> order;
  while (!ready.empty()) {
    int id = *ready.begin();
    ready.erase(ready.begin());
    order.push_back(id);
    for (int succ : successors[id]) {
      if (--indegree[succ] == 0) ready.insert(succ);
    }
  }
  if (complete) *complete = order.size() == graph.nodes.size();
  return order;
}

inline std::string describe_cycle(const TaskGraph& graph) {
  bool complete = false;
  auto order = kahn_order(graph, &complete);
  std::set<int> on_cycle;
  for (const auto& n : graph.nodes) on_cycle.insert(n.id);
  for (int id : order) on_cycle.erase(id);
  if (on_cycle.empty()) return "(none)";
  // Walk predecessors inside the residual set until a node repeats.
  std::map<int, std::vector<int>> pred;
  for (const auto& e : graph.edges) {
    if (on_cycle.count(e.from) && on_cycle.count(e.to)) {
      pred[e.to].push_back(e.from);
    }
  }
  std::vector<int> walk{*on_cycle.begin()};
  std::set<int> seen{walk.back()};
  while (true) {
    auto& ps = pred[walk.back()];
    std::sort(ps.begin(), ps.end());
    int next = ps.front();
    if (seen.count(next)) {
      std::string s = std::to_string(next);
      for (auto it = walk.rbegin(); it != walk.rend(); ++it) {
        s += " -> " + std::to_string(*it);
        if (*it == next) break;
      }
      return s;
    }
    walk.push_back(next);
    seen.insert(next);
  }
}

}  // namespace detail

/// Checks every TaskGraph invariant: distinct ids, non-empty texts, declared
/// placeholders, edge endpoints, acyclicity, and a single reachable sink.
inline void validate(const TaskGraph& graph) {
  std::set<int> ids;
  for (const auto& n : graph.nodes) {
    if (!ids.insert(n.id).second) {
      raise(ErrorCode::DuplicateNodeId, "node id " + std::to_string(n.id));
    }
    if (n.text.empty()) {
      raise(ErrorCode::EmptyNodeText, "node " + std::to_string(n.id));
    }
    for (const auto& ph : detail::find_placeholders(n.text)) {
      if (std::find(n.unknowns.begin(), n.unknowns.end(), ph) == n.unknowns.end()) {
        raise(ErrorCode::UnlistedPlaceholder,
              ph + " in node " + std::to_string(n.id));
      }
    }
  }
  for (const auto& e : graph.edges) {
    if (e.from == e.to) {
      raise(ErrorCode::CycleDetected,
            std::to_string(e.from) + " -> " + std::to_string(e.to));
    }
    if (!ids.count(e.from) || !ids.count(e.to)) {
      raise(ErrorCode::DanglingEdge,
            std::to_string(e.from) + " -> " + std::to_string(e.to));
    }
  }
  bool complete = false;
  detail::kahn_order(graph, &complete);
  if (!complete) {
    raise(ErrorCode::CycleDetected, detail::describe_cycle(graph));
  }
  if (!ids.count(graph.final_node)) {
    raise(ErrorCode::MissingFinalNode,
          "final_node " + std::to_string(graph.final_node) + " not in graph");
  }
  for (const auto& e : graph.edges) {
    if (e.from == graph.final_node) {
      raise(ErrorCode::MissingFinalNode,
            "final_node has outgoing edge to " + std::to_string(e.to));
    }
  }
  // Every node must reach the sink; other sinks or disconnected islands are
  // rejected (stricter than required, keeps the final answer well-defined).
  std::set<int> reaches{graph.final_node};
  bool grew = true;
  while (grew) {
    grew = false;
    for (const auto& e : graph.edges) {
      if (reaches.count(e.to) && reaches.insert(e.from).second) grew = true;
    }
  }
  for (const auto& n : graph.nodes) {
    if (!reaches.count(n.id)) {
      raise(ErrorCode::UnreachableNode,
            "node " + std::to_string(n.id) + " cannot reach the final node");
    }
  }
}

/// Deterministic topological order: ties broken by ascending node id.
inline std::vector<int> topological_order(const TaskGraph& graph) {
  bool complete = false;
  auto order = detail::kahn_order(graph, &complete);
  if (!complete) {
    raise(ErrorCode::CycleDetected, detail::describe_cycle(graph));
  }
  return order;
}

/// Uncompleted nodes whose predecessors are all completed, ascending.
inline std::set<int> ready_frontier(const TaskGraph& graph,
                                    const std::set<int>& completed) {
  std::set<int> out;
  for (const auto& n : graph.nodes) {
    if (completed.count(n.id)) continue;
    bool ready = true;
    for (int p : graph.predecessors(n.id)) {
      if (!completed.count(p)) {
        ready = false;
        break;
      }
    }
    if (ready) out.insert(n.id);
  }
  return out;
}

inline nlohmann::json graph_to_json(const TaskGraph& graph) {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& n : graph.nodes) {
    nodes.push_back({{"id", n.id},
                     {"text", n.text},
                     {"target_profile", n.target_profile},
                     {"unknowns", n.unknowns}});
  }
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& e : graph.edges) {
    edges.push_back(
        {{"from", e.from}, {"to", e.to}, {"relation_text", e.relation_text}});
  }
  return {{"nodes", nodes}, {"edges", edges}, {"final_node", graph.final_node}};
}

inline std::string serialize_graph(const TaskGraph& graph) {
  return graph_to_json(graph).dump();
}

inline TaskGraph graph_from_json(const nlohmann::json& doc) {
  if (!doc.is_object() || !doc.contains("nodes") || !doc.contains("edges") ||
      !doc.contains("final_node")) {
    raise(ErrorCode::ParseError,
          "task-graph document needs nodes, edges and final_node");
  }
  TaskGraph graph;
  try {
    for (const auto& jn : doc.at("nodes")) {
      SubtaskNode n;
      n.id = jn.at("id").get<int>();
      n.text = jn.at("text").get<std::string>();
      n.target_profile = jn.value("target_profile", std::string());
      if (jn.contains("unknowns")) {
        n.unknowns = jn.at("unknowns").get<std::vector<std::string>>();
      }
      graph.nodes.push_back(std::move(n));
    }
    for (const auto& je : doc.at("edges")) {
      DependencyEdge e;
      e.from = je.at("from").get<int>();
      e.to = je.at("to").get<int>();
      e.relation_text = je.value("relation_text", std::string());
      graph.edges.push_back(std::move(e));
    }
    graph.final_node = doc.at("final_node").get<int>();
  } catch (const nlohmann::json::exception& ex) {
    raise(ErrorCode::ParseError, ex.what());
  }
  validate(graph);
  return graph;
}

/// Parses the task-graph JSON document format; unknown fields are ignored.
inline TaskGraph parse_task_graph(const std::string& text) {
  nlohmann::json doc = nlohmann::json::parse(text, nullptr, false);
  if (doc.is_discarded()) {
    raise(ErrorCode::ParseError, "malformed JSON");
  }
  return graph_from_json(doc);
}

}  // namespace maestro
