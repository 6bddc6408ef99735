#include <doctest.h>

#include <algorithm>
#include <set>

#include "maestro/rng.hpp"
#include "maestro/task_graph.hpp"

using namespace maestro;

namespace {

TaskGraph make_graph(std::vector<SubtaskNode> nodes,
                     std::vector<DependencyEdge> edges, int final_node) {
  TaskGraph g;
  g.nodes = std::move(nodes);
  g.edges = std::move(edges);
  g.final_node = final_node;
  return g;
}

SubtaskNode node(int id, std::string text = "solve something") {
  SubtaskNode n;
  n.id = id;
  n.text = std::move(text);
  return n;
}

TaskGraph diamond() {
  return make_graph({node(1), node(2), node(3), node(4)},
                    {{1, 2, ""}, {1, 3, ""}, {2, 4, ""}, {3, 4, ""}}, 4);
}

// Random DAG over ids 1..n with edges i->j only for i<j and all nodes wired
// toward the sink n; used by the property checks below.
TaskGraph random_dag(Rng& rng, int n) {
  std::vector<SubtaskNode> nodes;
  std::vector<DependencyEdge> edges;
  for (int i = 1; i <= n; ++i) nodes.push_back(node(i));
  for (int i = 1; i < n; ++i) {
    const int target = i + 1 + static_cast<int>(rng.next_below(n - i));
    edges.push_back({i, target, ""});
    for (int j = i + 1; j <= n; ++j) {
      if (j != target && rng.next_unit() < 0.25) edges.push_back({i, j, ""});
    }
  }
  // make sure every non-sink node reaches n: walking max successor suffices
  for (int i = 1; i < n; ++i) {
    bool has_out = std::any_of(edges.begin(), edges.end(),
                               [&](const DependencyEdge& e) { return e.from == i; });
    if (!has_out) edges.push_back({i, n, ""});
  }
  TaskGraph g = make_graph(nodes, edges, n);
  // drop duplicates introduced above
  std::sort(g.edges.begin(), g.edges.end(),
            [](const DependencyEdge& a, const DependencyEdge& b) {
              return std::tie(a.from, a.to) < std::tie(b.from, b.to);
            });
  g.edges.erase(std::unique(g.edges.begin(), g.edges.end(),
                            [](const DependencyEdge& a, const DependencyEdge& b) {
                              return a.from == b.from && a.to == b.to;
                            }),
                g.edges.end());
  return g;
}

}  // namespace

TEST_CASE("validate accepts a chain") {
  CHECK_NOTHROW(validate(make_graph({node(1), node(2)}, {{1, 2, ""}}, 2)));
}

TEST_CASE("validate rejects a 2-cycle") {
  auto g = make_graph({node(1), node(2)}, {{1, 2, ""}, {2, 1, ""}}, 2);
  try {
    validate(g);
    FAIL("expected CycleDetected");
  } catch (const Error& ex) {
    CHECK(ex.code() == ErrorCode::CycleDetected);
  }
}

TEST_CASE("validate accepts the four-node case-study shape") {
  auto g = make_graph(
      {node(1), node(2), node(3), node(4)},
      {{1, 2, ""}, {2, 3, ""}, {1, 4, ""}, {2, 4, ""}, {3, 4, ""}}, 4);
  CHECK_NOTHROW(validate(g));
  CHECK(topological_order(g) == std::vector<int>{1, 2, 3, 4});
}

TEST_CASE("validate reports dangling edges and missing finals") {
  auto dangling = make_graph({node(1), node(2)}, {{1, 7, ""}}, 2);
  CHECK_THROWS_AS(validate(dangling), Error);
  try {
    validate(dangling);
  } catch (const Error& ex) {
    CHECK(ex.code() == ErrorCode::DanglingEdge);
  }

  auto no_final = make_graph({node(1)}, {}, 9);
  try {
    validate(no_final);
    FAIL("expected MissingFinalNode");
  } catch (const Error& ex) {
    CHECK(ex.code() == ErrorCode::MissingFinalNode);
  }

  auto final_with_out = make_graph({node(1), node(2)}, {{2, 1, ""}}, 2);
  try {
    validate(final_with_out);
    FAIL("expected final-node violation");
  } catch (const Error& ex) {
    CHECK(ex.code() == ErrorCode::MissingFinalNode);
  }
}

TEST_CASE("validate rejects duplicate ids, empty text, unlisted placeholders") {
  auto dup = make_graph({node(1), node(1)}, {}, 1);
  CHECK_THROWS_AS(validate(dup), Error);

  auto empty_text = make_graph({node(1, "")}, {}, 1);
  try {
    validate(empty_text);
    FAIL("expected EmptyNodeText");
  } catch (const Error& ex) {
    CHECK(ex.code() == ErrorCode::EmptyNodeText);
  }

  auto unlisted = make_graph({node(1, "use UNK_0 here")}, {}, 1);
  try {
    validate(unlisted);
    FAIL("expected UnlistedPlaceholder");
  } catch (const Error& ex) {
    CHECK(ex.code() == ErrorCode::UnlistedPlaceholder);
  }

  SubtaskNode listed = node(1, "use UNK_0 here");
  listed.unknowns = {"UNK_0"};
  CHECK_NOTHROW(validate(make_graph({listed}, {}, 1)));
}

TEST_CASE("validate rejects nodes that cannot reach the final node") {
  auto island = make_graph({node(1), node(2), node(3)}, {{1, 3, ""}}, 3);
  try {
    validate(island);
    FAIL("expected UnreachableNode");
  } catch (const Error& ex) {
    CHECK(ex.code() == ErrorCode::UnreachableNode);
  }
}

TEST_CASE("topological order of a chain is unique") {
  auto g = make_graph({node(1), node(2), node(3)}, {{1, 2, ""}, {2, 3, ""}}, 3);
  CHECK(topological_order(g) == std::vector<int>{1, 2, 3});
}

TEST_CASE("topological order breaks ties by ascending id") {
  CHECK(topological_order(diamond()) == std::vector<int>{1, 2, 3, 4});
}

TEST_CASE("ready_frontier walks the diamond") {
  auto g = diamond();
  CHECK(ready_frontier(g, {}) == std::set<int>{1});
  CHECK(ready_frontier(g, {1}) == std::set<int>{2, 3});
  CHECK(ready_frontier(g, {1, 2, 3}) == std::set<int>{4});
}

TEST_CASE("properties: order respects edges; frontier sweep visits once") {
  Rng rng(20240811ull);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + static_cast<int>(rng.next_below(9));
    TaskGraph g = random_dag(rng, n);
    REQUIRE_NOTHROW(validate(g));

    auto order = topological_order(g);
    REQUIRE(order.size() == g.nodes.size());
    std::map<int, std::size_t> position;
    for (std::size_t i = 0; i < order.size(); ++i) position[order[i]] = i;
    for (const auto& e : g.edges) {
      CHECK(position.at(e.from) < position.at(e.to));
    }

    std::set<int> completed;
    int rounds = 0;
    std::size_t visited = 0;
    while (completed.size() < g.nodes.size()) {
      auto frontier = ready_frontier(g, completed);
      REQUIRE(!frontier.empty());
      for (int id : frontier) {
        CHECK(!completed.count(id));
        completed.insert(id);
        ++visited;
      }
      ++rounds;
      REQUIRE(rounds <= n);
    }
    CHECK(visited == g.nodes.size());
  }
}

TEST_CASE("parse round-trips a well-formed document") {
  const std::string doc = R"({
    "nodes": [
      {"id": 1, "text": "first", "target_profile": "algebra", "unknowns": []},
      {"id": 2, "text": "second uses UNK_0", "target_profile": "", "unknowns": ["UNK_0"]},
      {"id": 3, "text": "final", "target_profile": "", "unknowns": []}
    ],
    "edges": [
      {"from": 1, "to": 2, "relation_text": "in this question, UNK_0 = previous answer + 1"},
      {"from": 1, "to": 3, "relation_text": ""},
      {"from": 2, "to": 3, "relation_text": ""}
    ],
    "final_node": 3,
    "comment": "unknown fields are ignored"
  })";
  TaskGraph g = parse_task_graph(doc);
  CHECK(g.nodes.size() == 3);
  CHECK(g.final_node == 3);
  CHECK(g.node(2).unknowns == std::vector<std::string>{"UNK_0"});

  // serialize(parse(x)) parses back to an isomorphic graph
  TaskGraph again = parse_task_graph(serialize_graph(g));
  CHECK(serialize_graph(again) == serialize_graph(g));
}

TEST_CASE("parse rejects documents missing required fields") {
  CHECK_THROWS_AS(parse_task_graph("not json at all"), Error);
  try {
    parse_task_graph(R"({"nodes": [], "final_node": 1})");
    FAIL("expected ParseError");
  } catch (const Error& ex) {
    CHECK(ex.code() == ErrorCode::ParseError);
  }
}

TEST_CASE("parse surfaces cycles as CycleDetected") {
  const std::string doc = R"({
    "nodes": [{"id": 1, "text": "a"}, {"id": 2, "text": "b"}],
    "edges": [{"from": 1, "to": 2}, {"from": 2, "to": 1}],
    "final_node": 2
  })";
  try {
    parse_task_graph(doc);
    FAIL("expected CycleDetected");
  } catch (const Error& ex) {
    CHECK(ex.code() == ErrorCode::CycleDetected);
  }
}
