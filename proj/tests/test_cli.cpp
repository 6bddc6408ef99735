#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "maestro/numeric_text.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("maestro_cli_test_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

int run_cli(const std::string& args, const std::string& out_redirect = "") {
  std::string cmd = std::string(MAESTRO_CLI_PATH) + " " + args;
  if (!out_redirect.empty()) {
    cmd += " > " + out_redirect + " 2> " + out_redirect + ".err";
  } else {
    cmd += " > /dev/null 2> /dev/null";
  }
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void spit(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
}

std::string pool_jsonl(int items) {
  std::ostringstream out;
  for (const auto& item : testsupport::make_pool(items)) {
    out << nlohmann::json{{"text", item.text},
                          {"answer", item.answer},
                          {"domain", item.domain},
                          {"source_id", item.source_id}}
               .dump()
        << "\n";
  }
  return out.str();
}

std::string agents_ini(int count) {
  std::ostringstream out;
  for (int i = 0; i < count; ++i) {
    out << "[" << testsupport::sim_agent_id(i) << "]\n"
        << "model = sim-model\n"
        << "role = GeneralSolver\n"
        << "prompt = Solve the assigned subtask using prior answers.\n\n";
  }
  return out.str();
}

std::string sim_specs_json(const std::vector<double>& skills) {
  nlohmann::json doc = nlohmann::json::array();
  for (std::size_t i = 0; i < skills.size(); ++i) {
    doc.push_back({{"agent_id", testsupport::sim_agent_id(static_cast<int>(i))},
                   {"skill", {{"*", skills[i]}}},
                   {"cost_tokens", 400.0},
                   {"noise_scale", 0.5}});
  }
  return doc.dump();
}

int count_lines(const std::string& content) {
  int n = 0;
  for (char c : content) {
    if (c == '\n') ++n;
  }
  return n;
}

}  // namespace

TEST_CASE("cli: synth writes a deterministic dataset and leaves inputs alone") {
  TempDir dir;
  spit(dir.file("pool.jsonl"), pool_jsonl(30));
  const std::string pool_before = slurp(dir.file("pool.jsonl"));

  const std::string args = "synth --pool " + dir.file("pool.jsonl") +
                           " --easy 6 --medium 2 --hard 1 --seed 7 --out " +
                           dir.file("data.jsonl");
  CHECK(run_cli(args) == 0);
  const std::string first = slurp(dir.file("data.jsonl"));
  CHECK(count_lines(first) == 9);

  CHECK(run_cli(args) == 0);
  CHECK(slurp(dir.file("data.jsonl")) == first);          // same seed, same bytes
  CHECK(slurp(dir.file("pool.jsonl")) == pool_before);    // inputs untouched

  CHECK(run_cli("synth --pool " + dir.file("pool.jsonl") +
                " --easy 1 --seed 8 --out " + dir.file("data2.jsonl")) == 0);
  CHECK(slurp(dir.file("data2.jsonl")) != first.substr(0, 1));  // trivially different
}

TEST_CASE("cli: missing required flags exit with usage error 1") {
  CHECK(run_cli("synth --easy 3 --out /tmp/x.jsonl") == 1);
  CHECK(run_cli("train --db /tmp/out.json") == 1);
  CHECK(run_cli("bogus-subcommand") == 1);
  CHECK(run_cli("") == 1);
}

TEST_CASE("cli: train, inspect, infer, eval round trip") {
  TempDir dir;
  spit(dir.file("pool.jsonl"), pool_jsonl(40));
  spit(dir.file("agents.ini"), agents_ini(6));
  spit(dir.file("sim.json"), sim_specs_json({0.9, 0.5, 0.5, 0.5, 0.5, 0.5}));

  REQUIRE(run_cli("synth --pool " + dir.file("pool.jsonl") +
                  " --easy 12 --seed 3 --out " + dir.file("train.jsonl")) == 0);
  REQUIRE(run_cli("synth --pool " + dir.file("pool.jsonl") +
                  " --easy 5 --seed 4 --out " + dir.file("test.jsonl")) == 0);

  // untrained snapshot via an empty dataset
  spit(dir.file("empty.jsonl"), "");
  REQUIRE(run_cli("train --data " + dir.file("empty.jsonl") + " --agents " +
                  dir.file("agents.ini") + " --crm oracle --backend simulated" +
                  " --sim-agents " + dir.file("sim.json") + " --seed 7 --db " +
                  dir.file("fresh.json") + " --v-th -1") == 0);
  REQUIRE(run_cli("agents --db " + dir.file("fresh.json"),
                  dir.file("fresh_table.txt")) == 0);
  const std::string fresh_table = slurp(dir.file("fresh_table.txt"));
  CHECK(fresh_table.find("agent_id") != std::string::npos);
  CHECK(fresh_table.find("0.5") != std::string::npos);  // prior reward
  CHECK(fresh_table.find("a00\tsim-model\tGeneralSolver\t0.5\t0\t0") !=
        std::string::npos);

  // real training run with a curve
  REQUIRE(run_cli("train --data " + dir.file("train.jsonl") + " --agents " +
                  dir.file("agents.ini") + " --crm oracle --backend simulated" +
                  " --sim-agents " + dir.file("sim.json") + " --seed 7 --db " +
                  dir.file("db.json") + " --curve " + dir.file("curve.csv") +
                  " --v-th -1") == 0);
  CHECK(slurp(dir.file("curve.csv"))
            .rfind("task_index,rolling_accuracy_window_50,cumulative_accuracy",
                   0) == 0);
  CHECK(count_lines(slurp(dir.file("curve.csv"))) == 13);  // header + 12 tasks

  // trained table should put the strong agent on top
  REQUIRE(run_cli("agents --db " + dir.file("db.json"),
                  dir.file("table.txt")) == 0);
  const std::string table = slurp(dir.file("table.txt"));
  const auto header_end = table.find('\n');
  const std::string first_row = table.substr(header_end + 1, 4);
  CHECK(first_row.rfind("a00", 0) == 0);

  // inference must not modify the snapshot file's content
  const std::string db_before = slurp(dir.file("db.json"));
  REQUIRE(run_cli("infer --data " + dir.file("test.jsonl") + " --db " +
                  dir.file("db.json") + " --backend simulated --sim-agents " +
                  dir.file("sim.json") + " --seed 7 --v-th -1 --out " +
                  dir.file("results.jsonl")) == 0);
  CHECK(slurp(dir.file("db.json")) == db_before);
  CHECK(count_lines(slurp(dir.file("results.jsonl"))) == 5);

  REQUIRE(run_cli("eval --results " + dir.file("results.jsonl") + " --data " +
                  dir.file("test.jsonl") + " --out " + dir.file("report.json")) == 0);
  auto report = nlohmann::json::parse(slurp(dir.file("report.json")));
  CHECK(report.at("tasks") == 5);
  CHECK(report.at("buckets").contains("easy"));
  CHECK(report.at("agent_selections").is_object());
}

TEST_CASE("cli: config file fills defaults, flags override") {
  TempDir dir;
  spit(dir.file("pool.jsonl"), pool_jsonl(30));
  spit(dir.file("sim.json"), sim_specs_json({0.5, 0.5, 0.5, 0.5, 0.5}));
  REQUIRE(run_cli("synth --pool " + dir.file("pool.jsonl") +
                  " --easy 5 --seed 3 --out " + dir.file("data.jsonl")) == 0);

  // agents and [run] settings share one file
  spit(dir.file("conf.ini"), agents_ini(5) + std::string("[run]\n") +
                                 "top_k = 2\n" +
                                 "v_th = -1\n" +
                                 "sim_agents = " + dir.file("sim.json") + "\n");

  REQUIRE(run_cli("train --data " + dir.file("data.jsonl") + " --config " +
                  dir.file("conf.ini") + " --agents " + dir.file("conf.ini") +
                  " --crm oracle --backend simulated --seed 1 --db " +
                  dir.file("db.json"),
                  dir.file("out1.txt")) == 0);
  // k=2, D=4, 5 tasks -> 40 executions, reported on stderr
  CHECK(slurp(dir.file("out1.txt") + ".err").find("executions 40") !=
        std::string::npos);

  REQUIRE(run_cli("train --data " + dir.file("data.jsonl") + " --config " +
                  dir.file("conf.ini") + " --agents " + dir.file("conf.ini") +
                  " --crm oracle --backend simulated --seed 1 --top-k 4 --db " +
                  dir.file("db.json"),
                  dir.file("out2.txt")) == 0);
  CHECK(slurp(dir.file("out2.txt") + ".err").find("executions 80") !=
        std::string::npos);
}

TEST_CASE("cli: runtime failures exit 2") {
  TempDir dir;
  CHECK(run_cli("agents --db " + dir.file("missing.json")) == 2);
  spit(dir.file("corrupt.json"), "{not a snapshot");
  CHECK(run_cli("agents --db " + dir.file("corrupt.json")) == 2);
  spit(dir.file("bad_version.json"),
       "{\"version\": \"agent-db/999\", \"agents\": [], \"total_selections\": 0}");
  CHECK(run_cli("agents --db " + dir.file("bad_version.json")) == 2);
}
