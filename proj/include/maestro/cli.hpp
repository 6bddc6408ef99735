#pragma once

#include <cstdint>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include <CLI11.hpp>

#include "maestro/agent_db.hpp"
#include "maestro/errors.hpp"
#include "maestro/orchestrator.hpp"
#include "maestro/synthesis.hpp"

namespace maestro {
namespace cli {

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorCode::IoError, "cannot read " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(ErrorCode::IoError, "cannot write " + path);
  out << content;
}

inline std::map<std::string, SimulatedAgentSpec> load_sim_agents(
    const std::string& text) {
  nlohmann::json doc = nlohmann::json::parse(text, nullptr, false);
  if (doc.is_discarded() || !doc.is_array()) {
    raise(ErrorCode::ParseError, "simulated agent spec must be a JSON array");
  }
  std::map<std::string, SimulatedAgentSpec> specs;
  for (const auto& item : doc) {
    SimulatedAgentSpec spec;
    spec.agent_id = item.at("agent_id").get<std::string>();
    for (const auto& [domain, p] : item.at("skill").items()) {
      const double prob = p.get<double>();
      if (!(prob >= 0.0 && prob <= 1.0)) {
        raise(ErrorCode::ConfigError, "skill probability " + render_double(prob) +
                                          " for agent " + spec.agent_id);
      }
      spec.skill[domain] = prob;
    }
    spec.cost_tokens = item.value("cost_tokens", 400.0);
    spec.noise_scale = item.value("noise_scale", 0.5);
    specs[spec.agent_id] = spec;
  }
  return specs;
}

// [run] section of a config file, raw key -> value.
using RunSection = std::map<std::string, std::string>;

inline RunSection load_run_section(const std::string& path) {
  RunSection section;
  for (const auto& sec : detail::parse_ini(read_file(path))) {
    if (sec.name != "run") continue;
    for (const auto& [key, value] : sec.entries) section[key] = value;
  }
  return section;
}

/// Options shared by train and infer; resolution order is flags over config
/// file over environment over defaults.
struct PipelineOptions {
  std::string data_path;
  std::string agents_path;
  std::string db_in;
  std::string db_out;
  std::string results_path;
  std::string curve_path;
  std::string config_path;
  std::string sim_agents_path;
  std::string crm = "oracle";
  std::string backend = "simulated";
  std::string strategy = "full";
  std::string similarity_mode = "heaviside";
  std::string selection_scope = "global";
  std::string embed_mode = "hash";
  std::string chat_url;
  std::string reward_url;
  std::string decomposer_url;
  std::string decomposer_model = "decomposer";
  std::uint64_t seed = 0;
  int parallel = 1;
  int top_k = 3;
  int embed_dim = 256;
  double v_th = 0.6;
  double beta = 1.0;
  double c_explore = 0.3;
  double epsilon = 1e-6;
  double similarity_weight = 0.6;
  double reputation_weight = 1.0;
  double cost_weight = 1.0;
  double token_scale = 10000.0;
  double tolerance = 1e-2;
  bool use_decomposer = false;
  bool embed_node_text = false;

  void add_flags(CLI::App* cmd, bool inference) {
    cmd->add_option("--data", data_path, "dataset JSON-lines file")->required();
    if (inference) {
      cmd->add_option("--db", db_in, "trained database snapshot")->required();
      cmd->add_option("--out", results_path, "results JSON-lines output");
    } else {
      cmd->add_option("--agents", agents_path, "agent pool (INI or JSON)");
      cmd->add_option("--db", db_out, "database snapshot output")->required();
      cmd->add_option("--db-in", db_in, "resume from an existing snapshot");
      cmd->add_option("--curve", curve_path, "training curve CSV output");
      cmd->add_option("--crm", crm, "reward source")
          ->check(CLI::IsMember({"rule", "model", "oracle"}));
    }
    cmd->add_option("--config", config_path, "config file with a [run] section");
    cmd->add_option("--backend", backend, "agent execution backend")
        ->check(CLI::IsMember({"llm", "simulated"}));
    cmd->add_option("--sim-agents", sim_agents_path,
                    "simulated agent spec JSON");
    cmd->add_option("--strategy", strategy, "selection strategy")
        ->check(CLI::IsMember({"full", "greedy", "random"}));
    cmd->add_option("--seed", seed, "run seed");
    cmd->add_option("--parallel", parallel, "max concurrent frontier nodes");
    cmd->add_option("--top-k", top_k, "coarse search candidate count");
    cmd->add_option("--v-th", v_th, "similarity threshold");
    cmd->add_option("--beta", beta, "cost trade-off");
    cmd->add_option("--c-explore", c_explore, "UCB exploration constant");
    cmd->add_option("--epsilon", epsilon, "UCB epsilon");
    cmd->add_option("--similarity-mode", similarity_mode, "heaviside|weighted")
        ->check(CLI::IsMember({"heaviside", "weighted"}));
    cmd->add_option("--similarity-weight", similarity_weight, "weighted-mode factor");
    cmd->add_option("--reputation-weight", reputation_weight, "reward weight");
    cmd->add_option("--cost-weight", cost_weight, "cost weight");
    cmd->add_option("--selection-scope", selection_scope,
                    "N scope for the exploration term: global|task")
        ->check(CLI::IsMember({"global", "task"}));
    cmd->add_option("--token-scale", token_scale, "tokens per cost unit");
    cmd->add_option("--tolerance", tolerance, "relative grading tolerance");
    cmd->add_option("--embed", embed_mode, "embedding provider")
        ->check(CLI::IsMember({"hash", "endpoint"}));
    cmd->add_option("--embed-dim", embed_dim, "embedding dimension");
    cmd->add_flag("--embed-text", embed_node_text,
                  "embed the subtask text instead of its target profile");
    cmd->add_flag("--decompose", use_decomposer,
                  "decompose via the endpoint model instead of the dataset DAG");
    cmd->add_option("--chat-url", chat_url, "chat endpoint base URL");
    cmd->add_option("--reward-url", reward_url, "reward endpoint base URL");
    cmd->add_option("--decomposer-url", decomposer_url,
                    "decomposer endpoint base URL");
    cmd->add_option("--decomposer-model", decomposer_model, "decomposer model");
  }

  /// Applies [run] keys under any flags the user did not pass explicitly.
  void apply_config(const CLI::App* cmd) {
    if (config_path.empty()) return;
    RunSection section = load_run_section(config_path);
    auto set_if_default = [&](const char* flag, const char* key, auto& slot) {
      auto it = section.find(key);
      if (it == section.end()) return;
      const CLI::Option* opt = cmd->get_option_no_throw(flag);
      if (opt && opt->count() > 0) return;  // explicit flag wins
      if constexpr (std::is_same_v<std::decay_t<decltype(slot)>, std::string>) {
        slot = it->second;
      } else {
        std::istringstream stream(it->second);
        stream >> slot;
        if (stream.fail()) {
          raise(ErrorCode::ConfigError,
                std::string("bad value for ") + key + ": " + it->second);
        }
      }
    };
    set_if_default("--crm", "crm", crm);
    set_if_default("--backend", "backend", backend);
    set_if_default("--strategy", "strategy", strategy);
    set_if_default("--seed", "seed", seed);
    set_if_default("--parallel", "max_parallel_nodes", parallel);
    set_if_default("--top-k", "top_k", top_k);
    set_if_default("--v-th", "v_th", v_th);
    set_if_default("--beta", "beta", beta);
    set_if_default("--c-explore", "c_explore", c_explore);
    set_if_default("--epsilon", "epsilon", epsilon);
    set_if_default("--similarity-mode", "similarity_mode", similarity_mode);
    set_if_default("--similarity-weight", "similarity_weight", similarity_weight);
    set_if_default("--reputation-weight", "reputation_weight", reputation_weight);
    set_if_default("--cost-weight", "cost_weight", cost_weight);
    set_if_default("--selection-scope", "selection_scope", selection_scope);
    set_if_default("--token-scale", "token_scale", token_scale);
    set_if_default("--tolerance", "grading_rel_tolerance", tolerance);
    set_if_default("--embed", "embed_mode", embed_mode);
    set_if_default("--embed-dim", "embed_dim", embed_dim);
    set_if_default("--sim-agents", "sim_agents", sim_agents_path);
    set_if_default("--chat-url", "chat_base_url", chat_url);
    set_if_default("--reward-url", "reward_base_url", reward_url);
    set_if_default("--decomposer-url", "decomposer_base_url", decomposer_url);
    set_if_default("--decomposer-model", "decomposer_model", decomposer_model);
    set_if_default("--decompose", "use_decomposer", use_decomposer);
    set_if_default("--embed-text", "embed_node_text", embed_node_text);
    if (agents_path.empty() && section.count("agents")) {
      agents_path = section.at("agents");
    }
  }

  RunConfig to_run_config(RunMode mode) const {
    RunConfig cfg;
    cfg.mode = mode;
    cfg.crm = crm == "rule"    ? CrmKind::rule
              : crm == "model" ? CrmKind::model
                               : CrmKind::oracle;
    cfg.backend = backend == "llm" ? BackendKind::llm : BackendKind::simulated;
    cfg.strategy = strategy == "greedy"   ? SelectionStrategy::greedy
                   : strategy == "random" ? SelectionStrategy::random
                                          : SelectionStrategy::full;
    cfg.seed = seed;
    cfg.max_parallel_nodes = parallel;
    cfg.token_scale = token_scale;
    cfg.grading_rel_tolerance = tolerance;
    cfg.use_decomposer = use_decomposer;
    cfg.embed_node_text = embed_node_text;
    cfg.params.top_k = top_k;
    cfg.params.v_th = v_th;
    cfg.params.beta = beta;
    cfg.params.c_explore = c_explore;
    cfg.params.epsilon = epsilon;
    cfg.params.similarity_weight = similarity_weight;
    cfg.params.reputation_weight = reputation_weight;
    cfg.params.cost_weight = cost_weight;
    cfg.params.similarity_mode = similarity_mode == "weighted"
                                     ? SimilarityMode::weighted
                                     : SimilarityMode::heaviside;
    cfg.params.selection_scope = selection_scope == "task"
                                     ? SelectionScope::task_count
                                     : SelectionScope::global_count;
    cfg.chat.base_url = chat_url;
    cfg.reward_endpoint.base_url =
        !reward_url.empty()
            ? reward_url
            : maestro::detail::env_or("MAESTRO_REWARD_BASE_URL", "");
    cfg.decomposer_endpoint.base_url =
        !decomposer_url.empty()
            ? decomposer_url
            : maestro::detail::env_or("MAESTRO_DECOMPOSER_BASE_URL", "");
    cfg.decomposer_model = decomposer_model;
    if (embed_mode == "endpoint") {
      EmbeddingEndpoint ep;
      ep.base_url = maestro::detail::env_or("MAESTRO_EMBED_BASE_URL", "");
      cfg.embedding = EmbeddingProvider::endpoint(ep, embed_dim);
    } else {
      cfg.embedding = EmbeddingProvider::local_hash(embed_dim);
    }
    if (!sim_agents_path.empty()) {
      cfg.sim_agents = load_sim_agents(read_file(sim_agents_path));
    }
    return cfg;
  }
};

inline int run_synth(const std::string& pool_path, int easy, int medium,
                     int hard, std::uint64_t seed, const std::string& out_path,
                     const std::string& agg) {
  std::ifstream pool_in(pool_path);
  if (!pool_in) raise(ErrorCode::IoError, "cannot read " + pool_path);
  auto pool = load_pool(pool_in);
  std::ostringstream out;
  synthesize_dataset(pool, easy, medium, hard, seed, out,
                     agg == "sum" ? AggregateMode::sum : AggregateMode::product);
  write_file(out_path, out.str());
  std::cerr << "wrote " << (easy + medium + hard) << " tasks to " << out_path
            << " (pool: " << pool.size() << " usable items)\n";
  return 0;
}

inline AgentDb load_agent_db(const PipelineOptions& opts,
                             const EmbeddingProvider& embedding) {
  if (!opts.db_in.empty()) {
    return AgentDb::restore(read_file(opts.db_in));
  }
  if (opts.agents_path.empty()) {
    raise(ErrorCode::ConfigError, "need --agents or --db-in");
  }
  return AgentDb::load(read_file(opts.agents_path), embedding.as_fn());
}

inline int run_train(PipelineOptions& opts) {
  RunConfig cfg = opts.to_run_config(RunMode::train);
  AgentDb db = load_agent_db(opts, cfg.embedding);
  std::ifstream data_in(opts.data_path);
  if (!data_in) raise(ErrorCode::IoError, "cannot read " + opts.data_path);
  auto dataset = load_dataset(data_in);
  Orchestrator engine(db, cfg);
  RunStats stats = engine.run_training(dataset);
  write_file(opts.db_out, db.snapshot());
  if (!opts.curve_path.empty()) {
    std::ostringstream curve;
    write_curve(stats.curve, curve);
    write_file(opts.curve_path, curve.str());
  }
  std::cerr << "trained on " << stats.tasks_seen << " tasks, accuracy "
            << render_double(stats.accuracy) << ", executions "
            << stats.executions << ", N " << stats.selections_N
            << ", snapshot " << opts.db_out << "\n";
  return 0;
}

inline int run_infer(PipelineOptions& opts) {
  RunConfig cfg = opts.to_run_config(RunMode::infer);
  AgentDb db = load_agent_db(opts, cfg.embedding);
  std::ifstream data_in(opts.data_path);
  if (!data_in) raise(ErrorCode::IoError, "cannot read " + opts.data_path);
  auto dataset = load_dataset(data_in);
  Orchestrator engine(db, cfg);
  std::vector<ResultLine> results;
  RunStats stats = engine.run_inference(dataset, &results);
  std::ostringstream out;
  write_results(results, out);
  if (opts.results_path.empty()) {
    std::cout << out.str();
  } else {
    write_file(opts.results_path, out.str());
  }
  std::cerr << "inferred " << stats.tasks_seen << " tasks, accuracy "
            << render_double(stats.accuracy) << ", executions "
            << stats.executions << ", tokens " << stats.total_tokens << "\n";
  return 0;
}

inline int run_eval(const std::string& results_path,
                    const std::string& data_path,
                    const std::string& out_path) {
  std::ifstream results_in(results_path);
  if (!results_in) raise(ErrorCode::IoError, "cannot read " + results_path);
  auto results = load_results(results_in);
  std::ifstream data_in(data_path);
  if (!data_in) raise(ErrorCode::IoError, "cannot read " + data_path);
  auto dataset = load_dataset(data_in);
  EvalReport report = evaluate(results, dataset);
  const std::string rendered = report_to_json(report).dump(2) + "\n";
  if (out_path.empty()) {
    std::cout << rendered;
  } else {
    write_file(out_path, rendered);
  }
  return 0;
}

/// Per-agent table: id, model, role, R, C, n sorted by average reward.
inline int run_agents_inspect(const std::string& db_path) {
  AgentDb db = AgentDb::restore(read_file(db_path));
  std::vector<const AgentProfile*> rows;
  for (const auto& agent : db.agents()) rows.push_back(&agent);
  std::sort(rows.begin(), rows.end(),
            [](const AgentProfile* a, const AgentProfile* b) {
              if (a->dynamic_profile.avg_reward != b->dynamic_profile.avg_reward) {
                return a->dynamic_profile.avg_reward > b->dynamic_profile.avg_reward;
              }
              return a->static_profile.agent_id < b->static_profile.agent_id;
            });
  std::cout << "agent_id\tmodel\trole\tavg_reward\tavg_cost\tcount\n";
  for (const AgentProfile* agent : rows) {
    std::cout << agent->static_profile.agent_id << "\t"
              << agent->static_profile.base_model << "\t"
              << agent->static_profile.role << "\t"
              << render_double(agent->dynamic_profile.avg_reward) << "\t"
              << render_double(agent->dynamic_profile.avg_cost) << "\t"
              << agent->dynamic_profile.count << "\n";
  }
  std::cout << "total_selections\t" << db.total_selections() << "\n";
  return 0;
}

inline int cli_main(int argc, const char* const* argv) {
  CLI::App app{"Task-graph orchestration engine with learned agent routing"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand(
      "synth", "Synthesize a composite-task dataset from a QA pool");
  std::string pool_path, synth_out, agg = "product";
  int easy = 0, medium = 0, hard = 0;
  std::uint64_t synth_seed = 0;
  synth->add_option("--pool", pool_path, "QA pool JSON-lines file")->required();
  synth->add_option("--easy", easy, "number of 3-subtask tasks");
  synth->add_option("--medium", medium, "number of 5-subtask tasks");
  synth->add_option("--hard", hard, "number of 7-subtask tasks");
  synth->add_option("--seed", synth_seed, "master seed");
  synth->add_option("--out", synth_out, "dataset output path")->required();
  synth->add_option("--agg", agg, "sink aggregation")
      ->check(CLI::IsMember({"product", "sum"}));

  // train / infer
  auto* train = app.add_subcommand("train", "Learn agent statistics from rewards");
  PipelineOptions train_opts;
  train_opts.add_flags(train, false);
  auto* infer = app.add_subcommand("infer", "Solve tasks with a trained database");
  PipelineOptions infer_opts;
  infer_opts.add_flags(infer, true);

  // eval
  auto* eval = app.add_subcommand("eval", "Score a results file against a dataset");
  std::string eval_results, eval_data, eval_out;
  eval->add_option("--results", eval_results, "results JSON-lines file")->required();
  eval->add_option("--data", eval_data, "dataset JSON-lines file")->required();
  eval->add_option("--out", eval_out, "report output path (default stdout)");

  // agents
  auto* agents = app.add_subcommand("agents", "Inspect a database snapshot");
  std::string agents_db;
  agents->add_option("--db", agents_db, "database snapshot")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (synth->parsed()) {
      return run_synth(pool_path, easy, medium, hard, synth_seed, synth_out, agg);
    }
    if (train->parsed()) {
      train_opts.apply_config(train);
      return run_train(train_opts);
    }
    if (infer->parsed()) {
      infer_opts.apply_config(infer);
      return run_infer(infer_opts);
    }
    if (eval->parsed()) {
      return run_eval(eval_results, eval_data, eval_out);
    }
    if (agents->parsed()) {
      return run_agents_inspect(agents_db);
    }
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace cli
}  // namespace maestro
