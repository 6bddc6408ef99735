#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "maestro/errors.hpp"

namespace maestro {

struct StaticProfile {
  std::string agent_id;
  std::string base_model;
  std::string role;
  std::string prompt;
  std::vector<std::string> tools;
  std::vector<double> profile_embedding;  // unit norm
};

/// Learned statistics: average reward R(a), average cost C(a), count n(a).
struct DynamicProfile {
  double avg_reward = 0.5;  // neutral prior before any observation
  double avg_cost = 0.0;
  long count = 0;
};

enum class SimilarityMode { heaviside, weighted };
enum class SelectionScope { global_count, task_count };

struct SelectionParams {
  double v_th = 0.6;
  double beta = 1.0;
  double c_explore = 0.3;
  double epsilon = 1e-6;
  int top_k = 3;
  double similarity_weight = 0.6;
  double reputation_weight = 1.0;
  double cost_weight = 1.0;
  SimilarityMode similarity_mode = SimilarityMode::heaviside;
  SelectionScope selection_scope = SelectionScope::global_count;

  void validate() const {
    if (v_th < -1.0 || v_th > 1.0) {
      raise(ErrorCode::ConfigError, "v_th must lie in [-1, 1]");
    }
    if (top_k < 1) raise(ErrorCode::ConfigError, "top_k must be >= 1");
    if (epsilon <= 0.0) raise(ErrorCode::ConfigError, "epsilon must be > 0");
  }
};

struct AgentProfile {
  StaticProfile static_profile;
  DynamicProfile dynamic_profile;
};

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) {
    raise(ErrorCode::DimensionMismatch,
          std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Task-agent similarity gate. Heaviside mode admits (1) or rejects (0) by
/// threshold; weighted mode scales the clamped cosine instead.
inline double similarity(const std::vector<double>& task_embedding,
                         const StaticProfile& agent,
                         const SelectionParams& params) {
  const double cos = dot(task_embedding, agent.profile_embedding);
  if (params.similarity_mode == SimilarityMode::heaviside) {
    return cos >= params.v_th ? 1.0 : 0.0;
  }
  return params.similarity_weight * std::max(0.0, cos);
}

/// Historical performance net of cost. With unit weights this is R - beta*C.
inline double perform(const DynamicProfile& agent, const SelectionParams& params) {
  return params.reputation_weight * agent.avg_reward -
         params.beta * params.cost_weight * agent.avg_cost;
}

/// Preliminary quality score: similarity times performance. May be negative.
inline double quality_score(const AgentProfile& agent,
                            const std::vector<double>& task_embedding,
                            const SelectionParams& params) {
  return similarity(task_embedding, agent.static_profile, params) *
         perform(agent.dynamic_profile, params);
}

/// Running-average reward update; increments the observation count.
inline DynamicProfile update_reward(DynamicProfile agent, double r) {
  if (!(r >= 0.0 && r <= 1.0)) {
    raise(ErrorCode::RewardOutOfRange, "reward " + std::to_string(r));
  }
  const double n = static_cast<double>(agent.count);
  agent.avg_reward = (n * agent.avg_reward + r) / (n + 1.0);
  agent.count += 1;
  return agent;
}

/// Running-average cost update over the pre-update count. Call before
/// update_reward so both averages advance over the same count.
inline DynamicProfile update_cost(DynamicProfile agent, double cost) {
  if (!(cost >= 0.0)) {
    raise(ErrorCode::NegativeCost, "cost " + std::to_string(cost));
  }
  const double n = static_cast<double>(agent.count);
  agent.avg_cost = (n * agent.avg_cost + cost) / (n + 1.0);
  return agent;
}

using EmbedFn = std::function<std::vector<double>(const std::string&)>;

namespace detail {

struct IniSection {
  std::string name;
  std::vector<std::pair<std::string, std::string>> entries;
};

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<IniSection> parse_ini(const std::string& text) {
  std::vector<IniSection> sections;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    std::string line = trim(text.substr(pos, eol - pos));
    pos = eol + 1;
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[' && line.back() == ']') {
      sections.push_back({trim(line.substr(1, line.size() - 2)), {}});
      continue;
    }
    std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      raise(ErrorCode::ParseError, "expected key = value, got: " + line);
    }
    if (sections.empty()) {
      raise(ErrorCode::ParseError, "key outside any [section]: " + line);
    }
    sections.back().entries.emplace_back(trim(line.substr(0, eq)),
                                         trim(line.substr(eq + 1)));
  }
  return sections;
}

inline std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos < s.size()) {
    std::size_t comma = s.find(',', pos);
    if (comma == std::string::npos) comma = s.size();
    std::string item = trim(s.substr(pos, comma - pos));
    if (!item.empty()) out.push_back(item);
    pos = comma + 1;
  }
  return out;
}

}  // namespace detail

/// The Dynamic Agent Database. Static profiles are fixed at load time;
/// dynamic profiles and the global selection count N evolve during training.
/// Reads may run concurrently; each reward+cost update is atomic.
class AgentDb {
 public:
  AgentDb() = default;

  AgentDb(const AgentDb& other) { copy_from(other); }
  AgentDb& operator=(const AgentDb& other) {
    if (this != &other) copy_from(other);
    return *this;
  }

  static AgentDb load(const std::string& document, const EmbedFn& embed) {
    nlohmann::json doc = nlohmann::json::parse(document, nullptr, false);
    if (!doc.is_discarded() && doc.is_array()) {
      return load_json(doc, embed);
    }
    return load_ini(document, embed);
  }

  static AgentDb load_json(const nlohmann::json& doc, const EmbedFn& embed) {
    AgentDb db;
    for (const auto& item : doc) {
      StaticProfile p;
      if (!item.contains("agent_id")) {
        raise(ErrorCode::MissingField, "agent_id");
      }
      p.agent_id = item.at("agent_id").get<std::string>();
      for (const char* field : {"base_model", "role", "prompt"}) {
        if (!item.contains(field)) {
          raise(ErrorCode::MissingField,
                std::string(field) + " in agent " + p.agent_id);
        }
      }
      p.base_model = item.at("base_model").get<std::string>();
      p.role = item.at("role").get<std::string>();
      p.prompt = item.at("prompt").get<std::string>();
      if (item.contains("tools")) {
        p.tools = item.at("tools").get<std::vector<std::string>>();
      }
      db.add_agent(std::move(p), embed);
    }
    db.finish_load();
    return db;
  }

  /// INI format: one [agent_id] section per agent with model/role/prompt
  /// keys. A [run] section (pipeline configuration) is not an agent.
  static AgentDb load_ini(const std::string& text, const EmbedFn& embed) {
    AgentDb db;
    for (const auto& section : detail::parse_ini(text)) {
      if (section.name == "run") continue;
      StaticProfile p;
      p.agent_id = section.name;
      for (const auto& [key, value] : section.entries) {
        if (key == "model") p.base_model = value;
        else if (key == "role") p.role = value;
        else if (key == "prompt") p.prompt = value;
        else if (key == "tools") p.tools = detail::split_csv(value);
        // other keys ignored
      }
      if (p.base_model.empty()) {
        raise(ErrorCode::MissingField, "model in agent " + p.agent_id);
      }
      if (p.role.empty()) {
        raise(ErrorCode::MissingField, "role in agent " + p.agent_id);
      }
      if (p.prompt.empty()) {
        raise(ErrorCode::MissingField, "prompt in agent " + p.agent_id);
      }
      db.add_agent(std::move(p), embed);
    }
    db.finish_load();
    return db;
  }

  void add_agent(StaticProfile profile, const EmbedFn& embed) {
    if (index_.count(profile.agent_id)) {
      raise(ErrorCode::DuplicateAgentId, profile.agent_id);
    }
    if (profile.profile_embedding.empty() && embed) {
      // Only role and prompt text participate in similarity.
      profile.profile_embedding = embed(profile.role + "\n" + profile.prompt);
    }
    check_unit_norm(profile);
    index_[profile.agent_id] = agents_.size();
    agents_.push_back({std::move(profile), DynamicProfile{}});
  }

  std::size_t size() const { return agents_.size(); }
  bool empty() const { return agents_.empty(); }

  /// Agents in insertion order (load order is the canonical order).
  const std::vector<AgentProfile>& agents() const { return agents_; }

  const AgentProfile& at(const std::string& agent_id) const {
    auto it = index_.find(agent_id);
    if (it == index_.end()) {
      raise(ErrorCode::MissingField, "unknown agent " + agent_id);
    }
    return agents_[it->second];
  }

  DynamicProfile dynamic(const std::string& agent_id) const {
    std::shared_lock lock(mutex_);
    return at(agent_id).dynamic_profile;
  }

  /// Total number of agent selections N feeding the exploration term.
  long total_selections() const {
    std::shared_lock lock(mutex_);
    return total_selections_;
  }

  /// Atomic reward+cost observation for one agent. The cost average advances
  /// over the pre-update count, then the reward update bumps the count.
  void apply_update(const std::string& agent_id, double reward, double cost) {
    std::unique_lock lock(mutex_);
    auto it = index_.find(agent_id);
    if (it == index_.end()) {
      raise(ErrorCode::MissingField, "unknown agent " + agent_id);
    }
    DynamicProfile& d = agents_[it->second].dynamic_profile;
    d = update_reward(update_cost(d, cost), reward);
  }

  void add_selections(long k) {
    std::unique_lock lock(mutex_);
    total_selections_ += k;
  }

  static constexpr const char* kSnapshotVersion = "agent-db/1";

  std::string snapshot() const {
    std::shared_lock lock(mutex_);
    nlohmann::json agents = nlohmann::json::array();
    for (const auto& a : agents_) {
      agents.push_back({
          {"agent_id", a.static_profile.agent_id},
          {"base_model", a.static_profile.base_model},
          {"role", a.static_profile.role},
          {"prompt", a.static_profile.prompt},
          {"tools", a.static_profile.tools},
          {"profile_embedding", a.static_profile.profile_embedding},
          {"avg_reward", a.dynamic_profile.avg_reward},
          {"avg_cost", a.dynamic_profile.avg_cost},
          {"count", a.dynamic_profile.count},
      });
    }
    nlohmann::json doc = {{"version", kSnapshotVersion},
                          {"total_selections", total_selections_},
                          {"agents", agents}};
    return doc.dump();
  }

  static AgentDb restore(const std::string& document) {
    nlohmann::json doc = nlohmann::json::parse(document, nullptr, false);
    if (doc.is_discarded() || !doc.is_object() || !doc.contains("agents")) {
      raise(ErrorCode::ParseError, "malformed snapshot");
    }
    if (doc.value("version", std::string()) != kSnapshotVersion) {
      raise(ErrorCode::VersionMismatch,
            "expected " + std::string(kSnapshotVersion) + ", got '" +
                doc.value("version", std::string("<missing>")) + "'");
    }
    AgentDb db;
    try {
      for (const auto& item : doc.at("agents")) {
        StaticProfile p;
        p.agent_id = item.at("agent_id").get<std::string>();
        p.base_model = item.at("base_model").get<std::string>();
        p.role = item.at("role").get<std::string>();
        p.prompt = item.at("prompt").get<std::string>();
        p.tools = item.at("tools").get<std::vector<std::string>>();
        p.profile_embedding = item.at("profile_embedding").get<std::vector<double>>();
        DynamicProfile d;
        d.avg_reward = item.at("avg_reward").get<double>();
        d.avg_cost = item.at("avg_cost").get<double>();
        d.count = item.at("count").get<long>();
        db.add_agent(std::move(p), nullptr);
        db.agents_.back().dynamic_profile = d;
      }
      db.total_selections_ = doc.at("total_selections").get<long>();
    } catch (const nlohmann::json::exception& ex) {
      raise(ErrorCode::ParseError, ex.what());
    }
    db.finish_load();
    return db;
  }

 private:
  void finish_load() const {
    if (agents_.empty()) {
      raise(ErrorCode::EmptyDatabase, "no agents defined");
    }
  }

  static void check_unit_norm(const StaticProfile& p) {
    if (p.profile_embedding.empty()) return;
    double norm2 = 0.0;
    for (double v : p.profile_embedding) norm2 += v * v;
    if (std::abs(std::sqrt(norm2) - 1.0) > 1e-6) {
      raise(ErrorCode::DimensionMismatch,
            "profile embedding of " + p.agent_id + " is not unit norm");
    }
  }

  void copy_from(const AgentDb& other) {
    std::shared_lock lock(other.mutex_);
    agents_ = other.agents_;
    index_ = other.index_;
    total_selections_ = other.total_selections_;
  }

  std::vector<AgentProfile> agents_;
  std::map<std::string, std::size_t> index_;
  long total_selections_ = 0;
  mutable std::shared_mutex mutex_;
};

}  // namespace maestro
