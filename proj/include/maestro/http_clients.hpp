#pragma once

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "maestro/backends.hpp"
#include "maestro/errors.hpp"
#include "maestro/reward.hpp"
#include "maestro/task_graph.hpp"

namespace maestro {

/// Chat-completion wire endpoint. Base URL and key resolve from explicit
/// fields first, then MAESTRO_<PROVIDER>_BASE_URL / _API_KEY, then
/// MAESTRO_CHAT_BASE_URL / _API_KEY.
struct ChatEndpoint {
  std::string base_url;
  std::string path = "/v1/chat/completions";
  std::string api_key;
  double temperature = 0.0;
  int max_retries = 2;
  int timeout_seconds = 60;
  int max_in_flight = 8;  // process-wide cap on concurrent chat requests
};

namespace detail {

// Process-wide gate bounding concurrent outbound chat requests.
class InFlightGate {
 public:
  void acquire(int limit) {
    std::unique_lock lock(mutex_);
    cv_.wait(lock, [&] { return active_ < std::max(1, limit); });
    ++active_;
  }
  void release() {
    {
      std::lock_guard lock(mutex_);
      --active_;
    }
    cv_.notify_one();
  }
  static InFlightGate& instance() {
    static InFlightGate gate;
    return gate;
  }

 private:
  std::mutex mutex_;
  std::condition_variable cv_;
  int active_ = 0;
};

struct InFlightTicket {
  explicit InFlightTicket(int limit) { InFlightGate::instance().acquire(limit); }
  ~InFlightTicket() { InFlightGate::instance().release(); }
  InFlightTicket(const InFlightTicket&) = delete;
  InFlightTicket& operator=(const InFlightTicket&) = delete;
};

}  // namespace detail

namespace detail {

inline std::string provider_env_name(const std::string& model,
                                     const char* suffix) {
  std::string name = "MAESTRO_";
  for (char c : model) {
    name += std::isalnum(static_cast<unsigned char>(c))
                ? static_cast<char>(std::toupper(static_cast<unsigned char>(c)))
                : '_';
  }
  name += suffix;
  return name;
}

inline std::string env_or(const std::string& name, const std::string& fallback) {
  const char* v = std::getenv(name.c_str());
  return v ? std::string(v) : fallback;
}

inline httplib::Client make_client(const std::string& base_url, int timeout_seconds) {
  httplib::Client client(base_url);
  client.set_connection_timeout(timeout_seconds, 0);
  client.set_read_timeout(timeout_seconds, 0);
  client.set_write_timeout(timeout_seconds, 0);
  return client;
}

}  // namespace detail

inline ChatEndpoint resolve_chat_endpoint(ChatEndpoint ep, const std::string& model) {
  if (ep.base_url.empty()) {
    ep.base_url = detail::env_or(
        detail::provider_env_name(model, "_BASE_URL"),
        detail::env_or("MAESTRO_CHAT_BASE_URL", ""));
  }
  if (ep.api_key.empty()) {
    ep.api_key = detail::env_or(detail::provider_env_name(model, "_API_KEY"),
                                detail::env_or("MAESTRO_CHAT_API_KEY", ""));
  }
  return ep;
}

/// One chat call with bounded retries; after the retry budget the failure is
/// reported in the result rather than thrown.
inline ExecutionResult execute_llm(const ChatEndpoint& endpoint,
                                   const StaticProfile& agent,
                                   const std::string& prompt) {
  ChatEndpoint ep = resolve_chat_endpoint(endpoint, agent.base_model);
  ExecutionResult result;
  if (ep.base_url.empty()) {
    result.error = "EndpointUnreachable: no base URL configured for model " +
                   agent.base_model;
    return result;
  }
  const nlohmann::json body = {
      {"model", agent.base_model},
      {"messages",
       {{{"role", "system"}, {"content", agent.prompt}},
        {{"role", "user"}, {"content", prompt}}}},
      {"temperature", ep.temperature},
  };
  const std::string payload = body.dump();
  httplib::Headers headers;
  if (!ep.api_key.empty()) {
    headers.emplace("Authorization", "Bearer " + ep.api_key);
  }
  const auto started = std::chrono::steady_clock::now();
  detail::InFlightTicket ticket(ep.max_in_flight);
  std::string last_error = "Timeout";
  for (int attempt = 0; attempt <= ep.max_retries; ++attempt) {
    auto client = detail::make_client(ep.base_url, ep.timeout_seconds);
    auto res = client.Post(ep.path, headers, payload, "application/json");
    if (!res) {
      last_error = "Timeout: no response";
      continue;
    }
    if (res->status != 200) {
      last_error = "HttpError: status " + std::to_string(res->status);
      continue;
    }
    nlohmann::json doc = nlohmann::json::parse(res->body, nullptr, false);
    if (doc.is_discarded() || !doc.contains("choices") ||
        doc["choices"].empty() ||
        !doc["choices"][0].contains("message")) {
      last_error = "MalformedResponse: " + res->body.substr(0, 200);
      continue;
    }
    result.answer_text =
        doc["choices"][0]["message"].value("content", std::string());
    if (doc.contains("usage")) {
      result.tokens = doc["usage"].value("prompt_tokens", 0) +
                      doc["usage"].value("completion_tokens", 0);
    }
    result.latency = std::chrono::duration<double>(
                         std::chrono::steady_clock::now() - started)
                         .count();
    result.ok = true;
    return result;
  }
  result.latency = std::chrono::duration<double>(
                       std::chrono::steady_clock::now() - started)
                       .count();
  result.error = last_error;
  return result;
}

/// Embedding wire endpoint: {model, input:[text]} -> {data:[{embedding}]}.
struct EmbeddingEndpoint {
  std::string base_url;
  std::string path = "/v1/embeddings";
  std::string api_key;
  std::string model = "text-embedding";
  int timeout_seconds = 30;
};

inline std::vector<double> embed_via_endpoint(const EmbeddingEndpoint& endpoint,
                                              const std::string& text) {
  if (text.empty()) raise(ErrorCode::EmptyText, "cannot embed empty text");
  auto client = detail::make_client(endpoint.base_url, endpoint.timeout_seconds);
  httplib::Headers headers;
  if (!endpoint.api_key.empty()) {
    headers.emplace("Authorization", "Bearer " + endpoint.api_key);
  }
  const nlohmann::json body = {{"model", endpoint.model},
                               {"input", std::vector<std::string>{text}}};
  auto res = client.Post(endpoint.path, headers, body.dump(), "application/json");
  if (!res || res->status != 200) {
    raise(ErrorCode::EndpointUnreachable,
          "embedding endpoint " + endpoint.base_url);
  }
  nlohmann::json doc = nlohmann::json::parse(res->body, nullptr, false);
  if (doc.is_discarded() || !doc.contains("data") || doc["data"].empty() ||
      !doc["data"][0].contains("embedding")) {
    raise(ErrorCode::MalformedResponse, "embedding response");
  }
  return normalized(doc["data"][0]["embedding"].get<std::vector<double>>());
}

/// Embedding provider facade: deterministic local hashing or a remote model.
class EmbeddingProvider {
 public:
  static EmbeddingProvider local_hash(int dimension = 256) {
    EmbeddingProvider p;
    p.mode_ = EmbeddingMode::local_hash;
    p.dimension_ = dimension;
    return p;
  }

  static EmbeddingProvider endpoint(EmbeddingEndpoint ep, int dimension) {
    EmbeddingProvider p;
    p.mode_ = EmbeddingMode::endpoint;
    p.endpoint_ = std::move(ep);
    p.dimension_ = dimension;
    return p;
  }

  EmbeddingMode mode() const { return mode_; }
  int dimension() const { return dimension_; }

  std::vector<double> embed(const std::string& text) const {
    if (mode_ == EmbeddingMode::local_hash) {
      return hash_embedding(text, dimension_);
    }
    auto v = embed_via_endpoint(endpoint_, text);
    if (static_cast<int>(v.size()) != dimension_) {
      raise(ErrorCode::DimensionMismatch,
            "endpoint returned dimension " + std::to_string(v.size()));
    }
    return v;
  }

  EmbedFn as_fn() const {
    EmbeddingProvider copy = *this;
    return [copy](const std::string& text) { return copy.embed(text); };
  }

 private:
  EmbeddingMode mode_ = EmbeddingMode::local_hash;
  int dimension_ = 256;
  EmbeddingEndpoint endpoint_;
};

/// Scores an answer via the external reward service. Request carries the
/// agent profile, the subtask, the prior reasoning context and the answer.
inline RewardSignal model_reward(const RewardEndpoint& endpoint,
                                 const StaticProfile& agent,
                                 const SubtaskNode& node,
                                 const std::vector<ContextPair>& context,
                                 const std::string& answer_text) {
  auto client = detail::make_client(endpoint.base_url, endpoint.timeout_seconds);
  nlohmann::json ctx = nlohmann::json::array();
  for (const auto& pair : context) {
    ctx.push_back({{"question", pair.question}, {"answer", pair.answer}});
  }
  const nlohmann::json body = {
      {"agent_profile", agent.role + "\n" + agent.prompt},
      {"question", node.text},
      {"context", ctx},
      {"answer", answer_text},
  };
  auto res = client.Post(endpoint.path, body.dump(), "application/json");
  if (!res || res->status != 200) {
    raise(ErrorCode::EndpointUnreachable,
          "reward endpoint " + endpoint.base_url);
  }
  nlohmann::json doc = nlohmann::json::parse(res->body, nullptr, false);
  if (doc.is_discarded() || !doc.contains("score") ||
      !doc["score"].is_number()) {
    raise(ErrorCode::MalformedScore, "missing numeric score");
  }
  const double score = doc["score"].get<double>();
  if (score < 0.0 || score > 1.0) {
    raise(ErrorCode::MalformedScore, "score " + render_double(score) +
                                         " outside [0, 1]");
  }
  return RewardSignal{score, RewardKind::model, ""};
}

/// Client for the task-decomposition model: asks for the task-graph JSON
/// document and parses it. The decomposition model itself is external.
struct DecomposerClient {
  ChatEndpoint endpoint;
  std::string model = "decomposer";

  static std::string instruction() {
    return
        "Decompose the question below into a directed acyclic graph of "
        "subtasks. Respond with JSON only, in this exact schema: "
        "{\"nodes\": [{\"id\": <int>, \"text\": <string>, "
        "\"target_profile\": <string describing the expertise needed>, "
        "\"unknowns\": [<placeholder symbols like UNK_0 used in text>]}], "
        "\"edges\": [{\"from\": <int>, \"to\": <int>, "
        "\"relation_text\": <how the upstream answer feeds the downstream "
        "unknown, empty for pure ordering>}], \"final_node\": <int>}. "
        "Every placeholder must be defined by exactly one incoming edge, and "
        "the final node must aggregate the answer to the whole question.\n\n"
        "Question:\n";
  }

  TaskGraph decompose(const std::string& question) const {
    StaticProfile decomposer;
    decomposer.base_model = model;
    decomposer.prompt = "You decompose composite questions into subtask DAGs.";
    ExecutionResult res =
        execute_llm(endpoint, decomposer, instruction() + question);
    if (!res.ok) {
      raise(ErrorCode::EndpointUnreachable, "decomposer: " + res.error);
    }
    return parse_task_graph(strip_fences(res.answer_text));
  }

  static std::string strip_fences(const std::string& text) {
    // Models often wrap JSON in ``` fences; take the outermost braces.
    std::size_t open = text.find('{');
    std::size_t close = text.rfind('}');
    if (open == std::string::npos || close == std::string::npos || close < open) {
      return text;
    }
    return text.substr(open, close - open + 1);
  }
};

}  // namespace maestro
