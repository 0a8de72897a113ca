#pragma once

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "qachain/common.hpp"
#include "qachain/grammar.hpp"
#include "qachain/oracle.hpp"

namespace qachain {

struct ChatMessage {
  std::string role;  // system | user | assistant
  std::string content;

  bool operator==(const ChatMessage&) const = default;
};

inline nlohmann::ordered_json messages_to_json(const std::vector<ChatMessage>& msgs) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& m : msgs) {
    arr.push_back({{"role", m.role}, {"content", m.content}});
  }
  return arr;
}

// Content hash of the full message list; the recording key.
inline std::string messages_hash(const std::vector<ChatMessage>& msgs) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& m : msgs) {
    h = fnv1a64(m.role, h);
    h = fnv1a64("\x1f", h);
    h = fnv1a64(m.content, h);
    h = fnv1a64("\x1e", h);
  }
  return hex64(h);
}

class LlmClient {
 public:
  virtual ~LlmClient() = default;
  virtual std::string complete(const std::vector<ChatMessage>& messages) = 0;
};

class VqaClient {
 public:
  virtual ~VqaClient() = default;
  virtual std::string answer(const std::string& question, const std::string& scene_ref) = 0;
};

// Oracle could not parse the question; carries the rejection position so the
// chain can report it back instead of fabricating an answer.
struct VqaRejection : Error {
  VqaRejection(const std::string& what, size_t pos, std::string tok)
      : Error(what), token_pos(pos), token(std::move(tok)) {}
  size_t token_pos = 0;
  std::string token;
};

struct ReplayMismatch : Error {
  ReplayMismatch(const std::string& what, size_t idx) : Error(what), index(idx) {}
  size_t index = 0;
};

struct BackendConfig {
  enum class Kind { scripted, recorded, http };
  Kind kind = Kind::scripted;
  std::string endpoint;    // http kind only
  std::string model_name;
  std::string auth_env;    // env var holding the key; never the key itself
  double timeout_s = 60.0;
  int retries = 3;
};

// ---------------------------------------------------------------------------
// Scripted doubles

class ScriptedLlm final : public LlmClient {
 public:
  explicit ScriptedLlm(std::vector<std::string> queue) : queue_(std::move(queue)) {}

  std::string complete(const std::vector<ChatMessage>&) override {
    std::lock_guard<std::mutex> lock(mu_);
    if (next_ >= queue_.size()) return "";  // exhausted scripts go silent
    return queue_[next_++];
  }

 private:
  std::mutex mu_;
  std::vector<std::string> queue_;
  size_t next_ = 0;
};

// ---------------------------------------------------------------------------
// In-process oracle answerer

class OracleVqa final : public VqaClient {
 public:
  explicit OracleVqa(GrammarSpec spec, AmbiguityStrategy strategy = AmbiguityStrategy::lowest_id)
      : spec_(std::move(spec)), strategy_(strategy) {}

  void add_scene(const std::string& scene_id, SceneGraph scene) {
    scenes_.insert_or_assign(scene_id, std::move(scene));
  }

  const GrammarSpec& spec() const { return spec_; }

  std::string answer(const std::string& question, const std::string& scene_ref) override {
    if (trim(question).empty()) throw UsageError("empty question");
    auto it = scenes_.find(scene_ref);
    if (it == scenes_.end()) throw IngestError("unknown scene: " + scene_ref);
    ParseResult pr = parse_question(question, spec_);
    if (!pr.ok()) {
      throw VqaRejection("question does not conform to the template grammar: " +
                             pr.failure.message,
                         pr.failure.token_pos, pr.failure.token);
    }
    try {
      return qachain::answer(*pr.question, it->second, spec_, strategy_).value;
    } catch (const AmbiguousEntityError& e) {
      throw VqaRejection(std::string("cannot answer: ") + e.what(), 0, "");
    }
  }

 private:
  GrammarSpec spec_;
  AmbiguityStrategy strategy_;
  std::map<std::string, SceneGraph> scenes_;
};

// ---------------------------------------------------------------------------
// Record / replay

struct RecordEntry {
  std::string request_hash;
  nlohmann::ordered_json request;
  std::string response;
};

inline void save_recording(const std::filesystem::path& path,
                           const std::vector<RecordEntry>& entries) {
  std::ofstream out(path);
  if (!out) throw IngestError("cannot write recording: " + path.string());
  for (const auto& e : entries) {
    nlohmann::ordered_json j;
    j["request_hash"] = e.request_hash;
    j["request"] = e.request;
    j["response"] = e.response;
    out << j.dump() << "\n";
  }
}

inline std::vector<RecordEntry> load_recording(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open recording: " + path.string());
  std::vector<RecordEntry> out;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    nlohmann::ordered_json j;
    try {
      j = nlohmann::ordered_json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw IngestError("recording line " + std::to_string(out.size() + 1) +
                        " is not valid JSON: " + e.what());
    }
    RecordEntry e;
    e.request_hash = j.at("request_hash").get<std::string>();
    e.request = j.at("request");
    e.response = j.at("response").get<std::string>();
    out.push_back(std::move(e));
  }
  return out;
}

// Wraps a live client and logs every exchange for later replay.
class RecordingLlm final : public LlmClient {
 public:
  explicit RecordingLlm(LlmClient& inner) : inner_(inner) {}

  std::string complete(const std::vector<ChatMessage>& messages) override {
    std::string response = inner_.complete(messages);
    std::lock_guard<std::mutex> lock(mu_);
    entries_.push_back({messages_hash(messages), messages_to_json(messages), response});
    return response;
  }

  const std::vector<RecordEntry>& entries() const { return entries_; }
  void save(const std::filesystem::path& path) const { save_recording(path, entries_); }

 private:
  std::mutex mu_;
  LlmClient& inner_;
  std::vector<RecordEntry> entries_;
};

// Replays a recording in order; any divergence from the recorded request
// stream fails loudly at the first divergent call. A recording is an ordered
// stream, so a replay instance is for sequential use only.
class ReplayLlm final : public LlmClient {
 public:
  explicit ReplayLlm(std::vector<RecordEntry> entries) : entries_(std::move(entries)) {}
  static ReplayLlm from_file(const std::filesystem::path& path) {
    return ReplayLlm(load_recording(path));
  }

  std::string complete(const std::vector<ChatMessage>& messages) override {
    if (cursor_ >= entries_.size())
      throw ReplayMismatch("replay exhausted after " + std::to_string(entries_.size()) + " calls",
                           cursor_);
    const RecordEntry& e = entries_[cursor_];
    std::string h = messages_hash(messages);
    if (h != e.request_hash) {
      throw ReplayMismatch("replay divergence at call " + std::to_string(cursor_) +
                               ": recorded request\n" + e.request.dump(2) + "\nactual request\n" +
                               messages_to_json(messages).dump(2),
                           cursor_);
    }
    ++cursor_;
    return e.response;
  }

 private:
  std::vector<RecordEntry> entries_;
  size_t cursor_ = 0;
};

class RecordingVqa final : public VqaClient {
 public:
  explicit RecordingVqa(VqaClient& inner) : inner_(inner) {}

  std::string answer(const std::string& question, const std::string& scene_ref) override {
    std::string response = inner_.answer(question, scene_ref);
    std::lock_guard<std::mutex> lock(mu_);
    nlohmann::ordered_json req{{"question", question}, {"image_id", scene_ref}};
    entries_.push_back({hex64(fnv1a64(req.dump())), req, response});
    return response;
  }

  const std::vector<RecordEntry>& entries() const { return entries_; }
  void save(const std::filesystem::path& path) const { save_recording(path, entries_); }

 private:
  std::mutex mu_;
  VqaClient& inner_;
  std::vector<RecordEntry> entries_;
};

class ReplayVqa final : public VqaClient {
 public:
  explicit ReplayVqa(std::vector<RecordEntry> entries) : entries_(std::move(entries)) {}
  static ReplayVqa from_file(const std::filesystem::path& path) {
    return ReplayVqa(load_recording(path));
  }

  std::string answer(const std::string& question, const std::string& scene_ref) override {
    if (cursor_ >= entries_.size())
      throw ReplayMismatch("vqa replay exhausted", cursor_);
    const RecordEntry& e = entries_[cursor_];
    nlohmann::ordered_json req{{"question", question}, {"image_id", scene_ref}};
    std::string h = hex64(fnv1a64(req.dump()));
    if (h != e.request_hash) {
      throw ReplayMismatch("vqa replay divergence at call " + std::to_string(cursor_) +
                               ": recorded\n" + e.request.dump(2) + "\nactual\n" + req.dump(2),
                           cursor_);
    }
    ++cursor_;
    return e.response;
  }

 private:
  std::vector<RecordEntry> entries_;
  size_t cursor_ = 0;
};

// ---------------------------------------------------------------------------
// Live HTTP clients (chat-completion wire shape)

namespace detail {

struct UrlParts {
  std::string host_port;  // scheme://host:port
  std::string path;
};

inline UrlParts split_url(const std::string& url) {
  size_t scheme = url.find("://");
  if (scheme == std::string::npos) throw ConfigError("endpoint must include scheme: " + url);
  size_t slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, "/"};
  return {url.substr(0, slash), url.substr(slash)};
}

// Strip whitespace and one layer of surrounding quotes from a model answer.
inline std::string clean_model_text(std::string s) {
  s = trim(s);
  if (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') ||
                        (s.front() == '\'' && s.back() == '\''))) {
    s = trim(s.substr(1, s.size() - 2));
  }
  return s;
}

}  // namespace detail

}  // namespace qachain

#ifdef QACHAIN_ENABLE_HTTP
#include <httplib.h>

namespace qachain {

inline httplib::Headers auth_headers(const BackendConfig& cfg) {
  httplib::Headers headers;
  if (!cfg.auth_env.empty()) {
    const char* key = std::getenv(cfg.auth_env.c_str());
    if (key != nullptr && *key != '\0')
      headers.emplace("Authorization", std::string("Bearer ") + key);
  }
  return headers;
}

namespace detail {

template <typename Fn>
inline std::string with_retries(const BackendConfig& cfg, Fn&& attempt) {
  int tries = cfg.retries < 1 ? 1 : cfg.retries;
  std::string last_error;
  for (int i = 0; i < tries; ++i) {
    if (i > 0) {
      std::this_thread::sleep_for(std::chrono::milliseconds(100LL << (i - 1)));
    }
    try {
      return attempt();
    } catch (const BackendError& e) {
      last_error = e.what();
    }
  }
  throw BackendError("backend failed after " + std::to_string(tries) + " attempts: " + last_error);
}

}  // namespace detail

class HttpLlm final : public LlmClient {
 public:
  explicit HttpLlm(BackendConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.endpoint.empty()) throw ConfigError("http LLM backend requires an endpoint");
  }

  std::string complete(const std::vector<ChatMessage>& messages) override {
    if (messages.empty()) throw UsageError("message list is empty");
    return detail::with_retries(cfg_, [&] {
      auto parts = detail::split_url(cfg_.endpoint);
      httplib::Client client(parts.host_port);
      client.set_read_timeout(static_cast<time_t>(cfg_.timeout_s), 0);
      nlohmann::ordered_json body;
      body["model"] = cfg_.model_name;
      body["messages"] = messages_to_json(messages);
      auto res = client.Post(parts.path, auth_headers(cfg_), body.dump(), "application/json");
      if (!res) throw BackendError("transport failure to " + cfg_.endpoint);
      if (res->status != 200)
        throw BackendError("llm endpoint returned status " + std::to_string(res->status));
      try {
        auto j = nlohmann::json::parse(res->body);
        return detail::clean_model_text(
            j.at("choices").at(0).at("message").at("content").get<std::string>());
      } catch (const nlohmann::json::exception& e) {
        throw BackendError(std::string("malformed llm response: ") + e.what());
      }
    });
  }

 private:
  BackendConfig cfg_;
};

class HttpVqa final : public VqaClient {
 public:
  explicit HttpVqa(BackendConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.endpoint.empty()) throw ConfigError("http VQA backend requires an endpoint");
  }

  std::string answer(const std::string& question, const std::string& scene_ref) override {
    if (trim(question).empty()) throw UsageError("empty question");
    return detail::with_retries(cfg_, [&] {
      auto parts = detail::split_url(cfg_.endpoint);
      httplib::Client client(parts.host_port);
      client.set_read_timeout(static_cast<time_t>(cfg_.timeout_s), 0);
      nlohmann::ordered_json body{{"question", question}, {"image_id", scene_ref}};
      auto res = client.Post(parts.path, auth_headers(cfg_), body.dump(), "application/json");
      if (!res) throw BackendError("transport failure to " + cfg_.endpoint);
      if (res->status != 200)
        throw BackendError("vqa endpoint returned status " + std::to_string(res->status));
      try {
        auto j = nlohmann::json::parse(res->body);
        return detail::clean_model_text(j.at("answer").get<std::string>());
      } catch (const nlohmann::json::exception& e) {
        throw BackendError(std::string("malformed vqa response: ") + e.what());
      }
    });
  }

 private:
  BackendConfig cfg_;
};

}  // namespace qachain
#endif  // QACHAIN_ENABLE_HTTP
