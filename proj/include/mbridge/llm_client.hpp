#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "mbridge/error.hpp"

namespace mbridge {

struct ChatMessage {
  std::string role;  // "system" | "user" | "assistant"
  std::string content;
};

struct ChatRequest {
  std::vector<ChatMessage> messages;
  double temperature = 0.7;
  int max_tokens = 1024;
  std::string model = "default";

  /// >= 1 message; roles alternate user/assistant after an optional leading
  /// system message.
  void validate() const;
};

struct ChatResponse {
  std::string content;
  int64_t prompt_tokens = 0;
  int64_t completion_tokens = 0;
};

struct ClientPolicy {
  int max_retries = 3;
  double initial_backoff_s = 0.25;
  double backoff_multiplier = 2.0;
  double timeout_s = 30.0;
  int max_in_flight = 4;

  void validate() const;
};

/// FNV-1a over the canonical request encoding; keys replay files and the
/// default mock response.
uint64_t request_fingerprint(const ChatRequest& request);

class ChatClient {
 public:
  virtual ~ChatClient() = default;
  virtual ChatResponse complete(const ChatRequest& request) = 0;
};

/// Deterministic stand-in for every test: canned responses matched by
/// substring against the request contents, otherwise a stable function of the
/// request fingerprint. Safe for concurrent use.
class MockChatClient : public ChatClient {
 public:
  MockChatClient() = default;

  /// First rule whose needle occurs in any message content wins.
  void add_canned(const std::string& needle, const std::string& response);
  /// Scripted responses consumed in order before matching rules (for
  /// sequencing tests / per-record outputs).
  void push_scripted(const std::string& response);

  ChatResponse complete(const ChatRequest& request) override;

 private:
  std::vector<std::pair<std::string, std::string>> canned_;
  std::vector<std::string> scripted_;
  size_t scripted_cursor_ = 0;
  std::mutex mutex_;
};

/// JSON chat-completion wire client with retry/backoff, timeout and an
/// in-flight concurrency cap. The transport is injectable so policy behavior
/// is testable without a network; the default transport POSTs
/// {model, messages, temperature, max_tokens} and expects
/// {choices:[{message:{content}}], usage:{...}}.
class HttpChatClient : public ChatClient {
 public:
  struct Endpoint {
    std::string url;      // e.g. https://host/v1/chat/completions
    std::string api_key;  // sent as a bearer token; never logged
    std::string model;

    /// MBRIDGE_LLM_ENDPOINT / MBRIDGE_LLM_API_KEY / MBRIDGE_LLM_MODEL.
    static Endpoint from_env();
  };

  struct RawResult {
    int status = 0;
    std::string body;
    bool transport_ok = false;
    bool timed_out = false;
  };
  using Transport = std::function<RawResult(const std::string& body_json)>;

  HttpChatClient(Endpoint endpoint, ClientPolicy policy);
  /// Test constructor with an injected transport.
  HttpChatClient(Transport transport, ClientPolicy policy);

  ChatResponse complete(const ChatRequest& request) override;

  /// Appends {fingerprint, response} JSONL records for later replay.
  void record_to(const std::string& path);

  int64_t attempts_made() const { return attempts_; }
  int max_in_flight_observed() const { return max_observed_; }

 private:
  void acquire_slot();
  void release_slot();

  Endpoint endpoint_;
  ClientPolicy policy_;
  Transport transport_;
  std::string record_path_;
  std::mutex record_mutex_;

  std::mutex slot_mutex_;
  int in_flight_ = 0;
  int max_observed_ = 0;
  int64_t attempts_ = 0;
};

/// Serves recorded responses by request fingerprint; a miss is an error.
class ReplayChatClient : public ChatClient {
 public:
  explicit ReplayChatClient(const std::string& path);
  ChatResponse complete(const ChatRequest& request) override;

 private:
  std::vector<std::pair<uint64_t, std::string>> records_;
};

}  // namespace mbridge
