#include "mbridge/llm_client.hpp"

#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <fstream>
#include <thread>

#include <json.hpp>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "mbridge/log.hpp"

namespace mbridge {

using json = nlohmann::json;

void ChatRequest::validate() const {
  if (messages.empty()) throw ConfigError("chat request: needs at least one message");
  size_t i = 0;
  if (messages[0].role == "system") i = 1;
  std::string expected = "user";
  for (; i < messages.size(); ++i) {
    if (messages[i].role != expected)
      throw ConfigError("chat request: role at position " + std::to_string(i) + " is '" +
                        messages[i].role + "', expected '" + expected + "'");
    expected = expected == "user" ? "assistant" : "user";
  }
}

void ClientPolicy::validate() const {
  if (max_retries < 0) throw ConfigError("client policy: retries must be >= 0");
  if (timeout_s <= 0) throw ConfigError("client policy: timeout must be > 0");
  if (max_in_flight < 1) throw ConfigError("client policy: in-flight limit must be >= 1");
}

uint64_t request_fingerprint(const ChatRequest& request) {
  uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const std::string& s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    h ^= 0x1f;
    h *= 1099511628211ULL;
  };
  mix(request.model);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f|%d", request.temperature, request.max_tokens);
  mix(buf);
  for (const ChatMessage& m : request.messages) {
    mix(m.role);
    mix(m.content);
  }
  return h;
}

void MockChatClient::add_canned(const std::string& needle, const std::string& response) {
  std::lock_guard<std::mutex> lock(mutex_);
  canned_.emplace_back(needle, response);
}

void MockChatClient::push_scripted(const std::string& response) {
  std::lock_guard<std::mutex> lock(mutex_);
  scripted_.push_back(response);
}

ChatResponse MockChatClient::complete(const ChatRequest& request) {
  request.validate();
  std::lock_guard<std::mutex> lock(mutex_);
  ChatResponse response;
  response.prompt_tokens = 0;
  for (const ChatMessage& m : request.messages)
    response.prompt_tokens += static_cast<int64_t>(m.content.size());

  if (scripted_cursor_ < scripted_.size()) {
    response.content = scripted_[scripted_cursor_++];
  } else {
    bool matched = false;
    for (const auto& [needle, canned] : canned_) {
      for (const ChatMessage& m : request.messages) {
        if (m.content.find(needle) != std::string::npos) {
          response.content = canned;
          matched = true;
          break;
        }
      }
      if (matched) break;
    }
    if (!matched) {
      char hex[32];
      std::snprintf(hex, sizeof(hex), "mock-%016llx",
                    static_cast<unsigned long long>(request_fingerprint(request)));
      response.content = hex;
    }
  }
  response.completion_tokens = static_cast<int64_t>(response.content.size());
  return response;
}

HttpChatClient::Endpoint HttpChatClient::Endpoint::from_env() {
  Endpoint ep;
  if (const char* url = std::getenv("MBRIDGE_LLM_ENDPOINT")) ep.url = url;
  if (const char* key = std::getenv("MBRIDGE_LLM_API_KEY")) ep.api_key = key;
  if (const char* model = std::getenv("MBRIDGE_LLM_MODEL")) ep.model = model;
  if (ep.url.empty())
    throw ConfigError("live client: MBRIDGE_LLM_ENDPOINT is not set");
  return ep;
}

namespace {

struct ParsedUrl {
  bool https = false;
  std::string origin;  // scheme://host[:port]
  std::string path;
};

ParsedUrl parse_url(const std::string& url) {
  ParsedUrl out;
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("live client: malformed URL " + url);
  out.https = url.substr(0, scheme_end) == "https";
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) {
    out.origin = url;
    out.path = "/";
  } else {
    out.origin = url.substr(0, path_start);
    out.path = url.substr(path_start);
  }
  return out;
}

}  // namespace

HttpChatClient::HttpChatClient(Endpoint endpoint, ClientPolicy policy)
    : endpoint_(std::move(endpoint)), policy_(policy) {
  policy_.validate();
  const ParsedUrl parsed = parse_url(endpoint_.url);
  transport_ = [this, parsed](const std::string& body) {
    httplib::Client client(parsed.origin);
    client.set_connection_timeout(std::chrono::milliseconds(
        static_cast<int64_t>(policy_.timeout_s * 1000)));
    client.set_read_timeout(std::chrono::milliseconds(
        static_cast<int64_t>(policy_.timeout_s * 1000)));
    httplib::Headers headers;
    if (!endpoint_.api_key.empty())
      headers.emplace("Authorization", "Bearer " + endpoint_.api_key);
    auto result = client.Post(parsed.path, headers, body, "application/json");
    RawResult raw;
    if (!result) {
      raw.transport_ok = false;
      raw.timed_out = result.error() == httplib::Error::ConnectionTimeout ||
                      result.error() == httplib::Error::Read ||
                      result.error() == httplib::Error::Write;
      return raw;
    }
    raw.transport_ok = true;
    raw.status = result->status;
    raw.body = result->body;
    return raw;
  };
}

HttpChatClient::HttpChatClient(Transport transport, ClientPolicy policy)
    : policy_(policy), transport_(std::move(transport)) {
  policy_.validate();
}

void HttpChatClient::record_to(const std::string& path) { record_path_ = path; }

namespace {
std::mutex g_slot_cv_mutex;
std::condition_variable g_slot_cv;
}  // namespace

void HttpChatClient::acquire_slot() {
  std::unique_lock<std::mutex> lock(slot_mutex_);
  while (in_flight_ >= policy_.max_in_flight) {
    lock.unlock();
    std::unique_lock<std::mutex> cv_lock(g_slot_cv_mutex);
    g_slot_cv.wait_for(cv_lock, std::chrono::milliseconds(5));
    lock.lock();
  }
  ++in_flight_;
  max_observed_ = std::max(max_observed_, in_flight_);
}

void HttpChatClient::release_slot() {
  {
    std::lock_guard<std::mutex> lock(slot_mutex_);
    --in_flight_;
  }
  g_slot_cv.notify_all();
}

ChatResponse HttpChatClient::complete(const ChatRequest& request) {
  request.validate();

  json body{{"model", endpoint_.model.empty() ? request.model : endpoint_.model},
            {"temperature", request.temperature},
            {"max_tokens", request.max_tokens}};
  body["messages"] = json::array();
  for (const ChatMessage& m : request.messages)
    body["messages"].push_back({{"role", m.role}, {"content", m.content}});
  const std::string body_text = body.dump();

  RawResult last;
  double backoff = policy_.initial_backoff_s;
  for (int attempt = 0; attempt <= policy_.max_retries; ++attempt) {
    if (attempt > 0 && backoff > 0) {
      std::this_thread::sleep_for(std::chrono::duration<double>(backoff));
      backoff *= policy_.backoff_multiplier;
    }
    acquire_slot();
    ++attempts_;
    last = transport_(body_text);
    release_slot();

    const bool retriable =
        !last.transport_ok || last.timed_out || last.status == 429 || last.status >= 500;
    if (!retriable) break;
    if (attempt == policy_.max_retries) {
      if (last.transport_ok) throw RemoteError(last.status, last.body);
      if (last.timed_out) throw TimeoutError("chat endpoint timed out after retries");
      throw TransportError("chat endpoint unreachable after " +
                           std::to_string(policy_.max_retries + 1) + " attempts");
    }
  }
  if (!last.transport_ok) throw TransportError("chat endpoint unreachable");
  if (last.status < 200 || last.status >= 300) throw RemoteError(last.status, last.body);

  ChatResponse response;
  try {
    json parsed = json::parse(last.body);
    response.content = parsed.at("choices").at(0).at("message").at("content").get<std::string>();
    if (parsed.contains("usage")) {
      response.prompt_tokens = parsed["usage"].value("prompt_tokens", 0);
      response.completion_tokens = parsed["usage"].value("completion_tokens", 0);
    }
  } catch (const json::exception& e) {
    throw RemoteError(last.status, "unparseable completion body: " + std::string(e.what()));
  }

  if (!record_path_.empty()) {
    std::lock_guard<std::mutex> lock(record_mutex_);
    std::ofstream out(record_path_, std::ios::app);
    char hex[32];
    std::snprintf(hex, sizeof(hex), "%016llx",
                  static_cast<unsigned long long>(request_fingerprint(request)));
    out << json{{"fingerprint", hex}, {"response", response.content}}.dump() << "\n";
  }
  return response;
}

ReplayChatClient::ReplayChatClient(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("replay: cannot open " + path);
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      json j = json::parse(line);
      records_.emplace_back(std::stoull(j.at("fingerprint").get<std::string>(), nullptr, 16),
                            j.at("response").get<std::string>());
    } catch (const std::exception& e) {
      throw ValidationError("replay: bad record: " + std::string(e.what()), line_no);
    }
  }
}

ChatResponse ReplayChatClient::complete(const ChatRequest& request) {
  request.validate();
  const uint64_t fp = request_fingerprint(request);
  for (const auto& [key, response] : records_)
    if (key == fp) return ChatResponse{response, 0, static_cast<int64_t>(response.size())};
  throw ConfigError("replay: no recorded response for this request");
}

}  // namespace mbridge
