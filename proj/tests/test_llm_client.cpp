#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <chrono>
#include <filesystem>
#include <thread>

#include "mbridge/llm_client.hpp"

using namespace mbridge;

namespace {

ChatRequest simple_request(const std::string& text) {
  ChatRequest req;
  req.messages.push_back({"user", text});
  return req;
}

ClientPolicy fast_policy() {
  ClientPolicy policy;
  policy.max_retries = 3;
  policy.initial_backoff_s = 0.0;
  policy.timeout_s = 1.0;
  return policy;
}

std::string ok_body(const std::string& content) {
  return std::string("{\"choices\":[{\"message\":{\"content\":\"") + content +
         "\"}}],\"usage\":{\"prompt_tokens\":3,\"completion_tokens\":2}}";
}

}  // namespace

TEST_CASE("request validation") {
  ChatRequest empty;
  CHECK_THROWS_AS(empty.validate(), ConfigError);

  ChatRequest good;
  good.messages = {{"system", "s"}, {"user", "u"}, {"assistant", "a"}, {"user", "u2"}};
  CHECK_NOTHROW(good.validate());

  ChatRequest bad;
  bad.messages = {{"user", "u"}, {"user", "u2"}};
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  ClientPolicy p;
  p.timeout_s = 0;
  CHECK_THROWS_AS(p.validate(), ConfigError);
}

TEST_CASE("mock client: canned matching and determinism") {
  MockChatClient mock;
  mock.add_canned("describe", "A cat.");
  CHECK(mock.complete(simple_request("Please describe the scene")).content == "A cat.");
  CHECK(mock.complete(simple_request("hello")).content ==
        mock.complete(simple_request("hello")).content);
  CHECK(mock.complete(simple_request("hello")).content.rfind("mock-", 0) == 0);
  CHECK(request_fingerprint(simple_request("a")) != request_fingerprint(simple_request("b")));
  CHECK(request_fingerprint(simple_request("a")) == request_fingerprint(simple_request("a")));
}

TEST_CASE("failing transport: exactly retries+1 attempts, then transport error") {
  std::atomic<int> calls{0};
  HttpChatClient client(
      [&](const std::string&) {
        ++calls;
        return HttpChatClient::RawResult{};  // transport_ok = false
      },
      fast_policy());
  CHECK_THROWS_AS(client.complete(simple_request("x")), TransportError);
  CHECK(calls.load() == 4);
  CHECK(client.attempts_made() == 4);
}

TEST_CASE("timeouts raise the timeout error after retries") {
  HttpChatClient client(
      [&](const std::string&) {
        HttpChatClient::RawResult r;
        r.timed_out = true;
        return r;
      },
      fast_policy());
  CHECK_THROWS_AS(client.complete(simple_request("x")), TimeoutError);
}

TEST_CASE("non-2xx carries status and body; 4xx does not retry") {
  std::atomic<int> calls{0};
  HttpChatClient client(
      [&](const std::string&) {
        ++calls;
        HttpChatClient::RawResult r;
        r.transport_ok = true;
        r.status = 404;
        r.body = "nope";
        return r;
      },
      fast_policy());
  try {
    client.complete(simple_request("x"));
    FAIL("expected RemoteError");
  } catch (const RemoteError& e) {
    CHECK(e.status == 404);
    CHECK(e.response_body == "nope");
  }
  CHECK(calls.load() == 1);
}

TEST_CASE("5xx retries then surfaces the remote error") {
  std::atomic<int> calls{0};
  HttpChatClient client(
      [&](const std::string&) {
        ++calls;
        HttpChatClient::RawResult r;
        r.transport_ok = true;
        r.status = 503;
        r.body = "overloaded";
        return r;
      },
      fast_policy());
  CHECK_THROWS_AS(client.complete(simple_request("x")), RemoteError);
  CHECK(calls.load() == 4);
}

TEST_CASE("successful wire parse extracts content and usage") {
  HttpChatClient client(
      [&](const std::string& body) {
        CHECK(body.find("\"messages\"") != std::string::npos);
        HttpChatClient::RawResult r;
        r.transport_ok = true;
        r.status = 200;
        r.body = ok_body("hi there");
        return r;
      },
      fast_policy());
  auto resp = client.complete(simple_request("greet me"));
  CHECK(resp.content == "hi there");
  CHECK(resp.prompt_tokens == 3);
  CHECK(resp.completion_tokens == 2);
}

TEST_CASE("unparseable 2xx body is a remote error") {
  HttpChatClient client(
      [&](const std::string&) {
        HttpChatClient::RawResult r;
        r.transport_ok = true;
        r.status = 200;
        r.body = "not json";
        return r;
      },
      fast_policy());
  CHECK_THROWS_AS(client.complete(simple_request("x")), RemoteError);
}

TEST_CASE("in-flight concurrency never exceeds the policy limit") {
  std::atomic<int> inside{0};
  std::atomic<int> peak{0};
  ClientPolicy policy = fast_policy();
  policy.max_in_flight = 3;
  HttpChatClient client(
      [&](const std::string&) {
        const int now = ++inside;
        int prev = peak.load();
        while (now > prev && !peak.compare_exchange_weak(prev, now)) {
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(10));
        --inside;
        HttpChatClient::RawResult r;
        r.transport_ok = true;
        r.status = 200;
        r.body = ok_body("ok");
        return r;
      },
      policy);

  std::vector<std::thread> threads;
  for (int i = 0; i < 12; ++i)
    threads.emplace_back([&client, i]() {
      auto resp = client.complete(simple_request("req " + std::to_string(i)));
      CHECK(resp.content == "ok");
    });
  for (auto& t : threads) t.join();
  CHECK(peak.load() <= 3);
  CHECK(client.max_in_flight_observed() <= 3);
}

TEST_CASE("record and replay round trip") {
  namespace fs = std::filesystem;
  const auto path = fs::temp_directory_path() / "mbridge_replay.jsonl";
  fs::remove(path);

  HttpChatClient client(
      [&](const std::string&) {
        HttpChatClient::RawResult r;
        r.transport_ok = true;
        r.status = 200;
        r.body = ok_body("recorded answer");
        return r;
      },
      fast_policy());
  client.record_to(path.string());
  auto live = client.complete(simple_request("what is up"));
  CHECK(live.content == "recorded answer");

  ReplayChatClient replay(path.string());
  CHECK(replay.complete(simple_request("what is up")).content == "recorded answer");
  CHECK_THROWS_AS(replay.complete(simple_request("never asked")), ConfigError);
  fs::remove(path);
}
