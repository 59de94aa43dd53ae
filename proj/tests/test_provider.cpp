#include <gtest/gtest.h>

#include <cstdlib>
#include <deque>
#include <mutex>
#include <thread>

#include "mn/http_transport.hpp"
#include "mn/mock_provider.hpp"
#include "mn/openai_provider.hpp"
#include "test_util.hpp"

using namespace std::chrono_literals;

namespace {

/// Returns scripted responses in order and records every call.
class FakeTransport : public mn::HttpTransport {
  public:
    explicit FakeTransport(std::deque<mn::HttpResponse> script) : script_(std::move(script)) {}

    mn::HttpResponse post_json(const std::string &path, const std::string &body, const mn::Headers &headers) override {
        std::lock_guard lock(mu_);
        calls.push_back({path, body, headers});
        if (script_.empty()) return {200, default_body(path, body), ""};
        auto r = script_.front();
        script_.pop_front();
        return r;
    }

    struct Call {
        std::string path, body;
        mn::Headers headers;
    };
    std::vector<Call> calls;

  private:
    static std::string default_body(const std::string &path, const std::string &body) {
        if (path == "/embeddings") {
            auto in = mn::json::parse(body).at("input");
            mn::json data = mn::json::array();
            // Reverse order on the wire, with indices, to check reassembly.
            for (std::size_t k = in.size(); k-- > 0;)
                data.push_back({{"index", k}, {"embedding", {double(k), in[k].get<std::string>().size() * 1.0}}});
            return mn::json{{"data", data}}.dump();
        }
        return R"({"choices":[{"message":{"content":"ok"}}]})";
    }

    std::mutex mu_;
    std::deque<mn::HttpResponse> script_;
};

std::string chat_body(const std::string &text) {
    return mn::json{{"model", "served-model"},
                    {"choices", {{{"message", {{"role", "assistant"}, {"content", text}}}}}},
                    {"usage", {{"prompt_tokens", 5}, {"completion_tokens", 2}}}}
        .dump();
}

mn::ProviderConfig config() {
    mn::ProviderConfig c;
    c.api_key_env = "MN_TEST_KEY_UNSET";
    c.requests_per_minute = 10000;
    return c;
}

} // namespace

TEST(MockProvider, EchoAndDeterministicEmbeddings) {
    mn::MockProvider p;
    auto r = p.chat(mn::user_request("m", "hello there", "anything"));
    EXPECT_EQ(r.text, "hello there");
    std::vector<std::string> texts = {"the cat sat", "a dog ran"};
    mn::MockProvider q;
    auto a = mn::embed(p, "e", texts), b = mn::embed(q, "e", texts);
    EXPECT_EQ(a.vectors, b.vectors);
    double n = 0;
    for (double x : a.vectors[0]) n += x * x;
    EXPECT_NEAR(n, 1.0, 1e-12);
}

TEST(OpenAi, WireFormatAndParse) {
    auto t = std::make_shared<FakeTransport>(std::deque<mn::HttpResponse>{{200, chat_body("Hi!"), ""}});
    ::setenv("MN_TEST_KEY_SET", "sk-test", 1);
    auto cfg = config();
    cfg.api_key_env = "MN_TEST_KEY_SET";
    mn::OpenAiProvider p(cfg, t);
    auto req = mn::user_request("gpt-x", "question", "generate", {0.9, 0.95, 125});
    req.seed = 42;
    auto reply = p.chat(req);
    EXPECT_EQ(reply.text, "Hi!");
    EXPECT_EQ(reply.model, "served-model");
    EXPECT_EQ(reply.usage.completion_tokens, 2);
    ASSERT_EQ(t->calls.size(), 1u);
    EXPECT_EQ(t->calls[0].path, "/chat/completions");
    auto body = mn::json::parse(t->calls[0].body);
    EXPECT_EQ(body["model"], "gpt-x");
    EXPECT_EQ(body["temperature"], 0.9);
    EXPECT_EQ(body["top_p"], 0.95);
    EXPECT_EQ(body["max_tokens"], 125);
    EXPECT_EQ(body["seed"], 42);
    EXPECT_EQ(body["messages"][0]["content"], "question");
    EXPECT_FALSE(body.contains("task"));
    bool auth = false;
    for (const auto &[k, v] : t->calls[0].headers)
        if (k == "Authorization") auth = v == "Bearer sk-test";
    EXPECT_TRUE(auth);
}

TEST(OpenAi, VisionInlinesLocalImage) {
    testutil::TempDir dir;
    testutil::write_file(dir / "a.png", "abc");
    auto body = mn::chat_payload([&] {
        auto r = mn::user_request("v", "describe", "describe");
        r.messages.back().image = (dir / "a.png").string();
        return r;
    }());
    EXPECT_EQ(body["messages"][0]["content"][1]["image_url"]["url"], "data:image/png;base64,YWJj");
}

TEST(OpenAi, RetriesTransientThenSucceeds) {
    mn::SimulatedClock clock;
    auto t = std::make_shared<FakeTransport>(
        std::deque<mn::HttpResponse>{{429, "slow down", ""}, {200, chat_body("fine"), ""}});
    mn::OpenAiProvider p(config(), t, clock);
    EXPECT_EQ(p.chat(mn::user_request("m", "x", "t")).text, "fine");
    EXPECT_EQ(t->calls.size(), 2u);
    EXPECT_EQ(clock.now(), std::chrono::milliseconds(500));
}

TEST(OpenAi, AuthFailureIsImmediate) {
    mn::SimulatedClock clock;
    auto t = std::make_shared<FakeTransport>(std::deque<mn::HttpResponse>{{401, "bad key", ""}});
    mn::OpenAiProvider p(config(), t, clock);
    EXPECT_THROW(p.chat(mn::user_request("m", "x", "t")), mn::AuthError);
    EXPECT_EQ(t->calls.size(), 1u);
}

TEST(OpenAi, ExhaustedRetries) {
    mn::SimulatedClock clock;
    std::deque<mn::HttpResponse> script(6, mn::HttpResponse{503, "down", ""});
    auto t = std::make_shared<FakeTransport>(script);
    mn::OpenAiProvider p(config(), t, clock);
    try {
        p.chat(mn::user_request("m", "x", "t"));
        FAIL();
    } catch (const mn::ProviderError &e) {
        EXPECT_EQ(e.status(), 503);
        EXPECT_EQ(e.attempts(), 5);
    }
    EXPECT_EQ(t->calls.size(), 5u);
    // 0.5 + 1 + 2 + 4 seconds of backoff.
    EXPECT_EQ(clock.now(), std::chrono::milliseconds(7500));
    auto bad = std::make_shared<FakeTransport>(std::deque<mn::HttpResponse>{{400, "nope", ""}});
    mn::OpenAiProvider q(config(), bad, clock);
    EXPECT_THROW(q.chat(mn::user_request("m", "x", "t")), mn::ProviderError);
    EXPECT_EQ(bad->calls.size(), 1u);
}

TEST(OpenAi, EmbeddingBatching) {
    auto t = std::make_shared<FakeTransport>(std::deque<mn::HttpResponse>{});
    mn::OpenAiProvider p(config(), t);
    std::vector<std::string> texts;
    for (int i = 0; i < 300; ++i) texts.push_back(std::string(std::size_t(i % 17 + 1), 'x'));
    auto r = mn::embed(p, "emb", texts);
    EXPECT_EQ(t->calls.size(), 3u);
    ASSERT_EQ(r.vectors.size(), 300u);
    for (int i = 0; i < 300; ++i) {
        EXPECT_EQ(r.vectors[i][0], double(i % 128));
        EXPECT_EQ(r.vectors[i][1], double(i % 17 + 1));
    }
    EXPECT_THROW(mn::embed(p, "emb", std::vector<std::string>{}), mn::InvalidArg);
}

TEST(RateLimiter, SlidingWindowNeverExceeded) {
    mn::SimulatedClock clock;
    mn::RateLimiter limiter(3, 2, clock);
    std::vector<mn::Clock::Duration> starts;
    for (int i = 0; i < 10; ++i) {
        auto permit = limiter.acquire();
        starts.push_back(clock.now());
        clock.advance(5s);
    }
    for (std::size_t i = 0; i < starts.size(); ++i) {
        int in_window = 0;
        for (auto s : starts)
            if (s >= starts[i] && s < starts[i] + 60s) ++in_window;
        EXPECT_LE(in_window, 3);
    }
    EXPECT_TRUE(clock.slept());
}

TEST(RateLimiter, ParallelCap) {
    mn::SimulatedClock clock;
    mn::RateLimiter limiter(100000, 3, clock);
    std::atomic<int> inside{0}, peak{0};
    std::vector<std::jthread> threads;
    for (int t = 0; t < 8; ++t)
        threads.emplace_back([&] {
            for (int k = 0; k < 50; ++k) {
                auto permit = limiter.acquire();
                int now = ++inside;
                int p = peak.load();
                while (now > p && !peak.compare_exchange_weak(p, now)) {
                }
                std::this_thread::sleep_for(50us);
                --inside;
            }
        });
    threads.clear();
    EXPECT_LE(peak.load(), 3);
    EXPECT_LE(limiter.peak_in_flight(), 3);
}

TEST(Cache, HitMissAndCorruption) {
    testutil::TempDir dir;
    auto inner = std::make_shared<mn::MockProvider>();
    mn::CachedProvider cache(inner, dir.path());
    auto req = mn::user_request("m", "cache me", "other", {0.9, 0.95, 125});
    EXPECT_EQ(cache.chat(req).text, "cache me");
    EXPECT_EQ(cache.chat(req).text, "cache me");
    EXPECT_EQ(inner->chat_calls(), 1u);
    EXPECT_EQ(cache.hits(), 1u);

    auto warmer = req;
    warmer.decoding.temperature = 1.0;
    cache.chat(warmer);
    EXPECT_EQ(inner->chat_calls(), 2u);

    std::vector<std::filesystem::path> entries;
    for (const auto &e : std::filesystem::recursive_directory_iterator(dir.path()))
        if (e.is_regular_file()) entries.push_back(e.path());
    ASSERT_EQ(entries.size(), 2u);
    for (const auto &e : entries) testutil::write_file(e, "{truncated");
    EXPECT_EQ(cache.chat(req).text, "cache me");
    EXPECT_EQ(inner->chat_calls(), 3u);
    EXPECT_EQ(cache.chat(req).text, "cache me");
    EXPECT_EQ(inner->chat_calls(), 3u);

    std::vector<std::string> texts = {"a", "b"};
    auto e1 = mn::embed(cache, "e", texts);
    auto e2 = mn::embed(cache, "e", texts);
    EXPECT_EQ(e1.vectors, e2.vectors);
    EXPECT_EQ(inner->embed_calls(), 1u);
}

TEST(Cache, WarmReplayIssuesNoRequests) {
    testutil::TempDir dir;
    auto t = std::make_shared<FakeTransport>(std::deque<mn::HttpResponse>{});
    auto http = std::make_shared<mn::OpenAiProvider>(config(), t);
    {
        mn::CachedProvider cold(http, dir.path());
        for (int i = 0; i < 5; ++i) cold.chat(mn::user_request("m", "q" + std::to_string(i), "g"));
    }
    EXPECT_EQ(t->calls.size(), 5u);
    mn::CachedProvider warm(http, dir.path());
    for (int i = 0; i < 5; ++i) warm.chat(mn::user_request("m", "q" + std::to_string(i), "g"));
    EXPECT_EQ(t->calls.size(), 5u);
}

TEST(Config, KeysOnlyFromEnvironment) {
    testutil::TempDir dir;
    testutil::write_file(dir / "p.json", R"({"name":"x","api_key":"sk-secret"})");
    EXPECT_THROW(mn::load_provider_config(dir / "p.json"), mn::InvalidArg);
    testutil::write_file(dir / "q.json",
                         R"({"name":"x","base_url":"http://h/v1","api_key_env":"MN_TEST_KEY_UNSET",)"
                         R"("models":{"chat":"c","vision":"v","embed":"e"},"max_parallel":2})");
    auto cfg = mn::load_provider_config(dir / "q.json");
    EXPECT_EQ(cfg.models.vision, "v");
    EXPECT_EQ(cfg.max_parallel, 2);
    EXPECT_EQ(cfg.api_key(), "");
    testutil::write_file(dir / "r.json", R"({"max_parallel":0})");
    EXPECT_THROW(mn::load_provider_config(dir / "r.json"), mn::InvalidArg);
}

TEST(Httplib, LocalServerRoundTrip) {
    httplib::Server server;
    std::string seen_body;
    server.Post("/v1/chat/completions", [&](const httplib::Request &req, httplib::Response &res) {
        seen_body = req.body;
        res.set_content(chat_body("served"), "application/json");
    });
    int port = server.bind_to_any_port("127.0.0.1");
    ASSERT_GT(port, 0);
    std::thread th([&] { server.listen_after_bind(); });
    server.wait_until_ready();
    auto cfg = config();
    cfg.base_url = "http://127.0.0.1:" + std::to_string(port) + "/v1";
    cfg.timeout_seconds = 5;
    auto p = mn::make_http_provider(cfg);
    auto reply = p->chat(mn::user_request("m", "over the wire", "g"));
    server.stop();
    th.join();
    EXPECT_EQ(reply.text, "served");
    EXPECT_EQ(mn::json::parse(seen_body)["messages"][0]["content"], "over the wire");
}
