#pragma once

// Provider-agnostic chat / vision / embedding access: request and reply types, the Provider
// interface, retry with exponential backoff, a sliding-window rate limiter and a
// content-addressed disk cache.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <cstdlib>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "mn/diversity.hpp"
#include "mn/error.hpp"
#include "mn/hash.hpp"

namespace mn {

using json = nlohmann::json;

struct DecodingParams {
    double temperature = 0.9;
    double top_p = 0.95;
    int max_tokens = 125;

    bool operator==(const DecodingParams &) const = default;
};

inline void validate(const DecodingParams &d) {
    if (!(d.top_p >= 0.0 && d.top_p <= 1.0)) throw InvalidArg("top_p must lie in [0, 1]");
    if (d.max_tokens <= 0) throw InvalidArg("max_tokens must be > 0");
    if (d.temperature < 0.0) throw InvalidArg("temperature must be >= 0");
}

inline void to_json(json &j, const DecodingParams &d) {
    j = json{{"temperature", d.temperature}, {"top_p", d.top_p}, {"max_tokens", d.max_tokens}};
}
inline void from_json(const json &j, DecodingParams &d) {
    d.temperature = j.value("temperature", 0.9);
    d.top_p = j.value("top_p", 0.95);
    d.max_tokens = j.value("max_tokens", 125);
}

struct ChatMessage {
    std::string role;
    std::string content;
    std::optional<std::string> image; // local path or URL, vision requests only

    bool operator==(const ChatMessage &) const = default;
};

/// `task` names the purpose of the request (generate, summarize, relevance, ...). It is not sent
/// on the wire; the mock provider uses it to pick a behaviour.
struct ChatRequest {
    std::string model;
    std::vector<ChatMessage> messages;
    DecodingParams decoding;
    std::optional<std::uint64_t> seed;
    std::string task;
};

struct TokenUsage {
    int prompt_tokens = 0;
    int completion_tokens = 0;
};

struct ChatReply {
    std::string text;
    TokenUsage usage;
    std::string model;
    double latency_ms = 0.0;
};

struct EmbedReply {
    EmbeddingSet vectors;
    std::string model;
};

inline void to_json(json &j, const ChatMessage &m) {
    j = json{{"role", m.role}, {"content", m.content}};
    if (m.image) j["image"] = *m.image;
}

inline void to_json(json &j, const ChatRequest &r) {
    j = json{{"model", r.model}, {"messages", r.messages}, {"decoding", r.decoding}, {"task", r.task}};
    if (r.seed) j["seed"] = *r.seed;
}

inline void to_json(json &j, const ChatReply &r) {
    j = json{{"text", r.text},
             {"model", r.model},
             {"latency_ms", r.latency_ms},
             {"usage", {{"prompt_tokens", r.usage.prompt_tokens},
                        {"completion_tokens", r.usage.completion_tokens}}}};
}
inline void from_json(const json &j, ChatReply &r) {
    r.text = j.at("text").get<std::string>();
    r.model = j.value("model", "");
    r.latency_ms = j.value("latency_ms", 0.0);
    if (j.contains("usage")) {
        r.usage.prompt_tokens = j["usage"].value("prompt_tokens", 0);
        r.usage.completion_tokens = j["usage"].value("completion_tokens", 0);
    }
}

inline ChatRequest user_request(std::string model, std::string content, std::string task,
                                DecodingParams decoding = {}) {
    ChatRequest r;
    r.model = std::move(model);
    r.messages.push_back({"user", std::move(content), std::nullopt});
    r.decoding = decoding;
    r.task = std::move(task);
    return r;
}

class Provider {
  public:
    virtual ~Provider() = default;
    virtual std::string name() const = 0;
    virtual ChatReply chat(const ChatRequest &request) = 0;
    /// One embeddings request; callers go through embed(), which batches.
    virtual EmbedReply embed_batch(const std::string &model, std::span<const std::string> texts) = 0;
    virtual std::size_t embed_batch_cap() const { return 128; }
};

/// Embeds `texts` in input order, splitting into batches of at most embed_batch_cap().
inline EmbedReply embed(Provider &provider, const std::string &model, std::span<const std::string> texts) {
    if (texts.empty()) throw InvalidArg("embed: no texts");
    const std::size_t cap = std::max<std::size_t>(1, provider.embed_batch_cap());
    EmbedReply out;
    out.model = model;
    out.vectors.reserve(texts.size());
    for (std::size_t begin = 0; begin < texts.size(); begin += cap) {
        auto batch = texts.subspan(begin, std::min(cap, texts.size() - begin));
        EmbedReply part = provider.embed_batch(model, batch);
        if (part.vectors.size() != batch.size())
            throw ProviderError(200, 1, "embeddings reply has " + std::to_string(part.vectors.size()) +
                                            " vectors for " + std::to_string(batch.size()) + " texts");
        for (auto &v : part.vectors) out.vectors.push_back(std::move(v));
    }
    const std::size_t dim = out.vectors.front().size();
    for (const auto &v : out.vectors)
        if (v.size() != dim) throw ProviderError(200, 1, "embeddings of mixed dimension");
    return out;
}

// ---------------------------------------------------------------------------------------------
// Configuration

struct ModelIds {
    std::string chat;
    std::string vision;
    std::string embed;
};

struct ProviderConfig {
    std::string name = "openai";
    std::string base_url = "https://api.openai.com/v1";
    std::string api_key_env = "OPENAI_API_KEY";
    ModelIds models;
    int max_parallel = 4;
    int requests_per_minute = 60;
    double timeout_seconds = 60.0;
    std::size_t embed_batch_size = 128;

    /// Reads the key from the environment; keys are never stored in config files.
    std::string api_key() const {
        const char *v = api_key_env.empty() ? nullptr : std::getenv(api_key_env.c_str());
        return v ? std::string(v) : std::string();
    }
};

inline void validate(const ProviderConfig &c) {
    if (c.max_parallel < 1) throw InvalidArg("provider config: max_parallel must be >= 1");
    if (c.requests_per_minute < 1) throw InvalidArg("provider config: requests_per_minute must be >= 1");
    if (c.timeout_seconds <= 0) throw InvalidArg("provider config: timeout_seconds must be > 0");
    if (c.embed_batch_size < 1) throw InvalidArg("provider config: embed_batch_size must be >= 1");
}

inline void from_json(const json &j, ProviderConfig &c) {
    if (j.contains("api_key")) throw InvalidArg("provider config must not contain api_key; use api_key_env");
    c.name = j.value("name", c.name);
    c.base_url = j.value("base_url", c.base_url);
    c.api_key_env = j.value("api_key_env", c.api_key_env);
    if (j.contains("models")) {
        const auto &m = j["models"];
        c.models.chat = m.value("chat", "");
        c.models.vision = m.value("vision", "");
        c.models.embed = m.value("embed", "");
    }
    c.max_parallel = j.value("max_parallel", c.max_parallel);
    c.requests_per_minute = j.value("requests_per_minute", c.requests_per_minute);
    c.timeout_seconds = j.value("timeout_seconds", c.timeout_seconds);
    c.embed_batch_size = j.value("embed_batch_size", c.embed_batch_size);
    validate(c);
}

inline ProviderConfig load_provider_config(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) throw StorageError("cannot open provider config " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception &e) {
        throw ParseError(1, std::string("provider config: ") + e.what());
    }
    return j.get<ProviderConfig>();
}

// ---------------------------------------------------------------------------------------------
// Time, rate limiting and retries

class Clock {
  public:
    using Duration = std::chrono::nanoseconds;
    virtual ~Clock() = default;
    virtual Duration now() = 0;
    virtual void sleep_until(Duration t) = 0;
    void sleep_for(Duration d) { sleep_until(now() + d); }
};

class SystemClock : public Clock {
  public:
    Duration now() override {
        return std::chrono::duration_cast<Duration>(std::chrono::steady_clock::now().time_since_epoch());
    }
    void sleep_until(Duration t) override {
        std::this_thread::sleep_until(std::chrono::steady_clock::time_point(t));
    }
    static SystemClock &instance() {
        static SystemClock c;
        return c;
    }
};

/// Test clock: sleeping advances time instantly.
class SimulatedClock : public Clock {
  public:
    Duration now() override {
        std::lock_guard lock(mu_);
        return now_;
    }
    void sleep_until(Duration t) override {
        std::lock_guard lock(mu_);
        now_ = std::max(now_, t);
        slept_ = true;
    }
    void advance(Duration d) {
        std::lock_guard lock(mu_);
        now_ += d;
    }
    bool slept() const {
        std::lock_guard lock(mu_);
        return slept_;
    }

  private:
    mutable std::mutex mu_;
    Duration now_{0};
    bool slept_ = false;
};

/// Admits at most `requests_per_minute` starts in any sliding 60 s window and at most
/// `max_parallel` requests in flight.
class RateLimiter {
  public:
    RateLimiter(int requests_per_minute, int max_parallel, Clock &clock = SystemClock::instance())
        : rpm_(requests_per_minute), max_parallel_(max_parallel), clock_(clock) {
        if (rpm_ < 1 || max_parallel_ < 1) throw InvalidArg("rate limiter limits must be >= 1");
    }

    class Permit {
      public:
        Permit() = default;
        explicit Permit(RateLimiter *owner) : owner_(owner) {}
        Permit(Permit &&o) noexcept : owner_(std::exchange(o.owner_, nullptr)) {}
        Permit &operator=(Permit &&o) noexcept {
            if (this != &o) {
                reset();
                owner_ = std::exchange(o.owner_, nullptr);
            }
            return *this;
        }
        ~Permit() { reset(); }
        void reset() {
            if (owner_) owner_->release();
            owner_ = nullptr;
        }

      private:
        RateLimiter *owner_ = nullptr;
    };

    Permit acquire() {
        std::unique_lock lock(mu_);
        for (;;) {
            cv_.wait(lock, [&] { return in_flight_ < max_parallel_; });
            const auto now = clock_.now();
            while (!starts_.empty() && starts_.front() + kWindow <= now) starts_.pop_front();
            if (static_cast<int>(starts_.size()) < rpm_) {
                starts_.push_back(now);
                ++in_flight_;
                peak_in_flight_ = std::max(peak_in_flight_, in_flight_);
                return Permit(this);
            }
            const auto wake = starts_.front() + kWindow;
            lock.unlock();
            clock_.sleep_until(wake);
            lock.lock();
        }
    }

    int peak_in_flight() const {
        std::lock_guard lock(mu_);
        return peak_in_flight_;
    }

  private:
    static constexpr Clock::Duration kWindow = std::chrono::seconds(60);

    void release() {
        {
            std::lock_guard lock(mu_);
            --in_flight_;
        }
        cv_.notify_one();
    }

    int rpm_;
    int max_parallel_;
    Clock &clock_;
    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::deque<Clock::Duration> starts_;
    int in_flight_ = 0;
    int peak_in_flight_ = 0;
};

struct RetryPolicy {
    int max_attempts = 5;
    std::chrono::milliseconds base_delay{500};
    double multiplier = 2.0;
    std::chrono::milliseconds max_delay{30000};

    std::chrono::milliseconds delay_before(int attempt) const { // attempt >= 2
        double ms = static_cast<double>(base_delay.count());
        for (int k = 2; k < attempt; ++k) ms *= multiplier;
        return std::chrono::milliseconds(
            static_cast<long long>(std::min(ms, static_cast<double>(max_delay.count()))));
    }
};

struct HttpResponse {
    int status = 0; // 0 = transport failure (connection error, timeout)
    std::string body;
    std::string error;
};

inline bool is_transient(const HttpResponse &r) { return r.status == 0 || r.status == 429 || r.status >= 500; }

/// Runs `attempt` until it returns a 2xx response. 429, 5xx and transport failures are retried
/// with exponential backoff; 401/403 raise AuthError immediately; other statuses fail at once.
template <class Attempt>
HttpResponse with_retries(Attempt &&attempt, const RetryPolicy &policy, Clock &clock) {
    HttpResponse last;
    for (int n = 1; n <= policy.max_attempts; ++n) {
        if (n > 1) clock.sleep_for(policy.delay_before(n));
        last = attempt();
        if (last.status >= 200 && last.status < 300) return last;
        if (last.status == 401 || last.status == 403)
            throw AuthError(last.status, "authentication failed: " + last.body);
        if (!is_transient(last))
            throw ProviderError(last.status, n, "request rejected: " + last.body + last.error);
    }
    throw ProviderError(last.status, policy.max_attempts,
                        "retries exhausted: " + (last.error.empty() ? last.body : last.error));
}

// ---------------------------------------------------------------------------------------------
// Cache

/// Content-addressed disk cache around another provider. Keys hash the provider name and the
/// complete request (model, messages, decoding, seed, task, and the bytes of local images).
class CachedProvider : public Provider {
  public:
    CachedProvider(std::shared_ptr<Provider> inner, std::filesystem::path dir)
        : inner_(std::move(inner)), dir_(std::move(dir)) {
        std::error_code ec;
        std::filesystem::create_directories(dir_, ec);
        if (ec) throw StorageError("cannot create cache dir " + dir_.string() + ": " + ec.message());
    }

    std::string name() const override { return inner_->name(); }
    std::size_t embed_batch_cap() const override { return inner_->embed_batch_cap(); }

    ChatReply chat(const ChatRequest &request) override {
        json key = {{"provider", inner_->name()}, {"op", "chat"}, {"request", request}};
        for (const auto &m : request.messages)
            if (m.image) key["image_digests"].push_back(local_digest(*m.image));
        const auto path = entry_path(key);
        if (auto hit = load(path)) {
            try {
                ChatReply r = hit->at("reply").get<ChatReply>();
                ++hits_;
                return r;
            } catch (const json::exception &) {
                warn_corrupt(path);
            }
        }
        ++misses_;
        ChatReply reply = inner_->chat(request);
        store(path, json{{"reply", reply}});
        return reply;
    }

    EmbedReply embed_batch(const std::string &model, std::span<const std::string> texts) override {
        json key = {{"provider", inner_->name()},
                    {"op", "embed"},
                    {"model", model},
                    {"texts", std::vector<std::string>(texts.begin(), texts.end())}};
        const auto path = entry_path(key);
        if (auto hit = load(path)) {
            try {
                EmbedReply r;
                r.model = hit->at("model").get<std::string>();
                r.vectors = hit->at("vectors").get<EmbeddingSet>();
                if (r.vectors.size() == texts.size()) {
                    ++hits_;
                    return r;
                }
            } catch (const json::exception &) {
            }
            warn_corrupt(path);
        }
        ++misses_;
        EmbedReply reply = inner_->embed_batch(model, texts);
        store(path, json{{"model", reply.model}, {"vectors", reply.vectors}});
        return reply;
    }

    std::size_t hits() const { return hits_; }
    std::size_t misses() const { return misses_; }

    std::filesystem::path entry_path(const json &key) const {
        const std::string h = sha256_hex(key.dump());
        return dir_ / h.substr(0, 2) / (h + ".json");
    }

  private:
    static std::string local_digest(const std::string &source) {
        std::ifstream in(source, std::ios::binary);
        if (!in) return "";
        std::ostringstream ss;
        ss << in.rdbuf();
        return sha256_hex(ss.str());
    }

    static std::optional<json> load(const std::filesystem::path &path) {
        std::ifstream in(path);
        if (!in) return std::nullopt;
        try {
            json j;
            in >> j;
            return j;
        } catch (const json::exception &) {
            warn_corrupt(path);
            return std::nullopt;
        }
    }

    static void warn_corrupt(const std::filesystem::path &path) {
        std::clog << "warning: corrupt cache entry " << path.string() << ", recomputing\n";
    }

    void store(const std::filesystem::path &path, const json &value) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
        auto tmp = path;
        tmp += ".tmp" + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()));
        {
            std::ofstream out(tmp, std::ios::trunc);
            if (!out) throw StorageError("cannot write cache entry " + tmp.string());
            out << value.dump();
        }
        std::filesystem::rename(tmp, path, ec);
        if (ec) throw StorageError("cannot commit cache entry " + path.string() + ": " + ec.message());
    }

    std::shared_ptr<Provider> inner_;
    std::filesystem::path dir_;
    std::atomic<std::size_t> hits_{0};
    std::atomic<std::size_t> misses_{0};
};

} // namespace mn
