#pragma once

// OpenAI-compatible chat-completions / embeddings client. The HTTP layer is abstract so that the
// wire format, retries and rate limiting can be exercised without a network.

#include <chrono>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mn/provider.hpp"

namespace mn {

using Headers = std::vector<std::pair<std::string, std::string>>;

class HttpTransport {
  public:
    virtual ~HttpTransport() = default;
    /// POST `body` to `path` (relative to the configured base URL).
    virtual HttpResponse post_json(const std::string &path, const std::string &body,
                                   const Headers &headers) = 0;
};

namespace detail {

inline bool is_remote(const std::string &source) {
    return source.starts_with("http://") || source.starts_with("https://") || source.starts_with("data:");
}

inline std::string mime_for(const std::string &path) {
    auto ext = std::filesystem::path(path).extension().string();
    for (auto &c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (ext == ".png") return "image/png";
    if (ext == ".gif") return "image/gif";
    if (ext == ".webp") return "image/webp";
    return "image/jpeg";
}

/// Local images are inlined as base64 data URLs; remote URLs pass through.
inline std::string image_url(const std::string &source) {
    if (is_remote(source)) return source;
    std::ifstream in(source, std::ios::binary);
    if (!in) throw SourceError("cannot read image " + source);
    std::ostringstream ss;
    ss << in.rdbuf();
    return "data:" + mime_for(source) + ";base64," + base64_encode(ss.str());
}

} // namespace detail

/// Request body in the chat-completions schema.
inline json chat_payload(const ChatRequest &r) {
    json messages = json::array();
    for (const auto &m : r.messages) {
        if (m.image) {
            messages.push_back({{"role", m.role},
                                {"content",
                                 {{{"type", "text"}, {"text", m.content}},
                                  {{"type", "image_url"}, {"image_url", {{"url", detail::image_url(*m.image)}}}}}}});
        } else {
            messages.push_back({{"role", m.role}, {"content", m.content}});
        }
    }
    json body = {{"model", r.model},
                 {"messages", messages},
                 {"temperature", r.decoding.temperature},
                 {"top_p", r.decoding.top_p},
                 {"max_tokens", r.decoding.max_tokens}};
    if (r.seed) body["seed"] = *r.seed;
    return body;
}

class OpenAiProvider : public Provider {
  public:
    OpenAiProvider(ProviderConfig cfg, std::shared_ptr<HttpTransport> transport,
                   Clock &clock = SystemClock::instance(), RetryPolicy retry = {})
        : cfg_(std::move(cfg)), transport_(std::move(transport)), clock_(clock), retry_(retry),
          limiter_(cfg_.requests_per_minute, cfg_.max_parallel, clock) {
        validate(cfg_);
    }

    std::string name() const override { return cfg_.name; }
    std::size_t embed_batch_cap() const override { return cfg_.embed_batch_size; }

    ChatReply chat(const ChatRequest &request) override {
        if (request.messages.empty()) throw InvalidArg("chat: no messages");
        const std::string body = chat_payload(request).dump();
        const auto start = std::chrono::steady_clock::now();
        HttpResponse res = send("/chat/completions", body);
        ChatReply reply;
        try {
            json j = json::parse(res.body);
            const auto &choice = j.at("choices").at(0);
            const auto &content = choice.at("message").at("content");
            reply.text = content.is_null() ? std::string() : content.get<std::string>();
            reply.model = j.value("model", request.model);
            if (j.contains("usage")) {
                reply.usage.prompt_tokens = j["usage"].value("prompt_tokens", 0);
                reply.usage.completion_tokens = j["usage"].value("completion_tokens", 0);
            }
        } catch (const json::exception &e) {
            throw ProviderError(res.status, 1, std::string("malformed chat reply: ") + e.what());
        }
        reply.latency_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        return reply;
    }

    EmbedReply embed_batch(const std::string &model, std::span<const std::string> texts) override {
        json body = {{"model", model}, {"input", std::vector<std::string>(texts.begin(), texts.end())}};
        HttpResponse res = send("/embeddings", body.dump());
        EmbedReply reply;
        reply.model = model;
        try {
            json j = json::parse(res.body);
            const auto &data = j.at("data");
            reply.vectors.resize(data.size());
            for (std::size_t k = 0; k < data.size(); ++k) {
                std::size_t idx = data[k].value("index", k);
                if (idx >= data.size()) throw ProviderError(res.status, 1, "embedding index out of range");
                reply.vectors[idx] = data[k].at("embedding").get<Embedding>();
            }
        } catch (const json::exception &e) {
            throw ProviderError(res.status, 1, std::string("malformed embeddings reply: ") + e.what());
        }
        return reply;
    }

    const RateLimiter &limiter() const { return limiter_; }

  private:
    HttpResponse send(const std::string &path, const std::string &body) {
        Headers headers = {{"Content-Type", "application/json"}};
        if (auto key = cfg_.api_key(); !key.empty()) headers.emplace_back("Authorization", "Bearer " + key);
        return with_retries(
            [&] {
                auto permit = limiter_.acquire();
                return transport_->post_json(path, body, headers);
            },
            retry_, clock_);
    }

    ProviderConfig cfg_;
    std::shared_ptr<HttpTransport> transport_;
    Clock &clock_;
    RetryPolicy retry_;
    RateLimiter limiter_;
};

} // namespace mn
