#pragma once

// Offline providers: a deterministic mock with echo / repetitive / diverse personalities, and a
// scripted provider that replays a fixed queue of replies and failures.

#include <array>
#include <cmath>
#include <iterator>
#include <set>
#include <sstream>
#include <atomic>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <mutex>
#include <random>
#include <regex>
#include <string>
#include <variant>
#include <vector>

#include "mn/provider.hpp"
#include "mn/textops.hpp"

namespace mn {

enum class MockPersonality { echo, repetitive, diverse };

inline MockPersonality parse_mock_personality(std::string_view s) {
    if (s == "echo") return MockPersonality::echo;
    if (s == "repetitive") return MockPersonality::repetitive;
    if (s == "diverse") return MockPersonality::diverse;
    throw InvalidArg("unknown mock personality: " + std::string(s));
}

namespace detail {

inline constexpr std::string_view kMockLexicon[] = {
    "river", "lantern", "orchard", "theory", "harbor", "memory", "signal", "garden", "engine", "ritual",
    "compass", "archive", "festival", "glacier", "market", "library", "horizon", "canvas", "circuit", "meadow",
    "neighbor", "ancestor", "machine", "forest", "melody", "journey", "kitchen", "bridge", "island", "mirror",
    "village", "planet", "workshop", "season", "letter", "harvest", "window", "mountain", "story", "museum",
    "curious", "patient", "fragile", "vivid", "ancient", "quiet", "restless", "generous", "stubborn", "luminous",
    "shared", "hidden", "distant", "tender", "bold", "humble", "wild", "careful", "playful", "solemn",
    "builds", "questions", "remembers", "invites", "measures", "reshapes", "gathers", "protects", "explores",
    "balances", "teaches", "borrows", "celebrates", "repairs", "translates", "imagines", "nurtures", "tests",
    "maps", "weaves", "through", "beneath", "beyond", "alongside", "despite", "within", "across", "toward",
    "economists", "children", "farmers", "poets", "engineers", "nurses", "sailors", "historians", "gardeners",
    "physicists", "teachers", "migrants", "architects", "painters", "monks", "athletes", "elders", "students",
    "cooperation", "solitude", "curiosity", "resilience", "friendship", "craft", "humor", "wonder", "discipline",
    "gratitude", "rhythm", "trust", "courage", "play", "service", "mastery", "belonging", "freedom", "silence",
    "laughter", "purpose", "rain", "bread", "music", "dawn", "soil", "salt", "ink", "clay", "wind", "stone",
    "fire", "tides", "seeds", "maps", "threads", "lamps", "bells", "boats", "kites", "roots", "stars", "wells",
    "paths", "songs", "clocks", "doors", "nests", "waves"};

inline std::string topic_of(const std::string &prompt) {
    static const std::set<std::string> stop = {"what", "is", "the", "of", "in", "a", "an", "and", "how",
                                               "would", "could", "can", "you", "to", "if", "are", "most",
                                               "someone", "who", "it", "ever", "there", "that", "those"};
    std::string best;
    for (const auto &tok : tokenize(prompt))
        if (!stop.contains(tok) && tok.size() > best.size()) best = tok;
    return best.empty() ? "life" : best;
}

/// Text after the first line that equals `marker`, or after the first line when no marker is given.
inline std::string section_after(const std::string &text, const std::string &marker) {
    if (marker.empty()) {
        auto nl = text.find('\n');
        return nl == std::string::npos ? std::string() : text.substr(nl + 1);
    }
    auto pos = text.find(marker + "\n");
    return pos == std::string::npos ? std::string() : text.substr(pos + marker.size() + 1);
}

inline std::string section_between(const std::string &text, const std::string &begin, const std::string &end) {
    std::string rest = section_after(text, begin);
    auto pos = rest.find("\n" + end + "\n");
    return pos == std::string::npos ? rest : rest.substr(0, pos);
}

} // namespace detail

/// Deterministic offline provider. Every reply is a pure function of (personality, seed, request).
///
/// Tasks:
///   generate     echo: last user message; repetitive: sentences from a three-item pool;
///                diverse: seeded word sequences over a fixed lexicon
///   text_views   numbered list with the requested count of perspectives
///   describe     caption built from the image file name
///   rewrite      the description, unchanged
///   summarize    the text to summarize, unchanged
///   relevance    "relevant"
///   structure    "8"
///   ielts        "6.5"
///   novelty      "redundant" when the hypothesis equals a premise verbatim, else "novel"
///   other        the last user message
/// Embeddings are signed feature-hashed token counts, unit-normalized.
class MockProvider : public Provider {
  public:
    explicit MockProvider(MockPersonality personality = MockPersonality::echo, std::uint64_t seed = 0,
                          std::size_t embed_dim = 256, std::size_t batch_cap = 128)
        : personality_(personality), seed_(seed), dim_(embed_dim), batch_cap_(batch_cap) {}

    /// Includes the personality and seed so that cache entries never mix mock configurations.
    std::string name() const override {
        static constexpr const char *names[] = {"echo", "repetitive", "diverse"};
        return std::string("mock:") + names[static_cast<int>(personality_)] + ":" + std::to_string(seed_);
    }
    std::size_t embed_batch_cap() const override { return batch_cap_; }

    ChatReply chat(const ChatRequest &request) override {
        ++chat_calls_;
        if (request.messages.empty()) throw InvalidArg("chat: no messages");
        ChatReply reply;
        reply.model = request.model;
        reply.text = respond(request);
        reply.usage.prompt_tokens = static_cast<int>(tokenize(request.messages.back().content).size());
        reply.usage.completion_tokens = static_cast<int>(tokenize(reply.text).size());
        return reply;
    }

    EmbedReply embed_batch(const std::string &model, std::span<const std::string> texts) override {
        ++embed_calls_;
        EmbedReply r;
        r.model = model;
        for (const auto &t : texts) r.vectors.push_back(hash_embedding(t, dim_));
        return r;
    }

    static Embedding hash_embedding(const std::string &text, std::size_t dim) {
        Embedding v(dim, 0.0);
        for (const auto &tok : tokenize(text)) {
            std::uint64_t h = fnv1a(tok);
            v[h % dim] += (h >> 63) ? 1.0 : -1.0;
        }
        double n = 0.0;
        for (double x : v) n += x * x;
        if (n > 0.0) {
            n = std::sqrt(n);
            for (double &x : v) x /= n;
        }
        return v;
    }

    std::size_t chat_calls() const { return chat_calls_; }
    std::size_t embed_calls() const { return embed_calls_; }
    std::size_t calls() const { return chat_calls_ + embed_calls_; }

  private:
    std::mt19937_64 rng_for(const ChatRequest &r) const {
        std::uint64_t s = mix64(seed_, r.seed.value_or(0));
        for (const auto &m : r.messages) s = mix64(s, fnv1a(m.content));
        return std::mt19937_64(s);
    }

    std::string respond(const ChatRequest &r) const {
        const std::string &last = r.messages.back().content;
        if (r.task == "generate") return generate(r);
        if (r.task == "text_views") return text_views(r);
        if (r.task == "describe") {
            const auto &img = r.messages.back().image;
            std::string stem = img ? std::filesystem::path(*img).stem().string() : "unknown";
            for (auto &c : stem)
                if (c == '_' || c == '-') c = ' ';
            return "A photograph of " + stem + ".";
        }
        if (r.task == "rewrite") return detail::section_after(last, "Description:");
        if (r.task == "summarize") return detail::section_after(last, "");
        if (r.task == "relevance") return "relevant";
        if (r.task == "structure") return "8";
        if (r.task == "ielts") return "6.5";
        if (r.task == "novelty") {
            std::string premises = detail::section_between(last, "PREMISES:", "HYPOTHESIS:");
            std::string hyp = detail::section_after(last, "HYPOTHESIS:");
            auto nl = hyp.rfind('\n');
            if (nl != std::string::npos) hyp = hyp.substr(0, nl);
            std::istringstream lines(premises);
            std::string line;
            while (std::getline(lines, line)) {
                auto dot = line.find(". ");
                if (dot != std::string::npos && line.substr(dot + 2) == hyp) return "redundant";
            }
            return "novel";
        }
        return last;
    }

    std::string generate(const ChatRequest &r) const {
        const std::string &last = r.messages.back().content;
        if (personality_ == MockPersonality::echo) return last;
        auto rng = rng_for(r);
        // The question is the last line of an assembled prompt, or the whole message.
        auto nl = last.rfind('\n');
        std::string topic = detail::topic_of(nl == std::string::npos ? last : last.substr(nl + 1));
        if (personality_ == MockPersonality::repetitive) {
            const std::array<std::string, 3> pool = {
                topic + " is a very good thing and it is good to have a good " + topic + ".",
                "In the end " + topic + " is what it is and it is good for you and it is good for me.",
                "It is good to think about " + topic + " because " + topic + " is good."};
            return pool[rng() % 3] + " " + pool[rng() % 3];
        }
        std::size_t sentences = 3 + rng() % 3;
        std::string out;
        for (std::size_t s = 0; s < sentences; ++s) {
            std::size_t words = 8 + rng() % 7;
            for (std::size_t w = 0; w < words; ++w) {
                std::string word(detail::kMockLexicon[rng() % std::size(detail::kMockLexicon)]);
                if (w == 0) word[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(word[0])));
                if (!out.empty()) out += ' ';
                out += word;
            }
            out += '.';
        }
        return out;
    }

    std::string text_views(const ChatRequest &r) const {
        const std::string &last = r.messages.back().content;
        std::smatch m;
        std::size_t count = 1;
        static const std::regex count_re(R"((\d+) distinct perspectives)");
        if (std::regex_search(last, m, count_re)) count = std::stoul(m[1]);
        auto prompt_pos = last.rfind("Prompt: ");
        std::string topic = detail::topic_of(prompt_pos == std::string::npos ? last : last.substr(prompt_pos));
        auto rng = rng_for(r);
        std::string out;
        for (std::size_t i = 0; i < count; ++i) {
            std::string view = "Consider " + topic + " from the viewpoint of";
            for (int w = 0; w < 6; ++w) view += " " + std::string(detail::kMockLexicon[rng() % std::size(detail::kMockLexicon)]);
            out += std::to_string(i + 1) + ". " + view + ".\n";
        }
        return out;
    }

    MockPersonality personality_;
    std::uint64_t seed_;
    std::size_t dim_;
    std::size_t batch_cap_;
    mutable std::atomic<std::size_t> chat_calls_{0};
    mutable std::atomic<std::size_t> embed_calls_{0};
};

/// Replays scripted outcomes in order, one per chat call. Each outcome is a reply text or a
/// failure (ProviderError / AuthError). Requests are recorded for inspection.
class ScriptedProvider : public Provider {
  public:
    struct Fail {
        int status = 500;
    };
    using Outcome = std::variant<std::string, Fail>;

    ScriptedProvider() = default;
    explicit ScriptedProvider(std::vector<Outcome> script) : script_(script.begin(), script.end()) {}

    void push(Outcome o) {
        std::lock_guard lock(mu_);
        script_.push_back(std::move(o));
    }

    std::string name() const override { return "scripted"; }

    ChatReply chat(const ChatRequest &request) override {
        std::lock_guard lock(mu_);
        requests_.push_back(request);
        if (script_.empty()) throw ProviderError(0, 1, "script exhausted");
        Outcome o = std::move(script_.front());
        script_.pop_front();
        if (auto *f = std::get_if<Fail>(&o)) {
            if (f->status == 401 || f->status == 403) throw AuthError(f->status, "scripted auth failure");
            throw ProviderError(f->status, 1, "scripted failure");
        }
        ChatReply r;
        r.text = std::get<std::string>(o);
        r.model = request.model;
        return r;
    }

    EmbedReply embed_batch(const std::string &model, std::span<const std::string> texts) override {
        EmbedReply r;
        r.model = model;
        for (const auto &t : texts) r.vectors.push_back(MockProvider::hash_embedding(t, 64));
        return r;
    }

    std::vector<ChatRequest> requests() const {
        std::lock_guard lock(mu_);
        return requests_;
    }
    std::size_t remaining() const {
        std::lock_guard lock(mu_);
        return script_.size();
    }

  private:
    mutable std::mutex mu_;
    std::deque<Outcome> script_;
    std::vector<ChatRequest> requests_;
};

} // namespace mn
