#pragma once

// Strict parsing of judge replies, with a single reminder retry.

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <span>
#include <initializer_list>
#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <vector>

#include "mn/error.hpp"
#include "mn/provider.hpp"
#include "mn/templates.hpp"

namespace mn {

/// The reply as one of `choices`, or nothing. Surrounding whitespace, quotes and punctuation are
/// stripped and case is folded; anything left that is not exactly one choice is rejected.
inline std::optional<std::string> parse_one_word(std::string_view reply, std::span<const std::string> choices) {
    auto strip = [](unsigned char c) { return std::isspace(c) || std::ispunct(c); };
    std::size_t b = 0, e = reply.size();
    while (b < e && strip(static_cast<unsigned char>(reply[b]))) ++b;
    while (e > b && strip(static_cast<unsigned char>(reply[e - 1]))) --e;
    std::string word(reply.substr(b, e - b));
    for (auto &c : word) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    for (const auto &choice : choices)
        if (word == choice) return choice;
    return std::nullopt;
}

/// First decimal number in the reply, e.g. "Score: 7.5/10" -> 7.5.
inline std::optional<double> parse_first_number(std::string_view reply) {
    static const std::regex number(R"([-+]?\d+(?:\.\d+)?)");
    std::match_results<std::string_view::const_iterator> m;
    if (!std::regex_search(reply.begin(), reply.end(), m, number)) return std::nullopt;
    return std::stod(m.str());
}

struct JudgeReply {
    std::string verdict; // parsed choice
    std::string raw;     // last raw reply
};

namespace detail {

inline std::string quoted_choices(std::span<const std::string> choices) {
    std::string out;
    for (std::size_t i = 0; i < choices.size(); ++i) {
        if (i) out += i + 1 == choices.size() ? " or " : ", ";
        out += "\"" + choices[i] + "\"";
    }
    return out;
}

inline ChatRequest with_reminder(ChatRequest request, const std::string &reply, std::string reminder) {
    request.messages.push_back({"assistant", reply, std::nullopt});
    request.messages.push_back({"user", std::move(reminder), std::nullopt});
    return request;
}

} // namespace detail

/// Sends `request` and parses a one-word verdict. An unparseable reply gets exactly one follow-up
/// asking for one word; a second failure raises JudgeParseError.
inline JudgeReply ask_one_word(Provider &provider, const ChatRequest &request, std::span<const std::string> choices) {
    ChatReply first = provider.chat(request);
    if (auto v = parse_one_word(first.text, choices)) return {*v, first.text};
    auto retry = detail::with_reminder(
        request, first.text,
        PromptTemplate(std::string(templates::kOneWordReminder)).render({{"choices", detail::quoted_choices(choices)}}));
    ChatReply second = provider.chat(retry);
    if (auto v = parse_one_word(second.text, choices)) return {*v, second.text};
    throw JudgeParseError(second.text, "expected exactly one of " + detail::quoted_choices(choices));
}

struct ScoreReply {
    double score = 0.0; // clamped to [low, high]
    std::string raw;
};

/// Sends `request` and reads the first number in the reply, clamped to [low, high]. A reply with
/// no number gets one reminder; a second failure raises JudgeParseError.
inline ScoreReply ask_score(Provider &provider, const ChatRequest &request, double low, double high) {
    auto clamp = [&](double v) { return std::clamp(v, low, high); };
    ChatReply first = provider.chat(request);
    if (auto v = parse_first_number(first.text)) return {clamp(*v), first.text};
    char lo[16], hi[16];
    std::snprintf(lo, sizeof lo, "%.1f", low);
    std::snprintf(hi, sizeof hi, "%.1f", high);
    auto retry = detail::with_reminder(request, first.text,
                                       PromptTemplate(std::string(templates::kScoreReminder)).render({{"low", lo}, {"high", hi}}));
    ChatReply second = provider.chat(retry);
    if (auto v = parse_first_number(second.text)) return {clamp(*v), second.text};
    throw JudgeParseError(second.text, "expected a score");
}

} // namespace mn
