#pragma once

// View generation: numbered textual perspectives per prompt, and the image chain
// describe -> rewrite. assemble_prompt turns a prompt and an optional view into the final request.

#include <cctype>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <regex>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "mn/corpus.hpp"
#include "mn/error.hpp"
#include "mn/provider.hpp"
#include "mn/templates.hpp"
#include "mn/textops.hpp"

namespace mn {

/// Items of a numbered list ("1. x", "2) y", "3 - z"), in order. Unnumbered lines are ignored.
inline std::vector<std::string> parse_numbered_list(const std::string &text) {
    static const std::regex item(R"(^\s*\(?\d+\s*[.):-]\s*(.+?)\s*$)");
    std::vector<std::string> out;
    std::istringstream in(text);
    std::string line;
    std::smatch m;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (std::regex_match(line, m, item)) {
            std::string body = m[1].str();
            if (body.size() >= 4 && body.starts_with("**") && body.ends_with("**")) body = body.substr(2, body.size() - 4);
            if (!body.empty()) out.push_back(body);
        }
    }
    return out;
}

/// Dedup key: lowercase with whitespace runs collapsed to one space.
inline std::string normalize_view_text(std::string_view s) {
    std::string lowered = to_lower(s);
    std::string out;
    bool space = false;
    for (char c : lowered) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            space = !out.empty();
            continue;
        }
        if (space) out += ' ';
        space = false;
        out += c;
    }
    return out;
}

inline std::string view_id(char prefix, std::size_t position) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%c%03zu", prefix, position);
    return buf;
}

inline constexpr DecodingParams kViewDecoding{0.9, 0.95, 4096};
inline constexpr int kViewTopUpRounds = 2;

/// Exactly `count` distinct views (t001, t002, ...) or ViewShortfall. Duplicates are dropped by
/// normalized text and missing views requested again, at most twice.
inline std::vector<ViewRecord> generate_text_views(Provider &provider, const PromptSpec &prompt, std::size_t count,
                                                   const std::string &model,
                                                   const TemplateSet &tpl = TemplateSet::defaults(),
                                                   std::uint64_t seed = 0) {
    if (count < 1) throw InvalidArg("generate_text_views: count must be >= 1");
    std::vector<ViewRecord> views;
    std::set<std::string> seen;
    for (int round = 0; round <= kViewTopUpRounds && views.size() < count; ++round) {
        std::size_t want = count - views.size();
        auto request = user_request(model, tpl.text_views.render({{"count", std::to_string(want)}, {"prompt", prompt.text}}),
                                    "text_views", kViewDecoding);
        request.seed = mix64(seed, static_cast<std::uint64_t>(round));
        if (round > 0) {
            std::string have;
            for (const auto &v : views) have += "\n- " + v.content;
            request.messages.back().content += "\nAvoid repeating these perspectives:" + have;
        }
        for (auto &item : parse_numbered_list(provider.chat(request).text)) {
            if (views.size() == count) break;
            if (!seen.insert(normalize_view_text(item)).second) continue;
            ViewRecord v;
            v.view_id = view_id('t', views.size() + 1);
            v.prompt_id = prompt.id;
            v.kind = ViewKind::text;
            v.content = std::move(item);
            views.push_back(std::move(v));
        }
    }
    if (views.size() < count) throw ViewShortfall(views.size(), count);
    return views;
}

namespace detail {

inline bool is_url(std::string_view s) { return s.starts_with("http://") || s.starts_with("https://") || s.starts_with("data:"); }

} // namespace detail

/// Raw caption of an image file or URL, returned verbatim.
inline std::string describe_image(Provider &provider, const std::string &source, const std::string &vision_model,
                                  const TemplateSet &tpl = TemplateSet::defaults()) {
    if (!detail::is_url(source)) {
        std::ifstream probe(source, std::ios::binary);
        if (!probe) throw SourceError("cannot read image " + source);
    }
    auto request = user_request(vision_model, tpl.describe.render({}), "describe", kViewDecoding);
    request.messages.back().image = source;
    return provider.chat(request).text;
}

/// Refined prose version of a raw image description.
inline std::string rewrite_description(Provider &provider, const std::string &raw, const std::string &model,
                                       const TemplateSet &tpl = TemplateSet::defaults()) {
    if (detail::trim(raw).empty()) throw InvalidArg("rewrite_description: empty description");
    auto request = user_request(model, tpl.rewrite.render({{"description", raw}}), "rewrite", kViewDecoding);
    return detail::trim(provider.chat(request).text);
}

/// describe -> rewrite for one image; keeps both stages on the record.
inline ViewRecord image_view(Provider &provider, const std::string &prompt_id, const std::string &source,
                             std::size_t position, const ModelIds &models,
                             const TemplateSet &tpl = TemplateSet::defaults()) {
    ViewRecord v;
    v.view_id = view_id('i', position);
    v.prompt_id = prompt_id;
    v.kind = ViewKind::image;
    v.source = source;
    v.raw_description = describe_image(provider, source, models.vision, tpl);
    v.content = rewrite_description(provider, *v.raw_description, models.chat, tpl);
    return v;
}

/// The prompt unchanged for the baseline; otherwise the view as a context block before the prompt.
inline std::string assemble_prompt(const std::string &prompt, const std::optional<ViewRecord> &view,
                                   const TemplateSet &tpl = TemplateSet::defaults()) {
    if (!view) return prompt;
    return tpl.assemble.render({{"view", view->content}, {"prompt", prompt}});
}

struct ImageSource {
    std::string prompt_id;
    std::string source;
};

/// JSONL of {prompt_id, source}. Relative local paths resolve against the manifest's directory.
inline std::vector<ImageSource> load_image_manifest(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) throw StorageError("cannot open image manifest " + path.string());
    std::vector<ImageSource> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::trim(line).empty()) continue;
        ImageSource s;
        try {
            auto j = json::parse(line);
            s.prompt_id = j.at("prompt_id").get<std::string>();
            s.source = j.at("source").get<std::string>();
        } catch (const json::exception &e) {
            throw ParseError(lineno, e.what());
        }
        if (!detail::is_url(s.source) && std::filesystem::path(s.source).is_relative())
            s.source = (path.parent_path() / s.source).string();
        out.push_back(std::move(s));
    }
    return out;
}

} // namespace mn
