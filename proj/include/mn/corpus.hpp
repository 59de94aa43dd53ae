#pragma once

// Domain records (prompts, views, responses, run manifests) and their append-only JSONL stores.

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <memory>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "mn/error.hpp"
#include "mn/provider.hpp"

namespace mn {

struct PromptSpec {
    std::string id;
    std::string text;
    std::optional<std::string> subject;

    bool operator==(const PromptSpec &) const = default;
};

enum class ViewKind { text, image };

struct ViewRecord {
    std::string view_id;
    std::string prompt_id;
    ViewKind kind = ViewKind::text;
    std::string content;
    std::optional<std::string> source;
    std::optional<std::string> raw_description;

    bool operator==(const ViewRecord &) const = default;
};

enum class Variant { baseline, text_view, image_view };

struct ResponseRecord {
    std::string prompt_id;
    Variant variant = Variant::baseline;
    std::optional<std::string> view_id;
    std::string model;
    std::size_t sample_index = 0;
    std::string text;
    DecodingParams decoding;
    std::string created_at;

    bool operator==(const ResponseRecord &) const = default;
};

inline std::string to_string(ViewKind k) { return k == ViewKind::text ? "text" : "image"; }

inline std::string to_string(Variant v) {
    switch (v) {
    case Variant::baseline: return "baseline";
    case Variant::text_view: return "text_view";
    case Variant::image_view: return "image_view";
    }
    return "baseline";
}

inline Variant parse_variant(std::string_view s) {
    if (s == "baseline") return Variant::baseline;
    if (s == "text_view") return Variant::text_view;
    if (s == "image_view") return Variant::image_view;
    throw InvalidArg("unknown variant: " + std::string(s));
}

inline ViewKind parse_view_kind(std::string_view s) {
    if (s == "text") return ViewKind::text;
    if (s == "image") return ViewKind::image;
    throw InvalidArg("unknown view kind: " + std::string(s));
}

// JSON mapping: field names exactly as the record members, optional fields omitted when unset.

inline void to_json(json &j, const PromptSpec &p) {
    j = json{{"id", p.id}, {"text", p.text}};
    if (p.subject) j["subject"] = *p.subject;
}
inline void from_json(const json &j, PromptSpec &p) {
    p.id = j.value("id", "");
    p.text = j.at("text").get<std::string>();
    if (j.contains("subject") && !j["subject"].is_null()) p.subject = j["subject"].get<std::string>();
}

inline void to_json(json &j, const ViewRecord &v) {
    j = json{{"view_id", v.view_id}, {"prompt_id", v.prompt_id}, {"kind", to_string(v.kind)}, {"content", v.content}};
    if (v.source) j["source"] = *v.source;
    if (v.raw_description) j["raw_description"] = *v.raw_description;
}
inline void from_json(const json &j, ViewRecord &v) {
    v.view_id = j.at("view_id").get<std::string>();
    v.prompt_id = j.at("prompt_id").get<std::string>();
    v.kind = parse_view_kind(j.at("kind").get<std::string>());
    v.content = j.at("content").get<std::string>();
    if (j.contains("source") && !j["source"].is_null()) v.source = j["source"].get<std::string>();
    if (j.contains("raw_description") && !j["raw_description"].is_null())
        v.raw_description = j["raw_description"].get<std::string>();
}

inline void to_json(json &j, const ResponseRecord &r) {
    j = json{{"prompt_id", r.prompt_id}, {"variant", to_string(r.variant)}};
    if (r.view_id) j["view_id"] = *r.view_id;
    j["model"] = r.model;
    j["sample_index"] = r.sample_index;
    j["text"] = r.text;
    j["decoding"] = r.decoding;
    j["created_at"] = r.created_at;
}
inline void from_json(const json &j, ResponseRecord &r) {
    r.prompt_id = j.at("prompt_id").get<std::string>();
    r.variant = parse_variant(j.at("variant").get<std::string>());
    if (j.contains("view_id") && !j["view_id"].is_null()) r.view_id = j["view_id"].get<std::string>();
    r.model = j.at("model").get<std::string>();
    const auto &idx = j.at("sample_index");
    if (!idx.is_number_unsigned() && !(idx.is_number_integer() && idx.get<long long>() >= 0))
        throw InvalidArg("sample_index must be a non-negative integer");
    r.sample_index = idx.get<std::size_t>();
    r.text = j.at("text").get<std::string>();
    r.decoding = j.value("decoding", DecodingParams{});
    r.created_at = j.value("created_at", "");
}

inline void validate(const ViewRecord &v) {
    if (v.view_id.empty() || v.prompt_id.empty()) throw InvalidRecord("view: empty view_id or prompt_id");
    if (v.content.empty()) throw InvalidRecord("view " + v.view_id + ": empty content");
    if (v.kind == ViewKind::image && !v.source) throw InvalidRecord("image view " + v.view_id + ": no source");
}

inline void validate(const ResponseRecord &r) {
    if (r.prompt_id.empty()) throw InvalidRecord("response: empty prompt_id");
    if (r.model.empty()) throw InvalidRecord("response: empty model");
    if ((r.variant == Variant::baseline) == r.view_id.has_value())
        throw InvalidRecord("response " + r.prompt_id + "#" + std::to_string(r.sample_index) +
                            ": view_id must be absent exactly for the baseline variant");
    try {
        validate(r.decoding);
    } catch (const InvalidArg &e) {
        throw InvalidRecord(std::string("response decoding: ") + e.what());
    }
}

/// (prompt_id, variant, model, sample_index, view_id)
inline std::string unique_key(const ResponseRecord &r) {
    return r.prompt_id + '\x1f' + to_string(r.variant) + '\x1f' + r.model + '\x1f' +
           std::to_string(r.sample_index) + '\x1f' + r.view_id.value_or("");
}

inline std::string unique_key(const ViewRecord &v) { return v.prompt_id + '\x1f' + v.view_id; }

inline std::string utc_timestamp() {
    auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// ---------------------------------------------------------------------------------------------
// Prompts

namespace detail {

inline bool slug_safe(const std::string &id) {
    if (id.empty()) return false;
    return std::all_of(id.begin(), id.end(), [](unsigned char c) {
        return std::isalnum(c) || c == '_' || c == '-' || c == '.';
    });
}

inline std::string trim(std::string_view s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

inline std::string auto_prompt_id(std::size_t position) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "p%03zu", position);
    return buf;
}

} // namespace detail

/// JSONL ({"id"?, "text", "subject"?}) or plain text with one prompt per line. Missing ids are
/// assigned p001, p002, ... by position.
inline std::vector<PromptSpec> load_prompts(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) throw StorageError("cannot open prompts file " + path.string());
    std::vector<PromptSpec> out;
    std::set<std::string> seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = detail::trim(line);
        if (t.empty()) continue;
        PromptSpec p;
        if (t.front() == '{') {
            try {
                p = json::parse(t).get<PromptSpec>();
            } catch (const json::exception &e) {
                throw ParseError(lineno, e.what());
            }
        } else {
            p.text = t;
        }
        if (p.text.empty()) throw ParseError(lineno, "empty prompt text");
        if (p.id.empty()) p.id = detail::auto_prompt_id(out.size() + 1);
        if (!detail::slug_safe(p.id)) throw ParseError(lineno, "prompt id is not slug-safe: " + p.id);
        if (!seen.insert(p.id).second) throw DuplicateId(p.id);
        out.push_back(std::move(p));
    }
    if (out.empty()) throw NoPrompts("no prompts in " + path.string());
    return out;
}

inline void save_prompts(const std::filesystem::path &path, std::span<const PromptSpec> prompts) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw StorageError("cannot write " + path.string());
    for (const auto &p : prompts) out << json(p).dump() << '\n';
}

// ---------------------------------------------------------------------------------------------
// JSONL stores

namespace detail {

/// One mutex per file path, so appends to the same file from different stores serialize.
inline std::mutex &file_mutex(const std::filesystem::path &path) {
    static std::mutex registry_mu;
    static std::map<std::string, std::unique_ptr<std::mutex>> registry;
    std::lock_guard lock(registry_mu);
    auto key = std::filesystem::weakly_canonical(path).string();
    auto &slot = registry[key];
    if (!slot) slot = std::make_unique<std::mutex>();
    return *slot;
}

template <class Record, class Fn>
void for_each_line(const std::filesystem::path &path, Fn &&fn) {
    std::ifstream in(path);
    if (!in) throw StorageError("cannot open " + path.string());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::trim(line).empty()) continue;
        Record r;
        try {
            r = json::parse(line).get<Record>();
        } catch (const json::exception &e) {
            throw ParseError(lineno, e.what());
        } catch (const InvalidArg &e) {
            throw ParseError(lineno, e.what());
        }
        fn(std::move(r));
    }
}

} // namespace detail

/// Append-only JSONL file of records with dedup on the record's unique key. Keys of existing
/// lines are loaded once at construction; appends are serialized per file.
template <class Record>
class JsonlStore {
  public:
    explicit JsonlStore(std::filesystem::path path) : path_(std::move(path)), mu_(&detail::file_mutex(path_)) {
        std::lock_guard lock(*mu_);
        if (std::filesystem::exists(path_))
            detail::for_each_line<Record>(path_, [&](Record r) { keys_.insert(unique_key(r)); });
    }

    /// Validates every record first; then appends those whose key is new. Returns the count written.
    std::size_t append(std::span<const Record> records) {
        for (const auto &r : records) validate(r);
        std::lock_guard lock(*mu_);
        std::error_code ec;
        if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path(), ec);
        std::ofstream out(path_, std::ios::app);
        if (!out) throw StorageError("cannot append to " + path_.string());
        std::size_t written = 0;
        for (const auto &r : records) {
            if (!keys_.insert(unique_key(r)).second) continue;
            out << json(r).dump() << '\n';
            ++written;
        }
        out.flush();
        if (!out) throw StorageError("write failed on " + path_.string());
        return written;
    }

    bool contains(const std::string &key) const {
        std::lock_guard lock(*mu_);
        return keys_.contains(key);
    }

    std::size_t size() const {
        std::lock_guard lock(*mu_);
        return keys_.size();
    }

    const std::filesystem::path &path() const { return path_; }

  private:
    std::filesystem::path path_;
    std::mutex *mu_;
    std::unordered_set<std::string> keys_;
};

using ResponseStore = JsonlStore<ResponseRecord>;
using ViewStore = JsonlStore<ViewRecord>;

inline std::size_t append_records(const std::filesystem::path &path, std::span<const ResponseRecord> records) {
    return ResponseStore(path).append(records);
}

struct RecordFilter {
    std::optional<std::string> prompt_id;
    std::optional<Variant> variant;
    std::optional<std::string> model;
    std::optional<std::size_t> limit;
};

/// Records matching every set filter field, ordered by sample_index (file order among equals),
/// truncated to the first `limit`.
inline std::vector<ResponseRecord> read_records(const std::filesystem::path &path, const RecordFilter &filter = {}) {
    std::vector<ResponseRecord> out;
    detail::for_each_line<ResponseRecord>(path, [&](ResponseRecord r) {
        if (filter.prompt_id && r.prompt_id != *filter.prompt_id) return;
        if (filter.variant && r.variant != *filter.variant) return;
        if (filter.model && r.model != *filter.model) return;
        out.push_back(std::move(r));
    });
    std::stable_sort(out.begin(), out.end(),
                     [](const ResponseRecord &a, const ResponseRecord &b) { return a.sample_index < b.sample_index; });
    if (filter.limit && out.size() > *filter.limit) out.resize(*filter.limit);
    return out;
}

inline std::size_t append_views(const std::filesystem::path &path, std::span<const ViewRecord> views) {
    return ViewStore(path).append(views);
}

/// Views in file order, optionally restricted to one prompt and kind.
inline std::vector<ViewRecord> read_views(const std::filesystem::path &path,
                                          const std::optional<std::string> &prompt_id = std::nullopt,
                                          const std::optional<ViewKind> &kind = std::nullopt) {
    std::vector<ViewRecord> out;
    if (!std::filesystem::exists(path)) return out;
    detail::for_each_line<ViewRecord>(path, [&](ViewRecord v) {
        if (prompt_id && v.prompt_id != *prompt_id) return;
        if (kind && v.kind != *kind) return;
        out.push_back(std::move(v));
    });
    return out;
}

// ---------------------------------------------------------------------------------------------
// Run manifest

struct RunManifest {
    std::string run_id = "run";
    std::filesystem::path prompts;
    std::optional<std::filesystem::path> image_manifest;
    std::vector<std::string> models;
    std::vector<Variant> variants = {Variant::baseline, Variant::text_view, Variant::image_view};
    std::vector<std::size_t> sample_sizes = {100, 250, 500, 1000, 1500, 2000};
    std::size_t views_per_prompt = 50;
    std::optional<std::filesystem::path> provider_config;
    std::filesystem::path output_dir = "out";
    DecodingParams decoding;
    std::uint64_t seed = 0;

    std::size_t max_sample_size() const { return *std::max_element(sample_sizes.begin(), sample_sizes.end()); }
    std::filesystem::path views_path() const { return output_dir / "views.jsonl"; }
    std::filesystem::path responses_path() const { return output_dir / "responses.jsonl"; }
};

inline void validate(const RunManifest &m) {
    if (m.sample_sizes.empty()) throw InvalidArg("manifest: sample_sizes is empty");
    for (auto s : m.sample_sizes)
        if (s == 0) throw InvalidArg("manifest: sample sizes must be positive");
    if (m.views_per_prompt < 1) throw InvalidArg("manifest: views_per_prompt must be >= 1");
    if (m.models.empty()) throw InvalidArg("manifest: no models");
    if (m.variants.empty()) throw InvalidArg("manifest: no variants");
    validate(m.decoding);
}

/// Relative paths inside the manifest resolve against `base_dir` (the manifest's directory).
inline RunManifest manifest_from_json(const json &j, const std::filesystem::path &base_dir = {}) {
    auto resolve = [&](const std::string &p) {
        std::filesystem::path path(p);
        return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
    };
    RunManifest m;
    try {
        m.run_id = j.value("run_id", m.run_id);
        m.prompts = resolve(j.at("prompts").get<std::string>());
        if (j.contains("image_manifest")) m.image_manifest = resolve(j["image_manifest"].get<std::string>());
        m.models = j.at("models").get<std::vector<std::string>>();
        if (j.contains("variants")) {
            m.variants.clear();
            for (const auto &v : j["variants"]) m.variants.push_back(parse_variant(v.get<std::string>()));
        }
        if (j.contains("sample_sizes")) {
            m.sample_sizes.clear();
            for (const auto &s : j["sample_sizes"]) {
                if (!s.is_number_integer() || s.get<long long>() <= 0)
                    throw InvalidArg("manifest: sample sizes must be positive integers");
                m.sample_sizes.push_back(s.get<std::size_t>());
            }
        }
        if (j.contains("views_per_prompt")) {
            if (!j["views_per_prompt"].is_number_integer() || j["views_per_prompt"].get<long long>() < 1)
                throw InvalidArg("manifest: views_per_prompt must be >= 1");
            m.views_per_prompt = j["views_per_prompt"].get<std::size_t>();
        }
        if (j.contains("provider_config")) m.provider_config = resolve(j["provider_config"].get<std::string>());
        m.output_dir = resolve(j.value("output_dir", std::string("out")));
        if (j.contains("decoding")) m.decoding = j["decoding"].get<DecodingParams>();
        m.seed = j.value("seed", std::uint64_t{0});
    } catch (const json::exception &e) {
        throw InvalidArg(std::string("manifest: ") + e.what());
    }
    validate(m);
    return m;
}

inline RunManifest load_manifest(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) throw StorageError("cannot open manifest " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception &e) {
        throw ParseError(1, std::string("manifest: ") + e.what());
    }
    return manifest_from_json(j, path.parent_path());
}

} // namespace mn
