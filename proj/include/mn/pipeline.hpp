#pragma once

// Experiment stages over a run manifest: view generation, response fan-out, evaluation into
// CSV / Markdown reports, and judge calibration against labeled files.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <utility>
#include <variant>
#include <vector>

#include "mn/correctness.hpp"
#include "mn/corpus.hpp"
#include "mn/diversity.hpp"
#include "mn/error.hpp"
#include "mn/hash.hpp"
#include "mn/novelty.hpp"
#include "mn/parallel.hpp"
#include "mn/provider.hpp"
#include "mn/templates.hpp"
#include "mn/textops.hpp"
#include "mn/views.hpp"

namespace mn {

struct PipelineContext {
    RunManifest manifest;
    Provider *provider = nullptr; // usually a CachedProvider
    ModelIds models;              // helper models: view generation, vision, embeddings, judges
    TemplateSet templates;
    std::size_t max_parallel = 4;
    std::ostream *log = nullptr;
};

struct StageSummary {
    std::size_t written = 0;
    std::size_t skipped = 0;          // already present
    std::vector<std::string> errors;  // one per failed unit; failed units are left as gaps
};

namespace detail {

inline void log_line(const PipelineContext &ctx, const std::string &msg) {
    if (ctx.log) *ctx.log << msg << '\n';
}

inline Provider &require_provider(const PipelineContext &ctx) {
    if (!ctx.provider) throw InvalidArg("pipeline: no provider configured");
    return *ctx.provider;
}

inline bool wants(const RunManifest &m, Variant v) {
    return std::find(m.variants.begin(), m.variants.end(), v) != m.variants.end();
}

/// Runs work(i) for i in [0, n) in waves of a few items per thread, then hands each wave's
/// results to sink in index order. Output order is deterministic and progress is persisted
/// wave by wave.
template <class T, class Work, class Sink>
void ordered_fan_out(std::size_t n, std::size_t threads, Work &&work, Sink &&sink) {
    const std::size_t wave = std::max<std::size_t>(1, threads) * 8;
    for (std::size_t begin = 0; begin < n; begin += wave) {
        const std::size_t end = std::min(n, begin + wave);
        std::vector<std::optional<T>> results(end - begin);
        parallel_for(end - begin, [&](std::size_t k) { results[k] = work(begin + k); }, threads);
        std::vector<T> done;
        done.reserve(results.size());
        for (auto &r : results) done.push_back(std::move(*r));
        sink(std::move(done));
    }
}

/// Error text for a failed unit. Auth failures abort the stage, since every later call would fail too.
template <class Fn>
auto capture_failure(Fn &&fn) -> std::variant<decltype(fn()), std::string> {
    try {
        return fn();
    } catch (const AuthError &) {
        throw;
    } catch (const Error &e) {
        return std::string(e.what());
    }
}

inline ViewRecord view_stub(const std::string &prompt_id, const std::string &view_id) {
    ViewRecord v;
    v.prompt_id = prompt_id;
    v.view_id = view_id;
    return v;
}

} // namespace detail

/// Per-sample generation seed. Depends only on the run seed and the sample's identity, so a
/// sample is the same whatever the run's maximum size.
inline std::uint64_t sample_seed(std::uint64_t run_seed, const std::string &prompt_id, Variant variant,
                                 const std::string &model, std::size_t index) {
    return mix64(run_seed, fnv1a(prompt_id + '|' + to_string(variant) + '|' + model + '|' + std::to_string(index)));
}

// ---------------------------------------------------------------------------------------------
// views

/// Text views for every prompt (when the text_view variant is on) and one image view per image
/// manifest entry (when image_view is on). Prompts and images already in views.jsonl are skipped.
inline StageSummary cmd_views(const PipelineContext &ctx) {
    const auto &m = ctx.manifest;
    Provider &provider = detail::require_provider(ctx);
    auto prompts = load_prompts(m.prompts);
    ViewStore store(m.views_path());
    StageSummary s;
    using Outcome = std::variant<std::vector<ViewRecord>, std::string>;

    if (detail::wants(m, Variant::text_view)) {
        std::vector<const PromptSpec *> todo;
        for (const auto &p : prompts) {
            // Text views for a prompt are written together, so the last id marks completion.
            if (store.contains(unique_key(detail::view_stub(p.id, view_id('t', m.views_per_prompt))))) {
                ++s.skipped;
                continue;
            }
            todo.push_back(&p);
        }
        detail::ordered_fan_out<Outcome>(
            todo.size(), ctx.max_parallel,
            [&](std::size_t i) -> Outcome {
                const PromptSpec &p = *todo[i];
                auto r = detail::capture_failure([&] {
                    return generate_text_views(provider, p, m.views_per_prompt, ctx.models.chat, ctx.templates,
                                               mix64(m.seed, fnv1a(p.id)));
                });
                if (auto *err = std::get_if<std::string>(&r)) return "prompt " + p.id + ": " + *err;
                return std::get<0>(std::move(r));
            },
            [&](std::vector<Outcome> wave) {
                for (auto &o : wave) {
                    if (auto *err = std::get_if<std::string>(&o)) {
                        detail::log_line(ctx, "views: " + *err);
                        s.errors.push_back(std::move(*err));
                    } else {
                        s.written += store.append(std::get<0>(o));
                    }
                }
            });
    }

    if (detail::wants(m, Variant::image_view)) {
        if (!m.image_manifest) throw InvalidArg("the image_view variant needs an image_manifest");
        std::set<std::string> known;
        for (const auto &p : prompts) known.insert(p.id);
        struct Job {
            ImageSource src;
            std::size_t position;
        };
        std::vector<Job> jobs;
        std::map<std::string, std::size_t> position;
        for (auto &src : load_image_manifest(*m.image_manifest)) {
            if (!known.contains(src.prompt_id)) {
                s.errors.push_back("image " + src.source + ": unknown prompt id " + src.prompt_id);
                continue;
            }
            std::size_t pos = ++position[src.prompt_id];
            if (store.contains(unique_key(detail::view_stub(src.prompt_id, view_id('i', pos))))) {
                ++s.skipped;
                continue;
            }
            jobs.push_back({std::move(src), pos});
        }
        using ImageOutcome = std::variant<ViewRecord, std::string>;
        detail::ordered_fan_out<ImageOutcome>(
            jobs.size(), ctx.max_parallel,
            [&](std::size_t i) -> ImageOutcome {
                const Job &j = jobs[i];
                auto r = detail::capture_failure([&] {
                    return image_view(provider, j.src.prompt_id, j.src.source, j.position, ctx.models, ctx.templates);
                });
                if (auto *err = std::get_if<std::string>(&r)) return "image " + j.src.source + ": " + *err;
                return std::get<0>(std::move(r));
            },
            [&](std::vector<ImageOutcome> wave) {
                std::vector<ViewRecord> ok;
                for (auto &o : wave) {
                    if (auto *err = std::get_if<std::string>(&o)) {
                        detail::log_line(ctx, "views: " + *err);
                        s.errors.push_back(std::move(*err));
                    } else {
                        ok.push_back(std::move(std::get<0>(o)));
                    }
                }
                s.written += store.append(ok);
            });
    }
    return s;
}

// ---------------------------------------------------------------------------------------------
// generate

/// max(sample_sizes) responses per (prompt, variant, model). View variants use view i mod n_views
/// for sample i. Samples already stored are skipped; failed samples are reported and left as
/// gaps for the next run.
inline StageSummary cmd_generate(const PipelineContext &ctx) {
    const auto &m = ctx.manifest;
    Provider &provider = detail::require_provider(ctx);
    auto prompts = load_prompts(m.prompts);
    auto all_views = read_views(m.views_path());
    std::map<std::pair<std::string, ViewKind>, std::vector<ViewRecord>> views;
    for (auto &v : all_views) views[{v.prompt_id, v.kind}].push_back(std::move(v));

    ResponseStore store(m.responses_path());
    StageSummary s;

    struct Job {
        const PromptSpec *prompt;
        Variant variant;
        const std::string *model;
        std::size_t index;
        const ViewRecord *view;
    };
    std::vector<Job> jobs;
    const std::size_t n = m.max_sample_size();
    for (const auto &p : prompts) {
        for (Variant variant : m.variants) {
            const std::vector<ViewRecord> *pool = nullptr;
            if (variant != Variant::baseline) {
                auto kind = variant == Variant::text_view ? ViewKind::text : ViewKind::image;
                auto it = views.find({p.id, kind});
                if (it == views.end() || it->second.empty())
                    throw InvalidArg("no " + to_string(kind) + " views for prompt " + p.id + "; run the views stage first");
                pool = &it->second;
            }
            for (const auto &model : m.models) {
                for (std::size_t i = 0; i < n; ++i) {
                    const ViewRecord *view = pool ? &(*pool)[i % pool->size()] : nullptr;
                    ResponseRecord key;
                    key.prompt_id = p.id;
                    key.variant = variant;
                    key.model = model;
                    key.sample_index = i;
                    if (view) key.view_id = view->view_id;
                    if (store.contains(unique_key(key))) {
                        ++s.skipped;
                        continue;
                    }
                    jobs.push_back({&p, variant, &model, i, view});
                }
            }
        }
    }
    detail::log_line(ctx, "generate: " + std::to_string(jobs.size()) + " samples to generate, " +
                              std::to_string(s.skipped) + " already stored");

    using Outcome = std::variant<ResponseRecord, std::string>;
    detail::ordered_fan_out<Outcome>(
        jobs.size(), ctx.max_parallel,
        [&](std::size_t i) -> Outcome {
            const Job &j = jobs[i];
            auto r = detail::capture_failure([&] {
                std::optional<ViewRecord> view;
                if (j.view) view = *j.view;
                auto request = user_request(*j.model, assemble_prompt(j.prompt->text, view, ctx.templates), "generate",
                                            m.decoding);
                request.seed = sample_seed(m.seed, j.prompt->id, j.variant, *j.model, j.index);
                ResponseRecord rec;
                rec.prompt_id = j.prompt->id;
                rec.variant = j.variant;
                if (j.view) rec.view_id = j.view->view_id;
                rec.model = *j.model;
                rec.sample_index = j.index;
                rec.text = provider.chat(request).text;
                rec.decoding = m.decoding;
                rec.created_at = utc_timestamp();
                return rec;
            });
            if (auto *err = std::get_if<std::string>(&r))
                return j.prompt->id + "/" + to_string(j.variant) + "/" + *j.model + "#" + std::to_string(j.index) + ": " + *err;
            return std::get<0>(std::move(r));
        },
        [&](std::vector<Outcome> wave) {
            std::vector<ResponseRecord> ok;
            for (auto &o : wave) {
                if (auto *err = std::get_if<std::string>(&o)) {
                    detail::log_line(ctx, "generate: " + *err);
                    s.errors.push_back(std::move(*err));
                } else {
                    ok.push_back(std::move(std::get<0>(o)));
                }
            }
            s.written += store.append(ok);
        });
    return s;
}

// ---------------------------------------------------------------------------------------------
// Report rows

struct ReportRow {
    std::string model;
    Variant variant = Variant::baseline;
    std::size_t sample_size = 0;
    std::size_t n_prompts = 0; // prompts with at least sample_size responses
    std::optional<double> mtld, sdt, lexical_entropy, sde, self_bleu_diversity;
    std::optional<double> novelty_percent;
    std::string novelty_judge;
    std::optional<double> correctness_percent, structure_mean;

    bool operator==(const ReportRow &) const = default;
};

struct MetricColumn {
    const char *csv;
    const char *title;
    std::optional<double> ReportRow::*field;
    int decimals;
};

inline constexpr MetricColumn kMetricColumns[] = {
    {"mtld", "MTLD", &ReportRow::mtld, 2},
    {"sdt", "SDT", &ReportRow::sdt, 4},
    {"lexical_entropy", "Entropy", &ReportRow::lexical_entropy, 2},
    {"sde", "SDE", &ReportRow::sde, 4},
    {"self_bleu_diversity", "Self-BLEU div.", &ReportRow::self_bleu_diversity, 4},
    {"novelty_percent", "Novelty %", &ReportRow::novelty_percent, 2},
    {"correctness_percent", "Correct %", &ReportRow::correctness_percent, 2},
    {"structure_mean", "Structure", &ReportRow::structure_mean, 2},
};

inline constexpr const char *kNa = "NA";

namespace detail {

inline std::string fixed(double v, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
    return buf;
}

inline std::string csv_field(const std::string &s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

inline std::vector<std::string> split_csv_line(const std::string &line) {
    std::vector<std::string> out(1);
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                out.back() += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                out.back() += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.emplace_back();
        } else if (c != '\r') {
            out.back() += c;
        }
    }
    return out;
}

inline std::string cell(const std::optional<double> &v) { return v ? fixed(*v, 6) : kNa; }

} // namespace detail

inline std::string report_csv_header() {
    std::string h = "model,variant,sample_size,n_prompts";
    for (const auto &c : kMetricColumns) {
        h += ',';
        h += c.csv;
        if (std::string_view(c.csv) == "novelty_percent") h += ",novelty_judge";
    }
    return h;
}

/// Absent metrics are written as NA, never as zero.
inline std::string report_csv(std::span<const ReportRow> rows) {
    std::string out = report_csv_header() + "\n";
    for (const auto &r : rows) {
        out += detail::csv_field(r.model) + ',' + to_string(r.variant) + ',' + std::to_string(r.sample_size) + ',' +
               std::to_string(r.n_prompts);
        for (const auto &c : kMetricColumns) {
            out += ',' + detail::cell(r.*c.field);
            if (std::string_view(c.csv) == "novelty_percent")
                out += ',' + (r.novelty_judge.empty() ? std::string(kNa) : detail::csv_field(r.novelty_judge));
        }
        out += '\n';
    }
    return out;
}

inline std::vector<ReportRow> parse_report_csv(const std::string &text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw ParseError(1, "empty report");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != report_csv_header()) throw ParseError(1, "unexpected report header");
    const std::size_t expected = detail::split_csv_line(line).size();
    std::vector<ReportRow> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::trim(line).empty()) continue;
        auto f = detail::split_csv_line(line);
        if (f.size() != expected)
            throw ParseError(lineno, "expected " + std::to_string(expected) + " fields, got " + std::to_string(f.size()));
        try {
            ReportRow r;
            std::size_t k = 0;
            r.model = f[k++];
            r.variant = parse_variant(f[k++]);
            r.sample_size = std::stoul(f[k++]);
            r.n_prompts = std::stoul(f[k++]);
            for (const auto &c : kMetricColumns) {
                const std::string &v = f[k++];
                if (v != kNa) r.*c.field = std::stod(v);
                if (std::string_view(c.csv) == "novelty_percent") {
                    const std::string &judge = f[k++];
                    if (judge != kNa) r.novelty_judge = judge;
                }
            }
            rows.push_back(std::move(r));
        } catch (const std::logic_error &e) {
            throw ParseError(lineno, e.what());
        } catch (const InvalidArg &e) {
            throw ParseError(lineno, e.what());
        }
    }
    return rows;
}

struct SummaryRow {
    std::string model;
    Variant variant = Variant::baseline;
    std::vector<std::size_t> sizes;
    std::map<std::string, MeanStd> metrics; // keyed by csv column name; present only when every size has it
    std::string novelty_judge;
};

/// Mean and population std of each metric across the sample sizes of each (model, variant),
/// in first-appearance order of the rows.
inline std::vector<SummaryRow> summarize_rows(std::span<const ReportRow> rows) {
    std::vector<SummaryRow> out;
    std::vector<std::vector<const ReportRow *>> groups;
    for (const auto &r : rows) {
        auto it = std::find_if(out.begin(), out.end(),
                               [&](const SummaryRow &s) { return s.model == r.model && s.variant == r.variant; });
        if (it == out.end()) {
            out.push_back({r.model, r.variant, {}, {}, r.novelty_judge});
            groups.emplace_back();
            it = out.end() - 1;
        }
        groups[static_cast<std::size_t>(it - out.begin())].push_back(&r);
        it->sizes.push_back(r.sample_size);
    }
    for (std::size_t g = 0; g < out.size(); ++g) {
        for (const auto &c : kMetricColumns) {
            std::vector<double> xs;
            for (const ReportRow *r : groups[g])
                if (r->*c.field) xs.push_back(*(r->*c.field));
            if (!xs.empty() && xs.size() == groups[g].size()) out[g].metrics[c.csv] = mean_std(xs);
        }
    }
    return out;
}

inline std::string summary_csv(std::span<const SummaryRow> rows) {
    std::string out = "model,variant,n_sizes";
    for (const auto &c : kMetricColumns) out += std::string(",") + c.csv + "_mean," + c.csv + "_std";
    out += '\n';
    for (const auto &s : rows) {
        out += detail::csv_field(s.model) + ',' + to_string(s.variant) + ',' + std::to_string(s.sizes.size());
        for (const auto &c : kMetricColumns) {
            auto it = s.metrics.find(c.csv);
            if (it == s.metrics.end())
                out += std::string(",") + kNa + "," + kNa;
            else
                out += ',' + detail::fixed(it->second.mean, 6) + ',' + detail::fixed(it->second.std, 6);
        }
        out += '\n';
    }
    return out;
}

namespace detail {

/// For each row, the set of metric columns where it holds the best (highest) value within its group.
template <class Row, class Get>
std::vector<std::set<std::string>> best_in_group(std::span<const Row> rows, Get &&get,
                                                 const std::vector<std::size_t> &group_of) {
    std::vector<std::set<std::string>> best(rows.size());
    for (const auto &c : kMetricColumns) {
        std::map<std::size_t, double> top;
        for (std::size_t i = 0; i < rows.size(); ++i)
            if (auto v = get(rows[i], c)) {
                auto [it, fresh] = top.emplace(group_of[i], *v);
                if (!fresh) it->second = std::max(it->second, *v);
            }
        for (std::size_t i = 0; i < rows.size(); ++i)
            if (auto v = get(rows[i], c); v && *v == top.at(group_of[i])) best[i].insert(c.csv);
    }
    return best;
}

inline std::string table_header() {
    std::string h = "| Model | Variant |";
    std::string rule = "|---|---|";
    for (const auto &c : kMetricColumns) {
        h += std::string(" ") + c.title + " |";
        rule += "---:|";
    }
    return h + "\n" + rule + "\n";
}

} // namespace detail

/// Markdown report: mean ± std across sizes, then one table per sample size. Within each model,
/// the best value of every metric is in bold.
inline std::string report_markdown(std::span<const ReportRow> rows) {
    std::string md = "# Evaluation report\n";
    auto summary = summarize_rows(rows);

    std::set<std::string> judges;
    for (const auto &r : rows)
        if (!r.novelty_judge.empty()) judges.insert(r.novelty_judge);

    auto model_groups = [](const auto &items) {
        std::vector<std::size_t> group;
        std::vector<std::string> seen;
        for (const auto &it : items) {
            auto pos = std::find(seen.begin(), seen.end(), it.model);
            if (pos == seen.end()) {
                seen.push_back(it.model);
                pos = seen.end() - 1;
            }
            group.push_back(static_cast<std::size_t>(pos - seen.begin()));
        }
        return group;
    };

    {
        std::set<std::size_t> sizes;
        for (const auto &r : rows) sizes.insert(r.sample_size);
        std::string list;
        for (auto s : sizes) list += (list.empty() ? "" : ", ") + std::to_string(s);
        md += "\n## Mean ± std across sample sizes (" + list + ")\n\n" + detail::table_header();
        auto get = [](const SummaryRow &s, const MetricColumn &c) -> std::optional<double> {
            auto it = s.metrics.find(c.csv);
            if (it == s.metrics.end()) return std::nullopt;
            return it->second.mean;
        };
        auto best = detail::best_in_group<SummaryRow>(summary, get, model_groups(summary));
        for (std::size_t i = 0; i < summary.size(); ++i) {
            const auto &s = summary[i];
            md += "| " + s.model + " | " + to_string(s.variant) + " |";
            for (const auto &c : kMetricColumns) {
                auto it = s.metrics.find(c.csv);
                std::string v = it == s.metrics.end()
                                    ? std::string(kNa)
                                    : detail::fixed(it->second.mean, c.decimals) + " ± " + detail::fixed(it->second.std, c.decimals);
                if (best[i].contains(c.csv)) v = "**" + v + "**";
                md += " " + v + " |";
            }
            md += '\n';
        }
    }

    std::vector<std::size_t> sizes;
    for (const auto &r : rows)
        if (std::find(sizes.begin(), sizes.end(), r.sample_size) == sizes.end()) sizes.push_back(r.sample_size);
    std::sort(sizes.begin(), sizes.end());
    for (std::size_t size : sizes) {
        std::vector<ReportRow> at;
        for (const auto &r : rows)
            if (r.sample_size == size) at.push_back(r);
        md += "\n## Sample size " + std::to_string(size) + "\n\n" + detail::table_header();
        auto get = [](const ReportRow &r, const MetricColumn &c) { return r.*c.field; };
        auto best = detail::best_in_group<ReportRow>(at, get, model_groups(at));
        for (std::size_t i = 0; i < at.size(); ++i) {
            md += "| " + at[i].model + " | " + to_string(at[i].variant) + " |";
            for (const auto &c : kMetricColumns) {
                auto v = at[i].*c.field;
                std::string text = v ? detail::fixed(*v, c.decimals) : std::string(kNa);
                if (best[i].contains(c.csv)) text = "**" + text + "**";
                md += " " + text + " |";
            }
            md += '\n';
        }
    }

    if (!judges.empty()) {
        md += "\nNovelty judge:";
        for (const auto &j : judges) md += " " + j;
        md += '\n';
    }
    return md;
}

namespace detail {

inline void write_file(const std::filesystem::path &path, const std::string &content) {
    std::error_code ec;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw StorageError("cannot write " + path.string());
    out << content;
    if (!out) throw StorageError("write failed on " + path.string());
}

inline std::string read_file(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw StorageError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace detail

/// Re-renders report.md and report_summary.csv from the report.csv in `dir`.
inline std::vector<ReportRow> cmd_report(const std::filesystem::path &dir) {
    auto rows = parse_report_csv(detail::read_file(dir / "report.csv"));
    detail::write_file(dir / "report_summary.csv", summary_csv(summarize_rows(rows)));
    detail::write_file(dir / "report.md", report_markdown(rows));
    return rows;
}

// ---------------------------------------------------------------------------------------------
// evaluate

struct EvaluateOptions {
    std::vector<std::size_t> sizes; // empty: the manifest's sample sizes
    bool with_sde = true;
    bool with_novelty = false;
    NoveltyJudgeKind judge;
    bool with_correctness = false;
    CorrectnessOptions correctness; // empty model ids fall back to the context's chat model
};

/// One row per (model, variant, size). For every prompt the first `size` responses by sample
/// index are scored, and the per-prompt values are averaged across prompts. Prompts with fewer
/// than `size` responses are left out of that row (see n_prompts). Writes report.csv,
/// report_summary.csv and report.md to the manifest's output directory.
inline std::vector<ReportRow> cmd_evaluate(const PipelineContext &ctx, const EvaluateOptions &opt = {}) {
    const auto &m = ctx.manifest;
    std::vector<std::size_t> sizes = opt.sizes.empty() ? m.sample_sizes : opt.sizes;
    std::sort(sizes.begin(), sizes.end());
    sizes.erase(std::unique(sizes.begin(), sizes.end()), sizes.end());
    if (sizes.empty()) throw InvalidArg("evaluate: no sample sizes");
    if (sizes.front() < 2) throw InvalidArg("evaluate: sample sizes must be >= 2");
    const std::size_t max_size = sizes.back();

    const bool embedding_novelty = opt.with_novelty && opt.judge.kind == NoveltyJudgeKind::Kind::embedding_threshold;
    const bool need_embeddings = opt.with_sde || embedding_novelty;
    if (need_embeddings && ctx.models.embed.empty())
        throw MissingEmbeddings(opt.with_sde ? "SDE requested but no embedding model is configured"
                                             : "the embedding novelty judge needs an embedding model");
    if (opt.with_novelty) opt.judge.validate();
    if ((need_embeddings || opt.with_novelty || opt.with_correctness) && !ctx.provider)
        throw InvalidArg("evaluate: a provider is needed for embeddings and judges");

    auto prompts = load_prompts(m.prompts);
    std::map<std::tuple<std::string, Variant, std::string>, std::vector<ResponseRecord>> corpora;
    detail::for_each_line<ResponseRecord>(m.responses_path(), [&](ResponseRecord r) {
        corpora[{r.model, r.variant, r.prompt_id}].push_back(std::move(r));
    });

    struct Unit {
        std::string model;
        Variant variant;
        const PromptSpec *prompt;
        std::vector<ResponseRecord> records; // first max_size by sample index
        std::vector<std::string> texts;
        std::optional<EmbeddingSet> emb;
        std::optional<NoveltyLabeling> novelty;
        std::optional<CorrectnessReport> correctness;
    };
    std::vector<Unit> units;
    for (const auto &model : m.models)
        for (Variant variant : m.variants)
            for (const auto &p : prompts) {
                Unit u{model, variant, &p, {}, {}, {}, {}, {}};
                auto it = corpora.find({model, variant, p.id});
                if (it != corpora.end()) {
                    auto &recs = it->second;
                    std::stable_sort(recs.begin(), recs.end(), [](const auto &a, const auto &b) {
                        return a.sample_index < b.sample_index;
                    });
                    for (auto &r : recs) {
                        if (u.records.size() == max_size) break;
                        if (!u.records.empty() && u.records.back().sample_index == r.sample_index) continue;
                        u.texts.push_back(r.text);
                        u.records.push_back(r);
                    }
                }
                units.push_back(std::move(u));
            }
    detail::log_line(ctx, "evaluate: " + std::to_string(units.size()) + " corpora");

    // Provider-bound work, parallel across corpora: embeddings and sequential novelty. Labels for
    // a prefix equal the prefix of the labels, so each corpus is judged once at its largest size.
    parallel_for(
        units.size(),
        [&](std::size_t i) {
            Unit &u = units[i];
            if (u.texts.size() < sizes.front()) return;
            if (need_embeddings) u.emb = embed(*ctx.provider, ctx.models.embed, u.texts).vectors;
            if (opt.with_novelty) u.novelty = detect_novelty(u.texts, opt.judge, u.emb, ctx.provider);
        },
        ctx.max_parallel);

    if (opt.with_correctness) {
        CorrectnessOptions co = opt.correctness;
        if (co.relevance_model.empty()) co.relevance_model = ctx.models.chat;
        if (co.structure_model.empty()) co.structure_model = ctx.models.chat;
        if (!co.templates) co.templates = &ctx.templates;
        if (!co.threads) co.threads = ctx.max_parallel;
        for (auto &u : units)
            if (u.texts.size() >= sizes.front())
                u.correctness = correctness_report(u.records, prompts, *ctx.provider, co);
    }

    struct Cell {
        DiversityReport diversity;
        std::optional<double> novelty, correct, structure;
    };
    // cells[unit][size index], empty when the corpus is shorter than the size
    std::vector<std::vector<std::optional<Cell>>> cells(units.size(), std::vector<std::optional<Cell>>(sizes.size()));
    for (std::size_t i = 0; i < units.size(); ++i) {
        const Unit &u = units[i];
        if (u.texts.size() < sizes.front()) continue;
        std::vector<TokenSeq> docs;
        docs.reserve(u.texts.size());
        for (const auto &t : u.texts) docs.push_back(tokenize(t));
        for (std::size_t k = 0; k < sizes.size(); ++k) {
            const std::size_t n = sizes[k];
            if (docs.size() < n) break;
            Cell c;
            std::optional<EmbeddingSet> emb;
            if (opt.with_sde) emb = EmbeddingSet(u.emb->begin(), u.emb->begin() + static_cast<std::ptrdiff_t>(n));
            c.diversity = diversity_report(std::span<const TokenSeq>(docs.data(), n), emb);
            if (u.novelty) {
                NoveltyLabeling prefix;
                prefix.labels.assign(u.novelty->labels.begin(), u.novelty->labels.begin() + static_cast<std::ptrdiff_t>(n));
                c.novelty = novelty_score(prefix);
            }
            if (u.correctness) {
                std::vector<double> rel, st;
                for (std::size_t r = 0; r < n; ++r) {
                    const auto &item = u.correctness->items[r];
                    if (item.verdict) rel.push_back(item.verdict->relevant ? 1.0 : 0.0);
                    if (item.structure) st.push_back(item.structure->score);
                }
                if (!rel.empty()) c.correct = 100.0 * order_independent_sum(rel) / static_cast<double>(rel.size());
                if (!st.empty()) c.structure = order_independent_sum(st) / static_cast<double>(st.size());
            }
            cells[i][k] = std::move(c);
        }
    }

    std::vector<ReportRow> rows;
    const std::size_t per_group = prompts.size();
    for (std::size_t g = 0; g * per_group < units.size(); ++g) {
        for (std::size_t k = 0; k < sizes.size(); ++k) {
            ReportRow row;
            row.model = units[g * per_group].model;
            row.variant = units[g * per_group].variant;
            row.sample_size = sizes[k];
            if (opt.with_novelty) row.novelty_judge = opt.judge.id();
            std::vector<const Cell *> present;
            for (std::size_t p = 0; p < per_group; ++p)
                if (const auto &c = cells[g * per_group + p][k]) present.push_back(&*c);
            row.n_prompts = present.size();
            auto average = [&](auto get) -> std::optional<double> {
                std::vector<double> xs;
                for (const Cell *c : present)
                    if (auto v = get(*c)) xs.push_back(*v);
                if (xs.empty() || xs.size() != present.size()) return std::nullopt;
                return order_independent_sum(xs) / static_cast<double>(xs.size());
            };
            row.mtld = average([](const Cell &c) -> std::optional<double> { return c.diversity.mtld; });
            row.sdt = average([](const Cell &c) -> std::optional<double> { return c.diversity.sdt; });
            row.lexical_entropy =
                average([](const Cell &c) -> std::optional<double> { return c.diversity.lexical_entropy_bits; });
            row.sde = average([](const Cell &c) { return c.diversity.sde; });
            row.self_bleu_diversity =
                average([](const Cell &c) -> std::optional<double> { return c.diversity.self_bleu_diversity; });
            row.novelty_percent = average([](const Cell &c) { return c.novelty; });
            row.correctness_percent = average([](const Cell &c) { return c.correct; });
            row.structure_mean = average([](const Cell &c) { return c.structure; });
            rows.push_back(std::move(row));
        }
    }

    const std::string csv = report_csv(rows);
    detail::write_file(m.output_dir / "report.csv", csv);
    // Render from the CSV so that a later `report` run reproduces these files exactly.
    return cmd_report(m.output_dir);
}

// ---------------------------------------------------------------------------------------------
// calibrate

enum class CalibrationTask { novelty, relevance, score };

inline CalibrationTask parse_calibration_task(std::string_view s) {
    if (s == "novelty") return CalibrationTask::novelty;
    if (s == "relevance") return CalibrationTask::relevance;
    if (s == "score") return CalibrationTask::score;
    throw InvalidArg("calibration task must be novelty, relevance or score, got " + std::string(s));
}

inline std::string to_string(CalibrationTask t) {
    switch (t) {
    case CalibrationTask::novelty: return "novelty";
    case CalibrationTask::relevance: return "relevance";
    case CalibrationTask::score: return "score";
    }
    return "novelty";
}

struct CalibrationOptions {
    CalibrationTask task = CalibrationTask::novelty;
    NoveltyJudgeKind judge;        // novelty task
    std::string model;             // relevance and score judges; empty: the chat model
    bool judge_raw_answers = false;
    std::size_t max_words = kDefaultSummaryWords;
    std::size_t threads = 4;
};

struct CalibrationResult {
    CalibrationTask task = CalibrationTask::novelty;
    std::string judge_id;
    std::size_t n_items = 0; // judged successfully
    std::vector<std::pair<std::size_t, std::string>> errors; // (line, message)
    std::optional<BinaryEvalResult> binary;
    std::optional<double> mse;
    std::optional<MeanStd> squared_error;
};

namespace detail {

struct CalibrationItem {
    std::size_t line = 0;
    std::vector<std::string> premises; // novelty
    std::string first;                 // hypothesis / prompt / question
    std::string second;                // answer / essay
    bool label = false;
    double score = 0.0;
};

inline bool parse_label(const json &j, std::string_view positive, std::initializer_list<std::string_view> negatives) {
    if (j.is_boolean()) return j.get<bool>();
    if (j.is_number_integer() && (j.get<int>() == 0 || j.get<int>() == 1)) return j.get<int>() == 1;
    if (j.is_string()) {
        std::string s = mn::to_lower(trim(j.get<std::string>()));
        if (s == positive) return true;
        for (auto n : negatives)
            if (s == n) return false;
    }
    throw InvalidArg("label must be a boolean, 0/1, \"" + std::string(positive) + "\" or \"" +
                     std::string(*negatives.begin()) + "\"");
}

inline std::string required_string(const json &j, const char *key) {
    if (!j.contains(key) || !j[key].is_string()) throw InvalidArg(std::string("missing string field \"") + key + "\"");
    std::string s = j[key].get<std::string>();
    if (trim(s).empty()) throw InvalidArg(std::string("empty field \"") + key + "\"");
    return s;
}

inline CalibrationItem parse_calibration_item(const json &j, CalibrationTask task) {
    if (!j.is_object()) throw InvalidArg("expected a JSON object");
    CalibrationItem it;
    switch (task) {
    case CalibrationTask::novelty: {
        if (!j.contains("premises") || !j["premises"].is_array() || j["premises"].empty())
            throw InvalidArg("\"premises\" must be a non-empty array of strings");
        for (const auto &p : j["premises"]) {
            if (!p.is_string()) throw InvalidArg("\"premises\" must be a non-empty array of strings");
            it.premises.push_back(p.get<std::string>());
        }
        it.first = required_string(j, "hypothesis");
        if (!j.contains("label")) throw InvalidArg("missing field \"label\"");
        it.label = parse_label(j["label"], "novel", {"redundant", "non-novel"});
        break;
    }
    case CalibrationTask::relevance:
        it.first = required_string(j, "prompt");
        it.second = required_string(j, "answer");
        if (!j.contains("label")) throw InvalidArg("missing field \"label\"");
        it.label = parse_label(j["label"], "relevant", {"irrelevant"});
        break;
    case CalibrationTask::score:
        it.first = required_string(j, "question");
        it.second = required_string(j, "essay");
        if (!j.contains("score") || !j["score"].is_number()) throw InvalidArg("missing numeric field \"score\"");
        it.score = j["score"].get<double>();
        break;
    }
    return it;
}

} // namespace detail

/// Runs the chosen judge over a labeled JSONL file. Lines that fail the schema, or whose judge call
/// fails, are reported with their line number; the metrics cover the remaining lines. The
/// positive class is "novel" for novelty and "relevant" for relevance.
inline CalibrationResult cmd_calibrate(const std::filesystem::path &path, Provider &provider, const ModelIds &models,
                                       const CalibrationOptions &opt, const TemplateSet &tpl = TemplateSet::defaults()) {
    CalibrationResult result;
    result.task = opt.task;
    const std::string model = opt.model.empty() ? models.chat : opt.model;
    switch (opt.task) {
    case CalibrationTask::novelty: result.judge_id = opt.judge.id(); break;
    case CalibrationTask::relevance: result.judge_id = "chat:" + model; break;
    case CalibrationTask::score: result.judge_id = "chat:" + model; break;
    }
    if (opt.task == CalibrationTask::novelty) {
        opt.judge.validate();
        if (opt.judge.kind == NoveltyJudgeKind::Kind::embedding_threshold && models.embed.empty())
            throw MissingEmbeddings("the embedding novelty judge needs an embedding model");
    }

    std::ifstream in(path);
    if (!in) throw StorageError("cannot open " + path.string());
    std::vector<detail::CalibrationItem> items;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::trim(line).empty()) continue;
        try {
            auto item = detail::parse_calibration_item(json::parse(line), opt.task);
            item.line = lineno;
            items.push_back(std::move(item));
        } catch (const json::exception &e) {
            result.errors.emplace_back(lineno, e.what());
        } catch (const InvalidArg &e) {
            result.errors.emplace_back(lineno, e.what());
        }
    }

    struct Prediction {
        bool label = false;
        double score = 0.0;
        std::string error;
    };
    std::vector<Prediction> pred(items.size());
    parallel_for(
        items.size(),
        [&](std::size_t i) {
            const auto &it = items[i];
            try {
                switch (opt.task) {
                case CalibrationTask::novelty:
                    if (opt.judge.kind == NoveltyJudgeKind::Kind::embedding_threshold) {
                        std::vector<std::string> texts = it.premises;
                        texts.push_back(it.first);
                        auto emb = embed(provider, models.embed, texts).vectors;
                        std::span<const Embedding> premises(emb.data(), it.premises.size());
                        pred[i].label = embedding_judge(emb.back(), premises, opt.judge.threshold) == NoveltyLabel::novel;
                    } else {
                        pred[i].label = chat_judge(provider, it.first, it.premises, opt.judge.model,
                                                   PromptTemplate(opt.judge.template_text)) == NoveltyLabel::novel;
                    }
                    break;
                case CalibrationTask::relevance: {
                    std::string summary = opt.judge_raw_answers
                                              ? it.second
                                              : summarize_answer(provider, it.second, model, opt.max_words, tpl.summarize).text;
                    pred[i].label = judge_relevance(provider, it.first, summary, model, tpl.relevance).relevant;
                    break;
                }
                case CalibrationTask::score:
                    pred[i].score = ielts_score(provider, it.first, it.second, model, tpl.ielts).score;
                    break;
                }
            } catch (const AuthError &) {
                throw;
            } catch (const Error &e) {
                pred[i].error = e.what();
            }
        },
        opt.threads);

    std::vector<bool> predicted, actual;
    std::vector<double> scores, targets;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (!pred[i].error.empty()) {
            result.errors.emplace_back(items[i].line, pred[i].error);
            continue;
        }
        predicted.push_back(pred[i].label);
        actual.push_back(items[i].label);
        scores.push_back(pred[i].score);
        targets.push_back(items[i].score);
    }
    std::sort(result.errors.begin(), result.errors.end());
    result.n_items = predicted.size();
    if (result.n_items == 0) return result;

    if (opt.task == CalibrationTask::score) {
        result.mse = mse_score(scores, targets);
        std::vector<double> sq;
        for (std::size_t i = 0; i < scores.size(); ++i) sq.push_back((scores[i] - targets[i]) * (scores[i] - targets[i]));
        result.squared_error = mean_std(sq);
    } else {
        // std::vector<bool> has no contiguous storage; copy into plain bools for the span API.
        std::unique_ptr<bool[]> p(new bool[predicted.size()]), a(new bool[actual.size()]);
        std::copy(predicted.begin(), predicted.end(), p.get());
        std::copy(actual.begin(), actual.end(), a.get());
        result.binary = classification_metrics(std::span<const bool>(p.get(), predicted.size()),
                                               std::span<const bool>(a.get(), actual.size()));
    }
    return result;
}

inline std::string calibration_markdown(const CalibrationResult &r) {
    std::string md = "# Calibration: " + to_string(r.task) + "\n\nJudge: " + r.judge_id + "\n\nItems judged: " +
                     std::to_string(r.n_items) + "\n";
    if (r.binary) {
        const auto &b = *r.binary;
        md += "\n| Accuracy | Precision | Recall | F1 | TP | FP | TN | FN |\n|---:|---:|---:|---:|---:|---:|---:|---:|\n";
        md += "| " + detail::fixed(b.accuracy, 4) + " | " + detail::fixed(b.precision, 4) + " | " +
              detail::fixed(b.recall, 4) + " | " + detail::fixed(b.f1, 4) + " | " + std::to_string(b.tp) + " | " +
              std::to_string(b.fp) + " | " + std::to_string(b.tn) + " | " + std::to_string(b.fn) + " |\n";
    }
    if (r.mse) {
        md += "\n| MSE | Squared error (mean ± std) |\n|---:|---:|\n";
        md += "| " + detail::fixed(*r.mse, 4) + " | " + detail::fixed(r.squared_error->mean, 4) + " ± " +
              detail::fixed(r.squared_error->std, 4) + " |\n";
    }
    if (!r.errors.empty()) {
        md += "\nSkipped lines:\n\n";
        for (const auto &[line, msg] : r.errors) md += "- line " + std::to_string(line) + ": " + msg + "\n";
    }
    return md;
}

} // namespace mn
