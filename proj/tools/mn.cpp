// mn: command-line driver for the view / generate / evaluate / calibrate / report stages.

#include <cstdlib>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mn/http_transport.hpp"
#include "mn/mn.hpp"

namespace {

struct Common {
    std::string manifest;
    std::string provider_config;
    std::string mock;
    std::string cache_dir;
    bool no_cache = false;
    std::optional<std::uint64_t> seed;
    std::string templates;
    std::size_t parallel = 0;
    bool quiet = false;
};

void add_common(CLI::App *cmd, Common &c, bool manifest_required) {
    auto *m = cmd->add_option("--manifest", c.manifest, "Run manifest (JSON)");
    if (manifest_required) m->required()->check(CLI::ExistingFile);
    cmd->add_option("--provider-config", c.provider_config, "Provider config (JSON); overrides the manifest's");
    cmd->add_option("--mock", c.mock, "Use the offline mock provider instead of HTTP")
        ->check(CLI::IsMember({"echo", "repetitive", "diverse"}));
    cmd->add_option("--cache-dir", c.cache_dir, "Reply cache directory (default: <output_dir>/cache)");
    cmd->add_flag("--no-cache", c.no_cache, "Disable the reply cache");
    cmd->add_option("--seed", c.seed, "Run seed; overrides the manifest's");
    cmd->add_option("--templates", c.templates, "Directory of template overrides (<name>.txt)");
    cmd->add_option("--parallel", c.parallel, "Concurrent provider requests (default: provider config, or 4)");
    cmd->add_flag("--quiet", c.quiet, "Suppress progress output");
}

struct Session {
    std::shared_ptr<mn::Provider> provider;
    mn::ModelIds models;
    std::size_t max_parallel = 4;
};

Session open_session(const Common &c, const std::optional<mn::RunManifest> &manifest, std::uint64_t seed) {
    Session s;
    if (!c.mock.empty()) {
        s.provider = std::make_shared<mn::MockProvider>(mn::parse_mock_personality(c.mock), seed);
        s.models = {"mock-chat", "mock-vision", "mock-embed"};
    } else {
        std::filesystem::path cfg_path = c.provider_config;
        if (cfg_path.empty() && manifest && manifest->provider_config) cfg_path = *manifest->provider_config;
        if (cfg_path.empty()) throw mn::InvalidArg("no provider: pass --provider-config or --mock");
        auto cfg = mn::load_provider_config(cfg_path);
        if (cfg.api_key().empty())
            std::cerr << "warning: environment variable " << cfg.api_key_env << " is not set\n";
        s.provider = mn::make_http_provider(cfg);
        s.models = cfg.models;
        s.max_parallel = static_cast<std::size_t>(cfg.max_parallel);
    }
    if (c.parallel) s.max_parallel = c.parallel;
    if (!c.no_cache) {
        std::filesystem::path dir = c.cache_dir;
        if (dir.empty()) dir = (manifest ? manifest->output_dir : std::filesystem::path(".")) / "cache";
        s.provider = std::make_shared<mn::CachedProvider>(s.provider, dir);
    }
    return s;
}

std::vector<std::size_t> parse_sizes(const std::string &text) {
    std::vector<std::size_t> out;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        auto comma = text.find(',', pos);
        std::string part = text.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
        try {
            std::size_t used = 0;
            long long v = std::stoll(part, &used);
            if (used != part.size() || v < 1) throw std::invalid_argument(part);
            out.push_back(static_cast<std::size_t>(v));
        } catch (const std::logic_error &) {
            throw mn::InvalidArg("--sizes must be a comma-separated list of positive integers, got " + text);
        }
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return out;
}

int report_stage(const char *stage, const mn::StageSummary &s) {
    std::cout << stage << ": " << s.written << " written, " << s.skipped << " already present, " << s.errors.size()
              << " failed\n";
    for (const auto &e : s.errors) std::cerr << "  " << e << '\n';
    return s.errors.empty() ? 0 : 2;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"Multi-view generation and diversity / novelty / correctness evaluation"};
    app.require_subcommand(1);

    Common common;
    auto *views = app.add_subcommand("views", "Generate text and image views for every prompt");
    add_common(views, common, true);

    auto *generate = app.add_subcommand("generate", "Generate responses for every prompt, variant and model");
    add_common(generate, common, true);

    auto *evaluate = app.add_subcommand("evaluate", "Score stored responses and write the reports");
    add_common(evaluate, common, true);
    std::string sizes;
    std::string judge = "embedding:0.8";
    bool with_novelty = false, with_correctness = false, no_sde = false, raw_answers = false;
    evaluate->add_option("--sizes", sizes, "Sample sizes, e.g. 100,250,500 (default: the manifest's)");
    evaluate->add_option("--judge", judge, "Novelty judge: embedding:<tau> or chat:<model>");
    evaluate->add_flag("--with-novelty", with_novelty, "Run the sequential novelty detector");
    evaluate->add_flag("--with-correctness", with_correctness, "Run the relevance and structure judges");
    evaluate->add_flag("--no-sde", no_sde, "Skip embedding-based diversity");
    evaluate->add_flag("--judge-raw-answers", raw_answers, "Judge relevance on full answers instead of summaries");

    auto *calibrate = app.add_subcommand("calibrate", "Measure a judge against a labeled JSONL file");
    add_common(calibrate, common, false);
    std::string input, task = "novelty", judge_model;
    calibrate->add_option("--input", input, "Labeled JSONL file")->required()->check(CLI::ExistingFile);
    calibrate->add_option("--task", task, "novelty, relevance or score")
        ->check(CLI::IsMember({"novelty", "relevance", "score"}));
    calibrate->add_option("--judge", judge, "Novelty judge: embedding:<tau> or chat:<model>");
    calibrate->add_option("--model", judge_model, "Chat model for the relevance and score judges");
    calibrate->add_flag("--judge-raw-answers", raw_answers, "Judge relevance on full answers instead of summaries");

    auto *report = app.add_subcommand("report", "Re-render report.md and report_summary.csv from report.csv");
    std::string report_dir, report_manifest;
    report->add_option("--dir", report_dir, "Directory holding report.csv");
    report->add_option("--manifest", report_manifest, "Run manifest; its output_dir holds report.csv");

    CLI11_PARSE(app, argc, argv);

    try {
        if (report->parsed()) {
            std::filesystem::path dir = report_dir;
            if (dir.empty() && !report_manifest.empty()) dir = mn::load_manifest(report_manifest).output_dir;
            if (dir.empty()) throw mn::InvalidArg("report: pass --dir or --manifest");
            auto rows = mn::cmd_report(dir);
            std::cout << "report: " << rows.size() << " rows rendered to " << (dir / "report.md").string() << '\n';
            return 0;
        }

        std::optional<mn::RunManifest> manifest;
        if (!common.manifest.empty()) manifest = mn::load_manifest(common.manifest);
        std::uint64_t seed = common.seed.value_or(manifest ? manifest->seed : 0);
        if (manifest) manifest->seed = seed;
        Session session = open_session(common, manifest, seed);
        mn::TemplateSet templates =
            common.templates.empty() ? mn::TemplateSet::defaults() : mn::TemplateSet::load(common.templates);

        if (calibrate->parsed()) {
            mn::CalibrationOptions opt;
            opt.task = mn::parse_calibration_task(task);
            opt.judge = mn::NoveltyJudgeKind::parse(judge);
            opt.model = judge_model;
            opt.judge_raw_answers = raw_answers;
            opt.threads = session.max_parallel;
            auto result = mn::cmd_calibrate(input, *session.provider, session.models, opt, templates);
            std::cout << mn::calibration_markdown(result);
            return result.n_items == 0 ? 1 : 0;
        }

        mn::PipelineContext ctx;
        ctx.manifest = *manifest;
        ctx.provider = session.provider.get();
        ctx.models = session.models;
        ctx.templates = templates;
        ctx.max_parallel = session.max_parallel;
        ctx.log = common.quiet ? nullptr : &std::cerr;

        if (views->parsed()) return report_stage("views", mn::cmd_views(ctx));
        if (generate->parsed()) return report_stage("generate", mn::cmd_generate(ctx));
        if (evaluate->parsed()) {
            mn::EvaluateOptions opt;
            if (!sizes.empty()) opt.sizes = parse_sizes(sizes);
            opt.with_sde = !no_sde;
            opt.with_novelty = with_novelty;
            opt.judge = mn::NoveltyJudgeKind::parse(judge);
            opt.with_correctness = with_correctness;
            opt.correctness.judge_raw_answers = raw_answers;
            auto rows = mn::cmd_evaluate(ctx, opt);
            std::cout << "evaluate: " << rows.size() << " rows written to "
                      << (ctx.manifest.output_dir / "report.csv").string() << '\n';
            return 0;
        }
    } catch (const mn::Error &e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
