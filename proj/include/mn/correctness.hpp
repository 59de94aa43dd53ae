#pragma once

// Correctness axes: prompt relevance (summarize, then judge the summary) and a language-structure
// score; plus the calibration metrics used to check judges against labeled data.

#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mn/corpus.hpp"
#include "mn/error.hpp"
#include "mn/judge.hpp"
#include "mn/parallel.hpp"
#include "mn/provider.hpp"
#include "mn/templates.hpp"
#include "mn/textops.hpp"

namespace mn {

inline constexpr std::size_t kDefaultSummaryWords = 250;

/// Judge calls run greedy and short.
inline constexpr DecodingParams kJudgeDecoding{0.0, 1.0, 16};

struct Summary {
    std::string text;
    bool truncated = false; // the reply ran past max_words and was cut
};

struct CorrectnessVerdict {
    bool relevant = false;
    std::string summary;
    std::string raw_judge_reply;
    bool summary_truncated = false;
};

struct StructureScore {
    double score = 1.0; // in [1, 10]
    std::string raw_judge_reply;
};

namespace detail {

/// Whitespace-delimited words, used only for the summary length cap.
inline std::vector<std::string_view> split_words(std::string_view s) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
        std::size_t b = i;
        while (i < s.size() && !std::isspace(static_cast<unsigned char>(s[i]))) ++i;
        if (i > b) out.push_back(s.substr(b, i - b));
    }
    return out;
}

} // namespace detail

inline std::size_t word_count(std::string_view s) { return detail::split_words(s).size(); }

/// Asks for a summary of at most `max_words` words. Replies longer than that are cut at the last
/// word boundary inside the limit and flagged.
inline Summary summarize_answer(Provider &provider, const std::string &text, const std::string &model,
                                std::size_t max_words = kDefaultSummaryWords,
                                const PromptTemplate &tmpl = TemplateSet::defaults().summarize) {
    if (detail::trim(text).empty()) throw InvalidArg("summarize_answer: empty text");
    if (max_words == 0) throw InvalidArg("summarize_answer: max_words must be >= 1");
    auto prompt = tmpl.render({{"max_words", std::to_string(max_words)}, {"text", text}});
    DecodingParams dec = kJudgeDecoding;
    dec.max_tokens = static_cast<int>(max_words * 2);
    ChatReply reply = provider.chat(user_request(model, std::move(prompt), "summarize", dec));
    Summary s{detail::trim(reply.text), false};
    auto words = detail::split_words(s.text);
    if (words.size() > max_words) {
        const auto &last = words[max_words - 1];
        s.text = s.text.substr(0, static_cast<std::size_t>(last.data() + last.size() - s.text.data()));
        s.truncated = true;
    }
    return s;
}

/// One-word relevance verdict for `summary` against `prompt`.
inline CorrectnessVerdict judge_relevance(Provider &provider, const std::string &prompt, const std::string &summary,
                                          const std::string &model,
                                          const PromptTemplate &tmpl = TemplateSet::defaults().relevance) {
    auto request = user_request(model, tmpl.render({{"prompt_text", prompt}, {"summarized_answer", summary}}),
                                "relevance", kJudgeDecoding);
    static const std::vector<std::string> choices = {"relevant", "irrelevant"};
    JudgeReply r = ask_one_word(provider, request, choices);
    return {r.verdict == "relevant", summary, r.raw, false};
}

/// Grammar and composition score in [1, 10].
inline StructureScore score_language_structure(Provider &provider, const std::string &question,
                                               const std::string &answer, const std::string &model,
                                               const PromptTemplate &tmpl = TemplateSet::defaults().structure) {
    auto request =
        user_request(model, tmpl.render({{"question", question}, {"answer", answer}}), "structure", kJudgeDecoding);
    ScoreReply r = ask_score(provider, request, 1.0, 10.0);
    return {r.score, r.raw};
}

/// IELTS band in [1, 9], used when calibrating the score judge against human essay grades.
inline StructureScore ielts_score(Provider &provider, const std::string &question, const std::string &essay,
                                  const std::string &model, const PromptTemplate &tmpl = TemplateSet::defaults().ielts) {
    auto request =
        user_request(model, tmpl.render({{"question", question}, {"essay", essay}}), "ielts", kJudgeDecoding);
    ScoreReply r = ask_score(provider, request, 1.0, 9.0);
    return {r.score, r.raw};
}

// ---------------------------------------------------------------------------------------------
// Corpus report

struct CorrectnessOptions {
    std::string relevance_model;
    std::string structure_model;
    std::size_t max_words = kDefaultSummaryWords;
    bool judge_raw_answers = false; // skip summarization and judge the full answer
    bool with_structure = true;
    std::size_t threads = 0;        // 0: provider-bound default of 4
    const TemplateSet *templates = nullptr;
};

struct CorrectnessItem {
    std::optional<CorrectnessVerdict> verdict;
    std::optional<StructureScore> structure;
};

struct CorrectnessReport {
    double percent_correct = 0.0;
    std::optional<double> mean_structure;
    std::size_t n = 0;
    std::vector<CorrectnessItem> items; // aligned with the input records
};

/// Raised when any record's judging failed. `partial` holds every item that did complete.
class CorrectnessJudgeError : public JudgeError {
  public:
    CorrectnessJudgeError(std::size_t index, const std::string &cause, CorrectnessReport partial)
        : JudgeError(index, cause), partial(std::move(partial)) {}
    CorrectnessReport partial;
};

/// Percent relevant and mean structure score over `records`. Records are judged concurrently; the
/// reduction sorts before summing, so the result does not depend on record order.
inline CorrectnessReport correctness_report(std::span<const ResponseRecord> records,
                                            std::span<const PromptSpec> prompts, Provider &provider,
                                            const CorrectnessOptions &opt) {
    if (records.empty()) throw InvalidArg("correctness_report: no records");
    std::map<std::string, const PromptSpec *> by_id;
    for (const auto &p : prompts) by_id[p.id] = &p;
    for (const auto &r : records)
        if (!by_id.contains(r.prompt_id)) throw InvalidArg("correctness_report: unknown prompt id " + r.prompt_id);
    const TemplateSet &tpl = opt.templates ? *opt.templates : TemplateSet::defaults();

    CorrectnessReport report;
    report.n = records.size();
    report.items.resize(records.size());
    std::vector<std::string> failures(records.size());

    parallel_for(
        records.size(),
        [&](std::size_t i) {
            const auto &rec = records[i];
            const std::string &prompt = by_id.at(rec.prompt_id)->text;
            auto &item = report.items[i];
            try {
                if (detail::trim(rec.text).empty()) {
                    item.verdict = CorrectnessVerdict{false, "", "", false};
                } else {
                    Summary s = opt.judge_raw_answers
                                    ? Summary{rec.text, false}
                                    : summarize_answer(provider, rec.text, opt.relevance_model, opt.max_words, tpl.summarize);
                    auto v = judge_relevance(provider, prompt, s.text, opt.relevance_model, tpl.relevance);
                    v.summary_truncated = s.truncated;
                    item.verdict = std::move(v);
                }
                if (opt.with_structure)
                    item.structure = score_language_structure(provider, prompt, rec.text, opt.structure_model, tpl.structure);
            } catch (const ProviderError &e) {
                failures[i] = e.what();
            } catch (const JudgeParseError &e) {
                failures[i] = e.what();
            }
        },
        opt.threads ? opt.threads : 4);

    std::vector<double> relevant, scores;
    for (const auto &item : report.items) {
        if (item.verdict) relevant.push_back(item.verdict->relevant ? 1.0 : 0.0);
        if (item.structure) scores.push_back(item.structure->score);
    }
    if (!relevant.empty())
        report.percent_correct = 100.0 * order_independent_sum(relevant) / static_cast<double>(relevant.size());
    if (!scores.empty()) report.mean_structure = order_independent_sum(scores) / static_cast<double>(scores.size());

    for (std::size_t i = 0; i < failures.size(); ++i)
        if (!failures[i].empty()) throw CorrectnessJudgeError(i, failures[i], std::move(report));
    return report;
}

// ---------------------------------------------------------------------------------------------
// Calibration metrics

struct BinaryEvalResult {
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

/// Confusion-matrix metrics with 0 wherever a denominator is 0.
inline BinaryEvalResult binary_eval_from_counts(std::size_t tp, std::size_t fp, std::size_t tn, std::size_t fn) {
    auto ratio = [](std::size_t a, std::size_t b) { return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b); };
    BinaryEvalResult r;
    r.tp = tp, r.fp = fp, r.tn = tn, r.fn = fn;
    r.accuracy = ratio(tp + tn, tp + fp + tn + fn);
    r.precision = ratio(tp, tp + fp);
    r.recall = ratio(tp, tp + fn);
    r.f1 = r.precision + r.recall == 0.0 ? 0.0 : 2.0 * r.precision * r.recall / (r.precision + r.recall);
    return r;
}

inline BinaryEvalResult classification_metrics(std::span<const bool> predicted, std::span<const bool> actual) {
    if (predicted.size() != actual.size())
        throw InvalidArg("classification_metrics: " + std::to_string(predicted.size()) + " predictions for " +
                         std::to_string(actual.size()) + " labels");
    if (predicted.empty()) throw InvalidArg("classification_metrics: empty input");
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        if (predicted[i]) (actual[i] ? tp : fp)++;
        else (actual[i] ? fn : tn)++;
    }
    return binary_eval_from_counts(tp, fp, tn, fn);
}

inline double mse_score(std::span<const double> predicted, std::span<const double> actual) {
    if (predicted.size() != actual.size())
        throw InvalidArg("mse_score: " + std::to_string(predicted.size()) + " predictions for " +
                         std::to_string(actual.size()) + " targets");
    if (predicted.empty()) throw InvalidArg("mse_score: empty input");
    double sum = 0.0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        double d = predicted[i] - actual[i];
        sum += d * d;
    }
    return sum / static_cast<double>(predicted.size());
}

struct MeanStd {
    double mean = 0.0;
    double std = 0.0; // population standard deviation
};

inline MeanStd mean_std(std::span<const double> xs) {
    if (xs.empty()) throw InvalidArg("mean_std: empty input");
    double n = static_cast<double>(xs.size());
    double mean = order_independent_sum(std::vector<double>(xs.begin(), xs.end())) / n;
    std::vector<double> sq;
    sq.reserve(xs.size());
    for (double x : xs) sq.push_back((x - mean) * (x - mean));
    return {mean, std::sqrt(order_independent_sum(std::move(sq)) / n)};
}

} // namespace mn
