#pragma once

// Sequential novelty detection over an ordered list of responses. The first response is novel;
// every later one is judged against the premise set (all earlier novel responses) and, when
// judged novel, joins it.

#include <algorithm>
#include <cstddef>
#include <cstdio>
#include <string_view>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mn/diversity.hpp"
#include "mn/error.hpp"
#include "mn/judge.hpp"
#include "mn/provider.hpp"
#include "mn/templates.hpp"
#include "mn/textops.hpp"

namespace mn {

enum class NoveltyLabel { novel, redundant };

inline std::string to_string(NoveltyLabel l) { return l == NoveltyLabel::novel ? "novel" : "redundant"; }

struct NoveltyLabeling {
    std::vector<NoveltyLabel> labels;
    std::vector<std::size_t> premise_indices; // positions labeled novel, ascending
    double novelty_percent = 0.0;
};

/// 100 * novel / total; 0 for an empty labeling.
inline double novelty_score(const NoveltyLabeling &labeling) {
    if (labeling.labels.empty()) return 0.0;
    auto novel = std::count(labeling.labels.begin(), labeling.labels.end(), NoveltyLabel::novel);
    return 100.0 * static_cast<double>(novel) / static_cast<double>(labeling.labels.size());
}

/// Raised when a judge fails mid-sequence; `partial` holds the labels decided before `index()`.
class NoveltyJudgeError : public JudgeError {
  public:
    NoveltyJudgeError(std::size_t index, const std::string &cause, NoveltyLabeling partial)
        : JudgeError(index, cause), partial(std::move(partial)) {}
    NoveltyLabeling partial;
};

inline constexpr double kDefaultNoveltyThreshold = 0.80;
inline constexpr std::size_t kDefaultPremiseCap = 20;

/// Which judge decides novelty, as selected on the command line: "embedding:0.8" or "chat:<model>".
struct NoveltyJudgeKind {
    enum class Kind { embedding_threshold, chat_judge };
    Kind kind = Kind::embedding_threshold;
    double threshold = kDefaultNoveltyThreshold;
    std::string model;
    std::string template_text = std::string(templates::kNovelty);
    std::size_t premise_cap = kDefaultPremiseCap;

    static NoveltyJudgeKind embedding(double tau) {
        NoveltyJudgeKind k;
        k.threshold = tau;
        k.validate();
        return k;
    }
    static NoveltyJudgeKind chat(std::string model) {
        NoveltyJudgeKind k;
        k.kind = Kind::chat_judge;
        k.model = std::move(model);
        k.validate();
        return k;
    }
    static NoveltyJudgeKind parse(std::string_view spec) {
        if (spec.starts_with("embedding")) {
            auto colon = spec.find(':');
            if (colon == std::string_view::npos) return embedding(kDefaultNoveltyThreshold);
            try {
                return embedding(std::stod(std::string(spec.substr(colon + 1))));
            } catch (const std::logic_error &) {
                throw InvalidArg("bad embedding judge threshold: " + std::string(spec));
            }
        }
        if (spec.starts_with("chat:") && spec.size() > 5) return chat(std::string(spec.substr(5)));
        throw InvalidArg("judge must be embedding[:tau] or chat:<model>, got " + std::string(spec));
    }

    void validate() const {
        if (kind == Kind::embedding_threshold && !(threshold >= -1.0 && threshold <= 1.0))
            throw InvalidArg("embedding judge threshold must lie in [-1, 1]");
        if (kind == Kind::chat_judge) {
            PromptTemplate t(template_text);
            if (!t.has_slot("hypothesis") || !t.has_slot("premises"))
                throw InvalidArg("novelty template must contain {hypothesis} and {premises}");
            if (model.empty()) throw InvalidArg("chat judge needs a model");
        }
    }

    /// Recorded next to every novelty score, e.g. "embedding:0.80" or "chat:gpt-4o".
    std::string id() const {
        if (kind == Kind::chat_judge) return "chat:" + model;
        char buf[32];
        std::snprintf(buf, sizeof buf, "embedding:%.2f", threshold);
        return buf;
    }
};

/// Novel iff the hypothesis' maximum cosine similarity to any premise is below `tau`.
inline NoveltyLabel embedding_judge(std::span<const double> hypothesis, std::span<const Embedding> premises, double tau) {
    if (premises.empty()) throw InvalidArg("embedding_judge: empty premise set");
    double best = -1.0;
    for (const auto &p : premises) best = std::max(best, cosine_sim(hypothesis, p));
    return best < tau ? NoveltyLabel::novel : NoveltyLabel::redundant;
}

/// Renders the novelty template (premises numbered from 1) and asks for "novel" / "redundant".
inline NoveltyLabel chat_judge(Provider &provider, const std::string &hypothesis,
                               std::span<const std::string> premises, const std::string &model,
                               const PromptTemplate &tmpl = PromptTemplate(std::string(templates::kNovelty)),
                               std::string *raw_reply = nullptr) {
    std::string numbered;
    for (std::size_t i = 0; i < premises.size(); ++i) {
        if (i) numbered += '\n';
        numbered += std::to_string(i + 1) + ". " + premises[i];
    }
    auto request = user_request(model, tmpl.render({{"hypothesis", hypothesis}, {"premises", numbered}}), "novelty",
                                DecodingParams{0.0, 1.0, 8});
    static const std::vector<std::string> choices = {"novel", "redundant"};
    JudgeReply r = ask_one_word(provider, request, choices);
    if (raw_reply) *raw_reply = r.raw;
    return r.verdict == "novel" ? NoveltyLabel::novel : NoveltyLabel::redundant;
}

/// Decides one hypothesis (by index) against the current premise indices.
class NoveltyJudge {
  public:
    virtual ~NoveltyJudge() = default;
    virtual NoveltyLabel judge(std::size_t hypothesis, std::span<const std::size_t> premises) = 0;
    virtual std::string id() const = 0;
};

class EmbeddingThresholdJudge : public NoveltyJudge {
  public:
    EmbeddingThresholdJudge(const EmbeddingSet &embeddings, double tau) : emb_(embeddings), tau_(tau) {
        if (!(tau >= -1.0 && tau <= 1.0)) throw InvalidArg("embedding judge threshold must lie in [-1, 1]");
        if (!emb_.empty()) {
            const auto dim = emb_.front().size();
            for (const auto &e : emb_)
                if (e.size() != dim) throw InvalidArg("embedding judge: embeddings of mixed dimension");
        }
    }

    NoveltyLabel judge(std::size_t hypothesis, std::span<const std::size_t> premises) override {
        if (premises.empty()) throw InvalidArg("embedding_judge: empty premise set");
        double best = -1.0;
        for (std::size_t p : premises) best = std::max(best, cosine_sim(emb_.at(hypothesis), emb_.at(p)));
        return best < tau_ ? NoveltyLabel::novel : NoveltyLabel::redundant;
    }

    std::string id() const override { return NoveltyJudgeKind::embedding(tau_).id(); }

  private:
    const EmbeddingSet &emb_;
    double tau_;
};

/// Chat-model judge over the response texts. Only the `premise_cap` most recent premises are sent.
class ChatNoveltyJudge : public NoveltyJudge {
  public:
    ChatNoveltyJudge(Provider &provider, std::span<const std::string> responses, std::string model,
                     PromptTemplate tmpl = PromptTemplate(std::string(templates::kNovelty)),
                     std::size_t premise_cap = kDefaultPremiseCap)
        : provider_(provider), responses_(responses), model_(std::move(model)), tmpl_(std::move(tmpl)),
          cap_(std::max<std::size_t>(1, premise_cap)) {}

    NoveltyLabel judge(std::size_t hypothesis, std::span<const std::size_t> premises) override {
        auto recent = premises.size() > cap_ ? premises.subspan(premises.size() - cap_) : premises;
        std::vector<std::string> texts;
        texts.reserve(recent.size());
        for (std::size_t p : recent) texts.push_back(responses_[p]);
        return chat_judge(provider_, responses_[hypothesis], texts, model_, tmpl_);
    }

    std::string id() const override { return "chat:" + model_; }

  private:
    Provider &provider_;
    std::span<const std::string> responses_;
    std::string model_;
    PromptTemplate tmpl_;
    std::size_t cap_;
};

/// Runs the sequential detector over `n` items. Provider and parse failures are rethrown as
/// NoveltyJudgeError carrying the labels decided so far.
inline NoveltyLabeling detect_novelty(std::size_t n, NoveltyJudge &judge) {
    if (n == 0) throw InvalidArg("detect_novelty: no responses");
    NoveltyLabeling out;
    out.labels.reserve(n);
    out.labels.push_back(NoveltyLabel::novel);
    out.premise_indices.push_back(0);
    for (std::size_t k = 1; k < n; ++k) {
        NoveltyLabel label;
        try {
            label = judge.judge(k, out.premise_indices);
        } catch (const ProviderError &e) {
            out.novelty_percent = novelty_score(out);
            throw NoveltyJudgeError(k, e.what(), out);
        } catch (const JudgeParseError &e) {
            out.novelty_percent = novelty_score(out);
            throw NoveltyJudgeError(k, e.what(), out);
        }
        out.labels.push_back(label);
        if (label == NoveltyLabel::novel) out.premise_indices.push_back(k);
    }
    out.novelty_percent = novelty_score(out);
    return out;
}

/// Convenience entry point selecting the judge from `kind`. The embedding judge needs `emb`
/// aligned with `responses`; the chat judge needs `provider`.
inline NoveltyLabeling detect_novelty(std::span<const std::string> responses, const NoveltyJudgeKind &kind,
                                      const std::optional<EmbeddingSet> &emb = std::nullopt,
                                      Provider *provider = nullptr) {
    if (responses.empty()) throw InvalidArg("detect_novelty: no responses");
    kind.validate();
    if (kind.kind == NoveltyJudgeKind::Kind::embedding_threshold) {
        if (!emb) throw MissingEmbeddings("embedding novelty judge needs embeddings");
        if (emb->size() != responses.size())
            throw InvalidArg("detect_novelty: " + std::to_string(emb->size()) + " embeddings for " +
                             std::to_string(responses.size()) + " responses");
        EmbeddingThresholdJudge judge(*emb, kind.threshold);
        return detect_novelty(responses.size(), judge);
    }
    if (!provider) throw InvalidArg("chat novelty judge needs a provider");
    ChatNoveltyJudge judge(*provider, responses, kind.model, PromptTemplate(kind.template_text), kind.premise_cap);
    return detect_novelty(responses.size(), judge);
}

} // namespace mn
