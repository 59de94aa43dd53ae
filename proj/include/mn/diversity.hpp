#pragma once

// Corpus diversity metrics: MTLD, TF-IDF semantic diversity (SDT), embedding semantic
// diversity (SDE), Self-BLEU diversity and pooled lexical entropy.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "mn/error.hpp"
#include "mn/parallel.hpp"
#include "mn/textops.hpp"

namespace mn {

using Embedding = std::vector<double>;
/// Ordered embeddings e_1..e_n of a shared dimension.
using EmbeddingSet = std::vector<Embedding>;

struct DiversityReport {
    double mtld = 0.0;
    double sdt = 0.0;
    double lexical_entropy_bits = 0.0;
    std::optional<double> sde; // absent without embeddings
    double self_bleu_diversity = 0.0;
    std::size_t n_responses = 0;
};

inline constexpr double kDefaultTtrThreshold = 0.72;

namespace detail {

template <class It>
double mtld_pass(It first, It last, std::size_t total, double threshold) {
    double factors = 0.0;
    std::unordered_set<std::string_view> types;
    std::size_t count = 0;
    double ttr = 1.0;
    for (; first != last; ++first) {
        ++count;
        types.insert(*first);
        ttr = static_cast<double>(types.size()) / static_cast<double>(count);
        if (ttr < threshold) {
            factors += 1.0;
            types.clear();
            count = 0;
            ttr = 1.0;
        }
    }
    if (count > 0) factors += (1.0 - ttr) / (1.0 - threshold);
    // No completed or partial factor: the whole text is one maximally diverse segment.
    if (factors == 0.0) return static_cast<double>(total);
    return static_cast<double>(total) / factors;
}

} // namespace detail

/// Bidirectional MTLD: mean of the forward and reversed factor walks.
inline double mtld(const TokenSeq &seq, double ttr_threshold = kDefaultTtrThreshold) {
    if (seq.empty()) throw InvalidArg("mtld: empty token sequence");
    if (!(ttr_threshold > 0.0 && ttr_threshold < 1.0))
        throw InvalidArg("mtld: ttr_threshold must lie in (0, 1)");
    double fwd = detail::mtld_pass(seq.begin(), seq.end(), seq.size(), ttr_threshold);
    double bwd = detail::mtld_pass(seq.rbegin(), seq.rend(), seq.size(), ttr_threshold);
    return (fwd + bwd) / 2.0;
}

/// 1 - mean pairwise cosine similarity of the documents' TF-IDF vectors.
inline double sdt(std::span<const TokenSeq> docs) {
    if (docs.size() < 2) throw InsufficientDocs(docs.size());
    TfIdfMatrix m = tfidf_matrix(docs);
    std::vector<double> norms(m.rows.size());
    for (std::size_t i = 0; i < m.rows.size(); ++i) norms[i] = m.rows[i].norm();
    auto sims = pairwise_values(docs.size(), [&](std::size_t i, std::size_t j) {
        if (norms[i] > 0.0 && m.rows[i].entries == m.rows[j].entries) return 1.0;
        return detail::finish_cosine(dot(m.rows[i], m.rows[j]), norms[i], norms[j]);
    });
    const auto pairs = static_cast<double>(sims.size());
    double mean = order_independent_sum(std::move(sims)) / pairs;
    return std::clamp(1.0 - mean, 0.0, 1.0);
}

/// Mean pairwise cosine distance (1 - cos) over all unordered pairs of embeddings. Range [0, 2].
inline double sde(const EmbeddingSet &emb) {
    if (emb.size() < 2) throw InsufficientDocs(emb.size());
    const std::size_t dim = emb.front().size();
    for (const auto &e : emb)
        if (e.size() != dim) throw InvalidArg("sde: embeddings of mixed dimension");
    std::vector<double> norms(emb.size());
    for (std::size_t i = 0; i < emb.size(); ++i) {
        double s = 0.0;
        for (double x : emb[i]) s += x * x;
        norms[i] = std::sqrt(s);
    }
    auto dists = pairwise_values(emb.size(), [&](std::size_t i, std::size_t j) {
        if (norms[i] > 0.0 && emb[i] == emb[j]) return 0.0;
        double d = 0.0;
        for (std::size_t k = 0; k < dim; ++k) d += emb[i][k] * emb[j][k];
        return 1.0 - detail::finish_cosine(d, norms[i], norms[j]);
    });
    const auto pairs = static_cast<double>(dists.size());
    return order_independent_sum(std::move(dists)) / pairs;
}

struct BleuOptions {
    std::size_t max_n = 4;
    double epsilon = 1e-9;
};

namespace detail {

/// Final BLEU combination shared by the single-pair and the corpus-indexed paths.
/// clipped[k]/total[k] describe order k+1. Orders with no hypothesis n-grams (hypothesis shorter
/// than the order) are left out and the uniform weights renormalized over the remaining orders.
inline double bleu_from_counts(std::span<const std::size_t> clipped,
                               std::span<const std::size_t> total, std::size_t hyp_len,
                               std::size_t ref_len, double epsilon) {
    double log_sum = 0.0;
    std::size_t orders = 0;
    for (std::size_t k = 0; k < clipped.size(); ++k) {
        if (total[k] == 0) continue;
        double num = clipped[k] > 0 ? static_cast<double>(clipped[k]) : epsilon;
        log_sum += std::log(num / static_cast<double>(total[k]));
        ++orders;
    }
    double bp;
    if (hyp_len >= ref_len)
        bp = 1.0;
    else if (hyp_len == 0)
        bp = 0.0;
    else
        bp = std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
    double geo = orders == 0 ? 1.0 : std::exp(log_sum / static_cast<double>(orders));
    return bp * geo;
}

/// Length of the reference closest to hyp_len; ties go to the shorter reference.
inline std::size_t closest_length(std::size_t hyp_len, std::size_t best, std::size_t candidate) {
    auto diff = [hyp_len](std::size_t r) { return r > hyp_len ? r - hyp_len : hyp_len - r; };
    if (diff(candidate) < diff(best) || (diff(candidate) == diff(best) && candidate < best))
        return candidate;
    return best;
}

inline std::string ngram_key(const TokenSeq &seq, std::size_t pos, std::size_t n) {
    std::string key = seq[pos];
    for (std::size_t k = 1; k < n; ++k) {
        key.push_back('\x1f');
        key += seq[pos + k];
    }
    return key;
}

using KeyCounts = std::unordered_map<std::string, std::uint32_t>;

inline std::vector<KeyCounts> ngram_tables(const TokenSeq &seq, std::size_t max_n) {
    std::vector<KeyCounts> out(max_n);
    for (std::size_t n = 1; n <= max_n; ++n)
        for (std::size_t i = 0; i + n <= seq.size(); ++i) ++out[n - 1][ngram_key(seq, i, n)];
    return out;
}

} // namespace detail

/// Sentence BLEU of `hyp` against a set of references: clipped modified n-gram precision,
/// uniform weights over orders 1..max_n, closest-reference brevity penalty and epsilon smoothing
/// of zero precisions.
inline double bleu(const TokenSeq &hyp, std::span<const TokenSeq> refs, const BleuOptions &opt = {}) {
    if (refs.empty()) throw InvalidArg("bleu: no references");
    if (opt.max_n < 1) throw InvalidArg("bleu: max_n must be >= 1");
    auto hyp_tables = detail::ngram_tables(hyp, opt.max_n);
    std::vector<detail::KeyCounts> max_ref(opt.max_n);
    std::size_t ref_len = refs.front().size();
    for (const auto &ref : refs) {
        ref_len = detail::closest_length(hyp.size(), ref_len, ref.size());
        auto tables = detail::ngram_tables(ref, opt.max_n);
        for (std::size_t k = 0; k < opt.max_n; ++k)
            for (const auto &[key, c] : tables[k]) {
                auto &slot = max_ref[k][key];
                slot = std::max(slot, c);
            }
    }
    std::vector<std::size_t> clipped(opt.max_n, 0), total(opt.max_n, 0);
    for (std::size_t k = 0; k < opt.max_n; ++k)
        for (const auto &[key, c] : hyp_tables[k]) {
            total[k] += c;
            auto it = max_ref[k].find(key);
            if (it != max_ref[k].end()) clipped[k] += std::min(c, it->second);
        }
    return detail::bleu_from_counts(clipped, total, hyp.size(), ref_len, opt.epsilon);
}

/// Per-document Self-BLEU: BLEU of each document against all other documents as references.
/// Uses one shared n-gram index holding, per n-gram, the two largest per-document counts, so the
/// clipping count "max over all other documents" is found without rescanning the corpus.
inline std::vector<double> self_bleu_scores(std::span<const TokenSeq> docs, const BleuOptions &opt = {}) {
    if (docs.size() < 2) throw InsufficientDocs(docs.size());
    if (opt.max_n < 1) throw InvalidArg("self_bleu: max_n must be >= 1");

    struct Top2 {
        std::uint32_t first = 0;
        std::size_t first_doc = SIZE_MAX;
        std::uint32_t second = 0;
    };
    std::vector<std::vector<detail::KeyCounts>> tables(docs.size());
    parallel_for(
        docs.size(), [&](std::size_t d) { tables[d] = detail::ngram_tables(docs[d], opt.max_n); },
        metric_threads());

    std::vector<std::unordered_map<std::string, Top2>> index(opt.max_n);
    for (std::size_t d = 0; d < docs.size(); ++d)
        for (std::size_t k = 0; k < opt.max_n; ++k)
            for (const auto &[key, c] : tables[d][k]) {
                Top2 &t = index[k][key];
                if (c > t.first) {
                    t.second = t.first;
                    t.first = c;
                    t.first_doc = d;
                } else if (c > t.second) {
                    t.second = c;
                }
            }

    std::vector<double> scores(docs.size());
    parallel_for(
        docs.size(),
        [&](std::size_t i) {
            std::vector<std::size_t> clipped(opt.max_n, 0), total(opt.max_n, 0);
            for (std::size_t k = 0; k < opt.max_n; ++k)
                for (const auto &[key, c] : tables[i][k]) {
                    total[k] += c;
                    const Top2 &t = index[k].at(key);
                    std::uint32_t others = t.first_doc == i ? t.second : t.first;
                    clipped[k] += std::min(c, others);
                }
            const std::size_t hyp_len = docs[i].size();
            std::size_t ref_len = docs[i == 0 ? 1 : 0].size();
            for (std::size_t j = 0; j < docs.size(); ++j)
                if (j != i) ref_len = detail::closest_length(hyp_len, ref_len, docs[j].size());
            scores[i] = detail::bleu_from_counts(clipped, total, hyp_len, ref_len, opt.epsilon);
        },
        metric_threads());
    return scores;
}

/// 1 - mean Self-BLEU. 0 for a corpus of identical documents, near 1 for disjoint ones.
inline double self_bleu_diversity(std::span<const TokenSeq> docs, const BleuOptions &opt = {}) {
    auto scores = self_bleu_scores(docs, opt);
    const auto n = static_cast<double>(scores.size());
    return std::clamp(1.0 - order_independent_sum(std::move(scores)) / n, 0.0, 1.0);
}

/// Shannon entropy in bits of the token distribution pooled over all documents.
inline double lexical_entropy(std::span<const TokenSeq> docs) {
    std::map<std::string_view, std::size_t> counts;
    std::size_t total = 0;
    for (const auto &doc : docs)
        for (const auto &tok : doc) {
            ++counts[tok];
            ++total;
        }
    if (total == 0) throw InvalidArg("lexical_entropy: no tokens");

    // Grouping tokens by their count makes a uniform distribution over V types evaluate to
    // exactly log2(V): the single group contributes (V*k/N) * log2(N/k) with V*k == N.
    std::map<std::size_t, std::size_t> by_count;
    for (const auto &[_, c] : counts) ++by_count[c];
    const auto n = static_cast<double>(total);
    double h = 0.0;
    for (const auto &[c, types] : by_count) {
        double mass = static_cast<double>(c * types) / n;
        h += mass * std::log2(n / static_cast<double>(c));
    }
    return h;
}

/// All five metrics for one corpus. MTLD is the mean of per-response MTLD over non-empty
/// responses; SDE is present only when embeddings are supplied.
inline DiversityReport diversity_report(std::span<const TokenSeq> docs,
                                        const std::optional<EmbeddingSet> &emb = std::nullopt,
                                        double ttr_threshold = kDefaultTtrThreshold,
                                        const BleuOptions &bleu_opt = {}) {
    if (docs.size() < 2) throw InsufficientDocs(docs.size());
    if (emb && emb->size() != docs.size())
        throw InvalidArg("diversity_report: " + std::to_string(emb->size()) + " embeddings for " +
                         std::to_string(docs.size()) + " responses");
    DiversityReport r;
    r.n_responses = docs.size();

    std::vector<double> per_doc;
    per_doc.reserve(docs.size());
    for (const auto &d : docs)
        if (!d.empty()) per_doc.push_back(mtld(d, ttr_threshold));
    if (!per_doc.empty()) {
        const auto k = static_cast<double>(per_doc.size());
        r.mtld = order_independent_sum(std::move(per_doc)) / k;
    }

    r.sdt = sdt(docs);
    r.lexical_entropy_bits = lexical_entropy(docs);
    r.self_bleu_diversity = self_bleu_diversity(docs, bleu_opt);
    if (emb) r.sde = sde(*emb);
    return r;
}

} // namespace mn
