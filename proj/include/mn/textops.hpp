#pragma once

// Text primitives shared by every metric: tokenization, n-grams, TF-IDF and cosine similarity.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mn/error.hpp"

namespace mn {

/// Lowercased word tokens; never contains an empty string.
using TokenSeq = std::vector<std::string>;
using Ngram = std::vector<std::string>;
using NgramCounts = std::map<Ngram, std::size_t>;

namespace detail {

inline constexpr char32_t kReplacement = 0xFFFD;

/// Decodes one code point starting at s[i] and advances i. Malformed input yields U+FFFD.
inline char32_t next_codepoint(std::string_view s, std::size_t &i) {
    auto byte = [&](std::size_t k) { return static_cast<unsigned char>(s[k]); };
    unsigned char c = byte(i);
    if (c < 0x80) {
        ++i;
        return c;
    }
    int len = (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xE ? 3 : (c >> 3) == 0x1E ? 4 : 0;
    if (len == 0 || i + len > s.size()) {
        ++i;
        return kReplacement;
    }
    char32_t cp = c & (0x7F >> len);
    for (int k = 1; k < len; ++k) {
        unsigned char cc = byte(i + k);
        if ((cc >> 6) != 0x2) {
            ++i;
            return kReplacement;
        }
        cp = (cp << 6) | (cc & 0x3F);
    }
    i += len;
    return cp;
}

inline void append_utf8(std::string &out, char32_t cp) {
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
}

/// Simple case mapping for Latin, Greek, Cyrillic, Armenian and fullwidth Latin.
/// Locale-independent so that tokenization is identical on every host.
constexpr char32_t to_lower(char32_t c) {
    auto in = [c](char32_t lo, char32_t hi) { return c >= lo && c <= hi; };
    if (in('A', 'Z')) return c + 0x20;
    if (c < 0x80) return c;
    if (in(0x00C0, 0x00DE) && c != 0x00D7) return c + 0x20;
    if (c == 0x0130) return 'i';
    if (c == 0x0178) return 0x00FF;
    if ((in(0x0100, 0x012F) || in(0x0132, 0x0137) || in(0x014A, 0x0177)) && c % 2 == 0) return c + 1;
    if ((in(0x0139, 0x0148) || in(0x0179, 0x017E)) && c % 2 == 1) return c + 1;
    if (c == 0x0386) return 0x03AC;
    if (in(0x0388, 0x038A)) return c + 0x25;
    if (c == 0x038C) return 0x03CC;
    if (in(0x038E, 0x038F)) return c + 0x3F;
    if (in(0x0391, 0x03AB) && c != 0x03A2) return c + 0x20;
    if (in(0x0400, 0x040F)) return c + 0x50;
    if (in(0x0410, 0x042F)) return c + 0x20;
    if ((in(0x0460, 0x0481) || in(0x048A, 0x04BF)) && c % 2 == 0) return c + 1;
    if (in(0x0531, 0x0556)) return c + 0x30;
    if ((in(0x1E00, 0x1E95) || in(0x1EA0, 0x1EFF)) && c % 2 == 0) return c + 1;
    if (in(0xFF21, 0xFF3A)) return c + 0x20;
    return c;
}

/// Letters and digits. Non-ASCII code points count as word characters unless they fall in a
/// punctuation, symbol, space or emoji block.
constexpr bool is_word_char(char32_t c) {
    auto in = [c](char32_t lo, char32_t hi) { return c >= lo && c <= hi; };
    if (c < 0x80) return in('a', 'z') || in('A', 'Z') || in('0', '9');
    if (in(0x0080, 0x00BF)) return c == 0x00AA || c == 0x00B5 || c == 0x00BA;
    if (c == 0x00D7 || c == 0x00F7) return false;
    if (in(0x2000, 0x206F) || in(0x20A0, 0x20CF) || in(0x2190, 0x2BFF)) return false;
    if (in(0x3000, 0x303F) || in(0xFE30, 0xFE6F) || in(0xFF00, 0xFF0F)) return false;
    if (in(0xFF1A, 0xFF20) || in(0xFF3B, 0xFF40) || in(0xFF5B, 0xFF65)) return false;
    if (in(0x1F000, 0x1FAFF) || c == 0xFEFF || c == kReplacement) return false;
    return true;
}

constexpr bool is_apostrophe(char32_t c) { return c == '\'' || c == 0x2019; }

} // namespace detail

/// Lowercased maximal runs of word characters. An apostrophe (ASCII or U+2019) survives only
/// between two word characters and is normalized to ASCII.
inline TokenSeq tokenize(std::string_view text) {
    std::vector<char32_t> cps;
    cps.reserve(text.size());
    for (std::size_t i = 0; i < text.size();) cps.push_back(detail::next_codepoint(text, i));

    TokenSeq out;
    std::string cur;
    for (std::size_t k = 0; k < cps.size(); ++k) {
        char32_t c = cps[k];
        if (detail::is_word_char(c)) {
            detail::append_utf8(cur, detail::to_lower(c));
        } else if (detail::is_apostrophe(c) && !cur.empty() && k + 1 < cps.size() &&
                   detail::is_word_char(cps[k + 1])) {
            cur.push_back('\'');
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

/// Code-point-wise lowercase of UTF-8 text, with the same mapping as tokenize.
inline std::string to_lower(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    for (std::size_t i = 0; i < text.size();) detail::append_utf8(out, detail::to_lower(detail::next_codepoint(text, i)));
    return out;
}

inline std::string join_tokens(const TokenSeq &seq, std::string_view sep = " ") {
    std::string out;
    for (std::size_t i = 0; i < seq.size(); ++i) {
        if (i) out += sep;
        out += seq[i];
    }
    return out;
}

inline NgramCounts ngrams(const TokenSeq &seq, std::size_t n) {
    if (n < 1) throw InvalidArg("ngrams: n must be >= 1");
    NgramCounts out;
    if (seq.size() < n) return out;
    for (std::size_t i = 0; i + n <= seq.size(); ++i)
        ++out[Ngram(seq.begin() + static_cast<std::ptrdiff_t>(i),
                    seq.begin() + static_cast<std::ptrdiff_t>(i + n))];
    return out;
}

/// Unit-normalized sparse TF-IDF row. Entries are sorted by term id; empty for empty docs.
struct TfIdfVector {
    std::vector<std::pair<std::uint32_t, double>> entries;

    double norm() const {
        double s = 0.0;
        for (const auto &[_, w] : entries) s += w * w;
        return std::sqrt(s);
    }
};

struct TfIdfMatrix {
    std::vector<std::string> vocabulary; // sorted; term id = index
    std::vector<TfIdfVector> rows;

    /// Weight of `term` in document `doc`, 0 when absent.
    double weight(std::size_t doc, std::string_view term) const {
        auto it = std::lower_bound(vocabulary.begin(), vocabulary.end(), term);
        if (it == vocabulary.end() || *it != term) return 0.0;
        auto id = static_cast<std::uint32_t>(it - vocabulary.begin());
        for (const auto &[t, w] : rows.at(doc).entries)
            if (t == id) return w;
        return 0.0;
    }
};

/// tf = raw count, idf = ln((1+N)/(1+df)) + 1, rows L2-normalized.
inline TfIdfMatrix tfidf_matrix(std::span<const TokenSeq> docs) {
    if (docs.empty()) throw InvalidArg("tfidf_matrix: no documents");

    std::map<std::string, std::uint32_t> df;
    std::vector<std::map<std::string, std::uint32_t>> tf(docs.size());
    for (std::size_t d = 0; d < docs.size(); ++d) {
        for (const auto &tok : docs[d]) ++tf[d][tok];
        for (const auto &[term, _] : tf[d]) ++df[term];
    }

    TfIdfMatrix m;
    m.vocabulary.reserve(df.size());
    std::map<std::string_view, std::uint32_t> ids;
    std::vector<double> idf;
    idf.reserve(df.size());
    const double n = static_cast<double>(docs.size());
    for (const auto &[term, count] : df) {
        ids.emplace(term, static_cast<std::uint32_t>(m.vocabulary.size()));
        m.vocabulary.push_back(term);
        idf.push_back(std::log((1.0 + n) / (1.0 + count)) + 1.0);
    }

    m.rows.resize(docs.size());
    for (std::size_t d = 0; d < docs.size(); ++d) {
        auto &row = m.rows[d].entries;
        row.reserve(tf[d].size());
        double sq = 0.0;
        for (const auto &[term, count] : tf[d]) {
            std::uint32_t id = ids.at(term);
            double w = count * idf[id];
            row.emplace_back(id, w);
            sq += w * w;
        }
        if (sq > 0.0) {
            double inv = 1.0 / std::sqrt(sq);
            for (auto &e : row) e.second *= inv;
        }
    }
    return m;
}

inline double dot(const TfIdfVector &a, const TfIdfVector &b) {
    double s = 0.0;
    auto i = a.entries.begin(), j = b.entries.begin();
    while (i != a.entries.end() && j != b.entries.end()) {
        if (i->first < j->first) {
            ++i;
        } else if (j->first < i->first) {
            ++j;
        } else {
            s += i->second * j->second;
            ++i;
            ++j;
        }
    }
    return s;
}

namespace detail {
inline double finish_cosine(double dot, double nu, double nv) {
    if (nu == 0.0 || nv == 0.0) return 0.0;
    double c = dot / (nu * nv);
    return c > 1.0 ? 1.0 : (c < -1.0 ? -1.0 : c);
}
} // namespace detail

/// u.v / (|u||v|), 0 when either vector is zero, clamped to [-1, 1].
inline double cosine_sim(std::span<const double> u, std::span<const double> v) {
    if (u.size() != v.size())
        throw InvalidArg("cosine_sim: dimension mismatch (" + std::to_string(u.size()) + " vs " +
                         std::to_string(v.size()) + ")");
    double d = 0.0, nu = 0.0, nv = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        d += u[i] * v[i];
        nu += u[i] * u[i];
        nv += v[i] * v[i];
    }
    return detail::finish_cosine(d, std::sqrt(nu), std::sqrt(nv));
}

inline double cosine_sim(const TfIdfVector &u, const TfIdfVector &v) {
    return detail::finish_cosine(dot(u, v), u.norm(), v.norm());
}

} // namespace mn
