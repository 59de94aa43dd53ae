#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "mn/diversity.hpp"
#include "oracles.hpp"

using mn::TokenSeq;

namespace {

TokenSeq repeat(const std::string &w, std::size_t n) { return TokenSeq(n, w); }

TokenSeq distinct(std::size_t n, const std::string &prefix = "t") {
    TokenSeq out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(prefix + std::to_string(i));
    return out;
}

} // namespace

// MTLD

TEST(Mtld, TenRepeatsIsTwo) { EXPECT_DOUBLE_EQ(mn::mtld(repeat("a", 10)), 2.0); }

TEST(Mtld, AllDistinctReturnsLength) { EXPECT_DOUBLE_EQ(mn::mtld(distinct(10)), 10.0); }

TEST(Mtld, ReversalInvariant) {
    std::mt19937_64 rng(3);
    for (int t = 0; t < 50; ++t) {
        auto doc = oracle::random_corpus(rng, 2, 50, 6)[0];
        TokenSeq rev(doc.rbegin(), doc.rend());
        EXPECT_DOUBLE_EQ(mn::mtld(doc), mn::mtld(rev));
    }
}

TEST(Mtld, MatchesOracleWithPartialFactors) {
    std::mt19937_64 rng(5);
    for (int t = 0; t < 200; ++t) {
        auto doc = oracle::random_corpus(rng, 2, 50, 1 + t % 15)[0];
        for (double thr : {0.5, 0.72, 0.9})
            EXPECT_NEAR(mn::mtld(doc, thr), oracle::mtld(doc, thr), 1e-9);
    }
}

TEST(Mtld, Errors) {
    EXPECT_THROW(mn::mtld({}), mn::InvalidArg);
    EXPECT_THROW(mn::mtld({"a"}, 0.0), mn::InvalidArg);
    EXPECT_THROW(mn::mtld({"a"}, 1.0), mn::InvalidArg);
}

// SDT

TEST(Sdt, IdenticalDocsZero) {
    std::vector<TokenSeq> docs(4, TokenSeq{"x", "y", "x"});
    EXPECT_EQ(mn::sdt(docs), 0.0);
}

TEST(Sdt, DisjointDocsOne) {
    std::vector<TokenSeq> docs = {{"a", "b"}, {"c"}, {"d", "e", "e"}};
    EXPECT_EQ(mn::sdt(docs), 1.0);
}

TEST(Sdt, ThreeDocsByPairEnumeration) {
    // N = 3; df(a) = 2, the rest 1. idf(a) = ln(4/3)+1, idf(other) = ln(2)+1.
    const double ia = std::log(4.0 / 3.0) + 1.0, io = std::log(2.0) + 1.0;
    // doc0 = (a, b), doc1 = (a, c), doc2 = (d, e): only pair (0,1) overlaps, on a.
    const double sim01 = (ia * ia) / (ia * ia + io * io);
    const double expected = 1.0 - (sim01 + 0.0 + 0.0) / 3.0;
    std::vector<TokenSeq> docs = {{"a", "b"}, {"a", "c"}, {"d", "e"}};
    EXPECT_NEAR(mn::sdt(docs), expected, 1e-12);
    EXPECT_NEAR(mn::sdt(docs), oracle::sdt(docs), 1e-12);
}

TEST(Sdt, NeedsTwoDocs) {
    std::vector<TokenSeq> one = {{"a"}};
    EXPECT_THROW(mn::sdt(one), mn::InsufficientDocs);
}

// SDE

TEST(Sde, CopiesZero) {
    mn::EmbeddingSet e(5, {0.3, -0.2, 0.9});
    EXPECT_EQ(mn::sde(e), 0.0);
}

TEST(Sde, ThreeVectorFixture) {
    mn::EmbeddingSet e = {{1, 0}, {0, 1}, {1, 0}};
    EXPECT_NEAR(mn::sde(e), 2.0 / 3.0, 1e-9);
}

TEST(Sde, OppositeVectorsTwo) {
    mn::EmbeddingSet e = {{1, 0}, {-1, 0}};
    EXPECT_DOUBLE_EQ(mn::sde(e), 2.0);
}

TEST(Sde, Errors) {
    EXPECT_THROW(mn::sde({{1, 0}}), mn::InsufficientDocs);
    EXPECT_THROW(mn::sde({{1, 0}, {1, 0, 0}}), mn::InvalidArg);
}

// BLEU / Self-BLEU

TEST(Bleu, HandComputedModifiedPrecision) {
    TokenSeq hyp = {"the", "cat", "sat", "on", "the", "mat"};
    std::vector<TokenSeq> refs = {{"the", "cat", "is", "on", "the", "mat"}};
    // p1 = 5/6, p2 = 3/5, p3 = 1/4, p4 = 0/3 -> eps/3; equal lengths so BP = 1.
    EXPECT_NEAR(mn::bleu(hyp, refs, {3, 1e-9}), 0.5, 1e-12);
    double four = std::pow((5.0 / 6.0) * (3.0 / 5.0) * (1.0 / 4.0) * (1e-9 / 3.0), 0.25);
    EXPECT_NEAR(mn::bleu(hyp, refs), four, 1e-15);
    EXPECT_NEAR(mn::bleu(hyp, refs), oracle::bleu(hyp, refs), 1e-15);
}

TEST(Bleu, BrevityPenaltyUsesClosestReference) {
    TokenSeq hyp = {"a", "b"};
    std::vector<TokenSeq> refs = {{"a", "b", "c", "d"}, {"a", "b", "c", "d", "e", "f", "g"}};
    EXPECT_NEAR(mn::bleu(hyp, refs, {2, 1e-9}), std::exp(1.0 - 4.0 / 2.0), 1e-12);
    // Tie between lengths 1 and 3 for a 2-token hypothesis goes to the shorter: no penalty.
    std::vector<TokenSeq> tie = {{"a"}, {"a", "b", "c"}};
    EXPECT_NEAR(mn::bleu(hyp, tie, {2, 1e-9}), 1.0, 1e-12);
}

TEST(Bleu, ClipsByMaxReferenceCount) {
    TokenSeq hyp = {"the", "the", "the", "the"};
    std::vector<TokenSeq> refs = {{"the", "cat"}, {"the", "the", "dog"}};
    // Unigram: 2 of 4 clipped by the second reference. Bigram "the the": clipped 1 of 3.
    EXPECT_NEAR(mn::bleu(hyp, refs, {2, 1e-9}), std::sqrt(0.5 * (1.0 / 3.0)), 1e-12);
}

TEST(SelfBleu, IdenticalDocsZero) {
    std::vector<TokenSeq> docs(3, TokenSeq{"one", "two", "three"});
    EXPECT_EQ(mn::self_bleu_diversity(docs), 0.0);
    std::vector<TokenSeq> short_docs(3, TokenSeq{"hi"});
    EXPECT_EQ(mn::self_bleu_diversity(short_docs), 0.0);
}

TEST(SelfBleu, DisjointDocsNearOne) {
    std::vector<TokenSeq> docs = {distinct(5, "x"), distinct(6, "y")};
    EXPECT_GE(mn::self_bleu_diversity(docs), 0.999);
}

TEST(SelfBleu, IndexedPathMatchesLiteralOracle) {
    std::mt19937_64 rng(13);
    for (int t = 0; t < 50; ++t) {
        auto docs = oracle::random_corpus(rng, 10, 30, 4 + t % 8);
        auto scores = mn::self_bleu_scores(docs);
        for (std::size_t i = 0; i < docs.size(); ++i) {
            std::vector<TokenSeq> others;
            for (std::size_t j = 0; j < docs.size(); ++j)
                if (j != i) others.push_back(docs[j]);
            EXPECT_NEAR(scores[i], mn::bleu(docs[i], others), 1e-12);
        }
        EXPECT_NEAR(mn::self_bleu_diversity(docs), oracle::self_bleu_diversity(docs), 1e-9);
    }
}

TEST(SelfBleu, NeedsTwoDocs) {
    std::vector<TokenSeq> one = {{"a"}};
    EXPECT_THROW(mn::self_bleu_diversity(one), mn::InsufficientDocs);
}

// Entropy

TEST(Entropy, Examples) {
    std::vector<TokenSeq> two = {{"a", "b"}};
    std::vector<TokenSeq> same = {{"a", "a"}, {"a"}};
    std::vector<TokenSeq> mixed = {{"a", "a"}, {"b", "c"}};
    EXPECT_EQ(mn::lexical_entropy(two), 1.0);
    EXPECT_EQ(mn::lexical_entropy(same), 0.0);
    EXPECT_EQ(mn::lexical_entropy(mixed), 1.5);
}

TEST(Entropy, NoTokens) {
    std::vector<TokenSeq> empty = {{}, {}};
    EXPECT_THROW(mn::lexical_entropy(empty), mn::InvalidArg);
}

TEST(Entropy, BoundsAndUniformEquality) {
    std::mt19937_64 rng(17);
    for (int t = 0; t < 100; ++t) {
        auto docs = oracle::random_corpus(rng);
        std::set<std::string> vocab;
        for (const auto &d : docs) vocab.insert(d.begin(), d.end());
        double h = mn::lexical_entropy(docs);
        EXPECT_GE(h, 0.0);
        EXPECT_LE(h, std::log2(double(vocab.size())) + 1e-12);
        EXPECT_NEAR(h, oracle::entropy_bits(docs), 1e-9);
    }
    for (std::size_t v = 1; v <= 64; ++v)
        for (std::size_t k : {1, 3, 7}) {
            TokenSeq doc;
            for (std::size_t r = 0; r < k; ++r)
                for (std::size_t w = 0; w < v; ++w) doc.push_back("w" + std::to_string(w));
            std::vector<TokenSeq> docs = {doc};
            EXPECT_EQ(mn::lexical_entropy(docs), std::log2(double(v))) << v << "x" << k;
        }
}

// Report and properties

TEST(DiversityReport, IdenticalPair) {
    std::vector<TokenSeq> docs(2, TokenSeq{"same", "words", "here"});
    mn::EmbeddingSet emb(2, {0.1, 0.2});
    auto r = mn::diversity_report(docs, emb);
    EXPECT_EQ(r.sdt, 0.0);
    EXPECT_EQ(*r.sde, 0.0);
    EXPECT_EQ(r.self_bleu_diversity, 0.0);
    EXPECT_EQ(r.n_responses, 2u);
}

TEST(DiversityReport, WithoutEmbeddingsSdeAbsent) {
    std::vector<TokenSeq> docs = {{"a", "b"}, {"c", "d"}};
    auto r = mn::diversity_report(docs);
    EXPECT_FALSE(r.sde.has_value());
    EXPECT_EQ(r.sdt, 1.0);
}

TEST(DiversityReport, EmbeddingCountMismatch) {
    std::vector<TokenSeq> docs = {{"a"}, {"b"}};
    EXPECT_THROW(mn::diversity_report(docs, mn::EmbeddingSet{{1.0}}), mn::InvalidArg);
    std::vector<TokenSeq> one = {{"a"}};
    EXPECT_THROW(mn::diversity_report(one), mn::InsufficientDocs);
}

TEST(DiversityReport, MtldIsMeanOfPerResponseValues) {
    std::vector<TokenSeq> docs = {repeat("a", 10), distinct(10), {}};
    auto r = mn::diversity_report(docs);
    EXPECT_DOUBLE_EQ(r.mtld, (2.0 + 10.0) / 2.0);
}

TEST(DiversityReport, PermutationInvariantExactly) {
    std::mt19937_64 rng(19);
    for (int t = 0; t < 30; ++t) {
        auto docs = oracle::random_corpus(rng);
        auto emb = oracle::random_embeddings(rng, docs.size(), 6);
        auto base = mn::diversity_report(docs, emb);
        std::vector<std::size_t> perm(docs.size());
        for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
        std::shuffle(perm.begin(), perm.end(), rng);
        std::vector<TokenSeq> d2;
        mn::EmbeddingSet e2;
        for (auto p : perm) {
            d2.push_back(docs[p]);
            e2.push_back(emb[p]);
        }
        auto other = mn::diversity_report(d2, e2);
        EXPECT_EQ(base.sdt, other.sdt);
        EXPECT_EQ(*base.sde, *other.sde);
        EXPECT_EQ(base.self_bleu_diversity, other.self_bleu_diversity);
        EXPECT_EQ(base.lexical_entropy_bits, other.lexical_entropy_bits);
        EXPECT_EQ(base.mtld, other.mtld);
    }
}

TEST(DiversityReport, BoundsAndThreadCountIndependence) {
    std::mt19937_64 rng(23);
    for (int t = 0; t < 30; ++t) {
        auto docs = oracle::random_corpus(rng);
        auto emb = oracle::random_embeddings(rng, docs.size(), 4);
        mn::metric_threads() = 1;
        auto serial = mn::diversity_report(docs, emb);
        mn::metric_threads() = 4;
        auto parallel = mn::diversity_report(docs, emb);
        mn::metric_threads() = 0;
        EXPECT_EQ(serial.sdt, parallel.sdt);
        EXPECT_EQ(*serial.sde, *parallel.sde);
        EXPECT_EQ(serial.self_bleu_diversity, parallel.self_bleu_diversity);
        EXPECT_GE(serial.sdt, 0.0);
        EXPECT_LE(serial.sdt, 1.0);
        EXPECT_GE(*serial.sde, 0.0);
        EXPECT_LE(*serial.sde, 2.0);
        EXPECT_GE(serial.self_bleu_diversity, 0.0);
        EXPECT_LE(serial.self_bleu_diversity, 1.0);
        EXPECT_GE(serial.mtld, 0.0);
    }
}
