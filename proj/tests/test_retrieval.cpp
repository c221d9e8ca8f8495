#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "apr/checkpoint.hpp"
#include "apr/config.hpp"
#include "apr/retrieval.hpp"
#include "apr/trainer.hpp"

using namespace apr;

namespace {

Corpus word_corpus(std::size_t n, std::uint64_t seed, PassageId first = 1)
{
    Rng rng(seed);
    Corpus c;
    for (std::size_t i = 0; i < n; ++i) {
        std::string text;
        const std::size_t len = 2 + rng.below(6);
        for (std::size_t j = 0; j < len; ++j) {
            if (j) text += ' ';
            text += "w" + std::to_string(rng.below(300));
        }
        c.add({first + i, i % 3 == 0 ? "title" + std::to_string(i) : "", text});
    }
    return c;
}

Checkpoint small_checkpoint(std::uint64_t seed = 5)
{
    RunConfig cfg;
    cfg.seed = seed;
    cfg.dims = {256, 16, 8};
    cfg.head_init = HeadInit::Uniform;
    auto ck = initial_checkpoint(cfg);
    // give the head some spread so scores are well separated
    Rng rng(seed + 100);
    for (double& x : ck.model.head.w_a) x = rng.uniform(-2, 2);
    return ck;
}

// exhaustive ranking with std::tanh and stable sort on (s desc, id asc)
std::vector<std::pair<PassageId, double>> oracle_rank(const Vector& q, const EmbeddingIndex& idx, const ArsParameters& th)
{
    std::vector<std::pair<PassageId, double>> out;
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const Vector p(idx.row(i).begin(), idx.row(i).end());
        out.emplace_back(idx.ids[i], ars_forward(q, p, th).s);
    }
    std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
        return a.second > b.second || (a.second == b.second && a.first < b.first);
    });
    return out;
}

}  // namespace

TEST(BuildIndex, SinglePassageRowIsRoundedEncoding)
{
    const auto ck = small_checkpoint();
    Corpus c;
    c.add({9, "", "w1 w2 w3"});
    const auto built = build_index(c, ck);
    ASSERT_EQ(built.index.size(), 1u);
    EXPECT_EQ(built.index.ids[0], 9u);
    const auto e = encode("w1 w2 w3", ck.model.passage, ck.pipeline()).values;
    for (std::size_t i = 0; i < e.size(); ++i) {
        EXPECT_EQ(built.index.values[i], static_cast<double>(static_cast<float>(e[i])));
    }
    built.index.validate();
}

TEST(BuildIndex, ParallelEqualsSequentialOnTenThousandPassages)
{
    const auto ck = small_checkpoint();
    const auto corpus = word_corpus(10000, 1);
    const auto seq = build_index(corpus, ck, 1);
    const auto par = build_index(corpus, ck, 4);
    EXPECT_EQ(seq.index, par.index);
    EXPECT_EQ(serialize_index(seq.index), serialize_index(par.index));
}

TEST(BuildIndex, EmptyPassageSkippedNotFatal)
{
    const auto ck = small_checkpoint();
    Corpus c;
    c.add({1, "", "w1"});
    c.add({2, "", "   "});
    c.add({3, "", "w2"});
    const auto built = build_index(c, ck);
    EXPECT_EQ(built.index.ids, (std::vector<PassageId>{1, 3}));
    ASSERT_EQ(built.skipped.size(), 1u);
    EXPECT_EQ(built.skipped[0].pid, 2u);
}

TEST(BuildIndex, RowsAreUnitNorm)
{
    const auto ck = small_checkpoint();
    const auto built = build_index(word_corpus(500, 2), ck);
    for (std::size_t i = 0; i < built.index.size(); ++i) {
        EXPECT_NEAR(l2_norm(built.index.row(i)), 1.0, 1e-6);
    }
}

TEST(SelectTopK, TieBreakAndClamp)
{
    const std::vector<double> s{0.5, 0.9, 0.5, 0.9, 0.1};
    const std::vector<PassageId> ids{40, 30, 20, 10, 50};
    const auto r = select_top_k(s, ids, 4);
    ASSERT_EQ(r.hits.size(), 4u);
    EXPECT_EQ(r.hits[0].pid, 10u);
    EXPECT_EQ(r.hits[1].pid, 30u);
    EXPECT_EQ(r.hits[2].pid, 20u);
    EXPECT_EQ(r.hits[3].pid, 40u);
    EXPECT_FALSE(r.clamped);
    const auto all = select_top_k(s, ids, 99);
    EXPECT_TRUE(all.clamped);
    EXPECT_EQ(all.hits.size(), 5u);
    EXPECT_THROW((void)select_top_k(s, ids, 0), Error);
}

TEST(Retrieve, MatchesExhaustiveOracle)
{
    const auto ck = small_checkpoint();
    const auto built = build_index(word_corpus(800, 3), ck);
    const Retriever ret(ck, built.index);
    for (const char* text : {"w1 w2", "w17 w250 w3", "w99"}) {
        const auto q = ret.encode_query(text);
        const auto expected = oracle_rank(q, built.index, ck.model.head);
        const auto got = ret.retrieve(text, 50);
        ASSERT_EQ(got.hits.size(), 50u);
        for (std::size_t i = 0; i < 50; ++i) {
            EXPECT_NEAR(got.hits[i].s, expected[i].second, 1e-12);
            EXPECT_NEAR(got.hits[i].r, sigmoid(expected[i].second), 1e-12);
        }
        // ids agree wherever neighbours are not within rounding of each other
        for (std::size_t i = 0; i < 50; ++i) {
            const bool close_prev = i > 0 && std::fabs(expected[i].second - expected[i - 1].second) < 1e-12;
            const bool close_next = i + 1 < expected.size() && std::fabs(expected[i].second - expected[i + 1].second) < 1e-12;
            if (!close_prev && !close_next) {
                EXPECT_EQ(got.hits[i].pid, expected[i].first) << "rank " << i;
            }
        }
    }
}

TEST(Retrieve, BatchedScoringEqualsPerPairForward)
{
    const auto ck = small_checkpoint();
    const auto built = build_index(word_corpus(1000, 4), ck);
    const Retriever ret(ck, built.index);
    const auto q = ret.encode_query("w5 w6 w7");
    const auto scores = ret.score_all(q, ScoringMethod::Ars);
    for (std::size_t i = 0; i < built.index.size(); ++i) {
        const Vector p(built.index.row(i).begin(), built.index.row(i).end());
        EXPECT_NEAR(scores[i], ars_forward(q, p, ck.model.head).s, 1e-12);
    }
}

TEST(Retrieve, FullRankingIsPermutationAndNonIncreasing)
{
    const auto ck = small_checkpoint();
    const auto corpus = word_corpus(300, 5);
    const auto built = build_index(corpus, ck);
    const Retriever ret(ck, built.index);
    const auto r = ret.retrieve("w1 w2 w3", corpus.size());
    std::set<PassageId> ids;
    for (std::size_t i = 0; i < r.hits.size(); ++i) {
        ids.insert(r.hits[i].pid);
        EXPECT_GT(r.hits[i].r, 0.0);
        EXPECT_LT(r.hits[i].r, 1.0);
        if (i) {
            EXPECT_GE(r.hits[i - 1].s, r.hits[i].s);
            EXPECT_GE(r.hits[i - 1].r, r.hits[i].r);
        }
    }
    EXPECT_EQ(ids.size(), corpus.size());
    EXPECT_EQ(*ids.begin(), 1u);
    EXPECT_EQ(*ids.rbegin(), corpus.size());
}

TEST(Retrieve, TopKPrefixConsistency)
{
    const auto ck = small_checkpoint();
    const auto built = build_index(word_corpus(400, 6), ck);
    const Retriever ret(ck, built.index);
    const auto big = ret.retrieve("w8 w9", 100);
    for (std::size_t k : {1u, 5u, 10u, 37u, 99u}) {
        const auto small = ret.retrieve("w8 w9", k);
        ASSERT_EQ(small.hits.size(), k);
        for (std::size_t i = 0; i < k; ++i) {
            EXPECT_EQ(small.hits[i], big.hits[i]);
        }
    }
}

TEST(Retrieve, IndexOrderPermutationInvariance)
{
    const auto ck = small_checkpoint();
    const auto corpus = word_corpus(300, 7);
    auto passages = corpus.passages();
    Rng rng(8);
    rng.shuffle(passages);
    const Corpus shuffled(passages);
    const Retriever a(ck, build_index(corpus, ck).index);
    const Retriever b(ck, build_index(shuffled, ck).index);
    for (const char* text : {"w1", "w2 w3 w4", "w100 w200"}) {
        EXPECT_EQ(a.retrieve(text, 300).hits, b.retrieve(text, 300).hits);
        EXPECT_EQ(a.retrieve_baseline_dot(text, 300).hits, b.retrieve_baseline_dot(text, 300).hits);
    }
}

TEST(Retrieve, IdenticalEmbeddingsOrderedByAscendingId)
{
    const auto ck = small_checkpoint();
    Corpus c;
    c.add({50, "", "w1 w2"});
    c.add({7, "", "w1 w2"});
    c.add({20, "", "w1 w2"});
    c.add({3, "", "w9"});
    const Retriever ret(ck, build_index(c, ck).index);
    const auto r = ret.retrieve("w5", 4);
    std::vector<PassageId> tied;
    for (const auto& h : r.hits) {
        if (h.pid != 3) tied.push_back(h.pid);
    }
    EXPECT_EQ(tied, (std::vector<PassageId>{7, 20, 50}));
}

TEST(Retrieve, ThreadCountDoesNotChangeScores)
{
    const auto ck = small_checkpoint();
    const auto built = build_index(word_corpus(3000, 9), ck);
    const Retriever one(ck, built.index, 1);
    const Retriever four(ck, built.index, 4);
    const auto q = one.encode_query("w1 w2 w3");
    EXPECT_EQ(one.score_all(q, ScoringMethod::Ars, 1), four.score_all(q, ScoringMethod::Ars, 4));
    EXPECT_EQ(one.score_all(q, ScoringMethod::Dot, 1), four.score_all(q, ScoringMethod::Dot, 3));
}

TEST(RetrieveDot, SelfMatchAndOrthogonal)
{
    // tied towers at init: question and passage encoders are the same map
    RunConfig cfg;
    cfg.dims = {256, 16, 8};
    const auto ck = initial_checkpoint(cfg);
    ASSERT_EQ(ck.model.question.weights, ck.model.passage.weights);
    const auto corpus = word_corpus(200, 10);
    const Retriever ret(ck, build_index(corpus, ck).index);
    const auto& target = corpus.passages()[17];
    const auto r = ret.retrieve_baseline_dot(target.encoder_input(), 1);
    EXPECT_EQ(r.hits[0].pid, target.pid);
    EXPECT_NEAR(r.hits[0].s, 1.0, 1e-6);

    // orthogonal pair built by hand
    EmbeddingIndex idx;
    idx.dim = 16;
    Vector e0(16, 0.0), e1(16, 0.0);
    e0[0] = 1.0;
    e1[1] = 1.0;
    idx.push_back(1, e0);
    idx.push_back(2, e1);
    const Retriever r2(ck, idx);
    const auto scores = r2.score_all(e0, ScoringMethod::Dot);
    EXPECT_EQ(scores[0], 1.0);
    EXPECT_EQ(scores[1], 0.0);
}

TEST(RetrieverTest, DimensionMismatchRejected)
{
    const auto ck = small_checkpoint();
    EmbeddingIndex idx;
    idx.dim = 4;
    idx.push_back(1, Vector{1, 0, 0, 0});
    try {
        const Retriever r(ck, idx);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::CheckpointMismatch);
    }
}
