#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <map>

#include "apr/binary_io.hpp"
#include "apr/checkpoint.hpp"
#include "apr/config.hpp"
#include "apr/eval.hpp"
#include "apr/lexical.hpp"
#include "apr/retrieval.hpp"
#include "apr/trainer.hpp"

using namespace apr;

namespace {

using Docs = std::vector<std::pair<PassageId, std::vector<std::string>>>;

Docs random_docs(Rng& rng, std::size_t n, std::size_t vocab)
{
    Docs docs;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::string> toks;
        const std::size_t len = 1 + rng.below(9);
        for (std::size_t j = 0; j < len; ++j) toks.push_back("t" + std::to_string(rng.below(vocab)));
        docs.emplace_back(i + 1, toks);
    }
    return docs;
}

// Okapi BM25 recomputed from scratch with maps
double bm25_oracle(const Docs& docs, const std::vector<std::string>& query, std::size_t which, double k1 = 1.2, double b = 0.75)
{
    const double n = static_cast<double>(docs.size());
    double avgdl = 0.0;
    for (const auto& d : docs) avgdl += static_cast<double>(d.second.size());
    avgdl /= n;
    double score = 0.0;
    for (const auto& term : query) {
        double df = 0.0;
        for (const auto& d : docs) {
            if (std::find(d.second.begin(), d.second.end(), term) != d.second.end()) df += 1.0;
        }
        if (df == 0.0) continue;
        const double idf = std::log(1.0 + (n - df + 0.5) / (df + 0.5));
        const auto& doc = docs[which].second;
        const double tf = static_cast<double>(std::count(doc.begin(), doc.end(), term));
        const double len = static_cast<double>(doc.size());
        score += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * len / avgdl));
    }
    return score;
}

// log-tf · smoothed idf cosine, recomputed from scratch
double tfidf_oracle(const Docs& docs, const std::vector<std::string>& query, std::size_t which)
{
    const double n = static_cast<double>(docs.size());
    std::map<std::string, double> df;
    for (const auto& d : docs) {
        std::set<std::string> uniq(d.second.begin(), d.second.end());
        for (const auto& t : uniq) df[t] += 1.0;
    }
    auto vec = [&](const std::vector<std::string>& toks) {
        std::map<std::string, double> tf;
        for (const auto& t : toks) {
            if (df.count(t)) tf[t] += 1.0;
        }
        for (auto& [t, v] : tf) v = std::log(1.0 + v) * (std::log((1.0 + n) / (1.0 + df[t])) + 1.0);
        return tf;
    };
    const auto q = vec(query);
    const auto d = vec(docs[which].second);
    double num = 0.0, nq = 0.0, nd = 0.0;
    for (const auto& [t, v] : q) {
        nq += v * v;
        if (d.count(t)) num += v * d.at(t);
    }
    for (const auto& [t, v] : d) nd += v * v;
    if (nq == 0.0 || nd == 0.0) return 0.0;
    return num / std::sqrt(nq * nd);
}

}  // namespace

TEST(Bm25, ToyCase)
{
    const Docs docs{{1, {"a", "b"}}, {2, {"a", "c"}}};
    const LexicalIndex idx(docs);
    const std::vector<std::string> q{"c"};
    EXPECT_NEAR(idx.bm25_score(q, 2), std::log(2.0), 1e-12);
    EXPECT_EQ(idx.bm25_score(q, 1), 0.0);
}

TEST(Bm25, NoCorpusTermsScoresZero)
{
    const Docs docs{{1, {"a", "b"}}, {2, {"a", "c"}}};
    const LexicalIndex idx(docs);
    const std::vector<std::string> q{"zzz", "yyy"};
    for (double s : idx.bm25_all(q)) EXPECT_EQ(s, 0.0);
    for (double s : idx.tfidf_all(q)) EXPECT_EQ(s, 0.0);
}

TEST(Bm25, DuplicateQueryTermDoublesContribution)
{
    const Docs docs{{1, {"a", "b"}}, {2, {"a", "c"}}, {3, {"c", "c", "d"}}};
    const LexicalIndex idx(docs);
    const std::vector<std::string> once{"c"};
    const std::vector<std::string> twice{"c", "c"};
    for (PassageId pid : {1u, 2u, 3u}) {
        EXPECT_NEAR(idx.bm25_score(twice, pid), 2.0 * idx.bm25_score(once, pid), 1e-15);
    }
}

TEST(Bm25, MatchesOracleOnRandomCorpora)
{
    Rng rng(1);
    for (int t = 0; t < 20; ++t) {
        const auto docs = random_docs(rng, 30, 25);
        const LexicalIndex idx(docs);
        std::vector<std::string> q;
        for (std::size_t j = 0; j < 1 + rng.below(5); ++j) q.push_back("t" + std::to_string(rng.below(30)));
        const auto all = idx.bm25_all(q);
        for (std::size_t i = 0; i < docs.size(); ++i) {
            const double expected = bm25_oracle(docs, q, i);
            EXPECT_NEAR(idx.bm25_score(q, docs[i].first), expected, 1e-12);
            EXPECT_EQ(all[i], idx.bm25_score(q, docs[i].first));
            EXPECT_GE(all[i], 0.0);
        }
    }
}

TEST(Tfidf, MatchesOracleOnRandomCorpora)
{
    Rng rng(2);
    for (int t = 0; t < 20; ++t) {
        const auto docs = random_docs(rng, 30, 25);
        const LexicalIndex idx(docs);
        std::vector<std::string> q;
        for (std::size_t j = 0; j < 1 + rng.below(5); ++j) q.push_back("t" + std::to_string(rng.below(30)));
        const auto all = idx.tfidf_all(q);
        for (std::size_t i = 0; i < docs.size(); ++i) {
            EXPECT_NEAR(idx.tfidf_score(q, docs[i].first), tfidf_oracle(docs, q, i), 1e-12);
            EXPECT_NEAR(all[i], tfidf_oracle(docs, q, i), 1e-12);
            EXPECT_GE(all[i], 0.0);
            EXPECT_LE(all[i], 1.0 + 1e-12);
        }
    }
}

TEST(Tfidf, UniqueOneTermDocIsMaximal)
{
    const Docs docs{{1, {"a", "b"}}, {2, {"q"}}, {3, {"q", "a", "b"}}, {4, {"c"}}};
    const LexicalIndex idx(docs);
    const std::vector<std::string> q{"q"};
    const auto s = idx.tfidf_all(q);
    EXPECT_NEAR(s[1], 1.0, 1e-12);
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i != 1) EXPECT_LT(s[i], s[1]);
    }
    const std::vector<std::string> disjoint{"zz"};
    EXPECT_EQ(idx.tfidf_score(disjoint, 2), 0.0);
}

TEST(LexicalIndexTest, UnknownDocAndEmptyCorpus)
{
    const Docs docs{{1, {"a"}}};
    const LexicalIndex idx(docs);
    const std::vector<std::string> q{"a"};
    try {
        (void)idx.bm25_score(q, 42);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::UnknownDoc);
    }
    EXPECT_THROW(LexicalIndex(Docs{}), Error);
}

TEST(LexicalIndexTest, BuiltFromCorpusUsesTitleAndText)
{
    Corpus c;
    c.add({5, "Title", "body words"});
    c.add({6, "", "other"});
    const LexicalIndex idx(c);
    EXPECT_EQ(idx.df("title"), 1u);
    EXPECT_EQ(idx.df("body"), 1u);
    EXPECT_EQ(idx.doc_count(), 2u);
}

TEST(TopKAccuracy, DefinitionalExample)
{
    const EvalSet set{{1, "q1", {1}}, {2, "q2", {2}}};
    std::map<std::uint64_t, std::vector<PassageId>> ranked{{1, {3, 1, 4}}, {2, {2, 5, 6}}};
    const auto r = topk_accuracy(ranked, set, {1, 2, 3}, "x");
    EXPECT_EQ(r.accuracy_at(1), 0.5);
    EXPECT_EQ(r.accuracy_at(2), 1.0);
    EXPECT_EQ(r.per_query[0].first_hit_rank, std::optional<std::size_t>(2));
    EXPECT_EQ(r.per_query[1].first_hit_rank, std::optional<std::size_t>(1));
}

TEST(TopKAccuracy, AllMissesAndMissingQuery)
{
    const EvalSet set{{1, "q1", {1}}, {2, "q2", {2}}};
    std::map<std::uint64_t, std::vector<PassageId>> ranked{{1, {3, 4}}, {2, {5, 6}}};
    const auto r = topk_accuracy(ranked, set, {1, 2}, "x");
    EXPECT_EQ(r.accuracies, (std::vector<double>{0.0, 0.0}));
    ranked.erase(2);
    EXPECT_THROW((void)topk_accuracy(ranked, set, {1}, "x"), Error);
    EXPECT_THROW((void)topk_accuracy(ranked, set, {2, 1}, "x"), Error);
    EXPECT_THROW((void)topk_accuracy(ranked, set, {0, 1}, "x"), Error);
}

TEST(TopKAccuracy, MonotoneInK)
{
    Rng rng(3);
    for (int t = 0; t < 50; ++t) {
        EvalSet set;
        std::map<std::uint64_t, std::vector<PassageId>> ranked;
        for (std::uint64_t q = 1; q <= 20; ++q) {
            set.push_back({q, "", {1 + rng.below(30)}});
            std::vector<PassageId> ids(30);
            std::iota(ids.begin(), ids.end(), PassageId(1));
            rng.shuffle(ids);
            ranked[q] = ids;
        }
        const auto r = topk_accuracy(ranked, set, {1, 2, 5, 10, 20, 30}, "x");
        for (std::size_t i = 1; i < r.accuracies.size(); ++i) EXPECT_GE(r.accuracies[i], r.accuracies[i - 1]);
        // exhaustive depth always hits
        EXPECT_EQ(r.accuracies.back(), 1.0);
    }
}

TEST(Evaluate, ExhaustiveDepthGivesFullAccuracyForEveryMethod)
{
    RunConfig cfg;
    cfg.dims = {128, 8, 4};
    const auto ck = initial_checkpoint(cfg);
    Corpus c;
    for (PassageId i = 1; i <= 12; ++i) c.add({i, "", "w" + std::to_string(i) + " common"});
    EvalSet set{{1, "w3", {3}}, {2, "w7 common", {7}}, {3, "nothing", {11}}};
    const Retriever ret(ck, build_index(c, ck).index);
    const LexicalIndex lex(c, ck.tokenizer);
    for (auto m : {EvalMethod::Ars, EvalMethod::Dot, EvalMethod::Bm25, EvalMethod::Tfidf}) {
        const auto r = evaluate(m, set, {&ret, &lex}, {1, 12});
        EXPECT_EQ(r.accuracy_at(12), 1.0) << to_string(m);
        EXPECT_EQ(r.method, to_string(m));
    }
    // lexical finds exact term matches at rank 1
    const auto bm = evaluate(EvalMethod::Bm25, set, {&ret, &lex}, {1, 12});
    EXPECT_EQ(bm.per_query[0].first_hit_rank, std::optional<std::size_t>(1));
    EXPECT_EQ(bm.per_query[1].first_hit_rank, std::optional<std::size_t>(1));
}

TEST(Evaluate, ThreadCountInvariantAndMissingArtifacts)
{
    RunConfig cfg;
    cfg.dims = {128, 8, 4};
    const auto ck = initial_checkpoint(cfg);
    Corpus c;
    for (PassageId i = 1; i <= 200; ++i) c.add({i, "", "w" + std::to_string(i % 37) + " v" + std::to_string(i % 11)});
    EvalSet set;
    for (std::uint64_t q = 1; q <= 40; ++q) set.push_back({q, "w" + std::to_string(q % 37) + " v3", {q}});
    const Retriever ret(ck, build_index(c, ck).index);
    const LexicalIndex lex(c);
    for (auto m : {EvalMethod::Ars, EvalMethod::Dot, EvalMethod::Bm25, EvalMethod::Tfidf}) {
        const auto a = evaluate(m, set, {&ret, &lex}, kDefaultKs, 1);
        const auto b = evaluate(m, set, {&ret, &lex}, kDefaultKs, 4);
        EXPECT_EQ(a, b);
        EXPECT_EQ(a.to_json().dump(), b.to_json().dump());
    }
    EXPECT_THROW((void)evaluate(EvalMethod::Ars, set, {nullptr, &lex}), Error);
    EXPECT_THROW((void)evaluate(EvalMethod::Bm25, set, {&ret, nullptr}), Error);
}

TEST(Report, CsvAndJsonShape)
{
    TopKReport r{"bm25", {1, 5}, {0.25, 0.5}, {{1, 3}, {2, std::nullopt}}};
    EXPECT_EQ(r.to_csv(), "k,accuracy,method\n1,0.25,bm25\n5,0.5,bm25\n");
    const auto j = r.to_json();
    EXPECT_EQ(j["method"], "bm25");
    EXPECT_EQ(j["per_query"][0]["first_hit_rank"], 3);
    EXPECT_TRUE(j["per_query"][1]["first_hit_rank"].is_null());
    EXPECT_THROW((void)r.accuracy_at(3), Error);

    const auto dir = std::filesystem::temp_directory_path() / "apr_report_test";
    std::filesystem::create_directories(dir);
    write_report(dir / "r.json", dir / "r.csv", r);
    EXPECT_EQ(binary::read_text(dir / "r.csv"), r.to_csv());
    std::filesystem::remove_all(dir);
}

TEST(EvalMethodNames, RoundTrip)
{
    for (auto m : {EvalMethod::Ars, EvalMethod::Dot, EvalMethod::Bm25, EvalMethod::Tfidf}) {
        EXPECT_EQ(parse_eval_method(to_string(m)), m);
    }
    EXPECT_THROW((void)parse_eval_method("splade"), Error);
}
