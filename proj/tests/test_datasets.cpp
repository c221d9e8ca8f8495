#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "apr/binary_io.hpp"
#include "apr/datasets.hpp"
#include "apr/lexical.hpp"

using namespace apr;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("apr_ds_" + name))
    {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

void write_file(const fs::path& p, const std::string& text)
{
    std::ofstream out(p, std::ios::binary);
    out << text;
}

PlantedModelSpec small_spec(std::uint64_t seed = 11)
{
    PlantedModelSpec s;
    s.seed = seed;
    s.corpus_size = 200;
    s.train_count = 40;
    s.test_count = 20;
    s.latent_dim = 16;
    s.hidden_dim = 16;
    s.vocab_size = 300;
    return s;
}

}  // namespace

TEST(LoadRetriever, WellFormedFile)
{
    TempDir dir("ok");
    write_file(dir.path / "t.jsonl",
               "{\"qid\":1,\"question\":\"a\",\"positives\":[1],\"negatives\":[2,3]}\n"
               "{\"qid\":2,\"question\":\"b\",\"positives\":[2],\"negatives\":[1]}\n"
               "\n"
               "{\"question\":\"c\",\"positive_ctxs\":[{\"passage_id\":\"3\"}],\"hard_negative_ctxs\":[{\"pid\":1}]}\n");
    const auto r = load_retriever_jsonl(dir.path / "t.jsonl");
    ASSERT_EQ(r.items.size(), 3u);
    EXPECT_EQ(r.items[0].negatives, (std::vector<PassageId>{2, 3}));
    EXPECT_EQ(r.items[2].qid, 2u);  // defaulted to the record ordinal
    EXPECT_EQ(r.items[2].positives, (std::vector<PassageId>{3}));
}

TEST(LoadRetriever, MissingNegativesNamesTheLine)
{
    TempDir dir("missing");
    write_file(dir.path / "t.jsonl",
               "{\"qid\":1,\"question\":\"a\",\"positives\":[1],\"negatives\":[2]}\n"
               "{\"qid\":2,\"question\":\"b\",\"positives\":[2]}\n");
    try {
        (void)load_retriever_jsonl(dir.path / "t.jsonl");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::MissingField);
        EXPECT_NE(std::string(e.what()).find(":2"), std::string::npos) << e.what();
        EXPECT_NE(std::string(e.what()).find("negatives"), std::string::npos);
    }
    const auto lax = load_retriever_jsonl(dir.path / "t.jsonl", LoadMode::Lax);
    EXPECT_EQ(lax.items.size(), 1u);
    ASSERT_EQ(lax.skipped.size(), 1u);
    EXPECT_EQ(lax.skipped[0].line, 2u);
}

TEST(LoadRetriever, PositiveRepeatedInNegativesRejected)
{
    TempDir dir("overlap");
    write_file(dir.path / "t.jsonl", "{\"qid\":1,\"question\":\"a\",\"positives\":[1],\"negatives\":[2,1]}\n");
    try {
        (void)load_retriever_jsonl(dir.path / "t.jsonl");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Validation);
    }
}

TEST(LoadRetriever, DanglingIdAndBadJson)
{
    TempDir dir("dangling");
    write_file(dir.path / "t.jsonl", "{\"qid\":1,\"question\":\"a\",\"positives\":[1],\"negatives\":[99]}\n");
    Corpus c;
    c.add({1, "", "x"});
    try {
        (void)load_retriever_jsonl(dir.path / "t.jsonl", LoadMode::Strict, &c);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::DanglingId);
    }
    write_file(dir.path / "bad.jsonl", "{not json\n");
    try {
        (void)load_retriever_jsonl(dir.path / "bad.jsonl");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Parse);
    }
    try {
        (void)load_retriever_jsonl(dir.path / "absent.jsonl");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Io);
    }
}

TEST(Corpus, DuplicateIdRejected)
{
    TempDir dir("dup");
    write_file(dir.path / "c.jsonl", "{\"pid\":1,\"text\":\"a\"}\n{\"pid\":1,\"text\":\"b\"}\n");
    EXPECT_THROW((void)load_corpus_jsonl(dir.path / "c.jsonl"), Error);
}

TEST(Formats, WriteLoadWriteIsByteIdentical)
{
    TempDir dir("rt");
    const auto data = generate_planted(small_spec());
    const auto files = write_dataset(dir.path, data);
    const auto corpus = load_corpus_jsonl(files.corpus);
    const auto train = load_retriever_jsonl(files.train, LoadMode::Strict, &corpus).items;
    const auto test = load_eval_jsonl(files.test, &corpus);
    EXPECT_EQ(corpus_to_jsonl(corpus), binary::read_text(files.corpus));
    EXPECT_EQ(retriever_to_jsonl(train), binary::read_text(files.train));
    EXPECT_EQ(eval_to_jsonl(test), binary::read_text(files.test));
    EXPECT_EQ(train, data.train);
    EXPECT_EQ(test, data.test);
}

TEST(Planted, CardinalitiesAndIds)
{
    PlantedModelSpec spec;  // defaults: 1000 passages, 200 train, 100 test
    const auto world = generate_planted_world(spec);
    const auto& d = world.dataset;
    EXPECT_EQ(d.corpus.size(), 1000u);
    EXPECT_EQ(d.train.size(), 200u);
    EXPECT_EQ(d.test.size(), 100u);
    std::set<PassageId> ids;
    for (const auto& p : d.corpus.passages()) ids.insert(p.pid);
    EXPECT_EQ(ids.size(), 1000u);
    std::set<std::uint64_t> qids;
    for (const auto& ex : d.train) {
        qids.insert(ex.qid);
        EXPECT_EQ(ex.positives.size(), 1u);
        EXPECT_EQ(ex.negatives.size(), kDefaultPoolSize);
        std::set<PassageId> pool(ex.negatives.begin(), ex.negatives.end());
        EXPECT_EQ(pool.size(), kDefaultPoolSize);
        EXPECT_FALSE(pool.contains(ex.positives[0]));
    }
    for (const auto& q : d.test) qids.insert(q.qid);
    EXPECT_EQ(qids.size(), 300u);
}

// brute force over the latent scorer, using std::tanh directly
TEST(Planted, GoldIsHiddenArgmaxAndNegativesAreNextRanks)
{
    const auto world = generate_planted_world(small_spec());
    const auto& sc = world.scorer;
    auto logit = [&](const Vector& xq, const Vector& xp) {
        double s = 0.0;
        for (std::size_t j = 0; j < sc.w.size(); ++j) {
            double a = 0.0, b = 0.0;
            for (std::size_t c = 0; c < xq.size(); ++c) {
                a += sc.a(j, c) * xq[c];
                b += sc.b(j, c) * xp[c];
            }
            s += sc.w[j] * std::tanh(a * b);
        }
        return s;
    };
    for (std::size_t i = 0; i < world.dataset.train.size(); ++i) {
        const auto& ex = world.dataset.train[i];
        std::vector<std::pair<double, PassageId>> all;
        for (std::size_t j = 0; j < world.passage_latents.size(); ++j) {
            all.emplace_back(-logit(world.query_latents[i], world.passage_latents[j]), kFirstPassageId + j);
        }
        std::sort(all.begin(), all.end());
        EXPECT_EQ(all[0].second, ex.positives[0]);
        EXPECT_GE(-all[0].first - -all[1].first, world.spec.min_margin - 1e-12);
        std::set<PassageId> expected;
        for (std::size_t r = 1; r <= world.spec.pool_size; ++r) expected.insert(all[r].second);
        EXPECT_EQ(std::set<PassageId>(ex.negatives.begin(), ex.negatives.end()), expected);
    }
}

TEST(Planted, SameSeedSameFilesDifferentSeedDiffers)
{
    TempDir a("a"), b("b"), c("c");
    write_dataset(a.path, generate_planted(small_spec(5)));
    write_dataset(b.path, generate_planted(small_spec(5)));
    write_dataset(c.path, generate_planted(small_spec(6)));
    for (const char* f : {"corpus.jsonl", "train.jsonl", "test.jsonl", "spec.json"}) {
        EXPECT_EQ(binary::read_text(a.path / f), binary::read_text(b.path / f)) << f;
    }
    EXPECT_NE(binary::read_text(a.path / "corpus.jsonl"), binary::read_text(c.path / "corpus.jsonl"));
}

TEST(Planted, InfeasibleSpecsRejected)
{
    auto s = small_spec();
    s.corpus_size = s.pool_size;
    try {
        (void)generate_planted(s);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::SpecInfeasible);
        EXPECT_NE(std::string(e.what()).find("pool_size"), std::string::npos);
    }
    s = small_spec();
    s.hidden_dim = s.latent_dim + 1;
    EXPECT_THROW((void)generate_planted(s), Error);
    s = small_spec();
    s.noise = 2.0;
    EXPECT_THROW((void)generate_planted(s), Error);
}

TEST(LexicalMismatch, GoldPairsShareNoTokensAndScoreZero)
{
    LexicalMismatchSizes sizes;
    sizes.corpus_size = 300;
    sizes.train_count = 30;
    sizes.test_count = 30;
    const auto d = generate_lexical_mismatch(3, sizes);
    EXPECT_EQ(d.spec_echo["mode"], "lexical");
    const LexicalIndex lex(d.corpus);
    auto check = [&](const std::string& question, PassageId gold) {
        const auto qt = tokenize(question);
        const auto pt = tokenize(d.corpus.at(gold).encoder_input());
        const std::set<std::string> qs(qt.begin(), qt.end());
        for (const auto& t : pt) EXPECT_FALSE(qs.contains(t)) << t;
        EXPECT_EQ(lex.bm25_score(qt, gold), 0.0);
        EXPECT_EQ(lex.tfidf_score(qt, gold), 0.0);
    };
    for (const auto& ex : d.train) check(ex.question, ex.positives[0]);
    for (const auto& q : d.test) check(q.question, q.relevant[0]);
}

TEST(LexicalMismatch, SmallCorpusRejected)
{
    LexicalMismatchSizes sizes;
    sizes.corpus_size = 10;
    EXPECT_THROW((void)generate_lexical_mismatch(1, sizes), Error);
}
