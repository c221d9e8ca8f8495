#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "apr/binary_io.hpp"
#include "apr/checkpoint.hpp"
#include "apr/config.hpp"
#include "apr/trainer.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
    int code = -1;
    std::string out;
    std::string err;
};

fs::path scratch()
{
    static const fs::path dir = [] {
        auto d = fs::temp_directory_path() / "apr_cli_test";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

Run run(const std::string& args)
{
    const auto err_path = scratch() / "stderr.txt";
    const std::string cmd = std::string("'") + APR_CLI_PATH + "' " + args + " 2>'" + err_path.string() + "'";
    Run r;
    FILE* p = popen(cmd.c_str(), "r");
    if (p == nullptr) return r;
    char buf[4096];
    std::size_t n = 0;
    while ((n = fread(buf, 1, sizeof(buf), p)) > 0) r.out.append(buf, n);
    const int status = pclose(p);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.err = apr::binary::read_text(err_path);
    return r;
}

std::vector<std::vector<std::string>> tsv_rows(const std::string& text)
{
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) {
        std::vector<std::string> cells;
        std::istringstream ls(line);
        for (std::string c; std::getline(ls, c, '\t');) cells.push_back(c);
        rows.push_back(cells);
    }
    return rows;
}

// one small planted dataset and checkpoint shared by the tests below
const fs::path& prepared()
{
    static const fs::path dir = [] {
        const auto d = scratch() / "planted";
        const auto s = run("synth --mode planted --seed 7 --out '" + d.string() +
                           "' --corpus-size 120 --train 30 --test 10 --latent-dim 16 --hidden-dim 16 --vocab 200");
        EXPECT_EQ(s.code, 0) << s.err;
        const auto t = run("train --data '" + d.string() + "' --out '" + (d / "model.ckpt").string() +
                           "' --set epochs=2 --set embed_dim=16 --set hidden_dim=8 --set feature_dim=128 --set batch_size=8");
        EXPECT_EQ(t.code, 0) << t.err;
        const auto i = run("index --checkpoint '" + (d / "model.ckpt").string() + "' --corpus '" + (d / "corpus.jsonl").string() +
                           "' --out '" + (d / "corpus.idx").string() + "'");
        EXPECT_EQ(i.code, 0) << i.err;
        return d;
    }();
    return dir;
}

}  // namespace

TEST(Cli, NoSubcommandOrUnknownFlagIsUsageError)
{
    EXPECT_EQ(run("").code, 2);
    EXPECT_EQ(run("synth --out x --bogus").code, 2);
    EXPECT_EQ(run("frobnicate").code, 2);
    EXPECT_EQ(run("--help").code, 0);
}

TEST(Cli, SynthWritesFourFilesDeterministically)
{
    const auto a = scratch() / "synth_a";
    const auto b = scratch() / "synth_b";
    const std::string flags = " --corpus-size 100 --train 10 --test 5 --latent-dim 8 --hidden-dim 8 --vocab 100";
    const auto ra = run("synth --mode planted --seed 7 --out '" + a.string() + "'" + flags);
    const auto rb = run("synth --mode planted --seed 7 --out '" + b.string() + "'" + flags);
    ASSERT_EQ(ra.code, 0) << ra.err;
    ASSERT_EQ(rb.code, 0) << rb.err;
    EXPECT_EQ(tsv_rows(ra.out).size(), 4u);
    for (const char* f : {"corpus.jsonl", "train.jsonl", "test.jsonl", "spec.json"}) {
        ASSERT_TRUE(fs::exists(a / f)) << f;
        EXPECT_EQ(apr::binary::read_text(a / f), apr::binary::read_text(b / f)) << f;
    }
    // effective config echoed on stderr
    EXPECT_NE(ra.err.find("# seed = 7"), std::string::npos) << ra.err;
}

TEST(Cli, SynthLexicalTooSmallCorpusExitsTwo)
{
    const auto r = run("synth --mode lexical --seed 1 --corpus-size 10 --out '" + (scratch() / "lex_small").string() + "'");
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("pool_size"), std::string::npos) << r.err;
}

TEST(Cli, TrainZeroEpochsEqualsInit)
{
    const auto& d = prepared();
    const auto ck = d / "zero.ckpt";
    const auto r = run("train --data '" + d.string() + "' --out '" + ck.string() +
                       "' --set epochs=0 --set embed_dim=16 --set hidden_dim=8 --set feature_dim=128");
    ASSERT_EQ(r.code, 0) << r.err;
    apr::RunConfig cfg;
    cfg.epochs = 0;
    cfg.dims = {128, 16, 8};
    EXPECT_EQ(apr::binary::read_file(ck), apr::serialize_checkpoint(apr::initial_checkpoint(cfg)));
}

TEST(Cli, TrainIsReproducibleAndWritesMetrics)
{
    const auto& d = prepared();
    const auto ck = d / "again.ckpt";
    const auto r = run("train --data '" + d.string() + "' --out '" + ck.string() +
                       "' --set epochs=2 --set embed_dim=16 --set hidden_dim=8 --set feature_dim=128 --set batch_size=8");
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(apr::binary::read_file(ck), apr::binary::read_file(d / "model.ckpt"));
    EXPECT_EQ(apr::binary::read_text(d / "again.ckpt.metrics.tsv"), apr::binary::read_text(d / "model.ckpt.metrics.tsv"));
}

TEST(Cli, TrainErrorsMapToStableExitCodes)
{
    const auto& d = prepared();
    EXPECT_EQ(run("train --data '" + (scratch() / "no_such_dir").string() + "' --out '" + (scratch() / "x.ckpt").string() + "'").code, 2);
    EXPECT_EQ(run("train --data '" + d.string() + "' --out '" + (scratch() / "x.ckpt").string() + "' --set nonsense=1").code, 2);
    // a malformed data file is a format error
    const auto bad = scratch() / "bad_data";
    fs::create_directories(bad);
    fs::copy_file(d / "corpus.jsonl", bad / "corpus.jsonl", fs::copy_options::overwrite_existing);
    std::ofstream(bad / "train.jsonl") << "{broken\n";
    EXPECT_EQ(run("train --data '" + bad.string() + "' --out '" + (scratch() / "x.ckpt").string() + "'").code, 4);
    // log τ so small that 1/τ overflows: numeric abort
    const auto r = run("train --data '" + d.string() + "' --out '" + (scratch() / "x.ckpt").string() +
                       "' --set init_log_tau=-800 --set embed_dim=16 --set hidden_dim=8 --set feature_dim=128");
    EXPECT_EQ(r.code, 3) << r.err;
}

TEST(Cli, QueryPrintsKRowsWithNonIncreasingScore)
{
    const auto& d = prepared();
    for (const char* method : {"ars", "dot"}) {
        const auto r = run("query --checkpoint '" + (d / "model.ckpt").string() + "' --index '" + (d / "corpus.idx").string() +
                           "' --text 'some question' -k 5 --method " + method);
        ASSERT_EQ(r.code, 0) << r.err;
        const auto rows = tsv_rows(r.out);
        ASSERT_EQ(rows.size(), 6u);
        EXPECT_EQ(rows[0], (std::vector<std::string>{"rank", "pid", "s", "r"}));
        for (std::size_t i = 1; i < rows.size(); ++i) {
            ASSERT_EQ(rows[i].size(), 4u);
            EXPECT_EQ(rows[i][0], std::to_string(i));
            const double r_val = std::stod(rows[i][3]);
            EXPECT_GT(r_val, 0.0);
            EXPECT_LT(r_val, 1.0);
            if (i > 1) EXPECT_GE(std::stod(rows[i - 1][2]), std::stod(rows[i][2]));
        }
    }
}

TEST(Cli, QueryThreadCountDoesNotChangeOutput)
{
    const auto& d = prepared();
    const std::string base = "query --checkpoint '" + (d / "model.ckpt").string() + "' --index '" + (d / "corpus.idx").string() +
                             "' --text 'another question' -k 20";
    const auto one = run(base + " --threads 1");
    const auto four = run(base + " --threads 4");
    ASSERT_EQ(one.code, 0);
    EXPECT_EQ(one.out, four.out);
}

TEST(Cli, IndexIsDeterministicAndMissingInputsFail)
{
    const auto& d = prepared();
    const auto again = d / "again.idx";
    ASSERT_EQ(run("index --checkpoint '" + (d / "model.ckpt").string() + "' --corpus '" + (d / "corpus.jsonl").string() + "' --out '" +
                  again.string() + "' --threads 3")
                  .code,
              0);
    EXPECT_EQ(apr::binary::read_file(again), apr::binary::read_file(d / "corpus.idx"));
    EXPECT_EQ(run("index --checkpoint '" + (d / "nope.ckpt").string() + "' --corpus '" + (d / "corpus.jsonl").string() + "' --out '" +
                  (d / "x.idx").string() + "'")
                  .code,
              2);
    // a checkpoint file with garbage content is a format error
    std::ofstream(d / "garbage.ckpt") << "not a checkpoint";
    EXPECT_EQ(run("query --checkpoint '" + (d / "garbage.ckpt").string() + "' --index '" + (d / "corpus.idx").string() +
                  "' --text q")
                  .code,
              4);
}

TEST(Cli, EvalWritesJsonAndCsvForEveryMethod)
{
    const auto& d = prepared();
    const auto out = scratch() / "reports";
    for (const char* method : {"ars", "dot", "bm25", "tfidf"}) {
        const auto r = run(std::string("eval --method ") + method + " --data '" + d.string() + "' --checkpoint '" +
                           (d / "model.ckpt").string() + "' --index '" + (d / "corpus.idx").string() + "' --out '" + out.string() + "'");
        ASSERT_EQ(r.code, 0) << method << ": " << r.err;
        EXPECT_TRUE(fs::exists(out / (std::string(method) + ".json")));
        EXPECT_EQ(apr::binary::read_text(out / (std::string(method) + ".csv")), r.out);
        EXPECT_EQ(r.out.rfind("k,accuracy,method\n", 0), 0u);
    }
    // same report with the index built in memory and more threads
    const auto out2 = scratch() / "reports2";
    const auto r = run("eval --method ars --data '" + d.string() + "' --checkpoint '" + (d / "model.ckpt").string() + "' --out '" +
                       out2.string() + "' --threads 3");
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(apr::binary::read_text(out / "ars.json"), apr::binary::read_text(out2 / "ars.json"));
    EXPECT_EQ(run("eval --method splade --data '" + d.string() + "' --out '" + out.string() + "'").code, 2);
    EXPECT_EQ(run("eval --method ars --data '" + d.string() + "' --out '" + out.string() + "'").code, 2);
}

TEST(Cli, GradcheckPassesAndMutationFails)
{
    const auto ok = run("gradcheck --trials 2");
    EXPECT_EQ(ok.code, 0) << ok.err;
    EXPECT_NE(ok.out.find("PASS"), std::string::npos) << ok.out;
    const auto bad = run("gradcheck --trials 2 --corrupt-wq");
    EXPECT_EQ(bad.code, 3);
    EXPECT_NE(bad.out.find("FAIL"), std::string::npos) << bad.out;
}

TEST(Cli, BenchReportsThroughput)
{
    const auto r = run("bench --corpus-size 2000 --queries 5 --embed-dim 16 --hidden-dim 8 --feature-dim 128");
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("qps"), std::string::npos) << r.out;
    EXPECT_NE(r.out.find("p50"), std::string::npos) << r.out;
}
