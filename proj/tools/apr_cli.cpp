// apr: command-line front end for the retriever pipeline.
//
// Exit codes: 0 ok, 2 usage/config, 3 numeric, 4 io/format.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "apr/apr.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitIo = 4;

int exit_code_for(apr::ErrorKind kind)
{
    using apr::ErrorKind;
    switch (kind) {
        case ErrorKind::NonFinite:
        case ErrorKind::NonFiniteGradient:
        case ErrorKind::ZeroVector:
            return kExitNumeric;
        case ErrorKind::Io:
        case ErrorKind::Format:
        case ErrorKind::Parse:
        case ErrorKind::MissingField:
        case ErrorKind::DanglingId:
        case ErrorKind::CheckpointMismatch:
            return kExitIo;
        default:
            return kExitUsage;
    }
}

std::size_t resolve_threads(std::size_t requested)
{
    if (requested != 0) {
        return requested;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : hw;
}

void require_file(const fs::path& p, const char* what)
{
    if (!fs::is_regular_file(p)) {
        throw apr::Error(apr::ErrorKind::Config, std::string(what) + " '" + p.string() + "' does not exist");
    }
}

void require_dir(const fs::path& p, const char* what)
{
    if (!fs::is_directory(p)) {
        throw apr::Error(apr::ErrorKind::Config, std::string(what) + " '" + p.string() + "' is not a directory");
    }
}

std::vector<std::size_t> parse_ks(const std::string& text)
{
    std::vector<std::size_t> ks;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        try {
            std::size_t used = 0;
            const long long v = std::stoll(item, &used);
            if (used != item.size() || v <= 0) {
                throw std::invalid_argument(item);
            }
            ks.push_back(static_cast<std::size_t>(v));
        } catch (const std::logic_error&) {
            throw apr::Error(apr::ErrorKind::Config, "bad k value '" + item + "' in --ks");
        }
    }
    apr::validate_ks(ks);
    return ks;
}

// Effective-config echo on stderr so stdout stays machine-readable.
void echo(const std::string& command, const std::vector<std::pair<std::string, std::string>>& entries)
{
    std::cerr << "# apr " << command << '\n';
    for (const auto& [k, v] : entries) {
        std::cerr << "# " << k << " = " << v << '\n';
    }
}

std::string str(double x)
{
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

// ------------------------------------------------------------------ synth

struct SynthArgs {
    std::string mode = "planted";
    std::uint64_t seed = 7;
    std::string out;
    std::size_t corpus_size = 1000;
    std::size_t train = 200;
    std::size_t test = 100;
    std::size_t pool = apr::kDefaultPoolSize;
    // planted-only knobs; unset means the mode's default
    std::optional<std::size_t> latent_dim, hidden_dim, vocab, passage_length, query_length;
    std::optional<double> noise, scale, margin;
};

int run_synth(const SynthArgs& a)
{
    apr::PlantedModelSpec spec;
    if (a.mode == "planted") {
        spec.seed = a.seed;
        spec.corpus_size = a.corpus_size;
        spec.train_count = a.train;
        spec.test_count = a.test;
        spec.pool_size = a.pool;
    } else {
        spec = apr::lexical_mismatch_spec(a.seed, {a.corpus_size, a.train, a.test, a.pool});
    }
    if (a.latent_dim) spec.latent_dim = *a.latent_dim;
    if (a.hidden_dim) spec.hidden_dim = *a.hidden_dim;
    if (a.vocab) spec.vocab_size = *a.vocab;
    if (a.passage_length) spec.passage_length = *a.passage_length;
    if (a.query_length) spec.query_length = *a.query_length;
    if (a.noise) spec.noise = *a.noise;
    if (a.scale) spec.scorer_scale = *a.scale;
    if (a.margin) spec.min_margin = *a.margin;
    spec.validate();

    std::vector<std::pair<std::string, std::string>> entries{{"mode", a.mode}, {"out", a.out}};
    const auto spec_json = spec.to_json();
    for (const auto& [k, v] : spec_json.items()) {
        entries.emplace_back(k, v.dump());
    }
    echo("synth", entries);

    const auto data = apr::generate_planted(spec);
    const auto files = apr::write_dataset(a.out, data);
    for (const auto& p : {files.corpus, files.train, files.test, files.spec}) {
        std::cout << p.string() << '\n';
    }
    return kExitOk;
}

// ------------------------------------------------------------------ train

struct TrainArgs {
    std::string config;
    std::vector<std::string> overrides;
    std::string data;
    std::string out;
    std::string metrics;
    std::size_t threads = 1;
};

apr::RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides)
{
    std::string text;
    if (!path.empty()) {
        require_file(path, "config");
        text = apr::binary::read_text(path);
    }
    for (const auto& o : overrides) {
        text += "\n" + o;
    }
    return apr::parse_run_config(text);
}

int run_train(const TrainArgs& a)
{
    require_dir(a.data, "data directory");
    const auto files = apr::dataset_files(a.data);
    require_file(files.corpus, "corpus");
    require_file(files.train, "training set");
    const apr::RunConfig cfg = load_config(a.config, a.overrides);
    const fs::path metrics = a.metrics.empty() ? fs::path(a.out + ".metrics.tsv") : fs::path(a.metrics);

    std::cerr << "# apr train\n# data = " << a.data << "\n# out = " << a.out << "\n# metrics = " << metrics.string() << '\n';
    std::istringstream lines(cfg.to_text());
    for (std::string line; std::getline(lines, line);) {
        std::cerr << "# " << line << '\n';
    }

    const apr::Corpus corpus = apr::load_corpus_jsonl(files.corpus);
    const auto train = apr::load_retriever_jsonl(files.train, apr::LoadMode::Strict, &corpus).items;
    const auto result = apr::train(cfg, train, corpus);
    apr::save_checkpoint(a.out, result.checkpoint);
    apr::binary::write_text_atomic(metrics, result.metrics_text());
    if (!result.log.empty()) {
        const auto last_epoch = result.log.back().epoch;
        std::cout << "steps\t" << result.log.size() << "\nl_total_first_epoch\t" << str(result.epoch_mean(0, &apr::StepMetrics::l_total))
                  << "\nl_total_last_epoch\t" << str(result.epoch_mean(last_epoch, &apr::StepMetrics::l_total)) << '\n';
    }
    std::cout << "checkpoint\t" << a.out << '\n';
    return kExitOk;
}

// -------------------------------------------------------------- gradcheck

struct GradcheckArgs {
    std::string config;
    std::vector<std::string> overrides;
    apr::GradcheckOptions opt;
    bool corrupt_wq = false;
};

int run_gradcheck(GradcheckArgs a)
{
    const apr::RunConfig cfg = load_config(a.config, a.overrides);
    if (a.corrupt_wq) {
        a.opt.fault = apr::GradientFault::TransposedWq;
    }
    echo("gradcheck", {{"seed", std::to_string(cfg.seed)},
                       {"trials", std::to_string(a.opt.trials)},
                       {"embed_dim", std::to_string(a.opt.embed_dim)},
                       {"hidden_dim", std::to_string(a.opt.hidden_dim)},
                       {"batch", std::to_string(a.opt.batch)},
                       {"pool", std::to_string(a.opt.pool)},
                       {"step", str(a.opt.step)},
                       {"tolerance", str(a.opt.tolerance)},
                       {"gamma", str(cfg.weights.gamma)},
                       {"corrupt_wq", a.corrupt_wq ? "true" : "false"}});
    const auto report = apr::gradcheck(cfg, a.opt);
    for (const auto& g : report.groups) {
        std::printf("%-10s max_rel_error %.3e  (%zu scalars)  %s\n", g.name.c_str(), g.max_rel_error, g.checked,
                    g.max_rel_error < report.tolerance ? "ok" : "FAIL");
    }
    std::printf("%s\n", report.pass() ? "PASS" : "FAIL");
    return report.pass() ? kExitOk : kExitNumeric;
}

// ------------------------------------------------------------------ index

struct IndexArgs {
    std::string checkpoint;
    std::string corpus;
    std::string out;
    std::size_t threads = 1;
};

int run_index(const IndexArgs& a)
{
    require_file(a.checkpoint, "checkpoint");
    require_file(a.corpus, "corpus");
    const std::size_t threads = resolve_threads(a.threads);
    echo("index", {{"checkpoint", a.checkpoint}, {"corpus", a.corpus}, {"out", a.out}, {"threads", std::to_string(threads)}});
    const auto ckpt = apr::load_checkpoint(a.checkpoint);
    const auto corpus = apr::load_corpus_jsonl(a.corpus);
    const auto built = apr::build_index(corpus, ckpt, threads);
    for (const auto& s : built.skipped) {
        std::cerr << "skipped passage " << s.pid << ": " << s.reason << '\n';
    }
    apr::save_index(a.out, built.index);
    std::cout << "indexed\t" << built.index.size() << "\nskipped\t" << built.skipped.size() << "\nindex\t" << a.out << '\n';
    return kExitOk;
}

// ------------------------------------------------------------------ query

struct QueryArgs {
    std::string checkpoint;
    std::string index;
    std::string text;
    std::size_t k = 10;
    std::string method = "ars";
    std::size_t threads = 1;
};

int run_query(const QueryArgs& a)
{
    require_file(a.checkpoint, "checkpoint");
    require_file(a.index, "index");
    if (a.method != "ars" && a.method != "dot") {
        throw apr::Error(apr::ErrorKind::Config, "query --method must be ars or dot");
    }
    const std::size_t threads = resolve_threads(a.threads);
    echo("query", {{"checkpoint", a.checkpoint}, {"index", a.index}, {"text", a.text}, {"k", std::to_string(a.k)},
                   {"method", a.method}, {"threads", std::to_string(threads)}});
    const apr::Retriever retriever(apr::load_checkpoint(a.checkpoint), apr::load_index(a.index), threads);
    const auto q = retriever.encode_query(a.text);
    const auto result =
        retriever.retrieve_embedding(q, a.k, a.method == "ars" ? apr::ScoringMethod::Ars : apr::ScoringMethod::Dot, threads);
    if (result.clamped) {
        std::cerr << "note: k clamped to index size " << result.hits.size() << '\n';
    }
    std::printf("rank\tpid\ts\tr\n");
    for (std::size_t i = 0; i < result.hits.size(); ++i) {
        const auto& h = result.hits[i];
        std::printf("%zu\t%llu\t%.17g\t%.17g\n", i + 1, static_cast<unsigned long long>(h.pid), h.s, h.r);
    }
    return kExitOk;
}

// ------------------------------------------------------------------- eval

struct EvalArgs {
    std::string method = "ars";
    std::string data;
    std::string corpus;
    std::string queries;
    std::string checkpoint;
    std::string index;
    std::string ks = "1,5,10,20,50,100";
    std::string out;
    std::size_t threads = 1;
};

int run_eval(EvalArgs a)
{
    const apr::EvalMethod method = apr::parse_eval_method(a.method);
    const bool dense = method == apr::EvalMethod::Ars || method == apr::EvalMethod::Dot;
    if (!a.data.empty()) {
        require_dir(a.data, "data directory");
        const auto files = apr::dataset_files(a.data);
        if (a.corpus.empty()) a.corpus = files.corpus.string();
        if (a.queries.empty()) a.queries = files.test.string();
    }
    if (a.corpus.empty() || a.queries.empty()) {
        throw apr::Error(apr::ErrorKind::Config, "eval needs --data or both --corpus and --queries");
    }
    require_file(a.corpus, "corpus");
    require_file(a.queries, "query set");
    if (dense) {
        if (a.checkpoint.empty()) {
            throw apr::Error(apr::ErrorKind::Config, "dense methods need --checkpoint");
        }
        require_file(a.checkpoint, "checkpoint");
        if (!a.index.empty()) {
            require_file(a.index, "index");
        }
    }
    const auto ks = parse_ks(a.ks);
    const std::size_t threads = resolve_threads(a.threads);
    echo("eval", {{"method", a.method}, {"corpus", a.corpus}, {"queries", a.queries}, {"checkpoint", a.checkpoint},
                  {"index", a.index.empty() ? "(built in memory)" : a.index}, {"ks", a.ks}, {"out", a.out},
                  {"threads", std::to_string(threads)}});

    const auto corpus = apr::load_corpus_jsonl(a.corpus);
    const auto set = apr::load_eval_jsonl(a.queries, &corpus);
    apr::TopKReport report;
    if (dense) {
        auto ckpt = apr::load_checkpoint(a.checkpoint);
        apr::EmbeddingIndex index = a.index.empty() ? apr::build_index(corpus, ckpt, threads).index : apr::load_index(a.index);
        const apr::Retriever retriever(ckpt, std::move(index), threads);
        report = apr::evaluate(method, set, {&retriever, nullptr}, ks, threads);
    } else {
        apr::TokenizerConfig tokenizer;
        if (!a.checkpoint.empty()) {
            tokenizer = apr::load_checkpoint(a.checkpoint).tokenizer;
        }
        const apr::LexicalIndex lexical(corpus, tokenizer);
        report = apr::evaluate(method, set, {nullptr, &lexical}, ks, threads);
    }
    const fs::path dir(a.out);
    apr::write_report(dir / (a.method + ".json"), dir / (a.method + ".csv"), report);
    std::cout << report.to_csv();
    return kExitOk;
}

// ------------------------------------------------------------------ bench

int run_bench_cmd(apr::BenchOptions opt)
{
    opt.threads = resolve_threads(opt.threads);
    echo("bench", {{"corpus_size", std::to_string(opt.corpus_size)},
                   {"embed_dim", std::to_string(opt.embed_dim)},
                   {"hidden_dim", std::to_string(opt.hidden_dim)},
                   {"feature_dim", std::to_string(opt.feature_dim)},
                   {"queries", std::to_string(opt.queries)},
                   {"k", std::to_string(opt.k)},
                   {"threads", std::to_string(opt.threads)},
                   {"seed", std::to_string(opt.seed)}});
    const auto r = apr::run_bench(opt);
    std::printf("queries\t%zu\nseconds\t%.4f\nqps\t%.2f\nlatency_p50_ms\t%.3f\nlatency_p90_ms\t%.3f\nlatency_p99_ms\t%.3f\nlatency_max_ms\t%.3f\n",
                r.queries, r.seconds, r.qps, r.p50_ms, r.p90_ms, r.p99_ms, r.max_ms);
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Dense passage retrieval with an attentive relevance scoring head"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Expand all help");

    SynthArgs synth;
    auto* c_synth = app.add_subcommand("synth", "Generate a synthetic dataset");
    c_synth->add_option("--mode", synth.mode, "planted or lexical")->check(CLI::IsMember({"planted", "lexical"}))->capture_default_str();
    c_synth->add_option("--seed", synth.seed)->capture_default_str();
    c_synth->add_option("--out", synth.out, "Output directory")->required();
    c_synth->add_option("--corpus-size", synth.corpus_size)->capture_default_str();
    c_synth->add_option("--train", synth.train, "Training queries")->capture_default_str();
    c_synth->add_option("--test", synth.test, "Test queries")->capture_default_str();
    c_synth->add_option("--pool-size", synth.pool, "Negatives per training query")->capture_default_str();
    c_synth->add_option("--latent-dim", synth.latent_dim);
    c_synth->add_option("--hidden-dim", synth.hidden_dim, "Hidden scorer width");
    c_synth->add_option("--vocab", synth.vocab);
    c_synth->add_option("--passage-length", synth.passage_length);
    c_synth->add_option("--query-length", synth.query_length);
    c_synth->add_option("--noise", synth.noise);
    c_synth->add_option("--scorer-scale", synth.scale);
    c_synth->add_option("--min-margin", synth.margin);

    TrainArgs train;
    auto* c_train = app.add_subcommand("train", "Train a checkpoint");
    c_train->add_option("--config", train.config, "key = value config file (defaults when omitted)");
    c_train->add_option("--set", train.overrides, "Extra key=value, applied after --config");
    c_train->add_option("--data", train.data, "Dataset directory (corpus.jsonl, train.jsonl)")->required();
    c_train->add_option("--out", train.out, "Checkpoint path")->required();
    c_train->add_option("--metrics", train.metrics, "Per-step log (default <out>.metrics.tsv)");
    c_train->add_option("--threads", train.threads, "Accepted for uniformity; training is single-threaded")->capture_default_str();

    GradcheckArgs gc;
    auto* c_gc = app.add_subcommand("gradcheck", "Finite-difference check of every gradient");
    c_gc->add_option("--config", gc.config);
    c_gc->add_option("--set", gc.overrides);
    c_gc->add_option("--trials", gc.opt.trials)->capture_default_str();
    c_gc->add_option("--embed-dim", gc.opt.embed_dim)->capture_default_str();
    c_gc->add_option("--hidden-dim", gc.opt.hidden_dim)->capture_default_str();
    c_gc->add_option("--batch", gc.opt.batch)->capture_default_str();
    c_gc->add_option("--pool", gc.opt.pool)->capture_default_str();
    c_gc->add_flag("--corrupt-wq", gc.corrupt_wq, "Transpose dW_q on purpose (mutation check)");

    IndexArgs idx;
    auto* c_index = app.add_subcommand("index", "Embed a corpus with the passage tower");
    c_index->add_option("--checkpoint", idx.checkpoint)->required();
    c_index->add_option("--corpus", idx.corpus)->required();
    c_index->add_option("--out", idx.out)->required();
    c_index->add_option("--threads", idx.threads, "0 = all cores")->capture_default_str();

    QueryArgs qa;
    auto* c_query = app.add_subcommand("query", "Top-k passages for one question (TSV)");
    c_query->add_option("--checkpoint", qa.checkpoint)->required();
    c_query->add_option("--index", qa.index)->required();
    c_query->add_option("--text", qa.text, "Question text")->required();
    c_query->add_option("-k,--k", qa.k)->check(CLI::PositiveNumber)->capture_default_str();
    c_query->add_option("--method", qa.method, "ars or dot")->capture_default_str();
    c_query->add_option("--threads", qa.threads, "0 = all cores")->capture_default_str();

    EvalArgs ev;
    auto* c_eval = app.add_subcommand("eval", "Top-k accuracy report");
    c_eval->add_option("--method", ev.method, "ars, dot, bm25 or tfidf")->capture_default_str();
    c_eval->add_option("--data", ev.data, "Dataset directory (corpus.jsonl, test.jsonl)");
    c_eval->add_option("--corpus", ev.corpus);
    c_eval->add_option("--queries", ev.queries, "Eval set JSONL");
    c_eval->add_option("--checkpoint", ev.checkpoint);
    c_eval->add_option("--index", ev.index, "Prebuilt index (built in memory when omitted)");
    c_eval->add_option("--ks", ev.ks)->capture_default_str();
    c_eval->add_option("--out", ev.out, "Report directory")->required();
    c_eval->add_option("--threads", ev.threads, "0 = all cores")->capture_default_str();

    apr::BenchOptions bench;
    auto* c_bench = app.add_subcommand("bench", "Exhaustive ARS scoring throughput");
    c_bench->add_option("--corpus-size", bench.corpus_size)->capture_default_str();
    c_bench->add_option("--embed-dim", bench.embed_dim)->capture_default_str();
    c_bench->add_option("--hidden-dim", bench.hidden_dim)->capture_default_str();
    c_bench->add_option("--feature-dim", bench.feature_dim)->capture_default_str();
    c_bench->add_option("--queries", bench.queries)->capture_default_str();
    c_bench->add_option("-k,--k", bench.k)->capture_default_str();
    c_bench->add_option("--seed", bench.seed)->capture_default_str();
    c_bench->add_option("--threads", bench.threads, "0 = all cores")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (c_synth->parsed()) return run_synth(synth);
        if (c_train->parsed()) return run_train(train);
        if (c_gc->parsed()) return run_gradcheck(gc);
        if (c_index->parsed()) return run_index(idx);
        if (c_query->parsed()) return run_query(qa);
        if (c_eval->parsed()) return run_eval(ev);
        if (c_bench->parsed()) return run_bench_cmd(bench);
    } catch (const apr::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code_for(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitIo;
    }
    return kExitUsage;
}
