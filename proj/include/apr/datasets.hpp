#pragma once

// Retriever-format JSONL loading and the two synthetic generators:
//  * planted: relevance is the argmax of a hidden ARS-shaped scorer over
//    latent text vectors, so the correct ranking is known exactly;
//  * lexical mismatch: the same construction with disjoint query and passage
//    vocabularies, so term-overlap scoring has nothing to match.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "apr/binary_io.hpp"
#include "apr/corpus.hpp"
#include "apr/error.hpp"
#include "apr/numerics.hpp"

namespace apr {

inline constexpr std::size_t kDefaultPoolSize = 29;

struct RetrieverExample {
    std::uint64_t qid = 0;
    std::string question;
    std::vector<PassageId> positives;
    std::vector<PassageId> negatives;

    bool operator==(const RetrieverExample&) const = default;
};

struct EvalQuery {
    std::uint64_t qid = 0;
    std::string question;
    std::vector<PassageId> relevant;

    bool operator==(const EvalQuery&) const = default;
};

using EvalSet = std::vector<EvalQuery>;

struct LoadIssue {
    std::size_t line = 0;
    std::string message;
};

template <class T>
struct LoadResult {
    std::vector<T> items;
    std::vector<LoadIssue> skipped;  // lax mode only
};

enum class LoadMode { Strict, Lax };

namespace detail {

/// Ids of a DPR-style context list: [{"passage_id": ...}, ...] or plain ids.
inline std::vector<PassageId> context_ids(const jsonl::Json& arr, const std::filesystem::path& path, std::size_t lineno,
                                          const char* key)
{
    if (!arr.is_array()) {
        throw Error(ErrorKind::Parse, jsonl::where(path, lineno) + ": \"" + key + "\" must be an array");
    }
    std::vector<PassageId> ids;
    for (const auto& item : arr) {
        const jsonl::Json* id = &item;
        if (item.is_object()) {
            id = nullptr;
            for (const char* k : {"pid", "passage_id", "psg_id", "id"}) {
                if (item.contains(k)) {
                    id = &item.at(k);
                    break;
                }
            }
            if (id == nullptr) {
                throw Error(ErrorKind::MissingField, jsonl::where(path, lineno) + ": context without an id in \"" + key + "\"");
            }
        }
        if (id->is_number_unsigned() || (id->is_number_integer() && id->get<std::int64_t>() >= 0)) {
            ids.push_back(id->get<PassageId>());
        } else if (id->is_string()) {
            try {
                std::size_t used = 0;
                const auto s = id->get<std::string>();
                ids.push_back(std::stoull(s, &used));
                if (used != s.size()) {
                    throw std::invalid_argument(s);
                }
            } catch (const std::exception&) {
                throw Error(ErrorKind::Parse, jsonl::where(path, lineno) + ": non-numeric passage id in \"" + key + "\"");
            }
        } else {
            throw Error(ErrorKind::Parse, jsonl::where(path, lineno) + ": bad passage id in \"" + key + "\"");
        }
    }
    return ids;
}

inline const jsonl::Json& first_present(const jsonl::Json& j, std::initializer_list<const char*> keys, const char* canonical,
                                        const std::filesystem::path& path, std::size_t lineno)
{
    if (j.is_object()) {
        for (const char* k : keys) {
            if (j.contains(k)) {
                return j.at(k);
            }
        }
    }
    throw Error(ErrorKind::MissingField, jsonl::where(path, lineno) + ": missing \"" + canonical + "\"");
}

inline void check_disjoint(const RetrieverExample& ex, const std::filesystem::path& path, std::size_t lineno)
{
    if (ex.positives.empty()) {
        throw Error(ErrorKind::Validation, jsonl::where(path, lineno) + ": no positive passage");
    }
    const std::unordered_set<PassageId> pos(ex.positives.begin(), ex.positives.end());
    for (PassageId n : ex.negatives) {
        if (pos.contains(n)) {
            throw Error(ErrorKind::Validation,
                        jsonl::where(path, lineno) + ": positive id " + std::to_string(n) + " also listed as negative");
        }
    }
}

}  // namespace detail

/// Accepts the native schema {"qid","question","positives","negatives"} and
/// the DPR-style field names ("positive_ctxs", "hard_negative_ctxs"); a
/// missing qid defaults to the 0-based record index. When `corpus` is given,
/// every id must resolve in it.
[[nodiscard]] inline LoadResult<RetrieverExample> load_retriever_jsonl(const std::filesystem::path& path, LoadMode mode = LoadMode::Strict,
                                                                       const Corpus* corpus = nullptr)
{
    LoadResult<RetrieverExample> out;
    std::size_t ordinal = 0;
    jsonl::for_each_line(path, [&](const jsonl::Json& j, std::size_t lineno) {
        try {
            RetrieverExample ex;
            ex.qid = j.contains("qid") ? jsonl::field<std::uint64_t>(j, "qid", path, lineno) : ordinal;
            ex.question = jsonl::field<std::string>(j, "question", path, lineno);
            ex.positives = detail::context_ids(detail::first_present(j, {"positives", "positive_ctxs"}, "positives", path, lineno), path,
                                               lineno, "positives");
            ex.negatives = detail::context_ids(
                detail::first_present(j, {"negatives", "hard_negative_ctxs"}, "negatives", path, lineno), path, lineno, "negatives");
            detail::check_disjoint(ex, path, lineno);
            if (corpus != nullptr) {
                for (const auto* ids : {&ex.positives, &ex.negatives}) {
                    for (PassageId id : *ids) {
                        if (!corpus->contains(id)) {
                            throw Error(ErrorKind::DanglingId, jsonl::where(path, lineno) + ": passage id " + std::to_string(id) +
                                                                   " not in corpus");
                        }
                    }
                }
            }
            out.items.push_back(std::move(ex));
        } catch (const Error& e) {
            if (mode == LoadMode::Strict) {
                throw;
            }
            out.skipped.push_back({lineno, e.what()});
        }
        ++ordinal;
    });
    return out;
}

[[nodiscard]] inline std::string retriever_to_jsonl(const std::vector<RetrieverExample>& examples)
{
    std::ostringstream out;
    for (const auto& ex : examples) {
        jsonl::Json j;
        j["qid"] = ex.qid;
        j["question"] = ex.question;
        j["positives"] = ex.positives;
        j["negatives"] = ex.negatives;
        out << j.dump() << '\n';
    }
    return out.str();
}

/// {"qid","question","relevant"}; "positives" is accepted for "relevant".
[[nodiscard]] inline EvalSet load_eval_jsonl(const std::filesystem::path& path, const Corpus* corpus = nullptr)
{
    EvalSet out;
    jsonl::for_each_line(path, [&](const jsonl::Json& j, std::size_t lineno) {
        EvalQuery q;
        q.qid = jsonl::field<std::uint64_t>(j, "qid", path, lineno);
        q.question = jsonl::field<std::string>(j, "question", path, lineno);
        q.relevant =
            detail::context_ids(detail::first_present(j, {"relevant", "positives"}, "relevant", path, lineno), path, lineno, "relevant");
        if (q.relevant.empty()) {
            throw Error(ErrorKind::Validation, jsonl::where(path, lineno) + ": empty relevant set");
        }
        if (corpus != nullptr) {
            for (PassageId id : q.relevant) {
                if (!corpus->contains(id)) {
                    throw Error(ErrorKind::DanglingId,
                                jsonl::where(path, lineno) + ": passage id " + std::to_string(id) + " not in corpus");
                }
            }
        }
        out.push_back(std::move(q));
    });
    return out;
}

[[nodiscard]] inline std::string eval_to_jsonl(const EvalSet& set)
{
    std::ostringstream out;
    for (const auto& q : set) {
        jsonl::Json j;
        j["qid"] = q.qid;
        j["question"] = q.question;
        j["relevant"] = q.relevant;
        out << j.dump() << '\n';
    }
    return out.str();
}

// ------------------------------------------------------------ generators

struct PlantedModelSpec {
    std::uint64_t seed = 7;
    std::size_t corpus_size = 1000;
    std::size_t train_count = 200;
    std::size_t test_count = 100;
    std::size_t pool_size = kDefaultPoolSize;
    std::size_t latent_dim = 64;
    std::size_t hidden_dim = 64;
    std::size_t vocab_size = 2000;
    std::size_t passage_length = 12;
    std::size_t query_length = 6;
    /// Probability that a query token is drawn from the whole vocabulary
    /// instead of from its seed passage.
    double noise = 0.0;
    /// Scale of the hidden projections; larger values saturate the tanh.
    double scorer_scale = 1.0;
    /// Minimum gap between the best and second-best hidden logit.
    double min_margin = 0.05;
    /// Query words drawn from a vocabulary disjoint from the passages'.
    bool disjoint_vocabulary = false;

    void validate() const
    {
        if (corpus_size < pool_size + 1) {
            throw Error(ErrorKind::SpecInfeasible, "corpus_size (" + std::to_string(corpus_size) +
                                                       ") must be at least pool_size + 1 (" + std::to_string(pool_size + 1) + ")");
        }
        if (pool_size == 0 || latent_dim == 0 || hidden_dim == 0 || vocab_size == 0 || passage_length == 0 || query_length == 0) {
            throw Error(ErrorKind::SpecInfeasible, "generator sizes must be positive");
        }
        if (hidden_dim > latent_dim) {
            throw Error(ErrorKind::SpecInfeasible, "hidden_dim must not exceed latent_dim");
        }
        if (train_count + test_count == 0) {
            throw Error(ErrorKind::SpecInfeasible, "no queries requested");
        }
        if (!(noise >= 0.0 && noise <= 1.0) || !(min_margin >= 0.0) || !(scorer_scale > 0.0)) {
            throw Error(ErrorKind::SpecInfeasible, "noise must be in [0,1], margin >= 0, scale > 0");
        }
    }

    [[nodiscard]] nlohmann::ordered_json to_json() const
    {
        nlohmann::ordered_json j;
        j["seed"] = seed;
        j["corpus_size"] = corpus_size;
        j["train_count"] = train_count;
        j["test_count"] = test_count;
        j["pool_size"] = pool_size;
        j["latent_dim"] = latent_dim;
        j["hidden_dim"] = hidden_dim;
        j["vocab_size"] = vocab_size;
        j["passage_length"] = passage_length;
        j["query_length"] = query_length;
        j["noise"] = noise;
        j["scorer_scale"] = scorer_scale;
        j["min_margin"] = min_margin;
        j["disjoint_vocabulary"] = disjoint_vocabulary;
        return j;
    }
};

/// σ(wᵀ tanh(A x_q ⊙ B x_p)) over latent vectors. Never serialized.
struct HiddenScorer {
    Matrix a;
    Matrix b;
    Vector w;

    [[nodiscard]] double logit_projected(std::span<const double> aq, std::span<const double> bp) const
    {
        double s = 0.0;
        for (std::size_t j = 0; j < w.size(); ++j) {
            s += w[j] * std::tanh(aq[j] * bp[j]);
        }
        return s;
    }

    [[nodiscard]] double logit(std::span<const double> xq, std::span<const double> xp) const
    {
        return logit_projected(matvec(a, xq), matvec(b, xp));
    }

    [[nodiscard]] double relevance(std::span<const double> xq, std::span<const double> xp) const { return sigmoid(logit(xq, xp)); }
};

struct GeneratedDataset {
    Corpus corpus;
    std::vector<RetrieverExample> train;
    EvalSet test;
    nlohmann::ordered_json spec_echo;
};

/// Generator internals exposed for self-tests; the hidden parameters never
/// reach the written files.
struct PlantedWorld {
    PlantedModelSpec spec;
    HiddenScorer scorer;
    std::vector<Vector> concept_latents;
    std::vector<std::vector<std::size_t>> passage_concepts;
    std::vector<Vector> passage_latents;
    std::vector<std::vector<std::size_t>> query_concepts;  // train then test
    std::vector<Vector> query_latents;
    GeneratedDataset dataset;
};

namespace detail {

// 28 Arabic letters; passages use the first half and questions the second
// half when the vocabularies must be disjoint.
inline constexpr std::array<std::string_view, 28> kLetters = {
    "ا", "ب", "ت", "ث", "ج", "ح", "خ", "د", "ذ", "ر", "ز", "س", "ش", "ص",
    "ض", "ط", "ظ", "ع", "غ", "ف", "ق", "ك", "ل", "م", "ن", "ه", "و", "ي",
};

inline std::string make_word(std::size_t index, std::size_t first_letter, std::size_t letter_count, std::size_t length)
{
    std::string word;
    for (std::size_t i = 0; i < length; ++i) {
        word += kLetters[first_letter + index % letter_count];
        index /= letter_count;
    }
    return word;
}

inline Vector latent_of(const std::vector<std::size_t>& concepts, const std::vector<Vector>& latents)
{
    Vector sum(latents.front().size(), 0.0);
    for (std::size_t c : concepts) {
        axpy(1.0, std::span<const double>(latents[c]), std::span<double>(sum));
    }
    return l2_normalize(sum);
}

/// Passage indices sorted by descending hidden logit (ties by index).
inline std::vector<std::size_t> rank_by_hidden(const HiddenScorer& scorer, std::span<const double> xq,
                                               const std::vector<Vector>& projected_passages, std::vector<double>& logits)
{
    const Vector aq = matvec(scorer.a, xq);
    logits.resize(projected_passages.size());
    for (std::size_t j = 0; j < projected_passages.size(); ++j) {
        logits[j] = scorer.logit_projected(aq, projected_passages[j]);
    }
    std::vector<std::size_t> order(projected_passages.size());
    std::iota(order.begin(), order.end(), std::size_t(0));
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return logits[x] > logits[y]; });
    return order;
}

}  // namespace detail

inline constexpr PassageId kFirstPassageId = 1;

[[nodiscard]] inline PlantedWorld generate_planted_world(const PlantedModelSpec& spec)
{
    spec.validate();
    PlantedWorld world;
    world.spec = spec;
    Rng root(spec.seed);

    // Hidden scorer: A* = B* = scale·Q with Q a random matrix of orthonormal
    // rows and positive attention weights, so the planted relevance is a
    // weighted similarity of latents passed through a tanh.
    Rng scorer_rng = root.child("hidden_scorer");
    world.scorer.a = Matrix(spec.hidden_dim, spec.latent_dim);
    for (std::size_t i = 0; i < spec.hidden_dim; ++i) {
        auto row = world.scorer.a.row(i);
        for (double& x : row) {
            x = scorer_rng.normal();
        }
        for (std::size_t k = 0; k < i; ++k) {
            const std::span<const double> prev = world.scorer.a.row(k);
            axpy<double>(-dot(prev, std::span<const double>(row)), prev, row);
        }
        const double norm = l2_norm(std::span<const double>(row));
        for (double& x : row) {
            x *= spec.scorer_scale / norm;
        }
    }
    world.scorer.b = world.scorer.a;
    world.scorer.w.resize(spec.hidden_dim);
    for (double& x : world.scorer.w) {
        x = scorer_rng.uniform(0.5, 1.5);
    }

    Rng concept_rng = root.child("concepts");
    world.concept_latents.resize(spec.vocab_size);
    for (auto& e : world.concept_latents) {
        e.resize(spec.latent_dim);
        for (double& x : e) {
            x = concept_rng.normal();
        }
    }

    const std::size_t letters = spec.disjoint_vocabulary ? 14 : 28;
    const std::size_t word_len = spec.disjoint_vocabulary ? 4 : 3;
    auto passage_word = [&](std::size_t c) { return detail::make_word(c, 0, letters, word_len); };
    auto query_word = [&](std::size_t c) {
        return spec.disjoint_vocabulary ? detail::make_word(c, 14, letters, word_len) : passage_word(c);
    };

    Rng passage_rng = root.child("passages");
    std::vector<Vector> projected;
    for (std::size_t j = 0; j < spec.corpus_size; ++j) {
        std::vector<std::size_t> concepts(spec.passage_length);
        for (auto& c : concepts) {
            c = static_cast<std::size_t>(passage_rng.below(spec.vocab_size));
        }
        std::string text;
        for (std::size_t c : concepts) {
            if (!text.empty()) {
                text += ' ';
            }
            text += passage_word(c);
        }
        world.passage_latents.push_back(detail::latent_of(concepts, world.concept_latents));
        projected.push_back(matvec(world.scorer.b, world.passage_latents.back()));
        world.passage_concepts.push_back(std::move(concepts));
        world.dataset.corpus.add({kFirstPassageId + j, "", std::move(text)});
    }

    Rng query_rng = root.child("queries");
    const std::size_t total_queries = spec.train_count + spec.test_count;
    const std::size_t max_attempts = 200 * total_queries + 1000;
    std::vector<double> logits;
    std::size_t attempts = 0;
    while (world.query_latents.size() < total_queries) {
        if (++attempts > max_attempts) {
            throw Error(ErrorKind::SpecInfeasible, "could not place queries with the requested margin; lower min_margin");
        }
        const auto& seed_concepts = world.passage_concepts[query_rng.below(spec.corpus_size)];
        std::vector<std::size_t> concepts(spec.query_length);
        for (auto& c : concepts) {
            if (query_rng.uniform() < spec.noise) {
                c = static_cast<std::size_t>(query_rng.below(spec.vocab_size));
            } else {
                c = seed_concepts[query_rng.below(seed_concepts.size())];
            }
        }
        const Vector xq = detail::latent_of(concepts, world.concept_latents);
        const auto order = detail::rank_by_hidden(world.scorer, xq, projected, logits);
        if (logits[order[0]] - logits[order[1]] < spec.min_margin) {
            continue;
        }

        std::string question;
        for (std::size_t c : concepts) {
            if (!question.empty()) {
                question += ' ';
            }
            question += query_word(c);
        }
        question += " ؟";

        const std::uint64_t qid = world.query_latents.size();
        const PassageId gold = kFirstPassageId + order[0];
        if (qid < spec.train_count) {
            RetrieverExample ex{qid, question, {gold}, {}};
            for (std::size_t r = 1; r <= spec.pool_size; ++r) {
                ex.negatives.push_back(kFirstPassageId + order[r]);
            }
            world.dataset.train.push_back(std::move(ex));
        } else {
            world.dataset.test.push_back({qid, question, {gold}});
        }
        world.query_latents.push_back(xq);
        world.query_concepts.push_back(std::move(concepts));
    }

    // Self-test: brute force over the whole corpus must rank every gold first.
    for (std::size_t i = 0; i < total_queries; ++i) {
        const PassageId gold =
            i < spec.train_count ? world.dataset.train[i].positives[0] : world.dataset.test[i - spec.train_count].relevant[0];
        const double gold_logit = world.scorer.logit(world.query_latents[i], world.passage_latents[gold - kFirstPassageId]);
        for (std::size_t j = 0; j < spec.corpus_size; ++j) {
            if (kFirstPassageId + j != gold && world.scorer.logit(world.query_latents[i], world.passage_latents[j]) >= gold_logit) {
                throw Error(ErrorKind::SpecInfeasible, "generator self-test failed: gold passage is not the unique argmax");
            }
        }
    }

    world.dataset.spec_echo = spec.to_json();
    world.dataset.spec_echo["mode"] = spec.disjoint_vocabulary ? "lexical" : "planted";
    return world;
}

[[nodiscard]] inline GeneratedDataset generate_planted(const PlantedModelSpec& spec)
{
    return generate_planted_world(spec).dataset;
}

struct LexicalMismatchSizes {
    std::size_t corpus_size = 1000;
    std::size_t train_count = 200;
    std::size_t test_count = 100;
    std::size_t pool_size = kDefaultPoolSize;
};

[[nodiscard]] inline PlantedModelSpec lexical_mismatch_spec(std::uint64_t seed, const LexicalMismatchSizes& sizes)
{
    PlantedModelSpec spec;
    spec.seed = seed;
    spec.corpus_size = sizes.corpus_size;
    spec.train_count = sizes.train_count;
    spec.test_count = sizes.test_count;
    spec.pool_size = sizes.pool_size;
    spec.disjoint_vocabulary = true;
    spec.vocab_size = 32;
    spec.latent_dim = 32;
    spec.hidden_dim = 32;
    spec.passage_length = 6;
    spec.query_length = 4;
    return spec;
}

[[nodiscard]] inline GeneratedDataset generate_lexical_mismatch(std::uint64_t seed, const LexicalMismatchSizes& sizes = {})
{
    return generate_planted(lexical_mismatch_spec(seed, sizes));
}

struct DatasetFiles {
    std::filesystem::path corpus;
    std::filesystem::path train;
    std::filesystem::path test;
    std::filesystem::path spec;
};

[[nodiscard]] inline DatasetFiles dataset_files(const std::filesystem::path& dir)
{
    return {dir / "corpus.jsonl", dir / "train.jsonl", dir / "test.jsonl", dir / "spec.json"};
}

inline DatasetFiles write_dataset(const std::filesystem::path& dir, const GeneratedDataset& data)
{
    const auto files = dataset_files(dir);
    write_corpus_jsonl(files.corpus, data.corpus);
    binary::write_text_atomic(files.train, retriever_to_jsonl(data.train));
    binary::write_text_atomic(files.test, eval_to_jsonl(data.test));
    binary::write_text_atomic(files.spec, data.spec_echo.dump(2) + "\n");
    return files;
}

}  // namespace apr
