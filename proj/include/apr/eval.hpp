#pragma once

// Top-k retrieval accuracy and the report writers.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "apr/corpus.hpp"
#include "apr/datasets.hpp"
#include "apr/error.hpp"
#include "apr/lexical.hpp"
#include "apr/retrieval.hpp"

namespace apr {

inline const std::vector<std::size_t> kDefaultKs = {1, 5, 10, 20, 50, 100};

enum class EvalMethod { Ars, Dot, Bm25, Tfidf };

[[nodiscard]] inline std::string to_string(EvalMethod m)
{
    switch (m) {
        case EvalMethod::Ars: return "ars";
        case EvalMethod::Dot: return "dot";
        case EvalMethod::Bm25: return "bm25";
        case EvalMethod::Tfidf: return "tfidf";
    }
    return "?";
}

[[nodiscard]] inline EvalMethod parse_eval_method(std::string_view s)
{
    if (s == "ars") return EvalMethod::Ars;
    if (s == "dot") return EvalMethod::Dot;
    if (s == "bm25") return EvalMethod::Bm25;
    if (s == "tfidf") return EvalMethod::Tfidf;
    throw Error(ErrorKind::Config, "unknown method '" + std::string(s) + "' (ars, dot, bm25, tfidf)");
}

struct QueryRank {
    std::uint64_t qid = 0;
    std::optional<std::size_t> first_hit_rank;  // 1-based; empty when no relevant id was retrieved

    bool operator==(const QueryRank&) const = default;
};

struct TopKReport {
    std::string method;
    std::vector<std::size_t> ks;
    std::vector<double> accuracies;
    std::vector<QueryRank> per_query;

    [[nodiscard]] double accuracy_at(std::size_t k) const
    {
        for (std::size_t i = 0; i < ks.size(); ++i) {
            if (ks[i] == k) {
                return accuracies[i];
            }
        }
        throw Error(ErrorKind::OutOfRange, "report has no k=" + std::to_string(k));
    }

    [[nodiscard]] jsonl::Json to_json() const
    {
        jsonl::Json j;
        j["method"] = method;
        j["ks"] = ks;
        j["accuracies"] = accuracies;
        auto rows = jsonl::Json::array();
        for (const auto& q : per_query) {
            jsonl::Json row;
            row["qid"] = q.qid;
            row["first_hit_rank"] = q.first_hit_rank ? jsonl::Json(*q.first_hit_rank) : jsonl::Json(nullptr);
            rows.push_back(std::move(row));
        }
        j["per_query"] = std::move(rows);
        return j;
    }

    [[nodiscard]] std::string to_csv() const
    {
        std::string out = "k,accuracy,method\n";
        char buf[64];
        for (std::size_t i = 0; i < ks.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%zu,%.10g,", ks[i], accuracies[i]);
            out += buf;
            out += method;
            out += '\n';
        }
        return out;
    }

    bool operator==(const TopKReport&) const = default;
};

inline void validate_ks(const std::vector<std::size_t>& ks)
{
    if (ks.empty() || ks.front() == 0 || !std::is_sorted(ks.begin(), ks.end()) ||
        std::adjacent_find(ks.begin(), ks.end()) != ks.end()) {
        throw Error(ErrorKind::Config, "ks must be strictly increasing positive integers");
    }
}

/// accuracy@k = fraction of queries whose first k ranked ids contain a
/// relevant id. Only the id lists are consulted.
[[nodiscard]] inline TopKReport topk_accuracy(const std::map<std::uint64_t, std::vector<PassageId>>& ranked, const EvalSet& set,
                                              const std::vector<std::size_t>& ks, std::string method)
{
    validate_ks(ks);
    if (set.empty()) {
        throw Error(ErrorKind::EmptyDataset, "eval set has no queries");
    }
    TopKReport report;
    report.method = std::move(method);
    report.ks = ks;
    std::vector<std::size_t> hits(ks.size(), 0);
    for (const auto& q : set) {
        const auto it = ranked.find(q.qid);
        if (it == ranked.end()) {
            throw Error(ErrorKind::MissingQuery, "no ranking for query " + std::to_string(q.qid));
        }
        QueryRank row{q.qid, std::nullopt};
        for (std::size_t i = 0; i < it->second.size(); ++i) {
            if (std::find(q.relevant.begin(), q.relevant.end(), it->second[i]) != q.relevant.end()) {
                row.first_hit_rank = i + 1;
                break;
            }
        }
        for (std::size_t j = 0; j < ks.size(); ++j) {
            if (row.first_hit_rank && *row.first_hit_rank <= ks[j]) {
                ++hits[j];
            }
        }
        report.per_query.push_back(row);
    }
    for (auto h : hits) {
        report.accuracies.push_back(static_cast<double>(h) / static_cast<double>(set.size()));
    }
    return report;
}

/// What a method needs: a retriever for dense scoring or a lexical index.
struct EvalArtifacts {
    const Retriever* retriever = nullptr;
    const LexicalIndex* lexical = nullptr;
};

/// Ranks every eval query with `method` (same tie-break everywhere) and
/// scores the rankings. Queries are spread over `threads` workers; the
/// result does not depend on the thread count.
[[nodiscard]] inline TopKReport evaluate(EvalMethod method, const EvalSet& set, const EvalArtifacts& artifacts,
                                         const std::vector<std::size_t>& ks = kDefaultKs, std::size_t threads = 1)
{
    validate_ks(ks);
    const bool dense = method == EvalMethod::Ars || method == EvalMethod::Dot;
    if (dense && artifacts.retriever == nullptr) {
        throw Error(ErrorKind::Config, "dense evaluation needs a checkpoint and index");
    }
    if (!dense && artifacts.lexical == nullptr) {
        throw Error(ErrorKind::Config, "lexical evaluation needs a lexical index");
    }
    const std::size_t depth = ks.back();
    std::vector<std::vector<PassageId>> lists(set.size());
    std::vector<std::exception_ptr> errors(set.size());
    parallel_for(set.size(), threads, [&](std::size_t i) {
        try {
            const auto& q = set[i];
            RankedResult result;
            if (dense) {
                const auto emb = artifacts.retriever->encode_query(q.question);
                result = artifacts.retriever->retrieve_embedding(emb, depth, method == EvalMethod::Ars ? ScoringMethod::Ars : ScoringMethod::Dot);
            } else {
                const auto tokens = artifacts.lexical->query_tokens(q.question);
                const auto scores = method == EvalMethod::Bm25 ? artifacts.lexical->bm25_all(tokens) : artifacts.lexical->tfidf_all(tokens);
                result = select_top_k(scores, artifacts.lexical->ids(), depth);
            }
            for (const auto& hit : result.hits) {
                lists[i].push_back(hit.pid);
            }
        } catch (const Error& e) {
            errors[i] = std::make_exception_ptr(Error(e.kind(), "query " + std::to_string(set[i].qid) + ": " + e.what()));
        }
    });
    for (const auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
    std::map<std::uint64_t, std::vector<PassageId>> ranked;
    for (std::size_t i = 0; i < lists.size(); ++i) {
        ranked[set[i].qid] = std::move(lists[i]);
    }
    return topk_accuracy(ranked, set, ks, to_string(method));
}

inline void write_report(const std::filesystem::path& json_path, const std::filesystem::path& csv_path, const TopKReport& report)
{
    binary::write_text_atomic(json_path, report.to_json().dump(2) + "\n");
    binary::write_text_atomic(csv_path, report.to_csv());
}

}  // namespace apr
