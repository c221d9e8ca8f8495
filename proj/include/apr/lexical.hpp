#pragma once

// Sparse term-matching baselines over the same tokenizer as the encoder:
// Okapi BM25 and cosine TF-IDF.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "apr/corpus.hpp"
#include "apr/error.hpp"
#include "apr/text.hpp"

namespace apr {

struct Bm25Params {
    double k1 = 1.2;
    double b = 0.75;
};

class LexicalIndex {
  public:
    using TermId = std::uint32_t;

    LexicalIndex() = default;

    LexicalIndex(const Corpus& corpus, const TokenizerConfig& tokenizer = {}, Bm25Params params = {})
        : m_tokenizer(tokenizer), m_params(params)
    {
        if (corpus.empty()) {
            throw Error(ErrorKind::EmptyDataset, "cannot index an empty corpus");
        }
        for (const auto& p : corpus.passages()) {
            add_document(p.pid, tokenize(p.encoder_input(), tokenizer));
        }
        finish();
    }

    /// Builds directly from token lists; doc ids are given explicitly.
    LexicalIndex(std::span<const std::pair<PassageId, std::vector<std::string>>> docs, Bm25Params params = {}) : m_params(params)
    {
        if (docs.empty()) {
            throw Error(ErrorKind::EmptyDataset, "cannot index an empty corpus");
        }
        for (const auto& [pid, tokens] : docs) {
            add_document(pid, tokens);
        }
        finish();
    }

    [[nodiscard]] std::size_t doc_count() const noexcept { return m_ids.size(); }
    [[nodiscard]] std::size_t term_count() const noexcept { return m_df.size(); }
    [[nodiscard]] double avgdl() const noexcept { return m_avgdl; }
    [[nodiscard]] const Bm25Params& params() const noexcept { return m_params; }
    [[nodiscard]] const TokenizerConfig& tokenizer() const noexcept { return m_tokenizer; }
    [[nodiscard]] std::span<const PassageId> ids() const noexcept { return m_ids; }

    [[nodiscard]] std::size_t df(const std::string& term) const
    {
        const auto it = m_terms.find(term);
        return it == m_terms.end() ? 0 : m_df[it->second];
    }

    /// ln(1 + (N − df + 0.5)/(df + 0.5)); never negative.
    [[nodiscard]] double bm25_idf(std::size_t df) const
    {
        const auto n = static_cast<double>(doc_count());
        const auto d = static_cast<double>(df);
        return std::log1p((n - d + 0.5) / (d + 0.5));
    }

    /// ln((1 + N)/(1 + df)) + 1
    [[nodiscard]] double tfidf_idf(std::size_t df) const
    {
        return std::log((1.0 + static_cast<double>(doc_count())) / (1.0 + static_cast<double>(df))) + 1.0;
    }

    [[nodiscard]] std::vector<std::string> query_tokens(std::string_view text) const { return tokenize(text, m_tokenizer); }

    [[nodiscard]] double bm25_score(std::span<const std::string> query, PassageId pid) const
    {
        const std::size_t doc = doc_position(pid);
        double score = 0.0;
        for (const auto& term : query) {
            const auto it = m_terms.find(term);
            if (it == m_terms.end()) {
                continue;
            }
            score += bm25_term(it->second, doc, term_frequency(doc, it->second));
        }
        return score;
    }

    /// BM25 for every document in index order. Per document, terms are
    /// summed in query order, matching bm25_score exactly.
    [[nodiscard]] std::vector<double> bm25_all(std::span<const std::string> query) const
    {
        std::vector<double> scores(doc_count(), 0.0);
        for (const auto& term : query) {
            const auto it = m_terms.find(term);
            if (it == m_terms.end()) {
                continue;
            }
            for (const auto& [doc, tf] : m_postings[it->second]) {
                scores[doc] += bm25_term(it->second, doc, tf);
            }
        }
        return scores;
    }

    [[nodiscard]] double tfidf_score(std::span<const std::string> query, PassageId pid) const
    {
        const std::size_t doc = doc_position(pid);
        const auto q = query_weights(query);
        if (q.weights.empty() || m_doc_norm[doc] == 0.0) {
            return 0.0;
        }
        double acc = 0.0;
        for (const auto& [term, w] : q.weights) {
            const std::uint32_t tf = term_frequency(doc, term);
            if (tf != 0) {
                acc += w * tfidf_weight(term, tf);
            }
        }
        return acc / (q.norm * m_doc_norm[doc]);
    }

    [[nodiscard]] std::vector<double> tfidf_all(std::span<const std::string> query) const
    {
        std::vector<double> scores(doc_count(), 0.0);
        const auto q = query_weights(query);
        if (q.weights.empty()) {
            return scores;
        }
        for (const auto& [term, w] : q.weights) {
            for (const auto& [doc, tf] : m_postings[term]) {
                scores[doc] += w * tfidf_weight(term, tf);
            }
        }
        for (std::size_t d = 0; d < scores.size(); ++d) {
            scores[d] = m_doc_norm[d] == 0.0 ? 0.0 : scores[d] / (q.norm * m_doc_norm[d]);
        }
        return scores;
    }

  private:
    struct QueryWeights {
        std::vector<std::pair<TermId, double>> weights;  // sorted by term id
        double norm = 0.0;
    };

    void add_document(PassageId pid, const std::vector<std::string>& tokens)
    {
        if (!m_positions.emplace(pid, m_ids.size()).second) {
            throw Error(ErrorKind::Validation, "duplicate passage id " + std::to_string(pid));
        }
        const std::size_t doc = m_ids.size();
        m_ids.push_back(pid);
        m_lengths.push_back(tokens.size());
        std::unordered_map<TermId, std::uint32_t> counts;
        for (const auto& t : tokens) {
            const auto [it, fresh] = m_terms.emplace(t, static_cast<TermId>(m_df.size()));
            if (fresh) {
                m_df.push_back(0);
                m_postings.emplace_back();
            }
            ++counts[it->second];
        }
        std::vector<std::pair<TermId, std::uint32_t>> sorted(counts.begin(), counts.end());
        std::sort(sorted.begin(), sorted.end());
        for (const auto& [term, tf] : sorted) {
            ++m_df[term];
            m_postings[term].emplace_back(doc, tf);
        }
        m_doc_terms.push_back(std::move(sorted));
    }

    void finish()
    {
        double total = 0.0;
        for (auto len : m_lengths) {
            total += static_cast<double>(len);
        }
        m_avgdl = total / static_cast<double>(m_ids.size());
        if (!(m_avgdl > 0.0)) {
            throw Error(ErrorKind::EmptyDataset, "corpus has no tokens");
        }
        m_doc_norm.resize(m_ids.size());
        for (std::size_t d = 0; d < m_ids.size(); ++d) {
            double sq = 0.0;
            for (const auto& [term, tf] : m_doc_terms[d]) {
                const double w = tfidf_weight(term, tf);
                sq += w * w;
            }
            m_doc_norm[d] = std::sqrt(sq);
        }
    }

    [[nodiscard]] std::size_t doc_position(PassageId pid) const
    {
        const auto it = m_positions.find(pid);
        if (it == m_positions.end()) {
            throw Error(ErrorKind::UnknownDoc, "passage " + std::to_string(pid) + " is not indexed");
        }
        return it->second;
    }

    [[nodiscard]] std::uint32_t term_frequency(std::size_t doc, TermId term) const
    {
        const auto& terms = m_doc_terms[doc];
        const auto it = std::lower_bound(terms.begin(), terms.end(), std::pair<TermId, std::uint32_t>(term, 0));
        return it != terms.end() && it->first == term ? it->second : 0;
    }

    [[nodiscard]] double bm25_term(TermId term, std::size_t doc, std::uint32_t tf) const
    {
        const double f = tf;
        const double len_ratio = static_cast<double>(m_lengths[doc]) / m_avgdl;
        return bm25_idf(m_df[term]) * f * (m_params.k1 + 1.0) / (f + m_params.k1 * (1.0 - m_params.b + m_params.b * len_ratio));
    }

    [[nodiscard]] double tfidf_weight(TermId term, std::uint32_t tf) const
    {
        return std::log1p(static_cast<double>(tf)) * tfidf_idf(m_df[term]);
    }

    // Terms that never occur in the corpus are dropped from the query vector.
    [[nodiscard]] QueryWeights query_weights(std::span<const std::string> query) const
    {
        std::unordered_map<TermId, std::uint32_t> counts;
        for (const auto& t : query) {
            const auto it = m_terms.find(t);
            if (it != m_terms.end()) {
                ++counts[it->second];
            }
        }
        QueryWeights out;
        for (const auto& [term, tf] : counts) {
            out.weights.emplace_back(term, tfidf_weight(term, tf));
        }
        std::sort(out.weights.begin(), out.weights.end());
        double sq = 0.0;
        for (const auto& [term, w] : out.weights) {
            sq += w * w;
        }
        out.norm = std::sqrt(sq);
        return out;
    }

    TokenizerConfig m_tokenizer;
    Bm25Params m_params;
    std::vector<PassageId> m_ids;
    std::unordered_map<PassageId, std::size_t> m_positions;
    std::vector<std::size_t> m_lengths;
    std::unordered_map<std::string, TermId> m_terms;
    std::vector<std::size_t> m_df;
    std::vector<std::vector<std::pair<std::size_t, std::uint32_t>>> m_postings;
    std::vector<std::vector<std::pair<TermId, std::uint32_t>>> m_doc_terms;
    std::vector<double> m_doc_norm;
    double m_avgdl = 0.0;
};

}  // namespace apr
