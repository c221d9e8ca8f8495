#pragma once

// Passage embedding index and exhaustive top-k retrieval.
//
// Index file (little-endian):
//   "APREMB01"  u32 version  u32 d  u64 count
//   count × (u64 id, f32[d] embedding)

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "apr/ars.hpp"
#include "apr/binary_io.hpp"
#include "apr/checkpoint.hpp"
#include "apr/corpus.hpp"
#include "apr/encoder.hpp"
#include "apr/error.hpp"
#include "apr/numerics.hpp"

namespace apr {

inline constexpr std::string_view kIndexMagic = "APREMB01";
inline constexpr std::uint32_t kIndexVersion = 1;
inline constexpr double kIndexNormTolerance = 1e-6;

/// Passage embeddings stored row-major. Values are f32-representable; they
/// are held as f64 for scoring.
struct EmbeddingIndex {
    std::size_t dim = 0;
    std::vector<PassageId> ids;
    std::vector<double> values;  // ids.size() × dim

    [[nodiscard]] std::size_t size() const noexcept { return ids.size(); }

    [[nodiscard]] std::span<const double> row(std::size_t i) const { return {values.data() + i * dim, dim}; }

    void push_back(PassageId pid, std::span<const double> embedding)
    {
        require_same_length(embedding.size(), dim, "index row");
        ids.push_back(pid);
        for (double x : embedding) {
            values.push_back(static_cast<double>(static_cast<float>(x)));
        }
    }

    void validate() const
    {
        if (values.size() != ids.size() * dim) {
            throw Error(ErrorKind::Format, "index value count does not match rows × dim");
        }
        for (std::size_t i = 0; i < size(); ++i) {
            const double norm = l2_norm(row(i));
            if (!(std::fabs(norm - 1.0) <= kIndexNormTolerance)) {
                throw Error(ErrorKind::Format, "index row for passage " + std::to_string(ids[i]) + " is not unit-norm");
            }
        }
    }

    bool operator==(const EmbeddingIndex&) const = default;
};

struct SkippedPassage {
    PassageId pid = 0;
    std::string reason;
};

struct IndexBuild {
    EmbeddingIndex index;
    std::vector<SkippedPassage> skipped;
};

/// Encodes every passage with the passage tower. Rows keep corpus order for
/// any thread count; unencodable passages go to the skip report.
[[nodiscard]] inline IndexBuild build_index(const Corpus& corpus, const Checkpoint& ckpt, std::size_t threads = 1)
{
    if (corpus.empty()) {
        throw Error(ErrorKind::EmptyDataset, "cannot index an empty corpus");
    }
    ckpt.model.validate();
    std::vector<std::string> texts;
    texts.reserve(corpus.size());
    for (const auto& p : corpus.passages()) {
        texts.push_back(p.encoder_input());
    }
    const auto pipeline = ckpt.pipeline();
    const auto outcomes = encode_batch(texts, ckpt.model.passage, pipeline.featurizer, pipeline.tokenizer, threads);

    IndexBuild out;
    out.index.dim = ckpt.dims().embed_dim;
    for (std::size_t i = 0; i < outcomes.size(); ++i) {
        const PassageId pid = corpus.passages()[i].pid;
        if (outcomes[i].embedding) {
            out.index.push_back(pid, outcomes[i].embedding->values);
        } else {
            out.skipped.push_back({pid, outcomes[i].error});
        }
    }
    if (out.index.size() == 0) {
        throw Error(ErrorKind::EmptyDataset, "no passage could be encoded");
    }
    return out;
}

[[nodiscard]] inline std::vector<char> serialize_index(const EmbeddingIndex& index)
{
    binary::Writer w;
    w.bytes(kIndexMagic);
    w.u32(kIndexVersion);
    w.u32(static_cast<std::uint32_t>(index.dim));
    w.u64(index.size());
    for (std::size_t i = 0; i < index.size(); ++i) {
        w.u64(index.ids[i]);
        for (double x : index.row(i)) {
            w.f32(static_cast<float>(x));
        }
    }
    return w.buffer();
}

[[nodiscard]] inline EmbeddingIndex deserialize_index(std::vector<char> bytes)
{
    binary::Reader r(std::move(bytes));
    if (r.remaining() < kIndexMagic.size() || r.bytes(kIndexMagic.size()) != kIndexMagic) {
        throw Error(ErrorKind::Format, "not an index file (bad magic)");
    }
    const std::uint32_t version = r.u32();
    if (version != kIndexVersion) {
        throw Error(ErrorKind::Format, "unsupported index version " + std::to_string(version));
    }
    EmbeddingIndex index;
    index.dim = r.u32();
    const std::uint64_t count = r.u64();
    if (index.dim == 0) {
        throw Error(ErrorKind::Format, "index has zero dimension");
    }
    if (r.remaining() != count * (8 + 4 * index.dim)) {
        throw Error(ErrorKind::Format, "index size does not match its header");
    }
    index.ids.reserve(count);
    index.values.reserve(count * index.dim);
    for (std::uint64_t i = 0; i < count; ++i) {
        index.ids.push_back(r.u64());
        for (std::size_t k = 0; k < index.dim; ++k) {
            index.values.push_back(static_cast<double>(r.f32()));
        }
    }
    index.validate();
    return index;
}

inline void save_index(const std::filesystem::path& path, const EmbeddingIndex& index)
{
    binary::write_file_atomic(path, serialize_index(index));
}

[[nodiscard]] inline EmbeddingIndex load_index(const std::filesystem::path& path)
{
    return deserialize_index(binary::read_file(path));
}

struct RankedHit {
    PassageId pid = 0;
    double s = 0.0;
    double r = 0.0;

    bool operator==(const RankedHit&) const = default;
};

struct RankedResult {
    std::vector<RankedHit> hits;
    bool clamped = false;  // requested k exceeded the index size
};

enum class ScoringMethod { Ars, Dot };

/// Top-k by (score descending, id ascending) over all rows.
[[nodiscard]] inline RankedResult select_top_k(std::span<const double> scores, std::span<const PassageId> ids, std::size_t k)
{
    if (k == 0) {
        throw Error(ErrorKind::OutOfRange, "k must be >= 1");
    }
    RankedResult out;
    if (k > scores.size()) {
        k = scores.size();
        out.clamped = true;
    }
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t(0));
    const auto before = [&](std::size_t a, std::size_t b) { return scores[a] > scores[b] || (scores[a] == scores[b] && ids[a] < ids[b]); };
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), before);
    out.hits.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = order[i];
        out.hits.push_back({ids[j], scores[j], sigmoid(scores[j])});
    }
    return out;
}

/// Immutable query-time view of a checkpoint and index. The passage-side
/// projections W_p·p are computed once here, so each query costs one
/// tanh per (passage, hidden unit).
class Retriever {
  public:
    Retriever(const Checkpoint& ckpt, EmbeddingIndex index, std::size_t threads = 1)
        : m_ckpt(ckpt), m_pipeline(ckpt.pipeline()), m_index(std::move(index))
    {
        m_ckpt.model.validate();
        if (m_index.dim != m_ckpt.dims().embed_dim) {
            throw Error(ErrorKind::CheckpointMismatch, "index dim " + std::to_string(m_index.dim) + " != checkpoint embed_dim " +
                                                           std::to_string(m_ckpt.dims().embed_dim));
        }
        const std::size_t h = hidden_dim();
        m_projected.assign(m_index.size() * h, 0.0);
        parallel_for(m_index.size(), threads, [&](std::size_t i) {
            const Vector hp = matvec(m_ckpt.model.head.w_p, m_index.row(i));
            std::copy(hp.begin(), hp.end(), m_projected.begin() + static_cast<std::ptrdiff_t>(i * h));
        });
    }

    [[nodiscard]] const EmbeddingIndex& index() const noexcept { return m_index; }
    [[nodiscard]] const Checkpoint& checkpoint() const noexcept { return m_ckpt; }
    [[nodiscard]] std::size_t hidden_dim() const noexcept { return m_ckpt.dims().hidden_dim; }

    [[nodiscard]] Vector encode_query(std::string_view text) const
    {
        return encode(text, m_ckpt.model.question, m_pipeline).values;
    }

    /// Logit of every indexed passage for an encoded query, in index order.
    [[nodiscard]] std::vector<double> score_all(std::span<const double> q, ScoringMethod method, std::size_t threads = 1) const
    {
        require_same_length(q.size(), m_index.dim, "query embedding");
        std::vector<double> scores(m_index.size());
        if (method == ScoringMethod::Dot) {
            parallel_for(m_index.size(), threads, [&](std::size_t i) { scores[i] = dot(q, m_index.row(i)); });
            return scores;
        }
        const Vector h_q = matvec(m_ckpt.model.head.w_q, q);
        const std::size_t h = hidden_dim();
        const std::span<const double> w_a(m_ckpt.model.head.w_a);
        // tanh over a whole block first so that loop vectorizes, then the
        // per-passage sums in the same k order as ars_logit_projected.
        std::vector<double> h_q_rep(kScoreBlock * h);
        for (std::size_t j = 0; j < h_q_rep.size(); ++j) {
            h_q_rep[j] = h_q[j % h];
        }
        const std::size_t blocks = (m_index.size() + kScoreBlock - 1) / kScoreBlock;
        parallel_for(blocks, threads, [&](std::size_t b) {
            const std::size_t first = b * kScoreBlock;
            const std::size_t count = std::min(kScoreBlock, m_index.size() - first);
            thread_local std::vector<double> act;
            act.resize(count * h);
            tanh_products(h_q_rep.data(), m_projected.data() + first * h, act.data(), count * h);
            for (std::size_t i = 0; i < count; ++i) {
                double s = 0.0;
                for (std::size_t k = 0; k < h; ++k) {
                    s += w_a[k] * act[i * h + k];
                }
                scores[first + i] = s;
            }
        });
        return scores;
    }

    [[nodiscard]] RankedResult retrieve_embedding(std::span<const double> q, std::size_t k, ScoringMethod method = ScoringMethod::Ars,
                                                  std::size_t threads = 1) const
    {
        const auto scores = score_all(q, method, threads);
        return select_top_k(scores, m_index.ids, k);
    }

    [[nodiscard]] RankedResult retrieve(std::string_view query, std::size_t k, std::size_t threads = 1) const
    {
        return retrieve_embedding(encode_query(query), k, ScoringMethod::Ars, threads);
    }

    [[nodiscard]] RankedResult retrieve_baseline_dot(std::string_view query, std::size_t k, std::size_t threads = 1) const
    {
        return retrieve_embedding(encode_query(query), k, ScoringMethod::Dot, threads);
    }

  private:
    static constexpr std::size_t kScoreBlock = 256;

    Checkpoint m_ckpt;
    TextPipeline m_pipeline;
    EmbeddingIndex m_index;
    std::vector<double> m_projected;  // size() × h
};

}  // namespace apr
