#pragma once

// Dual-tower text encoder: hashed features -> trainable linear adapter ->
// l2 normalization. One adapter per tower, no bias.

#include <algorithm>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "apr/error.hpp"
#include "apr/numerics.hpp"
#include "apr/text.hpp"

namespace apr {

enum class Tower : std::uint8_t { Question = 0, Passage = 1 };

template <std::floating_point T>
struct BasicTowerAdapter {
    BasicMatrix<T> weights;  // d x d_f
    Tower tower = Tower::Question;

    [[nodiscard]] std::size_t embed_dim() const noexcept { return weights.rows(); }
    [[nodiscard]] std::size_t feature_dim() const noexcept { return weights.cols(); }
};

using TowerAdapter = BasicTowerAdapter<double>;

struct EmbeddingVector {
    Vector values;
    bool normalized = false;

    [[nodiscard]] std::size_t dim() const noexcept { return values.size(); }
};

/// W x for sparse x. Bit-identical to the dense product.
template <std::floating_point T>
[[nodiscard]] BasicVector<T> project(const BasicMatrix<T>& weights, const SparseFeatures& features)
{
    require_same_length(weights.cols(), features.dim, "adapter feature dim");
    BasicVector<T> out(weights.rows(), T(0));
    for (std::size_t r = 0; r < weights.rows(); ++r) {
        const auto row = weights.row(r);
        T acc = T(0);
        for (const auto& [idx, value] : features.entries) {
            acc += row[idx] * static_cast<T>(value);
        }
        out[r] = acc;
    }
    return out;
}

/// Pre-normalization adapter output kept for the backward pass.
template <std::floating_point T>
struct BasicEncodeTrace {
    BasicVector<T> raw;         // W_adapt x
    BasicVector<T> embedding;   // raw / |raw|
    T norm = T(0);
};

template <std::floating_point T>
[[nodiscard]] BasicEncodeTrace<T> encode_features(const BasicTowerAdapter<T>& adapter, const SparseFeatures& features)
{
    BasicEncodeTrace<T> trace;
    trace.raw = project(adapter.weights, features);
    trace.norm = l2_norm(std::span<const T>(trace.raw));
    trace.embedding = l2_normalize(trace.raw);
    return trace;
}

/// dL/draw given dL/dembedding, for embedding = raw / |raw|:
/// (I - e eᵀ) g / |raw|.
[[nodiscard]] inline Vector normalize_backward(const BasicEncodeTrace<double>& trace, std::span<const double> grad)
{
    require_same_length(trace.embedding.size(), grad.size(), "normalize_backward");
    const double proj = dot(std::span<const double>(trace.embedding), grad);
    Vector out(grad.size());
    for (std::size_t i = 0; i < grad.size(); ++i) {
        out[i] = (grad[i] - proj * trace.embedding[i]) / trace.norm;
    }
    return out;
}

/// dW += g_raw ⊗ x, touching only the feature columns present in x.
inline void adapter_backward(Matrix& grad_weights, std::span<const double> grad_raw, const SparseFeatures& features)
{
    require_same_length(grad_weights.rows(), grad_raw.size(), "adapter_backward");
    for (std::size_t r = 0; r < grad_weights.rows(); ++r) {
        auto row = grad_weights.row(r);
        for (const auto& [idx, value] : features.entries) {
            row[idx] += grad_raw[r] * value;
        }
    }
}

/// Immutable bundle of everything needed to turn text into embeddings.
struct TextPipeline {
    TokenizerConfig tokenizer;
    HashingFeaturizer featurizer{1024};

    [[nodiscard]] SparseFeatures features(std::string_view text) const
    {
        const auto tokens = tokenize(text, tokenizer);
        return featurizer.featurize_sparse(tokens);
    }
};

/// Throws ZeroVector for text with no tokens (or a zero projection).
[[nodiscard]] inline EmbeddingVector encode(std::string_view text, const TowerAdapter& adapter, const HashingFeaturizer& featurizer,
                                            const TokenizerConfig& cfg = {})
{
    const auto tokens = tokenize(text, cfg);
    const auto features = featurizer.featurize_sparse(tokens);
    if (features.empty()) {
        throw Error(ErrorKind::ZeroVector, "text has no tokens");
    }
    return {encode_features(adapter, features).embedding, true};
}

[[nodiscard]] inline EmbeddingVector encode(std::string_view text, const TowerAdapter& adapter, const TextPipeline& pipeline)
{
    return encode(text, adapter, pipeline.featurizer, pipeline.tokenizer);
}

struct EncodeOutcome {
    std::optional<EmbeddingVector> embedding;
    std::string error;  // empty on success

    [[nodiscard]] bool ok() const noexcept { return embedding.has_value(); }
};

/// Runs `fn(i)` for i in [0, n) over up to `threads` workers using contiguous
/// shards. Output placement is by index, so scheduling never changes results.
template <class Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn)
{
    if (threads <= 1 || n < 2 * threads) {
        for (std::size_t i = 0; i < n; ++i) {
            fn(i);
        }
        return;
    }
    std::vector<std::thread> workers;
    workers.reserve(threads);
    const std::size_t chunk = (n + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
        const std::size_t begin = t * chunk;
        const std::size_t end = std::min(n, begin + chunk);
        if (begin >= end) {
            break;
        }
        workers.emplace_back([begin, end, &fn] {
            for (std::size_t i = begin; i < end; ++i) {
                fn(i);
            }
        });
    }
    for (auto& w : workers) {
        w.join();
    }
}

/// Element-wise `encode`; a failing item is reported, not fatal.
[[nodiscard]] inline std::vector<EncodeOutcome> encode_batch(std::span<const std::string> texts, const TowerAdapter& adapter,
                                                             const HashingFeaturizer& featurizer, const TokenizerConfig& cfg = {},
                                                             std::size_t threads = 1)
{
    std::vector<EncodeOutcome> out(texts.size());
    parallel_for(texts.size(), threads, [&](std::size_t i) {
        try {
            out[i].embedding = encode(texts[i], adapter, featurizer, cfg);
        } catch (const Error& e) {
            out[i].error = e.what();
        }
    });
    return out;
}

}  // namespace apr
