#pragma once

// Throughput smoke test for exhaustive ARS retrieval over a synthetic index
// of random unit vectors.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <string>
#include <vector>

#include "apr/config.hpp"
#include "apr/retrieval.hpp"
#include "apr/trainer.hpp"

namespace apr {

struct BenchOptions {
    std::size_t corpus_size = 100000;
    std::size_t embed_dim = 64;
    std::size_t hidden_dim = 32;
    std::size_t feature_dim = 1024;
    std::size_t queries = 200;
    std::size_t warmup = 5;
    std::size_t k = 10;
    std::size_t threads = 1;
    std::uint64_t seed = 1;

    void validate() const
    {
        if (corpus_size == 0 || queries == 0 || k == 0 || embed_dim < 2 || hidden_dim == 0 || feature_dim == 0 || threads == 0) {
            throw Error(ErrorKind::Config, "bench sizes must be positive (embed_dim >= 2)");
        }
    }
};

struct BenchResult {
    std::size_t queries = 0;
    double seconds = 0.0;
    double qps = 0.0;
    double p50_ms = 0.0;
    double p90_ms = 0.0;
    double p99_ms = 0.0;
    double max_ms = 0.0;
};

/// Nearest-rank percentile of sorted values, q in [0, 1].
[[nodiscard]] inline double percentile(const std::vector<double>& sorted, double q)
{
    if (sorted.empty()) {
        return 0.0;
    }
    const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(sorted.size())));
    return sorted[std::min(sorted.size() - 1, rank == 0 ? 0 : rank - 1)];
}

[[nodiscard]] inline EmbeddingIndex random_index(std::size_t n, std::size_t dim, Rng& rng)
{
    EmbeddingIndex index;
    index.dim = dim;
    index.ids.reserve(n);
    index.values.reserve(n * dim);
    Vector row(dim);
    for (std::size_t i = 0; i < n; ++i) {
        double norm = 0.0;
        while (!(norm > 1e-6)) {
            for (double& x : row) {
                x = rng.normal();
            }
            norm = l2_norm(std::span<const double>(row));
        }
        // Round to f32 first so the stored row is unit-norm at f32 precision.
        for (double& x : row) {
            x = static_cast<double>(static_cast<float>(x / norm));
        }
        index.push_back(i + 1, row);
    }
    return index;
}

/// Times encode + full-corpus scoring + top-k for each query.
[[nodiscard]] inline BenchResult run_bench(const BenchOptions& opt)
{
    opt.validate();
    RunConfig cfg;
    cfg.seed = opt.seed;
    cfg.dims = {opt.feature_dim, opt.embed_dim, opt.hidden_dim};
    const Checkpoint ckpt = initial_checkpoint(cfg);
    Rng rng = Rng(opt.seed).child("bench");
    Retriever retriever(ckpt, random_index(opt.corpus_size, opt.embed_dim, rng), opt.threads);

    std::vector<std::string> texts;
    for (std::size_t i = 0; i < opt.queries + opt.warmup; ++i) {
        std::string t;
        for (int w = 0; w < 6; ++w) {
            t += (w == 0 ? "w" : " w") + std::to_string(rng.below(5000));
        }
        texts.push_back(std::move(t));
    }
    for (std::size_t i = 0; i < opt.warmup; ++i) {
        (void)retriever.retrieve(texts[i], opt.k, opt.threads);
    }
    std::vector<double> latencies;
    latencies.reserve(opt.queries);
    const auto start = std::chrono::steady_clock::now();
    for (std::size_t i = opt.warmup; i < texts.size(); ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        (void)retriever.retrieve(texts[i], opt.k, opt.threads);
        latencies.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    }
    BenchResult r;
    r.queries = opt.queries;
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    r.qps = static_cast<double>(opt.queries) / r.seconds;
    std::sort(latencies.begin(), latencies.end());
    r.p50_ms = percentile(latencies, 0.50);
    r.p90_ms = percentile(latencies, 0.90);
    r.p99_ms = percentile(latencies, 0.99);
    r.max_ms = latencies.back();
    return r;
}

}  // namespace apr
