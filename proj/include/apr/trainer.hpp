#pragma once

// Batch construction, the training loop and the finite-difference gradient
// checker.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "apr/checkpoint.hpp"
#include "apr/config.hpp"
#include "apr/corpus.hpp"
#include "apr/datasets.hpp"
#include "apr/encoder.hpp"
#include "apr/error.hpp"
#include "apr/losses.hpp"
#include "apr/model.hpp"
#include "apr/optim.hpp"

namespace apr {

struct TrainingGroup {
    std::size_t example = 0;  // index into the dataset
    std::size_t selected_negative = 0;
};

struct TrainingBatch {
    std::vector<TrainingGroup> groups;
};

/// One epoch: a seeded shuffle cut into batches of `batch_size` (the last
/// one may be short), each query with its randomly selected negative.
[[nodiscard]] inline std::vector<TrainingBatch> make_batches(std::span<const RetrieverExample> dataset, std::size_t batch_size, Rng& rng)
{
    if (dataset.empty()) {
        throw Error(ErrorKind::EmptyDataset, "no training examples");
    }
    if (batch_size == 0) {
        throw Error(ErrorKind::Config, "batch_size must be >= 1");
    }
    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), std::size_t(0));
    rng.shuffle(order);
    std::vector<TrainingBatch> batches;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        TrainingBatch batch;
        for (std::size_t i = start; i < std::min(order.size(), start + batch_size); ++i) {
            const auto& ex = dataset[order[i]];
            if (ex.negatives.empty()) {
                throw Error(ErrorKind::Validation, "query " + std::to_string(ex.qid) + " has an empty negative pool");
            }
            batch.groups.push_back({order[i], static_cast<std::size_t>(rng.below(ex.negatives.size()))});
        }
        batches.push_back(std::move(batch));
    }
    return batches;
}

struct StepMetrics {
    std::uint64_t step = 0;
    double lr = 0.0;
    double l_cons = 0.0;
    double l_dyn = 0.0;
    double l_reg = 0.0;
    double l_total = 0.0;
    double grad_norm = 0.0;  // before clipping
    std::size_t epoch = 0;
};

inline constexpr std::string_view kMetricsHeader = "# step\tlr\tl_cons\tl_dyn\tl_reg\tl_total\tgrad_norm";

[[nodiscard]] inline std::string format_metrics_line(const StepMetrics& m)
{
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%llu\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g", static_cast<unsigned long long>(m.step), m.lr,
                  m.l_cons, m.l_dyn, m.l_reg, m.l_total, m.grad_norm);
    return buf;
}

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<StepMetrics> log;

    [[nodiscard]] std::string metrics_text() const
    {
        std::string out(kMetricsHeader);
        out += '\n';
        for (const auto& m : log) {
            out += format_metrics_line(m);
            out += '\n';
        }
        return out;
    }

    /// Mean of a loss component over one epoch's steps.
    [[nodiscard]] double epoch_mean(std::size_t epoch, double StepMetrics::*field) const
    {
        double acc = 0.0;
        std::size_t n = 0;
        for (const auto& m : log) {
            if (m.epoch == epoch) {
                acc += m.*field;
                ++n;
            }
        }
        return n == 0 ? std::numeric_limits<double>::quiet_NaN() : acc / static_cast<double>(n);
    }
};

/// Raised when a loss or gradient goes non-finite; training never skips.
class TrainingAborted : public Error {
  public:
    TrainingAborted(std::uint64_t step, const std::string& component, const std::string& detail)
        : Error(ErrorKind::NonFinite, "training aborted at step " + std::to_string(step) + " (" + component + "): " + detail),
          m_step(step),
          m_component(component)
    {}

    [[nodiscard]] std::uint64_t step() const noexcept { return m_step; }
    [[nodiscard]] const std::string& component() const noexcept { return m_component; }

  private:
    std::uint64_t m_step;
    std::string m_component;
};

/// Hashed features of every question and referenced passage, computed once.
class FeatureCache {
  public:
    FeatureCache(const TextPipeline& pipeline, std::span<const RetrieverExample> dataset, const Corpus& corpus)
    {
        for (const auto& ex : dataset) {
            m_questions.push_back(checked(pipeline.features(ex.question), "question " + std::to_string(ex.qid)));
            for (const auto* ids : {&ex.positives, &ex.negatives}) {
                for (PassageId pid : *ids) {
                    if (!m_passages.contains(pid)) {
                        const auto& p = corpus.at(pid);
                        m_passages.emplace(pid, checked(pipeline.features(p.encoder_input()), "passage " + std::to_string(pid)));
                    }
                }
            }
        }
    }

    [[nodiscard]] QueryGroupFeatures group(std::span<const RetrieverExample> dataset, const TrainingGroup& g) const
    {
        const auto& ex = dataset[g.example];
        QueryGroupFeatures out;
        out.query = m_questions[g.example];
        out.positive = m_passages.at(ex.positives.front());
        for (PassageId pid : ex.negatives) {
            out.negatives.push_back(m_passages.at(pid));
        }
        out.selected_negative = g.selected_negative;
        return out;
    }

  private:
    static SparseFeatures checked(SparseFeatures f, const std::string& what)
    {
        if (f.empty()) {
            throw Error(ErrorKind::Validation, what + " has no tokens");
        }
        return f;
    }

    std::vector<SparseFeatures> m_questions;
    std::unordered_map<PassageId, SparseFeatures> m_passages;
};

[[nodiscard]] inline Checkpoint initial_checkpoint(const RunConfig& cfg)
{
    Rng root(cfg.seed);
    Rng init_rng = root.child("init");
    return {cfg.tokenizer, init_model(cfg.dims, init_rng, cfg.adapter_init_scale, cfg.init_log_tau, cfg.tied_adapter_init, cfg.head_init_gain, cfg.head_init), std::nullopt};
}

/// Training steps in one epoch.
[[nodiscard]] inline std::uint64_t steps_per_epoch(std::size_t examples, std::size_t batch_size)
{
    return (examples + batch_size - 1) / batch_size;
}

using StepCallback = std::function<void(const StepMetrics&)>;

/// Full training run. The positive for each query is its first listed
/// positive id. Deterministic for a fixed config and dataset.
[[nodiscard]] inline TrainResult train(const RunConfig& cfg, std::span<const RetrieverExample> dataset, const Corpus& corpus,
                                       const StepCallback& on_step = {})
{
    cfg.validate();
    if (dataset.empty()) {
        throw Error(ErrorKind::EmptyDataset, "no training examples");
    }
    const TextPipeline pipeline{cfg.tokenizer, HashingFeaturizer(cfg.dims.feature_dim)};
    const FeatureCache cache(pipeline, dataset, corpus);

    TrainResult result;
    result.checkpoint = initial_checkpoint(cfg);
    Model& model = result.checkpoint.model;

    const std::uint64_t total_steps = cfg.epochs * steps_per_epoch(dataset.size(), cfg.batch_size);
    auto params = parameter_views(model);
    OptimizerState state(cfg.optimizer, params);
    if (total_steps == 0) {
        if (cfg.save_optimizer_state) {
            result.checkpoint.optimizer = std::move(state);
        }
        return result;
    }
    const ScheduleConfig schedule{total_steps, cfg.lr_start_factor};
    const Rng root(cfg.seed);

    std::uint64_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng batch_rng = root.child("batches", epoch);
        for (const auto& batch : make_batches(dataset, cfg.batch_size, batch_rng)) {
            std::vector<QueryGroupFeatures> groups;
            groups.reserve(batch.groups.size());
            for (const auto& g : batch.groups) {
                groups.push_back(cache.group(dataset, g));
            }

            LossBreakdown loss;
            try {
                loss = loss_total(model, groups, cfg.weights, cfg.options);
            } catch (const Error& e) {
                if (e.kind() == ErrorKind::NonFinite || e.kind() == ErrorKind::NonFiniteGradient || e.kind() == ErrorKind::ZeroVector) {
                    throw TrainingAborted(step, "loss_total", e.what());
                }
                throw;
            }
            for (auto [name, value] : {std::pair{"l_cons", loss.l_cons}, std::pair{"l_dyn", loss.l_dyn},
                                       std::pair{"l_reg", loss.l_reg}, std::pair{"l_total", loss.l_total}}) {
                if (!std::isfinite(value)) {
                    throw TrainingAborted(step, name, "value is not finite");
                }
            }

            const auto grads = gradient_views(loss.grads);
            StepMetrics m;
            m.step = step;
            m.epoch = epoch;
            m.lr = lr_at(step, schedule, cfg.optimizer.lr);
            m.l_cons = loss.l_cons;
            m.l_dyn = loss.l_dyn;
            m.l_reg = loss.l_reg;
            m.l_total = loss.l_total;
            m.grad_norm = clip_gradients(grads, cfg.max_grad_norm);
            adamw_step(params, grads, state, m.lr);
            result.log.push_back(m);
            if (on_step) {
                on_step(m);
            }
            ++step;
        }
    }
    if (cfg.save_optimizer_state) {
        result.checkpoint.optimizer = std::move(state);
    }
    return result;
}

// ------------------------------------------------------------ gradcheck

struct GradcheckOptions {
    std::size_t trials = 10;
    std::size_t embed_dim = 8;
    std::size_t hidden_dim = 4;
    std::size_t batch = 3;
    std::size_t pool = 5;
    std::size_t feature_dim = 32;
    double step = 1e-6;
    double tolerance = 1e-4;
    GradientFault fault = GradientFault::None;

    void validate() const
    {
        if (embed_dim < 2 || embed_dim > 16 || hidden_dim == 0 || hidden_dim > 8 || batch == 0 || batch > 4 || pool == 0 || pool > 6 ||
            feature_dim == 0 || trials == 0) {
            throw Error(ErrorKind::Config, "gradcheck needs d in [2,16], h in [1,8], B in [1,4], N in [1,6]");
        }
    }
};

struct GradcheckGroup {
    std::string name;
    double max_rel_error = 0.0;
    std::size_t checked = 0;
};

struct GradcheckReport {
    std::vector<GradcheckGroup> groups;
    std::size_t trials = 0;
    double tolerance = 0.0;

    [[nodiscard]] bool pass() const
    {
        return std::all_of(groups.begin(), groups.end(), [&](const auto& g) { return g.max_rel_error < tolerance; });
    }

    [[nodiscard]] const GradcheckGroup& group(std::string_view name) const
    {
        for (const auto& g : groups) {
            if (g.name == name) {
                return g;
            }
        }
        throw Error(ErrorKind::OutOfRange, "no gradcheck group " + std::string(name));
    }
};

/// |a - n| / max(|a|, |n|, 1e-8)
[[nodiscard]] inline double relative_error(double analytic, double numeric)
{
    return std::fabs(analytic - numeric) / std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
}

/// Random small model and batch for one gradient-check trial.
struct GradcheckInstance {
    Model model;
    std::vector<QueryGroupFeatures> batch;
};

[[nodiscard]] inline GradcheckInstance make_gradcheck_instance(const GradcheckOptions& opt, Rng& rng, const TokenizerConfig& tokenizer = {})
{
    GradcheckInstance inst;
    const ModelDims dims{opt.feature_dim, opt.embed_dim, opt.hidden_dim};
    inst.model = init_model(dims, rng, 1.0, rng.uniform(-0.7, 0.7));
    // A wider head than init_ars so the tanh is exercised off its linear part.
    for (auto* m : {&inst.model.head.w_q, &inst.model.head.w_p}) {
        for (double& x : m->data()) {
            x = rng.uniform(-1.5, 1.5);
        }
    }
    for (double& x : inst.model.head.w_a) {
        x = rng.uniform(-1.5, 1.5);
    }

    const TextPipeline pipeline{tokenizer, HashingFeaturizer(opt.feature_dim)};
    auto random_text = [&](std::size_t min_len, std::size_t max_len) {
        const std::size_t len = min_len + static_cast<std::size_t>(rng.below(max_len - min_len + 1));
        std::string text;
        for (std::size_t i = 0; i < len; ++i) {
            text += (i ? " w" : "w") + std::to_string(rng.below(40));
        }
        return pipeline.features(text);
    };
    for (std::size_t i = 0; i < opt.batch; ++i) {
        QueryGroupFeatures g;
        g.query = random_text(2, 5);
        g.positive = random_text(4, 9);
        for (std::size_t j = 0; j < opt.pool; ++j) {
            g.negatives.push_back(random_text(4, 9));
        }
        g.selected_negative = static_cast<std::size_t>(rng.below(opt.pool));
        inst.batch.push_back(std::move(g));
    }
    return inst;
}

/// Compares analytic ∂L_total/∂θ against central differences for every
/// trainable scalar. The perturbed losses are evaluated in long double so
/// cancellation in (L+ - L-) stays well below the tolerance.
[[nodiscard]] inline GradcheckReport gradcheck(const RunConfig& cfg, const GradcheckOptions& opt = {})
{
    opt.validate();
    cfg.weights.validate();
    GradcheckReport report;
    report.trials = opt.trials;
    report.tolerance = opt.tolerance;
    for (std::string_view name : {"adapter_q", "adapter_p", "w_q", "w_p", "w_a", "log_tau"}) {
        report.groups.push_back({std::string(name), 0.0, 0});
    }
    LossOptions options = cfg.options;
    options.freeze_adapters = false;

    const Rng root(cfg.seed);
    for (std::size_t t = 0; t < opt.trials; ++t) {
        Rng rng = root.child("gradcheck", t);
        GradcheckInstance inst = make_gradcheck_instance(opt, rng, cfg.tokenizer);
        const LossBreakdown analytic = loss_total(inst.model, inst.batch, cfg.weights, options, opt.fault);
        ModelGradients grads = analytic.grads;
        const auto grad_views = gradient_views(grads);

        auto wide = inst.model.cast<long double>();
        auto wide_views = parameter_views(wide);
        for (std::size_t g = 0; g < wide_views.size(); ++g) {
            auto values = wide_views[g].values;
            for (std::size_t i = 0; i < values.size(); ++i) {
                const long double original = values[i];
                values[i] = original + static_cast<long double>(opt.step);
                const long double plus = loss_values<long double>(wide, inst.batch, cfg.weights, options).l_total;
                const long double upper = values[i];
                values[i] = original - static_cast<long double>(opt.step);
                const long double minus = loss_values<long double>(wide, inst.batch, cfg.weights, options).l_total;
                const long double lower = values[i];
                values[i] = original;
                const auto numeric = static_cast<double>((plus - minus) / (upper - lower));
                const double err = relative_error(grad_views[g].values[i], numeric);
                report.groups[g].max_rel_error = std::max(report.groups[g].max_rel_error, err);
                report.groups[g].checked += 1;
            }
        }
    }
    return report;
}

}  // namespace apr
