#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "apr/error.hpp"
#include "apr/model.hpp"

namespace apr {

/// Linear ramp from start_factor · base_lr at step 0 to base_lr at step T.
struct ScheduleConfig {
    std::uint64_t total_steps = 1;
    double start_factor = 0.1;
};

[[nodiscard]] inline double lr_at(std::uint64_t step, const ScheduleConfig& schedule, double base_lr)
{
    if (schedule.total_steps == 0 || !(schedule.start_factor > 0.0 && schedule.start_factor <= 1.0)) {
        throw Error(ErrorKind::Config, "schedule needs T >= 1 and start_factor in (0, 1]");
    }
    if (step > schedule.total_steps) {
        throw Error(ErrorKind::StepOutOfRange,
                    "step " + std::to_string(step) + " beyond schedule length " + std::to_string(schedule.total_steps));
    }
    const double progress = static_cast<double>(step) / static_cast<double>(schedule.total_steps);
    return base_lr * (schedule.start_factor + (1.0 - schedule.start_factor) * progress);
}

/// Global l2 norm over every gradient tensor jointly.
[[nodiscard]] inline double global_norm(std::span<const ParamView<double>> grads)
{
    double acc = 0.0;
    for (const auto& g : grads) {
        for (double x : g.values) {
            acc += x * x;
        }
    }
    return std::sqrt(acc);
}

/// Scales all gradients by max_norm / norm when the global norm exceeds
/// max_norm. Returns the pre-clip norm.
inline double clip_gradients(std::span<const ParamView<double>> grads, double max_norm = 1.0)
{
    for (const auto& g : grads) {
        if (!all_finite(std::span<const double>(g.values.data(), g.values.size()))) {
            throw Error(ErrorKind::NonFiniteGradient, "non-finite gradient in " + std::string(g.name));
        }
    }
    const double norm = global_norm(grads);
    if (norm > max_norm) {
        const double scale = max_norm / norm;
        for (const auto& g : grads) {
            for (double& x : g.values) {
                x *= scale;
            }
        }
    }
    return norm;
}

struct AdamWConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

/// First and second moments per parameter group plus the step counter.
struct OptimizerState {
    AdamWConfig config;
    std::uint64_t step = 0;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;

    OptimizerState() = default;
    OptimizerState(const AdamWConfig& cfg, std::span<const ParamView<double>> params) : config(cfg)
    {
        for (const auto& p : params) {
            m.emplace_back(p.values.size(), 0.0);
            v.emplace_back(p.values.size(), 0.0);
        }
    }

    bool operator==(const OptimizerState& o) const
    {
        return step == o.step && m == o.m && v == o.v && config.lr == o.config.lr && config.beta1 == o.config.beta1 &&
               config.beta2 == o.config.beta2 && config.eps == o.config.eps && config.weight_decay == o.config.weight_decay;
    }
};

/// One bias-corrected Adam update with decoupled weight decay
/// θ ← θ − lr·wd·θ − lr·m̂/(√v̂ + eps). Groups flagged without decay skip
/// the shrinkage term.
inline void adamw_step(std::span<const ParamView<double>> params, std::span<const ParamView<double>> grads, OptimizerState& state,
                       double lr)
{
    require_same_length(params.size(), grads.size(), "adamw parameter groups");
    require_same_length(state.m.size(), params.size(), "adamw moment groups");
    if (!(lr > 0.0)) {
        throw Error(ErrorKind::Config, "learning rate must be positive");
    }
    const auto& cfg = state.config;
    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t g = 0; g < params.size(); ++g) {
        auto theta = params[g].values;
        const auto grad = grads[g].values;
        require_same_length(theta.size(), grad.size(), "adamw group size");
        require_same_length(state.m[g].size(), theta.size(), "adamw moment size");
        auto& m = state.m[g];
        auto& v = state.v[g];
        const double decay = params[g].weight_decay ? lr * cfg.weight_decay : 0.0;
        for (std::size_t i = 0; i < theta.size(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            theta[i] -= decay * theta[i];
            theta[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
        }
    }
}

}  // namespace apr
