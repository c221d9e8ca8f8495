#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "apr/ars.hpp"
#include "apr/encoder.hpp"
#include "apr/numerics.hpp"

namespace apr {

struct ModelDims {
    std::size_t feature_dim = 1024;  // d_f
    std::size_t embed_dim = 64;      // d
    std::size_t hidden_dim = 32;     // h

    bool operator==(const ModelDims&) const = default;
};

/// Every trainable tensor: both tower adapters, the ARS head and log τ.
template <std::floating_point T>
struct BasicModel {
    BasicTowerAdapter<T> question;
    BasicTowerAdapter<T> passage;
    BasicArsParameters<T> head;
    T log_tau = T(0);

    [[nodiscard]] ModelDims dims() const
    {
        return {question.feature_dim(), question.embed_dim(), head.hidden_dim()};
    }

    [[nodiscard]] T tau() const { return std::exp(log_tau); }

    template <std::floating_point U>
    [[nodiscard]] BasicModel<U> cast() const
    {
        BasicModel<U> out;
        out.question = {BasicMatrix<U>(question.weights), Tower::Question};
        out.passage = {BasicMatrix<U>(passage.weights), Tower::Passage};
        out.head.w_q = BasicMatrix<U>(head.w_q);
        out.head.w_p = BasicMatrix<U>(head.w_p);
        out.head.w_a.assign(head.w_a.begin(), head.w_a.end());
        out.log_tau = static_cast<U>(log_tau);
        return out;
    }

    void validate() const
    {
        head.validate();
        require_same_length(question.embed_dim(), head.embed_dim(), "question adapter rows vs ARS d");
        require_same_length(passage.embed_dim(), head.embed_dim(), "passage adapter rows vs ARS d");
        require_same_length(question.feature_dim(), passage.feature_dim(), "adapter feature dims");
    }

    bool operator==(const BasicModel& o) const
    {
        return question.weights == o.question.weights && passage.weights == o.passage.weights && head.w_q == o.head.w_q &&
               head.w_p == o.head.w_p && head.w_a == o.head.w_a && log_tau == o.log_tau;
    }
};

using Model = BasicModel<double>;

struct ModelGradients {
    Matrix question;
    Matrix passage;
    Matrix w_q;
    Matrix w_p;
    Vector w_a;
    double log_tau = 0.0;

    ModelGradients() = default;
    explicit ModelGradients(const ModelDims& dims)
        : question(dims.embed_dim, dims.feature_dim),
          passage(dims.embed_dim, dims.feature_dim),
          w_q(dims.hidden_dim, dims.embed_dim),
          w_p(dims.hidden_dim, dims.embed_dim),
          w_a(dims.hidden_dim, 0.0)
    {}
};

/// Named flat view of one parameter tensor. Order is fixed and matches the
/// checkpoint layout: adapter_q, adapter_p, w_q, w_p, w_a, log_tau.
template <class Scalar>
struct ParamView {
    std::string_view name;
    std::span<Scalar> values;
    bool weight_decay = true;
};

inline constexpr std::size_t kParamGroupCount = 6;

template <std::floating_point T>
[[nodiscard]] std::vector<ParamView<T>> parameter_views(BasicModel<T>& m)
{
    return {
        {"adapter_q", std::span<T>(m.question.weights.data()), true},
        {"adapter_p", std::span<T>(m.passage.weights.data()), true},
        {"w_q", std::span<T>(m.head.w_q.data()), true},
        {"w_p", std::span<T>(m.head.w_p.data()), true},
        {"w_a", std::span<T>(m.head.w_a), true},
        {"log_tau", std::span<T>(&m.log_tau, 1), false},
    };
}

[[nodiscard]] inline std::vector<ParamView<double>> gradient_views(ModelGradients& g)
{
    return {
        {"adapter_q", std::span<double>(g.question.data()), true},
        {"adapter_p", std::span<double>(g.passage.data()), true},
        {"w_q", std::span<double>(g.w_q.data()), true},
        {"w_p", std::span<double>(g.w_p.data()), true},
        {"w_a", std::span<double>(g.w_a), true},
        {"log_tau", std::span<double>(&g.log_tau, 1), false},
    };
}

[[nodiscard]] inline std::size_t parameter_count(const ModelDims& dims)
{
    return 2 * dims.embed_dim * dims.feature_dim + 2 * dims.hidden_dim * dims.embed_dim + dims.hidden_dim + 1;
}

/// Adapters ~ U[-scale, scale]; head per init_ars; log τ as given. With
/// `tied_adapters` both towers start from the same draw, the way two BERT
/// towers start from one pre-trained checkpoint.
[[nodiscard]] inline Model init_model(const ModelDims& dims, Rng& rng, double adapter_init_scale, double init_log_tau,
                                      bool tied_adapters = false, double head_init_gain = 1.0,
                                      HeadInit head_init = HeadInit::Uniform)
{
    if (dims.embed_dim < 2 || dims.hidden_dim == 0 || dims.feature_dim == 0) {
        throw Error(ErrorKind::Config, "model dims need d >= 2, h >= 1, d_f >= 1");
    }
    Model m;
    m.question = {Matrix(dims.embed_dim, dims.feature_dim), Tower::Question};
    m.passage = {Matrix(dims.embed_dim, dims.feature_dim), Tower::Passage};
    Rng adapter_rng = rng.child("adapters");
    for (double& x : m.question.weights.data()) {
        x = adapter_rng.uniform(-adapter_init_scale, adapter_init_scale);
    }
    if (tied_adapters) {
        m.passage.weights = m.question.weights;
    } else {
        for (double& x : m.passage.weights.data()) {
            x = adapter_rng.uniform(-adapter_init_scale, adapter_init_scale);
        }
    }
    Rng head_rng = rng.child("ars_head");
    m.head = init_ars(dims.embed_dim, dims.hidden_dim, head_rng, head_init_gain, head_init);
    m.log_tau = init_log_tau;
    return m;
}

}  // namespace apr
