#pragma once

// Attentive relevance scoring head:
//   h_q = W_q q,  h_p = W_p p,  a = tanh(h_q ⊙ h_p),  s = w_aᵀ a,  r = σ(s)
// with the hand-derived backward pass.

#include <cmath>
#include <cstddef>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "apr/error.hpp"
#include "apr/numerics.hpp"

namespace apr {

template <std::floating_point T>
struct BasicArsParameters {
    BasicMatrix<T> w_q;  // h x d
    BasicMatrix<T> w_p;  // h x d
    BasicVector<T> w_a;  // h

    [[nodiscard]] std::size_t hidden_dim() const noexcept { return w_q.rows(); }
    [[nodiscard]] std::size_t embed_dim() const noexcept { return w_q.cols(); }

    void validate() const
    {
        if (w_q.rows() == 0 || w_q.cols() < 2) {
            throw Error(ErrorKind::DimensionMismatch, "ARS head needs h >= 1 and d >= 2");
        }
        require_same_length(w_p.rows(), w_q.rows(), "W_p rows");
        require_same_length(w_p.cols(), w_q.cols(), "W_p cols");
        require_same_length(w_a.size(), w_q.rows(), "w_a length");
    }
};

using ArsParameters = BasicArsParameters<double>;

template <std::floating_point T>
struct BasicArsForwardTrace {
    BasicVector<T> h_q;
    BasicVector<T> h_p;
    BasicVector<T> z;  // h_q ⊙ h_p
    BasicVector<T> a;  // tanh(z)
    T s = T(0);
    T r = T(0.5);
};

using ArsForwardTrace = BasicArsForwardTrace<double>;

struct ArsGradients {
    Matrix d_w_q;
    Matrix d_w_p;
    Vector d_w_a;
    Vector d_q;
    Vector d_p;

    ArsGradients() = default;
    ArsGradients(std::size_t h, std::size_t d) : d_w_q(h, d), d_w_p(h, d), d_w_a(h, 0.0), d_q(d, 0.0), d_p(d, 0.0) {}
};

/// Which quantity the upstream gradient is taken with respect to.
enum class Upstream { Relevance, Logit };

/// Tail of the forward pass once both projections are known.
template <std::floating_point T>
void ars_interact(BasicArsForwardTrace<T>& trace, std::span<const T> w_a)
{
    const std::size_t h = trace.h_q.size();
    trace.z.resize(h);
    trace.a.resize(h);
    T s = T(0);
    for (std::size_t k = 0; k < h; ++k) {
        trace.z[k] = trace.h_q[k] * trace.h_p[k];
        trace.a[k] = apr::tanh(trace.z[k]);
        s += w_a[k] * trace.a[k];
    }
    trace.s = s;
    trace.r = sigmoid(s);
}

template <std::floating_point T>
[[nodiscard]] BasicArsForwardTrace<T> ars_forward(std::span<const T> q, std::span<const T> p, const BasicArsParameters<T>& params)
{
    require_same_length(q.size(), params.embed_dim(), "ARS query dim");
    require_same_length(p.size(), params.embed_dim(), "ARS passage dim");
    BasicArsForwardTrace<T> trace;
    trace.h_q = matvec(params.w_q, q);
    trace.h_p = matvec(params.w_p, p);
    ars_interact(trace, std::span<const T>(params.w_a));
    return trace;
}

template <std::floating_point T>
[[nodiscard]] BasicArsForwardTrace<T> ars_forward(const BasicVector<T>& q, const BasicVector<T>& p,
                                                  const BasicArsParameters<T>& params)
{
    return ars_forward(std::span<const T>(q), std::span<const T>(p), params);
}

/// Accumulates (+=) the gradients of one forward trace into `grads`.
inline void ars_backward_accumulate(const ArsForwardTrace& trace, std::span<const double> q, std::span<const double> p,
                                    const ArsParameters& params, double upstream, Upstream wrt, ArsGradients& grads)
{
    const std::size_t h = params.hidden_dim();
    const std::size_t d = params.embed_dim();
    require_same_length(q.size(), d, "ARS backward query dim");
    require_same_length(p.size(), d, "ARS backward passage dim");
    require_same_length(trace.a.size(), h, "ARS backward trace");
    require_same_length(grads.d_w_a.size(), h, "ARS gradient buffer");
    if (!std::isfinite(upstream)) {
        throw Error(ErrorKind::NonFiniteGradient, "upstream gradient is not finite");
    }

    const double ds = wrt == Upstream::Relevance ? upstream * trace.r * (1.0 - trace.r) : upstream;
    if (ds == 0.0) {
        return;
    }

    Vector dh_q(h);
    Vector dh_p(h);
    for (std::size_t k = 0; k < h; ++k) {
        grads.d_w_a[k] += ds * trace.a[k];
        const double dz = ds * params.w_a[k] * (1.0 - trace.a[k] * trace.a[k]);
        dh_q[k] = dz * trace.h_p[k];
        dh_p[k] = dz * trace.h_q[k];
    }
    add_outer(grads.d_w_q, std::span<const double>(dh_q), q);
    add_outer(grads.d_w_p, std::span<const double>(dh_p), p);
    const Vector dq = matvec_transposed(params.w_q, std::span<const double>(dh_q));
    const Vector dp = matvec_transposed(params.w_p, std::span<const double>(dh_p));
    axpy(1.0, std::span<const double>(dq), std::span<double>(grads.d_q));
    axpy(1.0, std::span<const double>(dp), std::span<double>(grads.d_p));
}

/// Gradients of one (q, p) pair. `upstream` is dL/dr or dL/ds per `wrt`.
[[nodiscard]] inline ArsGradients ars_backward(const ArsForwardTrace& trace, std::span<const double> q, std::span<const double> p,
                                               const ArsParameters& params, double upstream, Upstream wrt)
{
    ArsGradients grads(params.hidden_dim(), params.embed_dim());
    ars_backward_accumulate(trace, q, p, params, upstream, wrt, grads);
    for (const auto* buf : {&grads.d_w_q.data(), &grads.d_w_p.data(), &grads.d_w_a, &grads.d_q, &grads.d_p}) {
        if (!all_finite(std::span<const double>(*buf))) {
            throw Error(ErrorKind::NonFiniteGradient, "ARS backward produced a non-finite gradient");
        }
    }
    return grads;
}

struct ScoredPair {
    double s = 0.0;
    double r = 0.5;
};

/// s = Σ_k w_a[k] · tanh(h_q[k] · h_p[k]) over one projected passage, using
/// the vectorizable tanh. Agrees with ars_forward to ~1e-15 per unit of |w_a|.
[[nodiscard]] inline double ars_logit_projected(std::span<const double> h_q, std::span<const double> h_p,
                                                std::span<const double> w_a) noexcept
{
    double s = 0.0;
    for (std::size_t k = 0; k < h_q.size(); ++k) {
        s += w_a[k] * tanh_fast(h_q[k] * h_p[k]);
    }
    return s;
}

/// Scores one query against many passages, projecting the query once.
[[nodiscard]] inline std::vector<ScoredPair> ars_score_many(std::span<const double> q, std::span<const Vector> passages,
                                                            const ArsParameters& params)
{
    require_same_length(q.size(), params.embed_dim(), "ARS query dim");
    const Vector h_q = matvec(params.w_q, q);
    std::vector<ScoredPair> out;
    out.reserve(passages.size());
    for (const auto& p : passages) {
        require_same_length(p.size(), params.embed_dim(), "ARS passage dim");
        const Vector h_p = matvec(params.w_p, std::span<const double>(p));
        const double s = ars_logit_projected(h_q, h_p, params.w_a);
        out.push_back({s, sigmoid(s)});
    }
    return out;
}

enum class HeadInit {
    Uniform,         // independent fan-in uniform draws
    TiedOrthogonal,  // W_q = W_p with orthonormal rows, near-zero w_a
};

[[nodiscard]] inline std::string_view to_string(HeadInit init)
{
    return init == HeadInit::Uniform ? "uniform" : "tied_orthogonal";
}

[[nodiscard]] inline HeadInit parse_head_init(std::string_view s)
{
    if (s == "uniform") return HeadInit::Uniform;
    if (s == "tied_orthogonal") return HeadInit::TiedOrthogonal;
    throw Error(ErrorKind::Config, "head_init must be uniform or tied_orthogonal");
}

inline constexpr double kTiedAttentionScale = 0.01;

namespace detail {

// Gaussian rows made orthonormal by Gram-Schmidt, restarting every d rows
// when h > d.
inline void orthonormal_rows(Matrix& w, Rng& rng)
{
    const std::size_t d = w.cols();
    for (std::size_t i = 0; i < w.rows(); ++i) {
        const std::span<double> row = w.row(i);
        double norm = 0.0;
        while (!(norm > 1e-8)) {
            for (double& x : row) {
                x = rng.normal();
            }
            for (std::size_t k = i - i % d; k < i; ++k) {
                const std::span<const double> prev = w.row(k);
                axpy<double>(-dot(prev, std::span<const double>(row)), prev, row);
            }
            norm = l2_norm(std::span<const double>(row));
        }
        for (double& x : row) {
            x /= norm;
        }
    }
}

}  // namespace detail

/// Uniform: W_q, W_p ~ U[-g/√d, g/√d]; w_a ~ U[-g/√h, g/√h] for gain g.
/// TiedOrthogonal: W_q = W_p = g·Q with orthonormal rows of Q and
/// w_a ~ U[-0.01/√h, 0.01/√h]. The head then starts as a symmetric
/// bilinear form whose sign pattern is random, so fresh scores carry no
/// ranking signal and training mainly has to settle w_a.
[[nodiscard]] inline ArsParameters init_ars(std::size_t d, std::size_t h, Rng& rng, double gain = 1.0,
                                            HeadInit scheme = HeadInit::Uniform)
{
    if (d == 0 || h == 0 || !(gain > 0.0)) {
        throw Error(ErrorKind::Config, "init_ars needs d, h >= 1 and a positive gain");
    }
    ArsParameters params{Matrix(h, d), Matrix(h, d), Vector(h)};
    const double root_h = std::sqrt(static_cast<double>(h));
    if (scheme == HeadInit::TiedOrthogonal) {
        detail::orthonormal_rows(params.w_q, rng);
        for (double& x : params.w_q.data()) {
            x *= gain;
        }
        params.w_p = params.w_q;
        for (double& x : params.w_a) {
            x = rng.uniform(-kTiedAttentionScale / root_h, kTiedAttentionScale / root_h);
        }
        return params;
    }
    const double bound_d = gain / std::sqrt(static_cast<double>(d));
    const double bound_h = gain / root_h;
    for (double& x : params.w_q.data()) {
        x = rng.uniform(-bound_d, bound_d);
    }
    for (double& x : params.w_p.data()) {
        x = rng.uniform(-bound_d, bound_d);
    }
    for (double& x : params.w_a) {
        x = rng.uniform(-bound_h, bound_h);
    }
    return params;
}

}  // namespace apr
