#pragma once

// Training objective
//   L_total = α·L_cons + β·L_dyn + γ·L_reg
// L_cons: InfoNCE over {positive, own negative pool} with learnable τ.
// L_dyn:  binary log-likelihood of ARS relevance on the positive and one
//         randomly selected negative.
// L_reg:  Std(s⁺) + Std(s⁻) over the batch's pre-sigmoid logits.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "apr/ars.hpp"
#include "apr/encoder.hpp"
#include "apr/error.hpp"
#include "apr/model.hpp"
#include "apr/numerics.hpp"

namespace apr {

struct LossWeights {
    double alpha = 1.0;
    double beta = 1.0;
    double gamma = 0.1;
    double epsilon = 1e-8;
    /// +1 minimizes Std (as written); -1 maximizes it.
    int reg_sign = 1;

    void validate() const
    {
        if (!(alpha >= 0.0) || !(beta >= 0.0) || !(gamma >= 0.0)) {
            throw Error(ErrorKind::Config, "loss weights must be non-negative");
        }
        if (!(epsilon > 0.0 && epsilon <= 1e-4)) {
            throw Error(ErrorKind::Config, "epsilon must lie in (0, 1e-4]");
        }
        if (reg_sign != 1 && reg_sign != -1) {
            throw Error(ErrorKind::Config, "reg_sign must be +1 or -1");
        }
    }
};

struct LossOptions {
    /// Adds the other queries' positives to each query's InfoNCE candidates.
    bool in_batch_negatives = false;
    /// L_reg's negative set: every pool logit instead of the selected ones.
    bool reg_all_pool = false;
    /// Head-only training: adapter gradients are left at zero.
    bool freeze_adapters = false;
};

/// τ = exp(log_tau) > 0 for every representable log_tau.
struct Temperature {
    double log_tau = 0.0;
    [[nodiscard]] double tau() const { return std::exp(log_tau); }
};

// ---------------------------------------------------------------- L_cons

template <std::floating_point T>
struct BasicConsResult {
    T value = T(0);
    std::vector<BasicVector<T>> d_queries;
    std::vector<BasicVector<T>> d_positives;
    std::vector<std::vector<BasicVector<T>>> d_negatives;
    T d_log_tau = T(0);
};

using ConsResult = BasicConsResult<double>;

template <std::floating_point T>
[[nodiscard]] BasicConsResult<T> loss_cons(std::span<const BasicVector<T>> queries, std::span<const BasicVector<T>> positives,
                                           std::span<const std::vector<BasicVector<T>>> negatives, T log_tau,
                                           bool in_batch_negatives = false)
{
    const std::size_t batch = queries.size();
    if (batch == 0) {
        throw Error(ErrorKind::EmptyBatch, "loss_cons on an empty batch");
    }
    require_same_length(positives.size(), batch, "loss_cons positives");
    require_same_length(negatives.size(), batch, "loss_cons negative pools");

    BasicConsResult<T> out;
    out.d_queries.assign(batch, BasicVector<T>(queries[0].size(), T(0)));
    out.d_positives.assign(batch, BasicVector<T>(queries[0].size(), T(0)));
    out.d_negatives.resize(batch);
    const T inv_tau = std::exp(-log_tau);
    const T inv_batch = T(1) / static_cast<T>(batch);

    // Candidate c of query i: (vector, gradient slot).
    struct Candidate {
        const BasicVector<T>* vec;
        BasicVector<T>* grad;
    };
    std::vector<Candidate> cands;
    std::vector<T> logits;

    for (std::size_t i = 0; i < batch; ++i) {
        if (negatives[i].empty()) {
            throw Error(ErrorKind::EmptyBatch, "loss_cons needs N >= 1 negatives per query");
        }
        out.d_negatives[i].assign(negatives[i].size(), BasicVector<T>(queries[i].size(), T(0)));
        cands.clear();
        cands.push_back({&positives[i], &out.d_positives[i]});
        for (std::size_t j = 0; j < negatives[i].size(); ++j) {
            cands.push_back({&negatives[i][j], &out.d_negatives[i][j]});
        }
        if (in_batch_negatives) {
            for (std::size_t k = 0; k < batch; ++k) {
                if (k != i) {
                    cands.push_back({&positives[k], &out.d_positives[k]});
                }
            }
        }

        logits.resize(cands.size());
        T max_logit = -std::numeric_limits<T>::infinity();
        for (std::size_t c = 0; c < cands.size(); ++c) {
            logits[c] = dot(queries[i], *cands[c].vec) * inv_tau;
            max_logit = std::max(max_logit, logits[c]);
        }
        T sum = T(0);
        for (T l : logits) {
            sum += std::exp(l - max_logit);
        }
        const T lse = max_logit + std::log(sum);
        if (!std::isfinite(lse)) {
            throw Error(ErrorKind::NonFinite, "loss_cons log-sum-exp is not finite");
        }
        out.value += (lse - logits[0]) * inv_batch;

        for (std::size_t c = 0; c < cands.size(); ++c) {
            const T prob = std::exp(logits[c] - lse);
            const T g = (prob - (c == 0 ? T(1) : T(0))) * inv_batch;
            if (g == T(0)) {
                continue;
            }
            const BasicVector<T>& v = *cands[c].vec;
            BasicVector<T>& dv = *cands[c].grad;
            for (std::size_t k = 0; k < v.size(); ++k) {
                out.d_queries[i][k] += g * v[k] * inv_tau;
                dv[k] += g * queries[i][k] * inv_tau;
            }
            out.d_log_tau -= g * logits[c];
        }
    }
    return out;
}

// ---------------------------------------------------------------- L_dyn

template <std::floating_point T>
struct BasicDynResult {
    T value = T(0);
    BasicVector<T> d_r_pos;
    BasicVector<T> d_r_neg;
};

using DynResult = BasicDynResult<double>;

template <std::floating_point T>
[[nodiscard]] BasicDynResult<T> loss_dyn(std::span<const T> r_pos, std::span<const T> r_neg, T eps)
{
    const std::size_t batch = r_pos.size();
    if (batch == 0) {
        throw Error(ErrorKind::EmptyBatch, "loss_dyn on an empty batch");
    }
    require_same_length(r_neg.size(), batch, "loss_dyn negatives");
    BasicDynResult<T> out;
    out.d_r_pos.resize(batch);
    out.d_r_neg.resize(batch);
    const T inv_batch = T(1) / static_cast<T>(batch);
    T acc = T(0);
    for (std::size_t i = 0; i < batch; ++i) {
        for (T r : {r_pos[i], r_neg[i]}) {
            if (!(r >= T(0) && r <= T(1))) {
                throw Error(ErrorKind::OutOfRange, "relevance score outside [0, 1]");
            }
        }
        acc += std::log(r_pos[i] + eps) + std::log(T(1) - r_neg[i] + eps);
        out.d_r_pos[i] = -inv_batch / (r_pos[i] + eps);
        out.d_r_neg[i] = inv_batch / (T(1) - r_neg[i] + eps);
    }
    out.value = -acc * inv_batch;
    return out;
}

// ---------------------------------------------------------------- L_reg

template <std::floating_point T>
struct BasicRegResult {
    T value = T(0);
    BasicVector<T> d_s_pos;
    BasicVector<T> d_s_neg;
};

using RegResult = BasicRegResult<double>;

namespace detail {

/// Population std and its gradient; the gradient is 0 where std is 0.
template <std::floating_point T>
T std_with_gradient(std::span<const T> xs, BasicVector<T>& grad)
{
    const T sd = population_std(xs);
    const T mu = mean(xs);
    grad.assign(xs.size(), T(0));
    if (sd > T(0)) {
        const T n = static_cast<T>(xs.size());
        for (std::size_t i = 0; i < xs.size(); ++i) {
            grad[i] = (xs[i] - mu) / (n * sd);
        }
    }
    return sd;
}

}  // namespace detail

template <std::floating_point T>
[[nodiscard]] BasicRegResult<T> loss_reg(std::span<const T> s_pos, std::span<const T> s_neg)
{
    if (s_pos.empty() || s_neg.empty()) {
        throw Error(ErrorKind::EmptyBatch, "loss_reg on an empty batch");
    }
    BasicRegResult<T> out;
    out.value = detail::std_with_gradient(s_pos, out.d_s_pos) + detail::std_with_gradient(s_neg, out.d_s_neg);
    return out;
}

// ---------------------------------------------------------------- L_total

/// Hashed features of one training query group.
struct QueryGroupFeatures {
    SparseFeatures query;
    SparseFeatures positive;
    std::vector<SparseFeatures> negatives;
    std::size_t selected_negative = 0;
};

struct LossBreakdown {
    double l_cons = 0.0;
    double l_dyn = 0.0;
    double l_reg = 0.0;
    double l_total = 0.0;
    ModelGradients grads;
};

/// Loss values of a batch with no gradients; any floating type. The
/// finite-difference checker evaluates this in long double.
template <std::floating_point T>
struct BasicLossValues {
    T l_cons = T(0);
    T l_dyn = T(0);
    T l_reg = T(0);
    T l_total = T(0);
};

namespace detail {

template <std::floating_point T>
struct BatchForward {
    std::vector<BasicEncodeTrace<T>> q;
    std::vector<BasicEncodeTrace<T>> pos;
    std::vector<std::vector<BasicEncodeTrace<T>>> neg;
    std::vector<BasicArsForwardTrace<T>> ars_pos;
    std::vector<BasicArsForwardTrace<T>> ars_neg;               // selected negative
    std::vector<std::vector<BasicArsForwardTrace<T>>> ars_pool;  // only with reg_all_pool
    BasicConsResult<T> cons;
    BasicDynResult<T> dyn;
    BasicRegResult<T> reg;
    BasicLossValues<T> values;
};

template <std::floating_point T>
BatchForward<T> batch_forward(const BasicModel<T>& model, std::span<const QueryGroupFeatures> batch, const LossWeights& weights,
                              const LossOptions& options)
{
    if (batch.empty()) {
        throw Error(ErrorKind::EmptyBatch, "loss_total on an empty batch");
    }
    const std::size_t b = batch.size();
    BatchForward<T> fw;
    fw.q.reserve(b);
    fw.pos.reserve(b);
    fw.neg.resize(b);
    std::vector<BasicVector<T>> qs;
    std::vector<BasicVector<T>> ps;
    std::vector<std::vector<BasicVector<T>>> ns(b);
    for (std::size_t i = 0; i < b; ++i) {
        const auto& g = batch[i];
        if (g.negatives.empty() || g.selected_negative >= g.negatives.size()) {
            throw Error(ErrorKind::OutOfRange, "selected negative index outside the pool");
        }
        fw.q.push_back(encode_features(model.question, g.query));
        fw.pos.push_back(encode_features(model.passage, g.positive));
        qs.push_back(fw.q.back().embedding);
        ps.push_back(fw.pos.back().embedding);
        for (const auto& nf : g.negatives) {
            fw.neg[i].push_back(encode_features(model.passage, nf));
            ns[i].push_back(fw.neg[i].back().embedding);
        }
    }

    fw.cons = loss_cons<T>(qs, ps, ns, model.log_tau, options.in_batch_negatives);

    BasicVector<T> r_pos(b);
    BasicVector<T> r_neg(b);
    BasicVector<T> s_pos(b);
    BasicVector<T> s_neg;
    for (std::size_t i = 0; i < b; ++i) {
        fw.ars_pos.push_back(ars_forward(qs[i], ps[i], model.head));
        fw.ars_neg.push_back(ars_forward(qs[i], ns[i][batch[i].selected_negative], model.head));
        r_pos[i] = fw.ars_pos.back().r;
        r_neg[i] = fw.ars_neg.back().r;
        s_pos[i] = fw.ars_pos.back().s;
    }
    if (options.reg_all_pool) {
        fw.ars_pool.resize(b);
        for (std::size_t i = 0; i < b; ++i) {
            for (const auto& n : ns[i]) {
                fw.ars_pool[i].push_back(ars_forward(qs[i], n, model.head));
                s_neg.push_back(fw.ars_pool[i].back().s);
            }
        }
    } else {
        for (const auto& t : fw.ars_neg) {
            s_neg.push_back(t.s);
        }
    }

    fw.dyn = loss_dyn<T>(r_pos, r_neg, static_cast<T>(weights.epsilon));
    fw.reg = loss_reg<T>(s_pos, s_neg);

    fw.values.l_cons = fw.cons.value;
    fw.values.l_dyn = fw.dyn.value;
    fw.values.l_reg = fw.reg.value;
    fw.values.l_total = static_cast<T>(weights.alpha) * fw.values.l_cons + static_cast<T>(weights.beta) * fw.values.l_dyn +
                        static_cast<T>(weights.gamma) * static_cast<T>(weights.reg_sign) * fw.values.l_reg;
    return fw;
}

}  // namespace detail

template <std::floating_point T>
[[nodiscard]] BasicLossValues<T> loss_values(const BasicModel<T>& model, std::span<const QueryGroupFeatures> batch,
                                             const LossWeights& weights, const LossOptions& options = {})
{
    return detail::batch_forward(model, batch, weights, options).values;
}

/// Deliberate gradient bugs, used only to prove the gradient checker can
/// localize a fault.
enum class GradientFault { None, TransposedWq };

/// Full objective with gradients accumulated through every path:
/// L_cons -> embeddings, τ; L_dyn and L_reg -> ARS head and embeddings;
/// embeddings -> tower adapters.
[[nodiscard]] inline LossBreakdown loss_total(const Model& model, std::span<const QueryGroupFeatures> batch, const LossWeights& weights,
                                              const LossOptions& options = {}, GradientFault fault = GradientFault::None)
{
    weights.validate();
    const auto fw = detail::batch_forward(model, batch, weights, options);
    const std::size_t b = batch.size();
    const ModelDims dims = model.dims();

    LossBreakdown out;
    out.l_cons = fw.values.l_cons;
    out.l_dyn = fw.values.l_dyn;
    out.l_reg = fw.values.l_reg;
    out.l_total = fw.values.l_total;
    out.grads = ModelGradients(dims);
    if (!std::isfinite(out.l_total)) {
        throw Error(ErrorKind::NonFinite, "l_total is not finite");
    }

    const double reg_scale = weights.gamma * static_cast<double>(weights.reg_sign);

    // Embedding gradients, seeded by L_cons.
    std::vector<Vector> dq(b);
    std::vector<Vector> dpos(b);
    std::vector<std::vector<Vector>> dneg(b);
    for (std::size_t i = 0; i < b; ++i) {
        dq[i] = fw.cons.d_queries[i];
        dpos[i] = fw.cons.d_positives[i];
        for (double& x : dq[i]) {
            x *= weights.alpha;
        }
        for (double& x : dpos[i]) {
            x *= weights.alpha;
        }
        dneg[i] = fw.cons.d_negatives[i];
        for (auto& v : dneg[i]) {
            for (double& x : v) {
                x *= weights.alpha;
            }
        }
    }
    out.grads.log_tau = weights.alpha * fw.cons.d_log_tau;

    ArsGradients head(dims.hidden_dim, dims.embed_dim);
    auto backprop_pair = [&](const ArsForwardTrace& trace, std::size_t i, const Vector& p, Vector& dp, double ds) {
        head.d_q.assign(dims.embed_dim, 0.0);
        head.d_p.assign(dims.embed_dim, 0.0);
        ars_backward_accumulate(trace, fw.q[i].embedding, p, model.head, ds, Upstream::Logit, head);
        axpy(1.0, std::span<const double>(head.d_q), std::span<double>(dq[i]));
        axpy(1.0, std::span<const double>(head.d_p), std::span<double>(dp));
    };

    for (std::size_t i = 0; i < b; ++i) {
        const auto& tp = fw.ars_pos[i];
        const double ds_pos = weights.beta * fw.dyn.d_r_pos[i] * tp.r * (1.0 - tp.r) + reg_scale * fw.reg.d_s_pos[i];
        backprop_pair(tp, i, fw.pos[i].embedding, dpos[i], ds_pos);

        const std::size_t sel = batch[i].selected_negative;
        const auto& tn = fw.ars_neg[i];
        double ds_neg = weights.beta * fw.dyn.d_r_neg[i] * tn.r * (1.0 - tn.r);
        if (!options.reg_all_pool) {
            ds_neg += reg_scale * fw.reg.d_s_neg[i];
        }
        backprop_pair(tn, i, fw.neg[i][sel].embedding, dneg[i][sel], ds_neg);
    }
    if (options.reg_all_pool) {
        std::size_t flat = 0;
        for (std::size_t i = 0; i < b; ++i) {
            for (std::size_t j = 0; j < fw.ars_pool[i].size(); ++j, ++flat) {
                backprop_pair(fw.ars_pool[i][j], i, fw.neg[i][j].embedding, dneg[i][j], reg_scale * fw.reg.d_s_neg[flat]);
            }
        }
    }

    out.grads.w_q = std::move(head.d_w_q);
    out.grads.w_p = std::move(head.d_w_p);
    out.grads.w_a = std::move(head.d_w_a);
    if (fault == GradientFault::TransposedWq) {
        // Re-lay the h x d gradient as if it had been written d x h.
        Matrix wrong(dims.hidden_dim, dims.embed_dim);
        for (std::size_t r = 0; r < dims.hidden_dim; ++r) {
            for (std::size_t c = 0; c < dims.embed_dim; ++c) {
                wrong.data()[c * dims.hidden_dim + r] = out.grads.w_q(r, c);
            }
        }
        out.grads.w_q = std::move(wrong);
    }

    if (!options.freeze_adapters) {
        for (std::size_t i = 0; i < b; ++i) {
            adapter_backward(out.grads.question, normalize_backward(fw.q[i], dq[i]), batch[i].query);
            adapter_backward(out.grads.passage, normalize_backward(fw.pos[i], dpos[i]), batch[i].positive);
            for (std::size_t j = 0; j < batch[i].negatives.size(); ++j) {
                adapter_backward(out.grads.passage, normalize_backward(fw.neg[i][j], dneg[i][j]), batch[i].negatives[j]);
            }
        }
    }

    for (const auto& view : gradient_views(out.grads)) {
        if (!all_finite(std::span<const double>(view.values.data(), view.values.size()))) {
            throw Error(ErrorKind::NonFiniteGradient, std::string("non-finite gradient in ") + std::string(view.name));
        }
    }
    return out;
}

}  // namespace apr
